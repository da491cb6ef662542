//! Synthetic deforming sequences with known correspondences, and their
//! degradation to full-mesh, slice or volume observations.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::Observation;
use crate::geometry::{contours_from_csv, contours_to_csv, normalized_volume, plane_section, PlaneSpec};
use crate::mesh::{box_mesh, capsule, icosphere, SurfaceMesh};
use crate::Vec3;

/// Half-size of the reference shape that amplitudes are expressed against.
const REFERENCE_RADIUS: f64 = 0.5;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseShape {
    Icosphere,
    Box,
    Capsule,
}

impl BaseShape {
    pub fn mesh(self) -> SurfaceMesh {
        match self {
            BaseShape::Icosphere => icosphere(0.5, 3),
            BaseShape::Box => box_mesh(Vec3::new(0.4, 0.3, 0.35), 8),
            BaseShape::Capsule => capsule(0.3, 0.25, 32, 8),
        }
    }
}

impl std::str::FromStr for BaseShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icosphere" => Ok(BaseShape::Icosphere),
            "box" => Ok(BaseShape::Box),
            "capsule" => Ok(BaseShape::Capsule),
            other => Err(Error::invalid(format!("unknown base shape '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    /// Shift along x by `A sin(2 pi t / T)`.
    Translate,
    /// x scaled by `1 + s`, y by `1 / (1 + s)` with `s = A sin(2 pi t / T)`.
    Squash,
    /// Rotation about z by `A sin(2 pi t / T) z / 0.5`.
    Twist,
    /// Uniform scaling by `1 + A sin(2 pi t / T) / 0.5`.
    RadialPulse,
}

impl MotionKind {
    /// Inclusive amplitude range for which the motion keeps `[-0.7, 0.7]^3`
    /// inside the domain cube and stays invertible.
    pub fn amplitude_range(self) -> (f64, f64) {
        match self {
            MotionKind::Translate => (0.0, 0.3),
            MotionKind::Squash => (0.0, 0.25),
            MotionKind::Twist => (0.0, PI / 2.0),
            MotionKind::RadialPulse => (0.0, 0.2),
        }
    }
}

impl std::fmt::Display for MotionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MotionKind::Translate => "translate",
            MotionKind::Squash => "squash",
            MotionKind::Twist => "twist",
            MotionKind::RadialPulse => "radial-pulse",
        })
    }
}

impl std::str::FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(MotionKind::Translate),
            "squash" => Ok(MotionKind::Squash),
            "twist" => Ok(MotionKind::Twist),
            "radial-pulse" => Ok(MotionKind::RadialPulse),
            other => Err(Error::invalid(format!("unknown motion '{other}'"))),
        }
    }
}

/// Periodic analytic deformation; frame 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMotion {
    pub kind: MotionKind,
    pub amplitude: f64,
    /// Period in frames.
    pub period: f64,
}

impl AnalyticMotion {
    pub fn new(kind: MotionKind, amplitude: f64, period: f64) -> Result<Self> {
        let m = AnalyticMotion { kind, amplitude, period };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.kind.amplitude_range();
        if !(self.amplitude >= lo && self.amplitude <= hi) {
            return Err(Error::invalid(format!(
                "amplitude {} outside [{lo}, {hi}] for {}",
                self.amplitude, self.kind
            )));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::invalid(format!("period must be positive, got {}", self.period)));
        }
        Ok(())
    }

    pub fn phase(&self, t: f64) -> f64 {
        (2.0 * PI * t / self.period).sin()
    }

    /// Image of `p` at frame `t`.
    pub fn apply(&self, t: f64, p: &Vec3) -> Vec3 {
        let s = self.amplitude * self.phase(t);
        match self.kind {
            MotionKind::Translate => p + Vec3::new(s, 0.0, 0.0),
            MotionKind::Squash => Vec3::new(p.x * (1.0 + s), p.y / (1.0 + s), p.z),
            MotionKind::Twist => {
                let angle = s * p.z / REFERENCE_RADIUS;
                let (sn, cs) = angle.sin_cos();
                Vec3::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y, p.z)
            }
            MotionKind::RadialPulse => p * (1.0 + s / REFERENCE_RADIUS),
        }
    }
}

/// A generated sequence. Every frame shares the canonical connectivity and
/// vertex `i` of frame `t` is the motion image of canonical vertex `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub base: BaseShape,
    pub motion: AnalyticMotion,
    pub seed: u64,
    pub canonical: SurfaceMesh,
    pub frames: Vec<SurfaceMesh>,
}

impl SequenceDataset {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Ground-truth images of arbitrary canonical-space points at `frame`.
    pub fn motion_of(&self, frame: usize, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.motion.apply(frame as f64, p)).collect()
    }

    pub fn observations(&self, mode: &ObservationMode) -> Result<Vec<Observation>> {
        let reference = self.frames.first().ok_or_else(|| Error::invalid("dataset has no frames"))?;
        let planes = mode.planes(reference)?;
        self.frames
            .par_iter()
            .map(|f| extract_with_planes(f, mode, &planes))
            .collect()
    }
}

/// Builds `frames` frames of `motion` applied to `base`.
pub fn generate_sequence(base: BaseShape, motion: AnalyticMotion, frames: usize, seed: u64) -> Result<SequenceDataset> {
    motion.validate()?;
    if frames == 0 {
        return Err(Error::invalid("frame count must be at least 1"));
    }
    let canonical = base.mesh();
    let meshes = (0..frames)
        .into_par_iter()
        .map(|t| {
            if t == 0 {
                canonical.clone()
            } else {
                canonical.map_positions(|p| motion.apply(t as f64, p))
            }
        })
        .collect();
    Ok(SequenceDataset { base, motion, seed, canonical, frames: meshes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "offsets")]
pub enum Placement {
    /// Consecutive planes filling the middle third of the reference z-extent.
    Central,
    /// Planes spread over the whole reference z-extent.
    Strided,
    /// Explicit z offsets.
    Explicit(Vec<f64>),
}

impl std::str::FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "central" => Ok(Placement::Central),
            "strided" => Ok(Placement::Strided),
            other => {
                let offsets = other
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::invalid(format!("placement '{other}' is not central, strided or a list of z offsets")))?;
                Ok(Placement::Explicit(offsets))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationMode {
    Full,
    Slices { count: usize, placement: Placement },
    Volume,
}

impl ObservationMode {
    pub fn name(&self) -> &'static str {
        match self {
            ObservationMode::Full => "full",
            ObservationMode::Slices { .. } => "slices",
            ObservationMode::Volume => "volume",
        }
    }

    /// z-normal planes placed against the z-extent of `reference`.
    pub fn planes(&self, reference: &SurfaceMesh) -> Result<Vec<PlaneSpec>> {
        let ObservationMode::Slices { count, placement } = self else {
            return Ok(Vec::new());
        };
        if *count == 0 {
            return Err(Error::invalid("slice count must be at least 1"));
        }
        let k = *count as f64;
        let (lo, hi) = reference.bounds().ok_or_else(|| Error::invalid("reference mesh is empty"))?;
        let (z0, extent) = (lo.z, hi.z - lo.z);
        let offsets: Vec<f64> = match placement {
            Placement::Central => (0..*count).map(|i| z0 + extent / 3.0 + (i as f64 + 0.5) * extent / (3.0 * k)).collect(),
            Placement::Strided => (0..*count).map(|i| z0 + (i as f64 + 0.5) * extent / k).collect(),
            Placement::Explicit(v) => {
                if v.len() != *count {
                    return Err(Error::invalid(format!("{} explicit offsets given for {count} slices", v.len())));
                }
                v.clone()
            }
        };
        Ok(offsets.into_iter().map(PlaneSpec::z).collect())
    }
}

fn extract_with_planes(mesh: &SurfaceMesh, mode: &ObservationMode, planes: &[PlaneSpec]) -> Result<Observation> {
    Ok(match mode {
        ObservationMode::Full => Observation::FullMesh(mesh.clone()),
        ObservationMode::Volume => Observation::Volume(normalized_volume(mesh)?),
        ObservationMode::Slices { .. } => {
            let contours: Vec<Vec<Vec3>> = planes
                .iter()
                .map(|p| {
                    let c = plane_section(mesh, p);
                    if c.is_empty() {
                        log::warn!("slice at offset {} misses the mesh", p.offset);
                    }
                    c
                })
                .collect();
            Observation::Slices { planes: planes.to_vec(), contours }
        }
    })
}

/// Degrades one frame. Slice planes are placed against this mesh's own
/// z-extent; use [`SequenceDataset::observations`] to share planes across a
/// sequence.
pub fn extract_observation(mesh: &SurfaceMesh, mode: &ObservationMode) -> Result<Observation> {
    let planes = mode.planes(mesh)?;
    extract_with_planes(mesh, mode, &planes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub base: BaseShape,
    pub motion: AnalyticMotion,
    pub frames: usize,
    pub seed: u64,
    pub observation: String,
    pub files: ManifestFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub frames: Vec<String>,
    pub observations: Vec<String>,
}

pub fn frame_file(t: usize) -> String {
    format!("frame_{t:03}.obj")
}

pub const VOLUME_FILE: &str = "volume.txt";

/// Writes the dataset layout: `manifest.json`, `frame_NNN.obj` and the
/// observation files for `mode`.
pub fn write_dataset(dir: &Path, data: &SequenceDataset, mode: &ObservationMode) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let obs = data.observations(mode)?;
    let mut frames = Vec::new();
    let mut observations = Vec::new();
    for (t, mesh) in data.frames.iter().enumerate() {
        let name = frame_file(t);
        mesh.save_obj(&dir.join(&name))?;
        frames.push(name);
    }
    match mode {
        ObservationMode::Full => {
            for (t, o) in obs.iter().enumerate() {
                let Observation::FullMesh(m) = o else { unreachable!() };
                let name = format!("obs_{t:03}.obj");
                m.save_obj(&dir.join(&name))?;
                observations.push(name);
            }
        }
        ObservationMode::Slices { .. } => {
            for (t, o) in obs.iter().enumerate() {
                let Observation::Slices { contours, .. } = o else { unreachable!() };
                let name = format!("obs_{t:03}.csv");
                fs::write(dir.join(&name), contours_to_csv(contours))?;
                observations.push(name);
            }
        }
        ObservationMode::Volume => {
            let mut text = String::new();
            for o in &obs {
                let Observation::Volume(v) = o else { unreachable!() };
                text.push_str(&format!("{v:?}\n"));
            }
            fs::write(dir.join(VOLUME_FILE), text)?;
            observations.push(VOLUME_FILE.to_string());
        }
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        base: data.base,
        motion: data.motion,
        frames: data.frames.len(),
        seed: data.seed,
        observation: mode.name().to_string(),
        files: ManifestFiles { frames, observations },
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(format!("unsupported dataset format version {}", m.format_version)));
    }
    if m.files.frames.len() != m.frames {
        return Err(Error::format(format!(
            "manifest lists {} frame files for {} frames",
            m.files.frames.len(),
            m.frames
        )));
    }
    Ok(m)
}

/// Loads a dataset written by [`write_dataset`]. The canonical mesh is frame 0.
pub fn read_dataset(dir: &Path) -> Result<SequenceDataset> {
    let m = read_manifest(dir)?;
    m.motion.validate()?;
    let frames = m
        .files
        .frames
        .iter()
        .map(|f| SurfaceMesh::load_obj(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let canonical = frames.first().cloned().ok_or_else(|| Error::format("dataset has no frames"))?;
    if frames.iter().any(|f| f.triangles != canonical.triangles) {
        return Err(Error::format("frame meshes do not share connectivity"));
    }
    Ok(SequenceDataset { base: m.base, motion: m.motion, seed: m.seed, canonical, frames })
}

/// Reads observation files stored alongside a dataset.
pub fn read_observations(dir: &Path, mode: &ObservationMode, data: &SequenceDataset) -> Result<Vec<Observation>> {
    let m = read_manifest(dir)?;
    if m.observation != mode.name() {
        return Err(Error::invalid(format!("dataset stores '{}' observations, not '{}'", m.observation, mode.name())));
    }
    match mode {
        ObservationMode::Full => m
            .files
            .observations
            .iter()
            .map(|f| Ok(Observation::FullMesh(SurfaceMesh::load_obj(&dir.join(f))?)))
            .collect(),
        ObservationMode::Slices { .. } => {
            let planes = mode.planes(&data.frames[0])?;
            m.files
                .observations
                .iter()
                .map(|f| {
                    let contours = contours_from_csv(&fs::read_to_string(dir.join(f))?, planes.len())?;
                    Ok(Observation::Slices { planes: planes.clone(), contours })
                })
                .collect()
        }
        ObservationMode::Volume => {
            let text = fs::read_to_string(dir.join(VOLUME_FILE))?;
            let values = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim()
                        .parse::<f64>()
                        .map(Observation::Volume)
                        .map_err(|_| Error::format(format!("bad volume line '{l}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != m.frames {
                return Err(Error::format(format!("{} volumes for {} frames", values.len(), m.frames)));
            }
            Ok(values)
        }
    }
}
