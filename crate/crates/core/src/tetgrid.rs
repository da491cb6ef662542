//! Deformable tetrahedral grid over the domain cube `[-1, 1]^3`.
//!
//! Each cube cell is split into six tetrahedra sharing the cell's main
//! diagonal (Kuhn / Freudenthal subdivision). Because every cell uses the same
//! diagonal direction, neighbouring cells agree on their shared face
//! triangulation and the grid is conforming.
//!
//! Every vertex carries a rest position, a bounded displacement and a signed
//! distance value (negative inside).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Offset clamp, as a fraction of the cell edge length.
pub const OFFSET_BETA: f64 = 0.5;

pub const GRID_FORMAT_VERSION: u32 = 1;
const GRID_MAGIC: &[u8; 4] = b"TMGR";

/// Local corner paths through a unit cell, one per axis permutation.
const AXIS_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct TetGrid {
    resolution: usize,
    rest_positions: Vec<Vec3>,
    offsets: Vec<Vec3>,
    vertices: Vec<Vec3>,
    sdf: Vec<f64>,
    tets: Vec<[u32; 4]>,
    clamp_mask: Vec<[bool; 3]>,
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
pub fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

/// Builds a conforming grid with `resolution` cells per axis, zero offsets and
/// `sdf = +1` everywhere.
pub fn build_uniform_grid(resolution: usize) -> Result<TetGrid> {
    if resolution == 0 {
        return Err(Error::invalid("grid resolution must be at least 1"));
    }
    let n = resolution + 1;
    let vertex_count = n
        .checked_mul(n)
        .and_then(|v| v.checked_mul(n))
        .filter(|&v| v <= u32::MAX as usize)
        .ok_or_else(|| Error::invalid(format!("resolution {resolution} too large")))?;

    let step = 2.0 / resolution as f64;
    let mut rest_positions = Vec::with_capacity(vertex_count);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                rest_positions.push(Vec3::new(
                    -1.0 + step * i as f64,
                    -1.0 + step * j as f64,
                    -1.0 + step * k as f64,
                ));
            }
        }
    }

    let index = |i: usize, j: usize, k: usize| (i + n * (j + n * k)) as u32;
    let mut tets = Vec::with_capacity(6 * resolution.pow(3));
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                for perm in AXIS_PERMUTATIONS {
                    let mut corner = [0usize; 3];
                    let mut tet = [index(i, j, k); 4];
                    for (slot, &axis) in perm.iter().enumerate() {
                        corner[axis] = 1;
                        tet[slot + 1] = index(i + corner[0], j + corner[1], k + corner[2]);
                    }
                    let p = |v: u32| &rest_positions[v as usize];
                    if tet_signed_volume(p(tet[0]), p(tet[1]), p(tet[2]), p(tet[3])) < 0.0 {
                        tet.swap(1, 2);
                    }
                    tets.push(tet);
                }
            }
        }
    }

    Ok(TetGrid {
        resolution,
        vertices: rest_positions.clone(),
        rest_positions,
        offsets: vec![Vec3::zeros(); vertex_count],
        sdf: vec![1.0; vertex_count],
        tets,
        clamp_mask: vec![[false; 3]; vertex_count],
    })
}

impl TetGrid {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn vertex_count(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    /// Deformed vertex positions (rest + clamped offset).
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest_positions
    }

    /// Stored (clamped) displacements.
    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn sdf(&self) -> &[f64] {
        &self.sdf
    }

    pub fn tets(&self) -> &[[u32; 4]] {
        &self.tets
    }

    /// Per-component flags set where the last `apply_offsets` saturated.
    pub fn clamp_mask(&self) -> &[[bool; 3]] {
        &self.clamp_mask
    }

    pub fn cell_edge(&self) -> f64 {
        2.0 / self.resolution as f64
    }

    pub fn offset_bound(&self) -> f64 {
        OFFSET_BETA * self.cell_edge()
    }

    /// Replaces the displacement field. Components beyond `±β·edge` are
    /// saturated and flagged in [`TetGrid::clamp_mask`] so that gradients
    /// through them can be zeroed.
    pub fn apply_offsets(mut self, offsets: &[Vec3]) -> Result<Self> {
        self.set_offsets(offsets)?;
        Ok(self)
    }

    /// In-place form of [`TetGrid::apply_offsets`].
    pub fn set_offsets(&mut self, offsets: &[Vec3]) -> Result<()> {
        if offsets.len() != self.vertex_count() {
            return Err(Error::invalid(format!(
                "offset count {} does not match vertex count {}",
                offsets.len(),
                self.vertex_count()
            )));
        }
        let bound = self.offset_bound();
        for (i, raw) in offsets.iter().enumerate() {
            if !raw.iter().all(|c| c.is_finite()) {
                return Err(Error::numeric(format!("non-finite offset at vertex {i}")));
            }
            let mut clamped = *raw;
            let mut mask = [false; 3];
            for c in 0..3 {
                if raw[c] > bound {
                    clamped[c] = bound;
                    mask[c] = true;
                } else if raw[c] < -bound {
                    clamped[c] = -bound;
                    mask[c] = true;
                }
            }
            self.offsets[i] = clamped;
            self.clamp_mask[i] = mask;
            self.vertices[i] = self.rest_positions[i] + clamped;
        }
        Ok(())
    }

    /// Evaluates `field` at every deformed vertex.
    pub fn set_sdf_from_field<F>(mut self, field: F) -> Result<Self>
    where
        F: Fn(&Vec3) -> f64,
    {
        let values: Vec<f64> = self.vertices.iter().map(&field).collect();
        self.set_sdf(&values)?;
        Ok(self)
    }

    pub fn set_sdf(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.vertex_count() {
            return Err(Error::invalid(format!(
                "sdf count {} does not match vertex count {}",
                values.len(),
                self.vertex_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite sdf value at vertex {i}")));
        }
        self.sdf.copy_from_slice(values);
        Ok(())
    }

    pub fn tet_volume(&self, tet: usize, positions: &[Vec3]) -> f64 {
        let [a, b, c, d] = self.tets[tet].map(|v| &positions[v as usize]);
        tet_signed_volume(a, b, c, d)
    }

    /// Number of tets with non-positive signed volume at the deformed
    /// positions. Clamped offsets do not rule inversions out.
    pub fn inverted_tet_count(&self) -> usize {
        (0..self.tets.len())
            .filter(|&t| self.tet_volume(t, &self.vertices) <= 0.0)
            .count()
    }

    /// Sorted unique grid edges `(lo, hi)`.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        const LOCAL: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let mut edges: Vec<(u32, u32)> = self
            .tets
            .iter()
            .flat_map(|t| {
                LOCAL.iter().map(move |&(a, b)| {
                    let (u, v) = (t[a], t[b]);
                    (u.min(v), u.max(v))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.resolution as u32).to_le_bytes())?;
        w.write_all(&(self.vertex_count() as u64).to_le_bytes())?;
        w.write_all(&(self.tet_count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.vertex_count() * 56 + self.tet_count() * 16);
        for p in &self.rest_positions {
            for c in p.iter() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        for p in &self.offsets {
            for c in p.iter() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        for s in &self.sdf {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for t in &self.tets {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        if cur.take(4)? != GRID_MAGIC {
            return Err(Error::format("not a grid file (bad magic)"));
        }
        let version = cur.u32()?;
        if version != GRID_FORMAT_VERSION {
            return Err(Error::format(format!("unsupported grid format version {version}")));
        }
        let resolution = cur.u32()? as usize;
        let vertex_count = cur.u64()? as usize;
        let tet_count = cur.u64()? as usize;
        let n = resolution + 1;
        if resolution == 0 || vertex_count != n * n * n || tet_count != 6 * resolution.pow(3) {
            return Err(Error::format("grid header counts inconsistent with resolution"));
        }
        let mut vec3s = |count: usize| -> Result<Vec<Vec3>> {
            (0..count)
                .map(|_| Ok(Vec3::new(cur.f64()?, cur.f64()?, cur.f64()?)))
                .collect()
        };
        let rest_positions = vec3s(vertex_count)?;
        let offsets = vec3s(vertex_count)?;
        let sdf = (0..vertex_count).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let mut tets = Vec::with_capacity(tet_count);
        for _ in 0..tet_count {
            let t = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?];
            if t.iter().any(|&v| v as usize >= vertex_count) {
                return Err(Error::format("tet index out of range"));
            }
            tets.push(t);
        }
        if !cur.is_empty() {
            return Err(Error::format("trailing bytes after grid payload"));
        }
        let vertices = rest_positions.iter().zip(&offsets).map(|(p, o)| p + o).collect();
        Ok(TetGrid {
            resolution,
            rest_positions,
            offsets,
            vertices,
            sdf,
            tets,
            clamp_mask: vec![[false; 3]; vertex_count],
        })
    }

    pub fn metadata(&self) -> GridMetadata {
        GridMetadata {
            format_version: GRID_FORMAT_VERSION,
            resolution: self.resolution,
            vertex_count: self.vertex_count(),
            tet_count: self.tet_count(),
            offset_beta: OFFSET_BETA,
            domain: [-1.0, 1.0],
            byte_order: "little-endian".into(),
            arrays: vec![
                "rest_positions:f64x3".into(),
                "offsets:f64x3".into(),
                "sdf:f64".into(),
                "tets:u32x4".into(),
            ],
            inverted_tets: self.inverted_tet_count(),
        }
    }

    /// Writes `path` (binary container) and `path.json` (metadata sidecar).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        fs::write(path, buf)?;
        let sidecar = serde_json::to_string_pretty(&self.metadata())?;
        fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_binary(bytes.as_slice())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub format_version: u32,
    pub resolution: usize,
    pub vertex_count: usize,
    pub tet_count: usize,
    pub offset_beta: f64,
    pub domain: [f64; 2],
    pub byte_order: String,
    pub arrays: Vec<String>,
    pub inverted_tets: usize,
}

pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("unexpected end of data"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn counts_match_closed_forms() {
        let g1 = build_uniform_grid(1).unwrap();
        assert_eq!((g1.vertex_count(), g1.tet_count()), (8, 6));
        let g2 = build_uniform_grid(2).unwrap();
        assert_eq!((g2.vertex_count(), g2.tet_count()), (27, 48));
        assert!(g2.sdf().iter().all(|&s| s == 1.0));
        assert!(g2.offsets().iter().all(|o| *o == Vec3::zeros()));
    }

    #[test]
    fn resolution_zero_is_rejected() {
        assert!(matches!(build_uniform_grid(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn all_tets_positive_at_rest() {
        for r in [1, 2, 5] {
            let g = build_uniform_grid(r).unwrap();
            let cell_volume = g.cell_edge().powi(3);
            for t in 0..g.tet_count() {
                let v = g.tet_volume(t, g.rest_positions());
                assert!((v - cell_volume / 6.0).abs() < 1e-12, "tet {t} volume {v}");
            }
        }
    }

    #[test]
    fn faces_are_conforming_up_to_r16() {
        for r in 1..=16 {
            let g = build_uniform_grid(r).unwrap();
            let mut faces: HashMap<[u32; 3], usize> = HashMap::new();
            for t in g.tets() {
                for skip in 0..4 {
                    let mut f = [0u32; 3];
                    let mut k = 0;
                    for (i, &v) in t.iter().enumerate() {
                        if i != skip {
                            f[k] = v;
                            k += 1;
                        }
                    }
                    f.sort_unstable();
                    *faces.entry(f).or_default() += 1;
                }
            }
            let on_boundary = |f: &[u32; 3]| {
                (0..3).any(|axis| {
                    let c: Vec<f64> = f.iter().map(|&v| g.rest_positions()[v as usize][axis]).collect();
                    c.iter().all(|&x| (x - 1.0).abs() < 1e-12) || c.iter().all(|&x| (x + 1.0).abs() < 1e-12)
                })
            };
            for (f, count) in &faces {
                let expected = if on_boundary(f) { 1 } else { 2 };
                assert_eq!(*count, expected, "R={r} face {f:?}");
            }
        }
    }

    #[test]
    fn zero_offsets_are_identity() {
        let g = build_uniform_grid(3).unwrap();
        let zeros = vec![Vec3::zeros(); g.vertex_count()];
        let g = g.apply_offsets(&zeros).unwrap();
        assert_eq!(g.vertices(), g.rest_positions());
    }

    #[test]
    fn large_offset_saturates_at_half_cell() {
        let g = build_uniform_grid(4).unwrap();
        let mut off = vec![Vec3::zeros(); g.vertex_count()];
        off[7] = Vec3::new(10.0, 0.0, 0.0);
        let g = g.apply_offsets(&off).unwrap();
        assert_eq!(g.offsets()[7], Vec3::new(0.25, 0.0, 0.0));
        assert_eq!(g.clamp_mask()[7], [true, false, false]);
        assert_eq!(g.clamp_mask()[6], [false; 3]);
    }

    #[test]
    fn offset_length_mismatch_is_rejected() {
        let g = build_uniform_grid(2).unwrap();
        assert!(matches!(g.apply_offsets(&[Vec3::zeros()]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn small_random_offsets_shift_exactly_and_keep_orientation() {
        let g = build_uniform_grid(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // A quarter of the clamp bound keeps every Kuhn tet positive.
        let amp = 0.25 * g.offset_bound();
        let off: Vec<Vec3> = (0..g.vertex_count())
            .map(|_| Vec3::from_fn(|_, _| rng.gen_range(-amp..amp)))
            .collect();
        let g = g.apply_offsets(&off).unwrap();
        for i in 0..g.vertex_count() {
            assert_eq!(g.vertices()[i], g.rest_positions()[i] + off[i]);
        }
        for t in 0..g.tet_count() {
            let [a, b, c, d] = g.tets()[t].map(|v| g.vertices()[v as usize]);
            let m = nalgebra::Matrix3::from_columns(&[b - a, c - a, d - a]);
            assert!(m.determinant() > 0.0, "tet {t} inverted");
        }
        assert_eq!(g.inverted_tet_count(), 0);
    }

    #[test]
    fn max_clamped_offsets_can_invert_and_are_reported() {
        // Saturated offsets are within the bound but may still fold tets;
        // the diagnostic must see them.
        let g = build_uniform_grid(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = g.offset_bound();
        let off: Vec<Vec3> = (0..g.vertex_count())
            .map(|_| Vec3::from_fn(|_, _| if rng.gen_bool(0.5) { b } else { -b }))
            .collect();
        let g = g.apply_offsets(&off).unwrap();
        assert!(g.offsets().iter().all(|o| o.amax() <= b));
        let inverted = g.inverted_tet_count();
        assert!(inverted > 0 && inverted < g.tet_count(), "inverted={inverted}");
    }

    #[test]
    fn sdf_from_field_and_non_finite_rejection() {
        let g = build_uniform_grid(2).unwrap();
        let g = g.set_sdf_from_field(|p| p.norm() - 0.5).unwrap();
        // vertex (1,1,1) is the origin for R=2
        assert_eq!(g.rest_positions()[13], Vec3::zeros());
        assert_eq!(g.sdf()[13], -0.5);
        let err = g.set_sdf_from_field(|p| if p.norm() < 1e-9 { f64::NAN } else { 1.0 });
        match err {
            Err(Error::Numeric(msg)) => assert!(msg.contains("13"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn edges_of_single_cell() {
        let g = build_uniform_grid(1).unwrap();
        // 12 cube edges + 6 face diagonals + 1 main diagonal
        assert_eq!(g.edges().len(), 19);
    }

    #[test]
    fn binary_round_trip_and_determinism() {
        let g = build_uniform_grid(3).unwrap().set_sdf_from_field(|p| p.x - 0.1).unwrap();
        let mut off = vec![Vec3::zeros(); g.vertex_count()];
        off[5] = Vec3::new(0.1, -0.05, 0.2);
        let g = g.apply_offsets(&off).unwrap();
        let mut a = Vec::new();
        g.write_binary(&mut a).unwrap();
        let back = TetGrid::read_binary(a.as_slice()).unwrap();
        assert_eq!(back.sdf(), g.sdf());
        assert_eq!(back.offsets(), g.offsets());
        assert_eq!(back.vertices(), g.vertices());
        assert_eq!(back.tets(), g.tets());

        let mut b = Vec::new();
        build_uniform_grid(3).unwrap().write_binary(&mut b).unwrap();
        let mut c = Vec::new();
        build_uniform_grid(3).unwrap().write_binary(&mut c).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let g = build_uniform_grid(2).unwrap();
        let mut a = Vec::new();
        g.write_binary(&mut a).unwrap();
        a.truncate(a.len() - 3);
        assert!(matches!(TetGrid::read_binary(a.as_slice()), Err(Error::Format(_))));
    }
}
