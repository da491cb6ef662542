//! Chamfer, endpoint error and accuracy metrics with JSON/CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::chamfer;
use crate::geometry::sample_surface;
use crate::geometry::volume::signed_volume_unchecked;
use crate::geometry::DOMAIN_VOLUME;
use crate::mesh::SurfaceMesh;
use crate::observe::SequenceDataset;
use crate::Vec3;

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const STRICT_THRESHOLD: f64 = 0.025;
pub const RELAXED_THRESHOLD: f64 = 0.05;

fn check_pairs(pred: &[Vec3], gt: &[Vec3]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "correspondence length mismatch: {} predicted vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("no corresponded points"));
    }
    Ok(())
}

/// Mean Euclidean distance between index-aligned points.
pub fn epe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pairs(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum();
    Ok(sum / pred.len() as f64)
}

/// Fraction of pairs closer than `threshold` (strictly).
pub fn accuracy(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<f64> {
    check_pairs(pred, gt)?;
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold}")));
    }
    let hits = pred.iter().zip(gt).filter(|(p, g)| (*p - *g).norm() < threshold).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    pub strict: f64,
    pub relaxed: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { samples: 10_000, seed: 0x5eed_e7a1, strict: STRICT_THRESHOLD, relaxed: RELAXED_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub cd: f64,
    pub epe: f64,
    pub acc_s: f64,
    pub acc_r: f64,
    pub volume_pred: f64,
    pub volume_gt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub cd: f64,
    pub epe: f64,
    pub acc_s: f64,
    pub acc_r: f64,
    pub volume_abs_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub frames: Vec<FrameMetrics>,
    pub mean: Aggregate,
    pub max: Aggregate,
    pub eval: EvalConfig,
    /// Free-form echo of the run configuration.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl MetricsReport {
    fn from_frames(frames: Vec<FrameMetrics>, eval: EvalConfig, config: serde_json::Value) -> Self {
        let n = frames.len().max(1) as f64;
        let mut mean = Aggregate::default();
        let mut max = Aggregate::default();
        for f in &frames {
            let gap = (f.volume_pred - f.volume_gt).abs();
            mean.cd += f.cd;
            mean.epe += f.epe;
            mean.acc_s += f.acc_s;
            mean.acc_r += f.acc_r;
            mean.volume_abs_gap += gap;
            max.cd = max.cd.max(f.cd);
            max.epe = max.epe.max(f.epe);
            max.acc_s = max.acc_s.max(f.acc_s);
            max.acc_r = max.acc_r.max(f.acc_r);
            max.volume_abs_gap = max.volume_abs_gap.max(gap);
        }
        for v in [&mut mean.cd, &mut mean.epe, &mut mean.acc_s, &mut mean.acc_r, &mut mean.volume_abs_gap] {
            *v /= n;
        }
        MetricsReport { schema_version: METRICS_SCHEMA_VERSION, frames, mean, max, eval, config }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,cd,epe,acc_s,acc_r,volume_pred,volume_gt\n");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                f.frame, f.cd, f.epe, f.acc_s, f.acc_r, f.volume_pred, f.volume_gt
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `metrics.json` and `metrics.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), self.to_json()?)?;
        fs::write(dir.join("metrics.csv"), self.to_csv())?;
        Ok(())
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::from("frame        cd       epe   acc_s   acc_r   vol_pred    vol_gt\n");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{:>5} {:>9.3e} {:>9.3} {:>7.3} {:>7.3} {:>10.5} {:>9.5}",
                f.frame, f.cd, f.epe, f.acc_s, f.acc_r, f.volume_pred, f.volume_gt
            );
        }
        let _ = writeln!(
            s,
            " mean {:>9.3e} {:>9.3} {:>7.3} {:>7.3}   max |vol gap| {:.5}",
            self.mean.cd, self.mean.epe, self.mean.acc_s, self.mean.acc_r, self.max.volume_abs_gap
        );
        s
    }
}

fn volume_of(mesh: &SurfaceMesh) -> f64 {
    signed_volume_unchecked(mesh) / DOMAIN_VOLUME
}

/// Scores predicted frames against a dataset. `canonical` holds the
/// canonical-space positions of the predicted vertices: vertex `i` of every
/// predicted frame is compared with the true motion image of
/// `canonical.positions[i]`.
pub fn evaluate_run(
    predicted: &[SurfaceMesh],
    canonical: &SurfaceMesh,
    dataset: &SequenceDataset,
    eval: &EvalConfig,
    config: serde_json::Value,
) -> Result<MetricsReport> {
    if predicted.len() != dataset.frame_count() {
        return Err(Error::invalid(format!(
            "{} predicted frames for a {}-frame dataset",
            predicted.len(),
            dataset.frame_count()
        )));
    }
    for (t, p) in predicted.iter().enumerate() {
        if p.positions.len() != canonical.positions.len() {
            return Err(Error::invalid(format!(
                "predicted frame {t} has {} vertices, canonical has {}",
                p.positions.len(),
                canonical.positions.len()
            )));
        }
    }
    let frames = predicted
        .par_iter()
        .enumerate()
        .map(|(t, pred)| {
            let gt_mesh = &dataset.frames[t];
            let seed = eval.seed.wrapping_add(t as u64);
            let a: Vec<Vec3> = sample_surface(pred, eval.samples, seed)?.iter().map(|s| s.point).collect();
            let b: Vec<Vec3> = sample_surface(gt_mesh, eval.samples, seed ^ 0xb)?.iter().map(|s| s.point).collect();
            let gt = dataset.motion_of(t, &canonical.positions);
            Ok(FrameMetrics {
                frame: t,
                cd: chamfer(&a, &b)?,
                epe: epe(&pred.positions, &gt)?,
                acc_s: accuracy(&pred.positions, &gt, eval.strict)?,
                acc_r: accuracy(&pred.positions, &gt, eval.relaxed)?,
                volume_pred: volume_of(pred),
                volume_gt: volume_of(gt_mesh),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_frames(frames, *eval, config))
}
