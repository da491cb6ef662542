//! Shape and motion fitting.

pub mod model;
pub mod motion;
pub mod shape;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NearestNeighborIndex, PlaneSpec};
use crate::mesh::SurfaceMesh;
use crate::Vec3;

pub use model::{DeformationModel, ModelConfig, ModelKind};
pub use motion::{fit_motion, model_from_checkpoint, Canonical, MotionConfig, MotionFit, MotionTraceRow};
pub use shape::{fit_shape, ShapeFit, ShapeFitConfig, ShapeTraceRow};

/// Evidence available for one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    FullMesh(SurfaceMesh),
    Slices { planes: Vec<PlaneSpec>, contours: Vec<Vec<Vec3>> },
    /// Enclosed volume as a fraction of the domain cube.
    Volume(f64),
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Observation::FullMesh(m) => {
                if m.is_empty() {
                    return Err(Error::invalid("full-mesh observation is empty"));
                }
                m.validate()
            }
            Observation::Slices { planes, contours } => {
                if planes.is_empty() {
                    return Err(Error::invalid("slice observation needs at least one plane"));
                }
                if planes.len() != contours.len() {
                    return Err(Error::invalid(format!(
                        "{} planes but {} contours",
                        planes.len(),
                        contours.len()
                    )));
                }
                Ok(())
            }
            Observation::Volume(v) => {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::invalid(format!("normalized volume {v} outside [0, 1]")));
                }
                Ok(())
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Observation::FullMesh(_) => "full",
            Observation::Slices { .. } => "slices",
            Observation::Volume(_) => "volume",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cd: f64,
    pub sdf: f64,
    pub vol: f64,
    /// Mean squared grid displacement from rest; applies in every motion mode.
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cd: 1.0, sdf: 0.1, vol: 1.0, reg: 1e-2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cd, self.sdf, self.vol, self.reg];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::invalid("all loss weights are zero"));
        }
        Ok(())
    }
}

/// Per-pair distance used inside the chamfer sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChamferMode {
    #[default]
    Squared,
    Euclidean,
}

impl ChamferMode {
    fn distance(self, d2: f64) -> f64 {
        match self {
            ChamferMode::Squared => d2,
            ChamferMode::Euclidean => d2.sqrt(),
        }
    }

    /// d(distance)/d(query) for offset `q - target`.
    fn gradient(self, diff: Vec3, d2: f64) -> Vec3 {
        match self {
            ChamferMode::Squared => diff * 2.0,
            ChamferMode::Euclidean if d2 > 0.0 => diff / d2.sqrt(),
            ChamferMode::Euclidean => Vec3::zeros(),
        }
    }
}

/// Chamfer value with gradients for both point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamferTerms {
    pub value: f64,
    pub grad_a: Vec<Vec3>,
    pub grad_b: Vec<Vec3>,
}

fn nearest_all(index: &NearestNeighborIndex, queries: &[Vec3]) -> Vec<(usize, f64)> {
    queries
        .par_iter()
        .map(|q| index.nearest(q).expect("index is non-empty"))
        .collect()
}

fn check_nonempty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(format!(
            "chamfer needs two non-empty point sets (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Squared chamfer distance: mean nearest squared distance from `a` to `b`
/// plus the same from `b` to `a`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    chamfer_with_mode(a, b, ChamferMode::Squared)
}

pub fn chamfer_with_mode(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> Result<f64> {
    check_nonempty(a, b)?;
    let ia = NearestNeighborIndex::new(a);
    let ib = NearestNeighborIndex::new(b);
    Ok(one_side(&ib, a, mode) + one_side(&ia, b, mode))
}

fn one_side(target: &NearestNeighborIndex, queries: &[Vec3], mode: ChamferMode) -> f64 {
    let sum: f64 = nearest_all(target, queries).iter().map(|&(_, d2)| mode.distance(d2)).sum();
    sum / queries.len() as f64
}

/// Chamfer with gradients; `b_index` must index `b`. Correspondences are
/// frozen at their nearest neighbours.
pub fn chamfer_grad(a: &[Vec3], b: &[Vec3], b_index: &NearestNeighborIndex, mode: ChamferMode) -> Result<ChamferTerms> {
    check_nonempty(a, b)?;
    if b_index.len() != b.len() {
        return Err(Error::invalid("nearest-neighbour index does not match its point set"));
    }
    let a_index = NearestNeighborIndex::new(a);
    let mut grad_a = vec![Vec3::zeros(); a.len()];
    let mut grad_b = vec![Vec3::zeros(); b.len()];

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut forward = 0.0;
    for (i, (j, d2)) in nearest_all(b_index, a).into_iter().enumerate() {
        forward += mode.distance(d2);
        let g = mode.gradient(a[i] - b[j], d2) / na;
        grad_a[i] += g;
        grad_b[j] -= g;
    }
    let mut backward = 0.0;
    for (j, (i, d2)) in nearest_all(&a_index, b).into_iter().enumerate() {
        backward += mode.distance(d2);
        let g = mode.gradient(b[j] - a[i], d2) / nb;
        grad_b[j] += g;
        grad_a[i] -= g;
    }
    Ok(ChamferTerms { value: forward / na + backward / nb, grad_a, grad_b })
}

/// Brute-force reference with identical summation order.
pub fn chamfer_brute_force(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> Result<f64> {
    check_nonempty(a, b)?;
    let side = |from: &[Vec3], to: &[Vec3]| {
        let mut sum = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                best = best.min((q - p).norm_squared());
            }
            sum += mode.distance(best);
        }
        sum / from.len() as f64
    };
    Ok(side(a, b) + side(b, a))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn chamfer_examples() {
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::z()];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert!(matches!(chamfer(&a, &[]), Err(Error::InvalidArgument(_))));
        assert_eq!(chamfer_with_mode(&a, &[Vec3::new(0.0, 3.0, 4.0)], ChamferMode::Euclidean).unwrap(), 10.0);
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (na, nb) = (rng.gen_range(1..200), rng.gen_range(1..200));
            let (a, b) = (cloud(&mut rng, na), cloud(&mut rng, nb));
            for mode in [ChamferMode::Squared, ChamferMode::Euclidean] {
                let fast = chamfer_with_mode(&a, &b, mode).unwrap();
                assert_eq!(fast, chamfer_brute_force(&a, &b, mode).unwrap());
                let idx = NearestNeighborIndex::new(&b);
                assert_eq!(chamfer_grad(&a, &b, &idx, mode).unwrap().value, fast);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (cloud(&mut rng, 40), cloud(&mut rng, 30));
        for mode in [ChamferMode::Squared, ChamferMode::Euclidean] {
            let idx = NearestNeighborIndex::new(&b);
            let terms = chamfer_grad(&a, &b, &idx, mode).unwrap();
            // Small steps keep the nearest-neighbour assignment fixed.
            let h = 1e-7;
            for (i, c) in [(0, 0), (7, 1), (22, 2)] {
                let mut ap = a.clone();
                ap[i][c] += h;
                let mut am = a.clone();
                am[i][c] -= h;
                let fd = (chamfer_with_mode(&ap, &b, mode).unwrap() - chamfer_with_mode(&am, &b, mode).unwrap()) / (2.0 * h);
                assert!((fd - terms.grad_a[i][c]).abs() < 1e-6, "{fd} vs {}", terms.grad_a[i][c]);
                let mut bp = b.clone();
                bp[i][c] += h;
                let mut bm = b.clone();
                bm[i][c] -= h;
                let fd = (chamfer_with_mode(&a, &bp, mode).unwrap() - chamfer_with_mode(&a, &bm, mode).unwrap()) / (2.0 * h);
                assert!((fd - terms.grad_b[i][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { cd: 0.0, sdf: 0.0, vol: 0.0, reg: 0.0 }.validate().is_err());
        assert!(LossWeights { cd: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn observation_validation() {
        assert!(Observation::Volume(1.5).validate().is_err());
        assert!(Observation::Slices { planes: vec![], contours: vec![] }.validate().is_err());
        assert!(Observation::FullMesh(SurfaceMesh::default()).validate().is_err());
        assert!(Observation::Volume(0.125).validate().is_ok());
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric(seed in 0u64..1000, na in 1usize..60, nb in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (cloud(&mut rng, na), cloud(&mut rng, nb));
            let ab = chamfer(&a, &b).unwrap();
            let ba = chamfer(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-15 * ab.max(1.0));
        }
    }
}
