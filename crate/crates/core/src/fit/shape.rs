use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chamfer_grad, ChamferMode, LossWeights};
use crate::diff::optim::{LrSchedule, OptimizerConfig};
use crate::diff::{OptimizerState, Segment};
use crate::error::{Error, Result};
use crate::geometry::{sample_surface, samples_backward, MeshDistance, NearestNeighborIndex, SdfCache};
use crate::march::{backward_surface_full, marching_tetrahedra};
use crate::mesh::SurfaceMesh;
use crate::tetgrid::TetGrid;
use crate::Vec3;

/// Consecutive empty extractions tolerated before giving up.
pub const MAX_EMPTY_STREAK: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFitConfig {
    pub iterations: usize,
    /// Surface samples per side of the chamfer term.
    pub samples: usize,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub chamfer: ChamferMode,
    pub seed: u64,
}

impl Default for ShapeFitConfig {
    fn default() -> Self {
        ShapeFitConfig {
            iterations: 300,
            samples: 5000,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig { schedule: LrSchedule::Cosine, ..OptimizerConfig::adam(3e-3) },
            chamfer: ChamferMode::Squared,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTraceRow {
    pub iteration: usize,
    pub loss: f64,
    /// `None` when the extraction was empty.
    pub chamfer: Option<f64>,
    pub sdf_term: f64,
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct ShapeFit {
    /// Lowest-loss state seen (with a non-empty surface).
    pub grid: TetGrid,
    pub best_iteration: usize,
    pub trace: Vec<ShapeTraceRow>,
}

struct Evaluation {
    loss: f64,
    chamfer: Option<f64>,
    sdf_term: f64,
    grad_offsets: Vec<Vec3>,
    grad_sdf: Vec<f64>,
}

fn evaluate(
    grid: &TetGrid,
    target: &[Vec3],
    target_index: &NearestNeighborIndex,
    sdf_gt: &[f64],
    config: &ShapeFitConfig,
    sample_seed: u64,
) -> Result<Evaluation> {
    let n = grid.vertex_count();
    let w = &config.weights;
    let mut grad_sdf = vec![0.0; n];
    let mut grad_offsets = vec![Vec3::zeros(); n];

    let mut sdf_term = 0.0;
    for (i, (s, gt)) in grid.sdf().iter().zip(sdf_gt).enumerate() {
        let r = s - gt;
        sdf_term += r.abs();
        let sign = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
        grad_sdf[i] = w.sdf * sign / n as f64;
    }
    sdf_term /= n as f64;
    let mut loss = w.sdf * sdf_term;

    let mut chamfer = None;
    if w.cd > 0.0 {
        let mesh = marching_tetrahedra(grid)?;
        if !mesh.is_empty() && mesh.total_area() > 0.0 {
            let samples = sample_surface(&mesh, config.samples, sample_seed)?;
            let points: Vec<Vec3> = samples.iter().map(|s| s.point).collect();
            let terms = chamfer_grad(&points, target, target_index, config.chamfer)?;
            loss += w.cd * terms.value;
            chamfer = Some(terms.value);
            let scaled: Vec<Vec3> = terms.grad_a.iter().map(|g| g * w.cd).collect();
            let vertex_grads = samples_backward(&mesh, &samples, &scaled);
            let g = backward_surface_full(&mesh, &vertex_grads, grid)?;
            for (acc, v) in grad_sdf.iter_mut().zip(&g.sdf) {
                *acc += v;
            }
            grad_offsets = g.offsets(grid);
        }
    }
    Ok(Evaluation { loss, chamfer, sdf_term, grad_offsets, grad_sdf })
}

fn is_empty_extraction(e: &Evaluation, w: &LossWeights) -> bool {
    w.cd > 0.0 && e.chamfer.is_none()
}

/// Fits grid offsets and SDF values to a closed target mesh by gradient
/// descent on a sampled chamfer term plus an L1 SDF term. The SDF reference
/// is queried at the current deformed vertices and treated as a constant.
pub fn fit_shape(grid: &TetGrid, target: &SurfaceMesh, config: &ShapeFitConfig) -> Result<ShapeFit> {
    config.weights.validate()?;
    if config.samples == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let query = MeshDistance::new(target)?;
    if !query.is_closed() {
        return Err(Error::invalid("shape fitting needs a closed target mesh"));
    }
    let target_points: Vec<Vec3> = sample_surface(target, config.samples, config.seed ^ 0x7a12)?
        .iter()
        .map(|s| s.point)
        .collect();
    let target_index = NearestNeighborIndex::new(&target_points);

    let n = grid.vertex_count();
    let mut grid = grid.clone();
    let layout = vec![
        Segment { name: "offsets".into(), shape: vec![n, 3], offset: 0, len: 3 * n },
        Segment { name: "sdf".into(), shape: vec![n], offset: 3 * n, len: n },
    ];
    let mut params: Vec<f64> = grid.offsets().iter().flat_map(|o| o.iter().copied()).collect();
    params.extend_from_slice(grid.sdf());
    let mut optimizer = OptimizerState::new(config.optimizer, params.len(), config.iterations as u64);

    let mut cache = SdfCache::new(&query, grid.vertices());
    let mut trace = Vec::with_capacity(config.iterations);
    let mut best: Option<(f64, usize, TetGrid)> = None;
    let mut empty_streak = 0;

    for it in 0..config.iterations {
        cache.update(&query, grid.vertices());
        let eval = evaluate(&grid, &target_points, &target_index, cache.values(), config, config.seed.wrapping_add(it as u64))?;
        if !eval.loss.is_finite() {
            return Err(Error::numeric(format!("shape loss became non-finite at iteration {it}")));
        }
        if is_empty_extraction(&eval, &config.weights) {
            empty_streak += 1;
            if empty_streak > MAX_EMPTY_STREAK {
                return Err(Error::FitDiverged(format!(
                    "surface extraction empty for {empty_streak} consecutive iterations"
                )));
            }
        } else {
            empty_streak = 0;
            if best.as_ref().map_or(true, |b| eval.loss < b.0) {
                best = Some((eval.loss, it, grid.clone()));
            }
        }
        trace.push(ShapeTraceRow {
            iteration: it,
            loss: eval.loss,
            chamfer: eval.chamfer,
            sdf_term: eval.sdf_term,
            best: best.as_ref().map_or(f64::INFINITY, |b| b.0),
        });

        let mut grads: Vec<f64> = eval.grad_offsets.iter().flat_map(|g| g.iter().copied()).collect();
        grads.extend_from_slice(&eval.grad_sdf);
        optimizer.step(&mut params, &grads, &layout)?;
        let offsets: Vec<Vec3> = params[..3 * n].chunks_exact(3).map(Vec3::from_column_slice).collect();
        grid.set_offsets(&offsets)?;
        grid.set_sdf(&params[3 * n..])?;
        // Project back onto the feasible box so saturated components can recover.
        for (p, o) in params[..3 * n].chunks_exact_mut(3).zip(grid.offsets()) {
            p.copy_from_slice(o.as_slice());
        }
    }

    match best {
        Some((_, best_iteration, grid)) => Ok(ShapeFit { grid, best_iteration, trace }),
        None => Err(Error::FitDiverged("no iteration produced a surface".into())),
    }
}

/// Signed distances from `target` at every deformed grid vertex.
pub fn target_sdf(grid: &TetGrid, target: &SurfaceMesh) -> Result<Vec<f64>> {
    let query = MeshDistance::new(target)?;
    Ok(grid.vertices().par_iter().map(|v| query.signed_distance(v).value).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::optim::LrSchedule;
    use crate::fit::chamfer;
    use crate::geometry::sample_surface;
    use crate::mesh::icosphere;
    use crate::tetgrid::build_uniform_grid;

    fn points(m: &SurfaceMesh, n: usize, seed: u64) -> Vec<Vec3> {
        sample_surface(m, n, seed).unwrap().iter().map(|s| s.point).collect()
    }

    fn adam_config(iterations: usize) -> ShapeFitConfig {
        ShapeFitConfig {
            iterations,
            samples: 2000,
            optimizer: OptimizerConfig::adam(2e-3),
            ..Default::default()
        }
    }

    #[test]
    fn sdf_only_fit_recovers_queried_values() {
        let target = icosphere(0.5, 2);
        let grid = build_uniform_grid(6).unwrap().set_sdf_from_field(|p| p.norm() - 0.3).unwrap();
        let config = ShapeFitConfig {
            weights: LossWeights { cd: 0.0, sdf: 1.0, vol: 0.0, reg: 0.0 },
            optimizer: OptimizerConfig { schedule: LrSchedule::Cosine, ..OptimizerConfig::adam(5e-3) },
            ..adam_config(400)
        };
        let fit = fit_shape(&grid, &target, &config).unwrap();
        let gt = target_sdf(&fit.grid, &target).unwrap();
        for (s, g) in fit.grid.sdf().iter().zip(&gt) {
            assert!((s - g).abs() < 1e-3, "{s} vs {g}");
        }
        assert!(fit.grid.offsets().iter().all(|o| o.norm() == 0.0));
    }

    #[test]
    fn best_so_far_is_monotone_and_deterministic() {
        let target = icosphere(0.5, 2);
        let grid = build_uniform_grid(8).unwrap().set_sdf_from_field(|p| p.norm() - 0.35).unwrap();
        let a = fit_shape(&grid, &target, &adam_config(30)).unwrap();
        let b = fit_shape(&grid, &target, &adam_config(30)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.windows(2).all(|w| w[1].best <= w[0].best));
        let first = chamfer(&points(&target, 2000, 1), &points(&marching_tetrahedra(&grid).unwrap(), 2000, 2)).unwrap();
        let last = chamfer(&points(&target, 2000, 1), &points(&marching_tetrahedra(&a.grid).unwrap(), 2000, 2)).unwrap();
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn exact_field_is_near_a_fixed_point() {
        let target = icosphere(0.5, 3);
        let grid = build_uniform_grid(16).unwrap();
        let gt = target_sdf(&grid, &target).unwrap();
        let mut grid = grid;
        grid.set_sdf(&gt).unwrap();
        let fit = fit_shape(&grid, &target, &ShapeFitConfig { samples: 5000, ..adam_config(40) }).unwrap();
        let first = fit.trace[0].loss;
        let last = fit.trace.last().unwrap().loss;
        assert!((first - last).abs() <= 0.1 * last.max(first), "{first} vs {last}");
    }

    #[test]
    fn empty_extraction_diverges() {
        let target = icosphere(0.5, 1);
        let grid = build_uniform_grid(4).unwrap().set_sdf_from_field(|_| 1.0).unwrap();
        let config = ShapeFitConfig {
            weights: LossWeights { cd: 1.0, sdf: 0.0, vol: 0.0, reg: 0.0 },
            ..adam_config(40)
        };
        assert!(matches!(fit_shape(&grid, &target, &config), Err(Error::FitDiverged(_))));
    }

    #[test]
    fn open_target_rejected() {
        let mut target = icosphere(0.5, 1);
        target.triangles.pop();
        let grid = build_uniform_grid(4).unwrap();
        assert!(fit_shape(&grid, &target, &ShapeFitConfig::default()).is_err());
    }
}
