use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{DeformationModel, ForwardCache, ModelConfig, Neighbors};
use super::{chamfer_grad, ChamferMode, LossWeights, Observation};
use crate::diff::optim::OptimizerConfig;
use crate::diff::{flatten, layout, unflatten, Checkpoint, OptimizerState};
use crate::error::{Error, Result};
use crate::geometry::volume::signed_volume_unchecked;
use crate::geometry::{
    plane_section_detailed, sample_surface, samples_backward, section_backward, volume_gradient, NearestNeighborIndex,
    DOMAIN_VOLUME,
};
use crate::march::{edge_crossing, marching_tetrahedra};
use crate::mesh::SurfaceMesh;
use crate::tetgrid::TetGrid;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    /// Passes over the sequence.
    pub epochs: usize,
    /// Frames per optimizer step.
    pub batch_frames: usize,
    /// Surface samples per side for full-mesh chamfer terms.
    pub samples: usize,
    pub chamfer: ChamferMode,
    pub seed: u64,
    /// Recompute advected vertices from edge crossings of the deformed grid
    /// instead of reusing the canonical interpolation weights.
    pub reextract: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::adam(1e-3),
            epochs: 150,
            batch_frames: 1,
            samples: 2000,
            chamfer: ChamferMode::Squared,
            seed: 0,
            reextract: false,
        }
    }
}

impl MotionConfig {
    pub fn total_steps(&self, frames: usize) -> usize {
        self.epochs * frames.div_ceil(self.batch_frames.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTraceRow {
    pub step: usize,
    pub frame: usize,
    pub loss: f64,
}

/// The canonical surface, the grid vertices that generate it, and the
/// adjacency used by the deformation model.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub surface: SurfaceMesh,
    /// Grid vertex ids of the active set, ascending.
    pub active: Vec<u32>,
    /// Canonical positions of the active vertices.
    pub rest: Vec<Vec3>,
    pub sdf: Vec<f64>,
    /// Per surface vertex: local endpoint indices and interpolation weight.
    pub edges: Vec<(u32, u32, f64)>,
    pub neighbors: Neighbors,
}

impl Canonical {
    /// Extracts the surface once and restricts the grid to the vertices that
    /// generate it.
    pub fn new(grid: &TetGrid) -> Result<Self> {
        let surface = marching_tetrahedra(grid)?;
        if surface.is_empty() {
            return Err(Error::invalid("canonical grid extracts an empty surface"));
        }
        let prov = surface.provenance.as_ref().expect("extraction records provenance");
        let mut active: Vec<u32> = prov.iter().flat_map(|p| [p.a, p.b]).collect();
        active.sort_unstable();
        active.dedup();
        let mut local = vec![u32::MAX; grid.vertex_count()];
        for (i, &g) in active.iter().enumerate() {
            local[g as usize] = i as u32;
        }
        let edges = prov.iter().map(|p| (local[p.a as usize], local[p.b as usize], p.t)).collect();
        let grid_edges: Vec<(u32, u32)> = grid
            .edges()
            .into_iter()
            .filter(|&(a, b)| local[a as usize] != u32::MAX && local[b as usize] != u32::MAX)
            .map(|(a, b)| (local[a as usize], local[b as usize]))
            .collect();
        let neighbors = Neighbors::from_edges(active.len(), &grid_edges);
        let rest = active.iter().map(|&g| grid.vertices()[g as usize]).collect();
        let sdf = active.iter().map(|&g| grid.sdf()[g as usize]).collect();
        Ok(Canonical { surface, active, rest, sdf, edges, neighbors })
    }

    /// Surface vertex positions for deformed active-vertex positions.
    pub fn advect(&self, moved: &[Vec3], reextract: bool) -> Vec<Vec3> {
        self.edges
            .iter()
            .map(|&(a, b, t)| {
                let (pa, pb) = (moved[a as usize], moved[b as usize]);
                if reextract {
                    let (sa, sb) = (self.sdf[a as usize], self.sdf[b as usize]);
                    edge_crossing(&pa, &pb, sa, sb).expect("canonical edges cross the level set").point
                } else {
                    pa * (1.0 - t) + pb * t
                }
            })
            .collect()
    }

    /// Adjoint of [`Canonical::advect`].
    pub fn advect_backward(&self, grads: &[Vec3]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.rest.len()];
        for (&(a, b, t), g) in self.edges.iter().zip(grads) {
            out[a as usize] += g * (1.0 - t);
            out[b as usize] += g * t;
        }
        out
    }

    pub fn mesh_with(&self, positions: Vec<Vec3>) -> SurfaceMesh {
        SurfaceMesh { positions, triangles: self.surface.triangles.clone(), provenance: None }
    }
}

/// Fitted motion: the model plus everything needed to replay it.
#[derive(Debug, Clone)]
pub struct MotionFit {
    pub model: DeformationModel,
    pub canonical: Canonical,
    pub trace: Vec<MotionTraceRow>,
    /// Loss of every frame after the last update.
    pub final_losses: Vec<f64>,
    pub reextract: bool,
    pub optimizer: OptimizerState,
}

impl MotionFit {
    /// Deformed active grid vertices at `frame`.
    pub fn grid_positions(&self, frame: usize) -> Result<Vec<Vec3>> {
        self.model.forward(frame, &self.canonical.rest, &self.canonical.neighbors)
    }

    /// Advected canonical surface at `frame`; vertex `i` corresponds to
    /// canonical surface vertex `i` in every frame.
    pub fn frame_surface(&self, frame: usize) -> Result<SurfaceMesh> {
        let moved = self.grid_positions(frame)?;
        Ok(self.canonical.mesh_with(self.canonical.advect(&moved, self.reextract)))
    }

    /// Model parameters under `model.`, optimizer buffers under `optim.`.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::default();
        let model = &self.model;
        ck.meta.insert("model_config".into(), serde_json::to_string(&model.config)?);
        ck.meta.insert("frames".into(), model.frames.to_string());
        ck.meta.insert("vertices".into(), model.vertices.to_string());
        ck.meta.insert("optimizer".into(), serde_json::to_string(&self.optimizer.config)?);
        ck.meta.insert("optimizer_steps".into(), self.optimizer.steps.to_string());
        ck.meta.insert("reextract".into(), self.reextract.to_string());
        ck.push_params("model", model);
        ck.push("optim.first", vec![self.optimizer.first.len()], self.optimizer.first.clone());
        ck.push("optim.second", vec![self.optimizer.second.len()], self.optimizer.second.clone());
        Ok(ck)
    }
}

fn meta<'a>(ck: &'a Checkpoint, key: &str) -> Result<&'a str> {
    ck.meta.get(key).map(String::as_str).ok_or_else(|| Error::format(format!("checkpoint lacks '{key}'")))
}

/// Rebuilds the deformation model stored by [`MotionFit::checkpoint`].
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<DeformationModel> {
    let config: ModelConfig = serde_json::from_str(meta(ck, "model_config")?)?;
    let parse = |key: &str| -> Result<usize> { meta(ck, key)?.parse().map_err(|_| Error::format(format!("bad '{key}' in checkpoint"))) };
    let mut model = DeformationModel::new(config, parse("frames")?, parse("vertices")?, 0)?;
    ck.load_params("model", &mut model)?;
    Ok(model)
}

/// Per-frame data that stays fixed during optimization.
enum Target {
    Points { points: Vec<Vec3>, index: NearestNeighborIndex },
    Slices { planes: Vec<crate::geometry::PlaneSpec>, contours: Vec<Option<(Vec<Vec3>, NearestNeighborIndex)>> },
    Volume(f64),
}

impl Target {
    fn new(obs: &Observation, samples: usize, seed: u64) -> Result<Self> {
        obs.validate()?;
        Ok(match obs {
            Observation::FullMesh(m) => {
                let points: Vec<Vec3> = sample_surface(m, samples, seed)?.iter().map(|s| s.point).collect();
                let index = NearestNeighborIndex::new(&points);
                Target::Points { points, index }
            }
            Observation::Slices { planes, contours } => Target::Slices {
                planes: planes.clone(),
                contours: contours
                    .iter()
                    .map(|c| {
                        if c.is_empty() {
                            None
                        } else {
                            Some((c.clone(), NearestNeighborIndex::new(c)))
                        }
                    })
                    .collect(),
            },
            Observation::Volume(v) => Target::Volume(*v),
        })
    }
}

fn frame_seed(seed: u64, step: usize, frame: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((step as u64) << 20)
        .wrapping_add(frame as u64)
}

/// Loss of one frame and its gradient with respect to the deformed active
/// vertices.
fn frame_loss(
    canonical: &Canonical,
    moved: &[Vec3],
    target: &Target,
    config: &MotionConfig,
    sample_seed: u64,
) -> Result<(f64, Vec<Vec3>)> {
    let w = &config.weights;
    let mesh = canonical.mesh_with(canonical.advect(moved, config.reextract));
    let mut g_surface = vec![Vec3::zeros(); mesh.positions.len()];
    let mut loss = 0.0;

    match target {
        Target::Points { points, index } => {
            if w.cd > 0.0 {
                let samples = sample_surface(&mesh, config.samples, sample_seed)?;
                let pts: Vec<Vec3> = samples.iter().map(|s| s.point).collect();
                let terms = chamfer_grad(&pts, points, index, config.chamfer)?;
                loss += w.cd * terms.value;
                let scaled: Vec<Vec3> = terms.grad_a.iter().map(|g| g * w.cd).collect();
                g_surface = samples_backward(&mesh, &samples, &scaled);
            }
        }
        Target::Slices { planes, contours } => {
            for (plane, contour) in planes.iter().zip(contours) {
                let Some((points, index)) = contour else { continue };
                let section = plane_section_detailed(&mesh, plane);
                if section.points.is_empty() {
                    log::debug!("predicted surface misses an observed slice");
                    continue;
                }
                let terms = chamfer_grad(&section.points, points, index, config.chamfer)?;
                loss += w.cd * terms.value;
                let scaled: Vec<Vec3> = terms.grad_a.iter().map(|g| g * w.cd).collect();
                for (acc, g) in g_surface.iter_mut().zip(section_backward(&mesh, plane, &section, &scaled)) {
                    *acc += g;
                }
            }
        }
        Target::Volume(value) => {
            let nv = signed_volume_unchecked(&mesh) / DOMAIN_VOLUME;
            let r = nv - value;
            loss += w.vol * r.abs();
            let sign = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
            let k = w.vol * sign / DOMAIN_VOLUME;
            g_surface = volume_gradient(&mesh).iter().map(|g| g * k).collect();
        }
    }

    let mut g_moved = canonical.advect_backward(&g_surface);
    if w.reg > 0.0 {
        let n = moved.len() as f64;
        let mut reg = 0.0;
        for (i, (p, p0)) in moved.iter().zip(&canonical.rest).enumerate() {
            let d = p - p0;
            reg += d.norm_squared();
            g_moved[i] += d * (2.0 * w.reg / n);
        }
        loss += w.reg * reg / n;
    }
    Ok((loss, g_moved))
}

struct FrameResult {
    loss: f64,
    grad: Vec<f64>,
}

fn frame_step(
    model: &DeformationModel,
    canonical: &Canonical,
    target: &Target,
    frame: usize,
    config: &MotionConfig,
    sample_seed: u64,
) -> Result<FrameResult> {
    let (moved, cache): (Vec<Vec3>, ForwardCache) = model.forward_cached(frame, &canonical.rest, &canonical.neighbors)?;
    let (loss, g_moved) = frame_loss(canonical, &moved, target, config, sample_seed)?;
    let mut grad = model.zeros_like();
    model.backward(frame, &canonical.neighbors, &cache, &g_moved, &mut grad);
    Ok(FrameResult { loss, grad: flatten(&grad) })
}

/// Loss of one frame for the current model, without gradients.
pub fn evaluate_frame(fit: &MotionFit, obs: &Observation, frame: usize, config: &MotionConfig) -> Result<f64> {
    let target = Target::new(obs, config.samples, frame_seed(config.seed, usize::MAX, frame))?;
    let moved = fit.grid_positions(frame)?;
    Ok(frame_loss(&fit.canonical, &moved, &target, config, frame_seed(config.seed ^ 1, usize::MAX, frame))?.0)
}

/// Fits a deformation of the canonical grid to a sequence of observations.
/// Grid connectivity and SDF values are never modified: motion is carried by
/// the active grid vertices and the surface is advected with them.
pub fn fit_motion(canonical: &TetGrid, sequence: &[Observation], config: &MotionConfig) -> Result<MotionFit> {
    config.weights.validate()?;
    config.model.validate()?;
    if sequence.is_empty() {
        return Err(Error::invalid("empty observation sequence"));
    }
    if config.batch_frames == 0 || config.samples == 0 {
        return Err(Error::invalid("batch size and sample count must be positive"));
    }
    let canon = Canonical::new(canonical)?;
    let frames = sequence.len();
    let targets: Vec<Target> = sequence
        .iter()
        .enumerate()
        .map(|(t, obs)| Target::new(obs, config.samples, frame_seed(config.seed, usize::MAX, t)))
        .collect::<Result<_>>()?;

    let mut model = DeformationModel::new(config.model, frames, canon.rest.len(), config.seed)?;
    let segments = layout(&model);
    let mut params = flatten(&model);
    let total = config.total_steps(frames);
    let mut optimizer = OptimizerState::new(config.optimizer, params.len(), total as u64);
    let mut order: Vec<usize> = (0..frames).collect();
    let mut trace = Vec::with_capacity(total);
    let mut step = 0;

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x51_7cc1_b727_220a));
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_frames) {
            // Frames are independent given the parameters; results are
            // collected in batch order so the reduction is thread-count
            // independent.
            let results: Vec<FrameResult> = batch
                .par_iter()
                .map(|&t| frame_step(&model, &canon, &targets[t], t, config, frame_seed(config.seed, step, t)))
                .collect::<Result<_>>()?;
            let mut grads = vec![0.0; params.len()];
            for (&t, r) in batch.iter().zip(&results) {
                if !r.loss.is_finite() {
                    return Err(Error::FitDiverged(format!("loss of frame {t} became non-finite at step {step}")));
                }
                trace.push(MotionTraceRow { step, frame: t, loss: r.loss });
                for (acc, g) in grads.iter_mut().zip(&r.grad) {
                    *acc += g;
                }
            }
            optimizer.step(&mut params, &grads, &segments)?;
            unflatten(&mut model, &params);
            step += 1;
        }
    }

    let mut fit = MotionFit { model, canonical: canon, trace, final_losses: Vec::new(), reextract: config.reextract, optimizer };
    fit.final_losses = (0..frames)
        .into_par_iter()
        .map(|t| evaluate_frame(&fit, &sequence[t], t, config))
        .collect::<Result<_>>()?;
    Ok(fit)
}

/// Full-pipeline loss for gradient checks: sum of per-frame losses with
/// fixed sampling seeds, and its gradient with respect to the flattened
/// model parameters.
pub fn sequence_loss_and_grad(
    model: &DeformationModel,
    canonical: &Canonical,
    sequence: &[Observation],
    config: &MotionConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; flatten(model).len()];
    for (t, obs) in sequence.iter().enumerate() {
        let target = Target::new(obs, config.samples, frame_seed(config.seed, usize::MAX, t))?;
        let r = frame_step(model, canonical, &target, t, config, frame_seed(config.seed, 0, t))?;
        total += r.loss;
        for (acc, g) in grad.iter_mut().zip(&r.grad) {
            *acc += g;
        }
    }
    Ok((total, grad))
}
