//! Finite-difference checks of every analytic gradient in the pipeline.
//!
//! Each suite compares analytic derivatives against central differences and
//! reports the worst relative error `|a - f| / max(|a|, |f|, REL_FLOOR)`.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{flatten, unflatten};
use crate::error::Result;
use crate::fit::model::Neighbors;
use crate::fit::motion::sequence_loss_and_grad;
use crate::fit::{Canonical, DeformationModel, ModelConfig, ModelKind, MotionConfig, Observation};
use crate::geometry::{enclosed_volume, plane_section, volume_gradient, PlaneSpec};
use crate::march::{backward_surface_full, edge_crossing, marching_tetrahedra};
use crate::mesh::SurfaceMesh;
use crate::tetgrid::{build_uniform_grid, TetGrid};
use crate::Vec3;

/// Denominator floor so that vanishing gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checks: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub suites: Vec<SuiteResult>,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.suites.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>7} {:>12} {:>10}  status", "suite", "checks", "max rel err", "threshold")?;
        for s in &self.suites {
            let status = if s.passed() { "ok" } else { "FAIL" };
            writeln!(f, "{:<18} {:>7} {:>12.3e} {:>10.0e}  {status}", s.name, s.checks, s.max_rel_error, s.threshold)?;
        }
        write!(f, "max relative error {:.3e} in {:.2}s", self.max_rel_error(), self.seconds)
    }
}

struct Worst {
    value: f64,
    checks: usize,
}

impl Worst {
    fn new() -> Self {
        Worst { value: 0.0, checks: 0 }
    }

    fn push(&mut self, analytic: f64, numeric: f64) {
        self.value = self.value.max(relative_error(analytic, numeric));
        self.checks += 1;
    }

    fn finish(self, name: &'static str, threshold: f64) -> SuiteResult {
        SuiteResult { name, checks: self.checks, max_rel_error: self.value, threshold }
    }
}

fn central<F: FnMut(f64) -> Result<f64>>(x: f64, h: f64, mut f: F) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Zero-crossing point against its endpoint values and positions.
pub fn check_edge_crossing(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    let h = 1e-6;
    for _ in 0..200 {
        let va = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let vb = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let sa = -rng.gen_range(0.05..1.0);
        let sb = rng.gen_range(0.05..1.0);
        let (sa, sb) = if rng.gen_bool(0.5) { (sa, sb) } else { (-sa, -sb) };
        let c = edge_crossing(&va, &vb, sa, sb)?;
        for k in 0..3 {
            let fd = central(sa, h, |s| Ok(edge_crossing(&va, &vb, s, sb)?.point[k]))?;
            worst.push(c.d_sa[k], fd);
            let fd = central(sb, h, |s| Ok(edge_crossing(&va, &vb, sa, s)?.point[k]))?;
            worst.push(c.d_sb[k], fd);
            let fd = central(va[k], h, |x| {
                let mut a = va;
                a[k] = x;
                Ok(edge_crossing(&a, &vb, sa, sb)?.point[k])
            })?;
            worst.push(1.0 - c.t, fd);
            let fd = central(vb[k], h, |x| {
                let mut b = vb;
                b[k] = x;
                Ok(edge_crossing(&va, &b, sa, sb)?.point[k])
            })?;
            worst.push(c.t, fd);
        }
    }
    Ok(worst.finish("edge-crossing", 1e-4))
}

/// Smooth test objective over surface vertices: a fixed random linear term
/// plus half the squared norm plus the enclosed volume.
fn surface_objective(mesh: &SurfaceMesh, weights: &[Vec3]) -> f64 {
    let mut f = 0.0;
    for (p, w) in mesh.positions.iter().zip(weights) {
        f += w.dot(p) + 0.5 * p.norm_squared();
    }
    f + enclosed_volume(mesh).unwrap_or(0.0)
}

fn surface_objective_grad(mesh: &SurfaceMesh, weights: &[Vec3]) -> Vec<Vec3> {
    let vol = volume_gradient(mesh);
    mesh.positions.iter().zip(weights).zip(vol).map(|((p, w), g)| w + p + g).collect()
}

/// Marching tetrahedra on an R=4 sphere grid: 20 sdf entries and 20 offset
/// components, perturbed by ±1e-5.
pub fn check_march_pipeline(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = build_uniform_grid(4)?.set_sdf_from_field(|p| p.norm() - 0.45)?;
    let offsets: Vec<Vec3> = (0..grid.vertex_count()).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-0.05..0.05))).collect();
    grid.set_offsets(&offsets)?;
    let mesh = marching_tetrahedra(&grid)?;
    let weights: Vec<Vec3> = (0..mesh.positions.len()).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
    let g = backward_surface_full(&mesh, &surface_objective_grad(&mesh, &weights), &grid)?;
    let g_offsets = g.offsets(&grid);

    let eval = |grid: &TetGrid| -> Result<f64> {
        let m = marching_tetrahedra(grid)?;
        if m.positions.len() != weights.len() {
            return Err(crate::Error::numeric("perturbation changed the surface topology"));
        }
        Ok(surface_objective(&m, &weights))
    };

    let mut active: Vec<usize> = mesh
        .provenance
        .as_ref()
        .map(|p| p.iter().flat_map(|e| [e.a as usize, e.b as usize]).collect())
        .unwrap_or_default();
    active.sort_unstable();
    active.dedup();
    active.retain(|&i| grid.sdf()[i].abs() > 1e-3);
    let h = 1e-5;
    let mut worst = Worst::new();

    // Surface-generating entries first; the rest must come back zero.
    let mut picks: Vec<usize> = active.clone();
    picks.shuffle(&mut rng);
    let mut others: Vec<usize> = (0..grid.vertex_count()).filter(|i| active.binary_search(i).is_err()).collect();
    others.shuffle(&mut rng);
    picks.extend(others);
    for &i in &picks[..20] {
        let fd = central(grid.sdf()[i], h, |s| {
            let mut gr = grid.clone();
            let mut sdf = gr.sdf().to_vec();
            sdf[i] = s;
            gr.set_sdf(&sdf)?;
            eval(&gr)
        })?;
        worst.push(g.sdf[i], fd);
    }
    let movable: Vec<(usize, usize)> = active
        .iter()
        .flat_map(|&i| (0..3).map(move |k| (i, k)))
        .filter(|&(i, k)| !grid.clamp_mask()[i][k])
        .collect();
    for &(i, k) in movable.choose_multiple(&mut rng, 20) {
        let fd = central(grid.offsets()[i][k], h, |x| {
            let mut gr = grid.clone();
            let mut o = gr.offsets().to_vec();
            o[i][k] = x;
            gr.set_offsets(&o)?;
            eval(&gr)
        })?;
        worst.push(g_offsets[i][k], fd);
    }
    Ok(worst.finish("march-pipeline", 1e-4))
}

/// Deformation networks (GRU and MLP stacks) against every parameter.
pub fn check_networks(seed: u64) -> Result<SuiteResult> {
    let mut worst = Worst::new();
    for kind in [ModelKind::Mlp, ModelKind::Gru] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind as u64);
        let config = ModelConfig { kind, latent: 4, hidden: 8, feature: 6, steps: 3 };
        let n = 12;
        let mut model = DeformationModel::new(config, 2, n, seed)?;
        let mut p = flatten(&model);
        p.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        unflatten(&mut model, &p);
        let v0: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-0.5..0.5))).collect();
        let edges: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect();
        let nb = Neighbors::from_edges(n, &edges);
        let w: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
        let objective = |m: &DeformationModel| -> Result<f64> {
            Ok(m.forward(1, &v0, &nb)?.iter().zip(&w).map(|(v, w)| w.dot(v) + v.norm_squared()).sum())
        };

        let (out, cache) = model.forward_cached(1, &v0, &nb)?;
        let g_out: Vec<Vec3> = out.iter().zip(&w).map(|(v, w)| w + v * 2.0).collect();
        let mut grad = model.zeros_like();
        model.backward(1, &nb, &cache, &g_out, &mut grad);
        let g = flatten(&grad);

        for i in 0..p.len() {
            let fd = central(p[i], 1e-6, |x| {
                let mut m = model.clone();
                let mut q = p.clone();
                q[i] = x;
                unflatten(&mut m, &q);
                objective(&m)
            })?;
            worst.push(g[i], fd);
        }
    }
    Ok(worst.finish("gru-mlp", 1e-4))
}

/// End-to-end motion loss on an R=4 toy with one frame of each observation
/// kind, against every model parameter.
pub fn check_motion_pipeline(seed: u64) -> Result<SuiteResult> {
    let grid = build_uniform_grid(4)?.set_sdf_from_field(|p| p.norm() - 0.45)?;
    let canonical = Canonical::new(&grid)?;
    let target = canonical.surface.map_positions(|p| p * 1.1 + Vec3::new(0.05, 0.0, 0.0));
    let plane = PlaneSpec::z(0.05);
    let sequence = vec![
        Observation::FullMesh(target.clone()),
        Observation::Slices { planes: vec![plane], contours: vec![plane_section(&target, &plane)] },
        Observation::Volume(0.08),
    ];
    let config = MotionConfig {
        model: ModelConfig { kind: ModelKind::Gru, latent: 4, hidden: 8, feature: 8, steps: 2 },
        samples: 400,
        seed,
        ..Default::default()
    };
    let mut model = DeformationModel::new(config.model, sequence.len(), canonical.rest.len(), seed)?;
    let mut p = flatten(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The output layer starts at zero; perturb everything so every parameter
    // reaches the loss.
    p.iter_mut().for_each(|v| *v += rng.gen_range(-0.02..0.02));
    unflatten(&mut model, &p);

    let (_, g) = sequence_loss_and_grad(&model, &canonical, &sequence, &config)?;
    let mut worst = Worst::new();
    for i in 0..p.len() {
        let fd = central(p[i], 1e-6, |x| {
            let mut m = model.clone();
            let mut q = p.clone();
            q[i] = x;
            unflatten(&mut m, &q);
            Ok(sequence_loss_and_grad(&m, &canonical, &sequence, &config)?.0)
        })?;
        worst.push(g[i], fd);
    }
    Ok(worst.finish("motion-end-to-end", 1e-3))
}

pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let start = Instant::now();
    let suites = vec![
        check_edge_crossing(seed)?,
        check_march_pipeline(seed)?,
        check_networks(seed)?,
        check_motion_pipeline(seed)?,
    ];
    Ok(GradcheckReport { suites, seconds: start.elapsed().as_secs_f64() })
}
