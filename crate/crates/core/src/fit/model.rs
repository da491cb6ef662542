use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::nn::GruCache;
use crate::diff::{Activation, DenseLayer, GruCell, Parameters};
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Independent per-frame, per-vertex displacements.
    FreeOffsets,
    Mlp,
    Gru,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free-offsets" => Ok(ModelKind::FreeOffsets),
            "mlp" => Ok(ModelKind::Mlp),
            "gru" => Ok(ModelKind::Gru),
            other => Err(Error::invalid(format!("unknown model kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::FreeOffsets => "free-offsets",
            ModelKind::Mlp => "mlp",
            ModelKind::Gru => "gru",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Latent code size per frame.
    pub latent: usize,
    /// GRU hidden size, also the offset head's hidden width.
    pub hidden: usize,
    /// Width of the neighbourhood feature fed to the GRU.
    pub feature: usize,
    /// Refinement iterations per frame.
    pub steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::Gru, latent: 16, hidden: 64, feature: 64, steps: 2 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("model needs at least one refinement step"));
        }
        if self.kind != ModelKind::FreeOffsets && (self.hidden == 0 || self.latent == 0) {
            return Err(Error::invalid("hidden and latent sizes must be positive"));
        }
        if self.kind == ModelKind::Gru && self.feature == 0 {
            return Err(Error::invalid("feature size must be positive"));
        }
        Ok(())
    }
}

/// Symmetric adjacency in compressed-row form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Neighbors {
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
}

impl Neighbors {
    /// Builds adjacency for `count` vertices from undirected edges.
    pub fn from_edges(count: usize, edges: &[(u32, u32)]) -> Self {
        let mut lists = vec![Vec::new(); count];
        for &(a, b) in edges {
            lists[a as usize].push(b);
            lists[b as usize].push(a);
        }
        let mut offsets = Vec::with_capacity(count + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            indices.extend(l);
            offsets.push(indices.len());
        }
        Neighbors { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Mean neighbour position; a vertex without neighbours uses itself.
    fn mean(&self, i: usize, v: &[Vec3]) -> Vec3 {
        let n = self.of(i);
        if n.is_empty() {
            return v[i];
        }
        let mut m = Vec3::zeros();
        for &j in n {
            m += v[j as usize];
        }
        m / n.len() as f64
    }
}

/// Maps canonical grid vertex positions to per-frame positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationModel {
    pub config: ModelConfig,
    pub frames: usize,
    pub vertices: usize,
    /// Row-major `frames x latent`.
    pub latents: Vec<f64>,
    pub gcn: Option<DenseLayer>,
    pub gru: Option<GruCell>,
    pub head: Vec<DenseLayer>,
    /// Row-major `frames x vertices x 3` (free-offsets only).
    pub free: Vec<f64>,
}

/// Per-step intermediates kept for the backward pass.
#[derive(Debug, Clone, Default)]
struct StepCache {
    v: Vec<Vec3>,
    gcn_in: Vec<f64>,
    gcn_out: Vec<f64>,
    h: Vec<f64>,
    gru_in: Vec<f64>,
    gru: Vec<GruCache>,
    head_in: Vec<f64>,
    head_mid: Vec<f64>,
    head_out: Vec<f64>,
}

/// Forward intermediates for one frame.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    steps: Vec<StepCache>,
}

impl DeformationModel {
    pub fn new(config: ModelConfig, frames: usize, vertices: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if frames == 0 {
            return Err(Error::invalid("model needs at least one frame"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, h, g) = (config.latent, config.hidden, config.feature);
        let mut model = DeformationModel {
            config,
            frames,
            vertices,
            latents: Vec::new(),
            gcn: None,
            gru: None,
            head: Vec::new(),
            free: Vec::new(),
        };
        match config.kind {
            ModelKind::FreeOffsets => model.free = vec![0.0; frames * vertices * 3],
            ModelKind::Mlp => {
                model.latents = (0..frames * l).map(|_| rng.gen_range(-0.01..0.01)).collect();
                model.head = vec![
                    DenseLayer::new(3 + l, h, Activation::Tanh, &mut rng),
                    DenseLayer::zeros(h, 3, Activation::Identity),
                ];
            }
            ModelKind::Gru => {
                model.latents = (0..frames * l).map(|_| rng.gen_range(-0.01..0.01)).collect();
                model.gcn = Some(DenseLayer::new(6 + l, g, Activation::Tanh, &mut rng));
                model.gru = Some(GruCell::new(g + 3, h, &mut rng));
                model.head = vec![
                    DenseLayer::new(3 + h, h, Activation::Tanh, &mut rng),
                    DenseLayer::zeros(h, 3, Activation::Identity),
                ];
            }
        }
        Ok(model)
    }

    /// Same shapes, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        DeformationModel {
            config: self.config,
            frames: self.frames,
            vertices: self.vertices,
            latents: vec![0.0; self.latents.len()],
            gcn: self.gcn.as_ref().map(DenseLayer::zeros_like),
            gru: self.gru.as_ref().map(GruCell::zeros_like),
            head: self.head.iter().map(DenseLayer::zeros_like).collect(),
            free: vec![0.0; self.free.len()],
        }
    }

    pub fn code(&self, frame: usize) -> &[f64] {
        let l = self.config.latent;
        &self.latents[frame * l..(frame + 1) * l]
    }

    fn check(&self, frame: usize, v: &[Vec3], neighbors: &Neighbors) -> Result<()> {
        if frame >= self.frames {
            return Err(Error::invalid(format!("frame {frame} out of range (model has {})", self.frames)));
        }
        if v.len() != self.vertices || neighbors.len() != self.vertices {
            return Err(Error::invalid(format!(
                "model expects {} vertices, got {} positions and {} adjacency rows",
                self.vertices,
                v.len(),
                neighbors.len()
            )));
        }
        Ok(())
    }

    /// Number of refinement steps actually applied.
    pub fn effective_steps(&self) -> usize {
        match self.config.kind {
            ModelKind::FreeOffsets => 1,
            _ => self.config.steps,
        }
    }

    /// One refinement step: returns updated positions and hidden state
    /// (row-major `vertices x hidden`; empty for kinds without one).
    pub fn deform_step(&self, frame: usize, v: &[Vec3], hidden: &[f64], neighbors: &Neighbors) -> Result<(Vec<Vec3>, Vec<f64>)> {
        self.check(frame, v, neighbors)?;
        let expected = if self.config.kind == ModelKind::Gru { self.vertices * self.config.hidden } else { 0 };
        if hidden.len() != expected && !(hidden.is_empty() && self.config.kind == ModelKind::Gru) {
            return Err(Error::invalid(format!("hidden state has {} entries, expected {expected}", hidden.len())));
        }
        let mut cache = StepCache::default();
        let h = if hidden.is_empty() { vec![0.0; expected] } else { hidden.to_vec() };
        let (v1, h1) = self.step_forward(frame, v, h, neighbors, &mut cache);
        Ok((v1, h1))
    }

    fn step_forward(&self, frame: usize, v: &[Vec3], h: Vec<f64>, neighbors: &Neighbors, cache: &mut StepCache) -> (Vec<Vec3>, Vec<f64>) {
        let n = self.vertices;
        let code = if self.latents.is_empty() { &[][..] } else { self.code(frame) };
        cache.v = v.to_vec();
        match self.config.kind {
            ModelKind::FreeOffsets => {
                let d = &self.free[frame * n * 3..(frame + 1) * n * 3];
                let out = v.iter().zip(d.chunks_exact(3)).map(|(p, d)| p + Vec3::from_column_slice(d)).collect();
                (out, h)
            }
            ModelKind::Mlp => {
                let w = 3 + code.len();
                cache.head_in = Vec::with_capacity(n * w);
                for p in v {
                    cache.head_in.extend_from_slice(p.as_slice());
                    cache.head_in.extend_from_slice(code);
                }
                let out = self.apply_head(v, cache);
                (out, h)
            }
            ModelKind::Gru => {
                let gcn = self.gcn.as_ref().expect("gru model has a gcn layer");
                let gru = self.gru.as_ref().expect("gru model has a cell");
                let hd = self.config.hidden;
                cache.gcn_in = Vec::with_capacity(n * gcn.inputs);
                for i in 0..n {
                    cache.gcn_in.extend_from_slice(neighbors.mean(i, v).as_slice());
                    cache.gcn_in.extend_from_slice(v[i].as_slice());
                    cache.gcn_in.extend_from_slice(code);
                }
                cache.gcn_out = gcn.forward_batch(&cache.gcn_in);
                let g = gcn.outputs;
                cache.gru_in = Vec::with_capacity(n * (g + 3));
                for i in 0..n {
                    cache.gru_in.extend_from_slice(&cache.gcn_out[i * g..(i + 1) * g]);
                    cache.gru_in.extend_from_slice(v[i].as_slice());
                }
                let mut h_new = vec![0.0; n * hd];
                cache.gru = vec![GruCache::default(); n];
                for i in 0..n {
                    gru.step_row(
                        &cache.gru_in[i * (g + 3)..(i + 1) * (g + 3)],
                        &h[i * hd..(i + 1) * hd],
                        &mut h_new[i * hd..(i + 1) * hd],
                        &mut cache.gru[i],
                    );
                }
                cache.h = h;
                cache.head_in = Vec::with_capacity(n * (3 + hd));
                for i in 0..n {
                    cache.head_in.extend_from_slice(v[i].as_slice());
                    cache.head_in.extend_from_slice(&h_new[i * hd..(i + 1) * hd]);
                }
                let out = self.apply_head(v, cache);
                (out, h_new)
            }
        }
    }

    fn apply_head(&self, v: &[Vec3], cache: &mut StepCache) -> Vec<Vec3> {
        cache.head_mid = self.head[0].forward_batch(&cache.head_in);
        cache.head_out = self.head[1].forward_batch(&cache.head_mid);
        v.iter()
            .zip(cache.head_out.chunks_exact(3))
            .map(|(p, d)| p + Vec3::from_column_slice(d))
            .collect()
    }

    /// Runs every refinement step from the canonical positions.
    pub fn forward(&self, frame: usize, v0: &[Vec3], neighbors: &Neighbors) -> Result<Vec<Vec3>> {
        Ok(self.forward_cached(frame, v0, neighbors)?.0)
    }

    pub fn forward_cached(&self, frame: usize, v0: &[Vec3], neighbors: &Neighbors) -> Result<(Vec<Vec3>, ForwardCache)> {
        self.check(frame, v0, neighbors)?;
        let hsize = if self.config.kind == ModelKind::Gru { self.vertices * self.config.hidden } else { 0 };
        let mut h = vec![0.0; hsize];
        let mut v = v0.to_vec();
        let mut cache = ForwardCache::default();
        for s in 0..self.effective_steps() {
            let mut step = StepCache::default();
            let (v1, h1) = self.step_forward(frame, &v, h, neighbors, &mut step);
            if let Some(i) = v1.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
                return Err(Error::numeric(format!("non-finite deformed position at vertex {i}, step {s}")));
            }
            cache.steps.push(step);
            v = v1;
            h = h1;
        }
        Ok((v, cache))
    }

    /// Accumulates d(loss)/d(parameters) into `grad` given d(loss)/d(final
    /// positions).
    pub fn backward(&self, frame: usize, neighbors: &Neighbors, cache: &ForwardCache, g_final: &[Vec3], grad: &mut DeformationModel) {
        let n = self.vertices;
        let l = self.config.latent;
        let hd = self.config.hidden;
        let mut g_v = g_final.to_vec();
        let mut g_h = vec![0.0; if self.config.kind == ModelKind::Gru { n * hd } else { 0 }];
        let mut g_code = vec![0.0; l];

        for step in cache.steps.iter().rev() {
            match self.config.kind {
                ModelKind::FreeOffsets => {
                    let d = &mut grad.free[frame * n * 3..(frame + 1) * n * 3];
                    for (acc, g) in d.chunks_exact_mut(3).zip(&g_v) {
                        for c in 0..3 {
                            acc[c] += g[c];
                        }
                    }
                }
                ModelKind::Mlp => {
                    let g_in = self.head_backward(step, &g_v, grad);
                    let w = 3 + l;
                    for i in 0..n {
                        let row = &g_in[i * w..(i + 1) * w];
                        g_v[i] += Vec3::new(row[0], row[1], row[2]);
                        for k in 0..l {
                            g_code[k] += row[3 + k];
                        }
                    }
                }
                ModelKind::Gru => {
                    let gcn = self.gcn.as_ref().expect("gru model has a gcn layer");
                    let gru = self.gru.as_ref().expect("gru model has a cell");
                    let g = gcn.outputs;
                    let g_in = self.head_backward(step, &g_v, grad);
                    // Identity path carries g_v into the previous step.
                    let mut g_prev = g_v.clone();
                    let mut g_h_prev = vec![0.0; n * hd];
                    let mut g_gcn_out = vec![0.0; n * g];
                    let w = 3 + hd;
                    for i in 0..n {
                        let row = &g_in[i * w..(i + 1) * w];
                        g_prev[i] += Vec3::new(row[0], row[1], row[2]);
                        let g_hnew: Vec<f64> = (0..hd).map(|k| g_h[i * hd + k] + row[3 + k]).collect();
                        let mut gx = vec![0.0; g + 3];
                        gru.backward_row(
                            &step.gru_in[i * (g + 3)..(i + 1) * (g + 3)],
                            &step.h[i * hd..(i + 1) * hd],
                            &step.gru[i],
                            &g_hnew,
                            grad.gru.as_mut().expect("gradient has a cell"),
                            &mut gx,
                            &mut g_h_prev[i * hd..(i + 1) * hd],
                        );
                        g_gcn_out[i * g..(i + 1) * g].copy_from_slice(&gx[..g]);
                        g_prev[i] += Vec3::new(gx[g], gx[g + 1], gx[g + 2]);
                    }
                    let mut g_gcn_in = vec![0.0; n * gcn.inputs];
                    gcn.backward_batch(
                        &step.gcn_in,
                        &step.gcn_out,
                        &g_gcn_out,
                        grad.gcn.as_mut().expect("gradient has a gcn layer"),
                        Some(&mut g_gcn_in),
                    );
                    for i in 0..n {
                        let row = &g_gcn_in[i * gcn.inputs..(i + 1) * gcn.inputs];
                        let g_mean = Vec3::new(row[0], row[1], row[2]);
                        let nb = neighbors.of(i);
                        if nb.is_empty() {
                            g_prev[i] += g_mean;
                        } else {
                            let share = g_mean / nb.len() as f64;
                            for &j in nb {
                                g_prev[j as usize] += share;
                            }
                        }
                        g_prev[i] += Vec3::new(row[3], row[4], row[5]);
                        for k in 0..l {
                            g_code[k] += row[6 + k];
                        }
                    }
                    g_v = g_prev;
                    g_h = g_h_prev;
                }
            }
        }
        if l > 0 && !grad.latents.is_empty() {
            for (acc, g) in grad.latents[frame * l..(frame + 1) * l].iter_mut().zip(&g_code) {
                *acc += g;
            }
        }
    }

    /// Backprop through the two-layer head; returns d/d(head input).
    fn head_backward(&self, step: &StepCache, g_out: &[Vec3], grad: &mut DeformationModel) -> Vec<f64> {
        let gy: Vec<f64> = g_out.iter().flat_map(|g| g.iter().copied()).collect();
        let mut g_mid = vec![0.0; step.head_mid.len()];
        self.head[1].backward_batch(&step.head_mid, &step.head_out, &gy, &mut grad.head[1], Some(&mut g_mid));
        let mut g_in = vec![0.0; step.head_in.len()];
        self.head[0].backward_batch(&step.head_in, &step.head_mid, &g_mid, &mut grad.head[0], Some(&mut g_in));
        g_in
    }

    /// Total parameter count.
    pub fn parameter_count(&self) -> usize {
        crate::diff::flatten(self).len()
    }
}

impl Parameters for DeformationModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f64])) {
        if !self.latents.is_empty() {
            f(format!("{prefix}.latents"), vec![self.frames, self.config.latent], &self.latents);
        }
        if let Some(gcn) = &self.gcn {
            gcn.visit(&format!("{prefix}.gcn"), f);
        }
        if let Some(gru) = &self.gru {
            gru.visit(&format!("{prefix}.gru"), f);
        }
        for (i, layer) in self.head.iter().enumerate() {
            layer.visit(&format!("{prefix}.head{i}"), f);
        }
        if !self.free.is_empty() {
            f(format!("{prefix}.free"), vec![self.frames, self.vertices, 3], &self.free);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        if !self.latents.is_empty() {
            f(format!("{prefix}.latents"), &mut self.latents);
        }
        if let Some(gcn) = &mut self.gcn {
            gcn.visit_mut(&format!("{prefix}.gcn"), f);
        }
        if let Some(gru) = &mut self.gru {
            gru.visit_mut(&format!("{prefix}.gru"), f);
        }
        for (i, layer) in self.head.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.head{i}"), f);
        }
        if !self.free.is_empty() {
            f(format!("{prefix}.free"), &mut self.free);
        }
    }
}
