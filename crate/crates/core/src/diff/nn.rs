//! Small learnable blocks with hand-derived batched backprop.
//!
//! Each block also has a `*_on_tape` forward that records the same
//! computation on a scalar [`Tape`]; tests and the gradcheck suite use it as
//! an independent route to the batched adjoints.

use rand::Rng;

use super::tape::{sigmoid, Tape, Var};
use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
fn init_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += W^T g
fn matvec_t_acc(w: &[f64], cols: usize, g: &[f64], out: &mut [f64]) {
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += gr * wv;
        }
    }
}

/// W += g x^T
fn outer_acc(w: &mut [f64], cols: usize, g: &[f64], x: &[f64]) {
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut w[r * cols..(r + 1) * cols];
        for (wv, &xv) in row.iter_mut().zip(x) {
            *wv += gr * xv;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weight: init_matrix(rng, outputs, inputs),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs, self.activation)
    }

    pub fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        matvec_acc(&self.weight, self.inputs, x, out);
        for o in out.iter_mut() {
            *o = self.activation.apply(*o);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::invalid(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.outputs];
        self.forward_row(x, &mut out);
        Ok(out)
    }

    /// Row-wise forward over `n = x.len() / inputs` rows.
    pub fn forward_batch(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.inputs;
        let mut out = vec![0.0; n * self.outputs];
        for (xi, oi) in x.chunks_exact(self.inputs).zip(out.chunks_exact_mut(self.outputs)) {
            self.forward_row(xi, oi);
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and, when given, input
    /// gradients into `gx`. `y` is this layer's forward output.
    pub fn backward_row(&self, x: &[f64], y: &[f64], gy: &[f64], grad: &mut DenseLayer, gx: Option<&mut [f64]>) {
        let pre: Vec<f64> = gy
            .iter()
            .zip(y)
            .map(|(g, &yv)| g * self.activation.grad_from_output(yv))
            .collect();
        for (b, p) in grad.bias.iter_mut().zip(&pre) {
            *b += p;
        }
        outer_acc(&mut grad.weight, self.inputs, &pre, x);
        if let Some(gx) = gx {
            matvec_t_acc(&self.weight, self.inputs, &pre, gx);
        }
    }

    pub fn backward_batch(&self, x: &[f64], y: &[f64], gy: &[f64], grad: &mut DenseLayer, mut gx: Option<&mut [f64]>) {
        let n = x.len() / self.inputs;
        for i in 0..n {
            let xi = &x[i * self.inputs..(i + 1) * self.inputs];
            let yi = &y[i * self.outputs..(i + 1) * self.outputs];
            let gyi = &gy[i * self.outputs..(i + 1) * self.outputs];
            let gxi = gx.as_deref_mut().map(|g| &mut g[i * self.inputs..(i + 1) * self.inputs]);
            self.backward_row(xi, yi, gyi, grad, gxi);
        }
    }

    pub fn to_tape(&self, tape: &mut Tape) -> DenseVars {
        DenseVars { weight: tape.vars(&self.weight), bias: tape.vars(&self.bias) }
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &DenseVars, x: &[Var]) -> Vec<Var> {
        (0..self.outputs)
            .map(|r| {
                let row = &vars.weight[r * self.inputs..(r + 1) * self.inputs];
                let pre = tape.affine(row, x, vars.bias[r]);
                self.activation.on_tape(tape, pre)
            })
            .collect()
    }
}

impl Parameters for DenseLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f64])) {
        f(format!("{prefix}.weight"), vec![self.outputs, self.inputs], &self.weight);
        f(format!("{prefix}.bias"), vec![self.outputs], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct DenseVars {
    pub weight: Vec<Var>,
    pub bias: Vec<Var>,
}

/// Gated recurrent unit:
///
/// ```text
/// z  = sigmoid(Wz [x, h] + bz)
/// r  = sigmoid(Wr [x, h] + br)
/// hc = tanh(Wh [x, r * h] + bh)
/// h' = (1 - z) * h + z * hc
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    pub w_update: Vec<f64>,
    pub b_update: Vec<f64>,
    pub w_reset: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub w_candidate: Vec<f64>,
    pub b_candidate: Vec<f64>,
}

/// Forward intermediates for one row.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let cols = input + hidden;
        GruCell {
            input,
            hidden,
            w_update: init_matrix(rng, hidden, cols),
            b_update: vec![0.0; hidden],
            w_reset: init_matrix(rng, hidden, cols),
            b_reset: vec![0.0; hidden],
            w_candidate: init_matrix(rng, hidden, cols),
            b_candidate: vec![0.0; hidden],
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let n = hidden * (input + hidden);
        GruCell {
            input,
            hidden,
            w_update: vec![0.0; n],
            b_update: vec![0.0; hidden],
            w_reset: vec![0.0; n],
            b_reset: vec![0.0; hidden],
            w_candidate: vec![0.0; n],
            b_candidate: vec![0.0; hidden],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.hidden)
    }

    fn cols(&self) -> usize {
        self.input + self.hidden
    }

    /// One step for a single row; writes the new hidden state into `out`.
    pub fn step_row(&self, x: &[f64], h: &[f64], out: &mut [f64], cache: &mut GruCache) {
        let hd = self.hidden;
        let cols = self.cols();
        let mut cat = Vec::with_capacity(cols);
        cat.extend_from_slice(x);
        cat.extend_from_slice(h);

        cache.update.clear();
        cache.update.extend_from_slice(&self.b_update);
        matvec_acc(&self.w_update, cols, &cat, &mut cache.update);
        cache.update.iter_mut().for_each(|v| *v = sigmoid(*v));

        cache.reset.clear();
        cache.reset.extend_from_slice(&self.b_reset);
        matvec_acc(&self.w_reset, cols, &cat, &mut cache.reset);
        cache.reset.iter_mut().for_each(|v| *v = sigmoid(*v));

        for k in 0..hd {
            cat[self.input + k] = cache.reset[k] * h[k];
        }
        cache.candidate.clear();
        cache.candidate.extend_from_slice(&self.b_candidate);
        matvec_acc(&self.w_candidate, cols, &cat, &mut cache.candidate);
        cache.candidate.iter_mut().for_each(|v| *v = v.tanh());

        for k in 0..hd {
            let z = cache.update[k];
            out[k] = (1.0 - z) * h[k] + z * cache.candidate[k];
        }
    }

    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input || h.len() != self.hidden {
            return Err(Error::invalid(format!(
                "gru expects input {} / hidden {}, got {} / {}",
                self.input,
                self.hidden,
                x.len(),
                h.len()
            )));
        }
        let mut out = vec![0.0; self.hidden];
        self.step_row(x, h, &mut out, &mut GruCache::default());
        Ok(out)
    }

    /// Backward for one row. Accumulates into `grad`, `gx` and `gh`.
    pub fn backward_row(
        &self,
        x: &[f64],
        h: &[f64],
        cache: &GruCache,
        g_out: &[f64],
        grad: &mut GruCell,
        gx: &mut [f64],
        gh: &mut [f64],
    ) {
        let hd = self.hidden;
        let cols = self.cols();
        let mut cat = Vec::with_capacity(cols);
        cat.extend_from_slice(x);
        cat.extend_from_slice(h);
        let mut cat_reset = cat.clone();
        for k in 0..hd {
            cat_reset[self.input + k] = cache.reset[k] * h[k];
        }

        let mut a_cand = vec![0.0; hd];
        let mut a_update = vec![0.0; hd];
        for k in 0..hd {
            let z = cache.update[k];
            let c = cache.candidate[k];
            gh[k] += g_out[k] * (1.0 - z);
            a_update[k] = g_out[k] * (c - h[k]) * z * (1.0 - z);
            a_cand[k] = g_out[k] * z * (1.0 - c * c);
        }

        // candidate branch
        for (b, a) in grad.b_candidate.iter_mut().zip(&a_cand) {
            *b += a;
        }
        outer_acc(&mut grad.w_candidate, cols, &a_cand, &cat_reset);
        let mut g_cat_reset = vec![0.0; cols];
        matvec_t_acc(&self.w_candidate, cols, &a_cand, &mut g_cat_reset);
        let mut a_reset = vec![0.0; hd];
        for k in 0..hd {
            let g_rh = g_cat_reset[self.input + k];
            let r = cache.reset[k];
            a_reset[k] = g_rh * h[k] * r * (1.0 - r);
            gh[k] += g_rh * r;
        }

        // gates
        for (b, a) in grad.b_update.iter_mut().zip(&a_update) {
            *b += a;
        }
        outer_acc(&mut grad.w_update, cols, &a_update, &cat);
        for (b, a) in grad.b_reset.iter_mut().zip(&a_reset) {
            *b += a;
        }
        outer_acc(&mut grad.w_reset, cols, &a_reset, &cat);

        let mut g_cat = vec![0.0; cols];
        g_cat[..self.input].copy_from_slice(&g_cat_reset[..self.input]);
        matvec_t_acc(&self.w_update, cols, &a_update, &mut g_cat);
        matvec_t_acc(&self.w_reset, cols, &a_reset, &mut g_cat);
        for (g, v) in gx.iter_mut().zip(&g_cat[..self.input]) {
            *g += v;
        }
        for (g, v) in gh.iter_mut().zip(&g_cat[self.input..]) {
            *g += v;
        }
    }

    pub fn to_tape(&self, tape: &mut Tape) -> GruVars {
        GruVars {
            w_update: tape.vars(&self.w_update),
            b_update: tape.vars(&self.b_update),
            w_reset: tape.vars(&self.w_reset),
            b_reset: tape.vars(&self.b_reset),
            w_candidate: tape.vars(&self.w_candidate),
            b_candidate: tape.vars(&self.b_candidate),
        }
    }

    pub fn step_on_tape(&self, tape: &mut Tape, vars: &GruVars, x: &[Var], h: &[Var]) -> Vec<Var> {
        let cols = self.cols();
        let cat: Vec<Var> = x.iter().chain(h).copied().collect();
        let gate = |tape: &mut Tape, w: &[Var], b: &[Var], input: &[Var], k: usize| {
            tape.affine(&w[k * cols..(k + 1) * cols], input, b[k])
        };
        let mut z = Vec::with_capacity(self.hidden);
        let mut r = Vec::with_capacity(self.hidden);
        for k in 0..self.hidden {
            let pz = gate(tape, &vars.w_update, &vars.b_update, &cat, k);
            z.push(tape.sigmoid(pz));
            let pr = gate(tape, &vars.w_reset, &vars.b_reset, &cat, k);
            r.push(tape.sigmoid(pr));
        }
        let mut cat_reset: Vec<Var> = x.to_vec();
        for k in 0..self.hidden {
            cat_reset.push(tape.mul(r[k], h[k]));
        }
        (0..self.hidden)
            .map(|k| {
                let pc = gate(tape, &vars.w_candidate, &vars.b_candidate, &cat_reset, k);
                let c = tape.tanh(pc);
                // h + z (c - h)
                let diff = tape.sub(c, h[k]);
                let zd = tape.mul(z[k], diff);
                tape.add(h[k], zd)
            })
            .collect()
    }
}

impl Parameters for GruCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f64])) {
        let shape = vec![self.hidden, self.cols()];
        f(format!("{prefix}.w_update"), shape.clone(), &self.w_update);
        f(format!("{prefix}.b_update"), vec![self.hidden], &self.b_update);
        f(format!("{prefix}.w_reset"), shape.clone(), &self.w_reset);
        f(format!("{prefix}.b_reset"), vec![self.hidden], &self.b_reset);
        f(format!("{prefix}.w_candidate"), shape, &self.w_candidate);
        f(format!("{prefix}.b_candidate"), vec![self.hidden], &self.b_candidate);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(format!("{prefix}.w_update"), &mut self.w_update);
        f(format!("{prefix}.b_update"), &mut self.b_update);
        f(format!("{prefix}.w_reset"), &mut self.w_reset);
        f(format!("{prefix}.b_reset"), &mut self.b_reset);
        f(format!("{prefix}.w_candidate"), &mut self.w_candidate);
        f(format!("{prefix}.b_candidate"), &mut self.b_candidate);
    }
}

#[derive(Debug, Clone)]
pub struct GruVars {
    pub w_update: Vec<Var>,
    pub b_update: Vec<Var>,
    pub w_reset: Vec<Var>,
    pub b_reset: Vec<Var>,
    pub w_candidate: Vec<Var>,
    pub b_candidate: Vec<Var>,
}

impl GruVars {
    pub fn all(&self) -> Vec<Var> {
        [
            &self.w_update,
            &self.b_update,
            &self.w_reset,
            &self.b_reset,
            &self.w_candidate,
            &self.b_candidate,
        ]
        .into_iter()
        .flatten()
        .copied()
        .collect()
    }
}
