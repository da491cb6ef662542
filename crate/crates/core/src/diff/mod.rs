//! Differentiation engine, small learnable layers, optimizers and
//! checkpoints.

pub mod checkpoint;
pub mod nn;
pub mod optim;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use nn::{Activation, DenseLayer, GruCell};
pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Gradients, Tape, Var};

/// Anything that exposes named flat `f64` parameter tensors in a fixed order.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64]));
}

/// Named slice of a flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

pub fn layout<P: Parameters + ?Sized>(p: &P) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut offset = 0;
    p.visit("", &mut |name, shape, data| {
        out.push(Segment { name: name.trim_start_matches('.').to_string(), shape, offset, len: data.len() });
        offset += data.len();
    });
    out
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, data| out.extend_from_slice(data));
    out
}

/// Inverse of [`flatten`]; `flat` must have the flattened length.
pub fn unflatten<P: Parameters + ?Sized>(p: &mut P, flat: &[f64]) {
    let mut offset = 0;
    p.visit_mut("", &mut |_, data| {
        data.copy_from_slice(&flat[offset..offset + data.len()]);
        offset += data.len();
    });
    assert_eq!(offset, flat.len(), "flat parameter length mismatch");
}
