//! Reverse-mode differentiation over scalar nodes.
//!
//! A [`Tape`] is an append-only arena. Every node stores its value and the
//! local partial derivative with respect to each parent; parents always
//! precede children, so a single reverse sweep accumulates all adjoints.
//!
//! ```
//! use tetmorph::diff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = tape.mul(x, x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x), 6.0);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    values: Vec<f64>,
    // (start, len) into `partials`
    spans: Vec<(u32, u32)>,
    partials: Vec<(u32, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every node for one root.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<f64>,
}

impl Gradients {
    /// d(root)/d(var); zero for nodes the root does not depend on.
    pub fn wrt(&self, var: Var) -> f64 {
        assert_eq!(var.tape, self.tape, "variable belongs to a different tape");
        self.adjoints[var.index()]
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            values: Vec::new(),
            spans: Vec::new(),
            partials: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: f64, parents: &[(Var, f64)]) -> Var {
        let start = self.partials.len() as u32;
        for &(p, d) in parents {
            debug_assert_eq!(p.tape, self.id);
            self.partials.push((p.idx, d));
        }
        self.values.push(value);
        self.spans.push((start, parents.len() as u32));
        Var { tape: self.id, idx: (self.values.len() - 1) as u32 }
    }

    /// A leaf node.
    pub fn var(&mut self, value: f64) -> Var {
        self.push(value, &[])
    }

    pub fn vars(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn value(&self, v: Var) -> f64 {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        self.values[v.index()]
    }

    pub fn values(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.value(v)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, &[(a, y), (b, x)])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(v, &[(a, -1.0)])
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(1.0 / x, &[(a, -1.0 / (x * x))])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, &[(a, k)])
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, &[(a, 1.0)])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let s = self.value(a).sqrt();
        self.push(s, &[(a, 0.5 / s)])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = if x < 0.0 { -1.0 } else { 1.0 };
        self.push(x.abs(), &[(a, d)])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).tanh();
        self.push(y, &[(a, 1.0 - y * y)])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = sigmoid(self.value(a));
        self.push(y, &[(a, y * (1.0 - y))])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.push(x, &[(a, 1.0)])
        } else {
            self.push(0.0, &[(a, 0.0)])
        }
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|&x| self.value(x)).sum();
        let parents: Vec<(Var, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
        self.push(v, &parents)
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let mut v = 0.0;
        let mut parents = Vec::with_capacity(2 * a.len());
        for (&x, &y) in a.iter().zip(b) {
            let (xv, yv) = (self.value(x), self.value(y));
            v += xv * yv;
            parents.push((x, yv));
            parents.push((y, xv));
        }
        self.push(v, &parents)
    }

    /// `w · x + b` as one node.
    pub fn affine(&mut self, w: &[Var], x: &[Var], b: Var) -> Var {
        assert_eq!(w.len(), x.len(), "affine operands differ in length");
        let mut v = self.value(b);
        let mut parents = Vec::with_capacity(2 * w.len() + 1);
        for (&wi, &xi) in w.iter().zip(x) {
            let (wv, xv) = (self.value(wi), self.value(xi));
            v += wv * xv;
            parents.push((wi, xv));
            parents.push((xi, wv));
        }
        parents.push((b, 1.0));
        self.push(v, &parents)
    }

    /// Selects the candidate with the smallest value (lowest index on ties).
    /// The selection is frozen: the gradient flows only into the winner.
    pub fn min_gather(&mut self, candidates: &[Var]) -> (Var, usize) {
        assert!(!candidates.is_empty(), "min_gather over no candidates");
        let mut best = 0;
        for (i, &c) in candidates.iter().enumerate().skip(1) {
            if self.value(c) < self.value(candidates[best]) {
                best = i;
            }
        }
        let winner = candidates[best];
        let v = self.value(winner);
        (self.push(v, &[(winner, 1.0)]), best)
    }

    /// Reverse sweep from `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.tape != self.id || root.index() >= self.values.len() {
            return Err(Error::contract("backward root is not a node of this tape"));
        }
        let mut adjoints = vec![0.0; root.index() + 1];
        adjoints[root.index()] = 1.0;
        for node in (0..=root.index()).rev() {
            let g = adjoints[node];
            if g == 0.0 {
                continue;
            }
            let (start, len) = self.spans[node];
            for &(parent, d) in &self.partials[start as usize..(start + len) as usize] {
                adjoints[parent as usize] += g * d;
            }
        }
        adjoints.resize(self.values.len(), 0.0);
        Ok(Gradients { tape: self.id, adjoints })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.var(3.0);
        let y = t.mul(x, x);
        assert_eq!(t.backward(y).unwrap().wrt(x), 6.0);
    }

    #[test]
    fn product_plus_tanh() {
        let mut t = Tape::new();
        let x = t.var(1.0);
        let y = t.var(2.0);
        let xy = t.mul(x, y);
        let th = t.tanh(x);
        let f = t.add(xy, th);
        let g = t.backward(f).unwrap();
        let expected = 2.0 + 1.0 - 1f64.tanh().powi(2);
        assert!((g.wrt(x) - expected).abs() < 1e-15);
        assert!((g.wrt(x) - 2.41997).abs() < 1e-5);
        assert_eq!(g.wrt(y), 1.0);
    }

    #[test]
    fn untouched_leaves_get_zero() {
        let mut t = Tape::new();
        let x = t.var(1.0);
        let unused = t.var(5.0);
        let y = t.sigmoid(x);
        assert_eq!(t.backward(y).unwrap().wrt(unused), 0.0);
    }

    #[test]
    fn foreign_root_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let _ = a.var(1.0);
        let y = b.var(1.0);
        assert!(matches!(a.backward(y), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn min_gather_freezes_selection() {
        let mut t = Tape::new();
        let a = t.var(2.0);
        let b = t.var(1.0);
        let c = t.var(1.0);
        let (m, idx) = t.min_gather(&[a, b, c]);
        assert_eq!(idx, 1);
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt_all(&[a, b, c]), vec![0.0, 1.0, 0.0]);
    }

    /// Random DAG expression built from a fixed op sequence so it can be
    /// re-evaluated at perturbed inputs.
    fn random_dag(tape: &mut Tape, leaves: &[f64], ops: &[(u8, usize, usize)]) -> (Vec<Var>, Var) {
        let inputs = tape.vars(leaves);
        let mut nodes = inputs.clone();
        for &(op, i, j) in ops {
            let (a, b) = (nodes[i % nodes.len()], nodes[j % nodes.len()]);
            let n = match op % 8 {
                0 => tape.add(a, b),
                1 => tape.mul(a, b),
                2 => tape.tanh(a),
                3 => tape.sigmoid(a),
                4 => tape.neg(a),
                5 => {
                    let s = tape.square(b);
                    let d = tape.add_const(s, 1.5);
                    tape.recip(d)
                }
                6 => tape.dot(&[a, b], &[b, a]),
                _ => tape.affine(&[a, b], &[b, a], a),
            };
            nodes.push(n);
        }
        let tail: Vec<Var> = nodes[nodes.len() - 5..].to_vec();
        let root = tape.sum(&tail);
        (inputs, root)
    }

    #[test]
    fn random_dag_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let leaves: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ops: Vec<(u8, usize, usize)> = (0..44)
                .map(|_| (rng.gen::<u8>(), rng.gen_range(0..1000), rng.gen_range(0..1000)))
                .collect();
            let mut tape = Tape::new();
            let (inputs, root) = random_dag(&mut tape, &leaves, &ops);
            assert_eq!(tape.len() >= 50, true);
            let grads = tape.backward(root).unwrap();
            let eval = |x: &[f64]| {
                let mut t = Tape::new();
                let (_, r) = random_dag(&mut t, x, &ops);
                t.value(r)
            };
            let h = 1e-6;
            for k in 0..leaves.len() {
                let mut p = leaves.clone();
                p[k] += h;
                let fp = eval(&p);
                p[k] -= 2.0 * h;
                let fm = eval(&p);
                let fd = (fp - fm) / (2.0 * h);
                let an = grads.wrt(inputs[k]);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-6, "leaf {k}: analytic {an} fd {fd}");
            }
        }
    }

    proptest! {
        #[test]
        fn backward_is_linear(x in -2.0f64..2.0, y in -2.0f64..2.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut t = Tape::new();
            let xv = t.var(x);
            let yv = t.var(y);
            let xy = t.mul(xv, yv);
            let f = t.tanh(xy);
            let s = t.sigmoid(xv);
            let g = t.mul(s, yv);
            let af = t.scale(f, a);
            let bg = t.scale(g, b);
            let combo = t.add(af, bg);
            let gf = t.backward(f).unwrap();
            let gg = t.backward(g).unwrap();
            let gc = t.backward(combo).unwrap();
            for v in [xv, yv] {
                let lhs = gc.wrt(v);
                let rhs = a * gf.wrt(v) + b * gg.wrt(v);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
