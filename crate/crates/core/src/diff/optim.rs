use serde::{Deserialize, Serialize};

use super::Segment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay to zero over the run's iteration budget.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl OptimizerConfig {
    /// SGD with lr 0.01, momentum 0.99, weight decay 3e-5.
    pub fn sgd_default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 0.01,
            momentum: 0.99,
            weight_decay: 3e-5,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub steps: u64,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub first: Vec<f64>,
    /// Second moment (Adam only; empty for SGD).
    pub second: Vec<f64>,
    total_steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, param_count: usize, total_steps: u64) -> Self {
        let second = match config.kind {
            OptimizerKind::Adam => vec![0.0; param_count],
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        OptimizerState { config, steps: 0, first: vec![0.0; param_count], second, total_steps }
    }

    pub fn current_lr(&self) -> f64 {
        match self.config.schedule {
            LrSchedule::Constant => self.config.learning_rate,
            LrSchedule::Cosine => {
                let total = self.total_steps.max(1) as f64;
                let progress = (self.steps as f64 / total).min(1.0);
                0.5 * self.config.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    /// One update. `layout` names the segments for error reporting.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], layout: &[Segment]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::invalid(format!(
                "optimizer shape mismatch: {} params, {} grads, {} buffers",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = layout
                .iter()
                .find(|s| i >= s.offset && i < s.offset + s.len)
                .map(|s| s.name.as_str())
                .unwrap_or("<unnamed>");
            return Err(Error::numeric(format!("non-finite gradient in parameter '{name}' (entry {i})")));
        }
        let lr = self.current_lr();
        let wd = self.config.weight_decay;
        match self.config.kind {
            OptimizerKind::SgdMomentum => {
                let mu = self.config.momentum;
                for ((p, &g), buf) in params.iter_mut().zip(grads).zip(self.first.iter_mut()) {
                    *buf = mu * *buf + g + wd * *p;
                    *p -= lr * *buf;
                }
            }
            OptimizerKind::Adam => {
                let t = (self.steps + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
                    *p -= lr * wd * *p;
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd(lr: f64, mu: f64, wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: lr,
            momentum: mu,
            weight_decay: wd,
            schedule: LrSchedule::Constant,
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut opt = OptimizerState::new(sgd(0.1, 0.0, 0.0), 1, 10);
        let mut p = [1.0];
        opt.step(&mut p, &[1.0], &[]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = OptimizerState::new(sgd(0.01, 0.99, 0.0), 1, 10);
        let mut p = [0.0];
        opt.step(&mut p, &[1.0], &[]).unwrap();
        opt.step(&mut p, &[1.0], &[]).unwrap();
        assert!((p[0] - (-0.0299)).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut opt = OptimizerState::new(OptimizerConfig::adam(1e-3), 1, 10);
        let mut p = [0.5];
        opt.step(&mut p, &[1.0], &[]).unwrap();
        assert!((p[0] - 0.5 + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut opt = OptimizerState::new(sgd(0.1, 0.0, 0.0), 3, 10);
        let layout = vec![
            Segment { name: "a".into(), shape: vec![1], offset: 0, len: 1 },
            Segment { name: "head.bias".into(), shape: vec![2], offset: 1, len: 2 },
        ];
        let mut p = [0.0; 3];
        match opt.step(&mut p, &[0.0, 0.0, f64::NAN], &layout) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("head.bias")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let mut cfg = OptimizerConfig::adam(0.1);
        cfg.schedule = LrSchedule::Cosine;
        let mut opt = OptimizerState::new(cfg, 1, 4);
        assert_eq!(opt.current_lr(), 0.1);
        let mut p = [0.0];
        for _ in 0..4 {
            opt.step(&mut p, &[1.0], &[]).unwrap();
        }
        assert!(opt.current_lr().abs() < 1e-15);
    }
}
