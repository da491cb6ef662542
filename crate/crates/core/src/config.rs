//! Run configuration shared by every subcommand.
//!
//! A config file is TOML. Every field is optional in the file; missing
//! fields take the defaults below, and command-line flags override both.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::optim::{LrSchedule, OptimizerConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::fit::{ChamferMode, LossWeights, ModelConfig, ModelKind, MotionConfig, ShapeFitConfig};
use crate::observe::{AnalyticMotion, BaseShape, MotionKind, ObservationMode, Placement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for generation, sampling and initialization.
    pub seed: u64,
    pub dataset: DatasetSection,
    pub observation: ObservationSection,
    pub grid: GridSection,
    pub weights: LossWeights,
    pub shape: ShapeSection,
    pub motion: MotionSection,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub base: BaseShape,
    pub motion: MotionKind,
    pub amplitude: f64,
    /// Motion period in frames; `frames - 1` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    pub frames: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { base: BaseShape::Icosphere, motion: MotionKind::Translate, amplitude: 0.2, period: None, frames: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    /// `full`, `slices` or `volume`.
    pub mode: String,
    /// Slice count.
    pub k: usize,
    /// `central`, `strided`, or comma-separated z offsets.
    pub placement: String,
}

impl Default for ObservationSection {
    fn default() -> Self {
        ObservationSection { mode: "full".into(), k: 3, placement: "central".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub resolution: usize,
    /// Radius of the sphere field used as the initial SDF.
    pub init_radius: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { resolution: 16, init_radius: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSection {
    pub iterations: usize,
    pub samples: usize,
    pub optimizer: OptimizerConfig,
    pub chamfer: ChamferMode,
}

impl Default for ShapeSection {
    fn default() -> Self {
        let d = ShapeFitConfig::default();
        ShapeSection { iterations: d.iterations, samples: d.samples, optimizer: d.optimizer, chamfer: d.chamfer }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub model: ModelKind,
    pub latent: usize,
    pub hidden: usize,
    pub feature: usize,
    /// Refinement steps; 3 for full observations and 2 otherwise when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub epochs: usize,
    pub batch_frames: usize,
    pub samples: usize,
    pub optimizer: OptimizerConfig,
    pub chamfer: ChamferMode,
    pub reextract: bool,
}

impl Default for MotionSection {
    fn default() -> Self {
        let d = MotionConfig::default();
        MotionSection {
            model: d.model.kind,
            latent: d.model.latent,
            hidden: d.model.hidden,
            feature: d.model.feature,
            steps: None,
            epochs: d.epochs,
            batch_frames: d.batch_frames,
            samples: d.samples,
            optimizer: d.optimizer,
            chamfer: d.chamfer,
            reextract: d.reextract,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: DatasetSection::default(),
            observation: ObservationSection::default(),
            grid: GridSection::default(),
            weights: LossWeights::default(),
            shape: ShapeSection::default(),
            motion: MotionSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check_optimizer(o: &OptimizerConfig, what: &str) -> Result<()> {
    if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
        return Err(Error::invalid(format!("{what} learning rate must be positive")));
    }
    if !(0.0..1.0).contains(&o.momentum) || !(o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
        return Err(Error::invalid(format!("{what} momentum must be in [0, 1) and weight decay non-negative")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config cannot be written as TOML: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 || self.eval.seed > i64::MAX as u64 {
            return Err(Error::invalid("seeds must fit in a signed 64-bit integer"));
        }
        if self.dataset.frames == 0 {
            return Err(Error::invalid("frames must be at least 1"));
        }
        self.analytic_motion()?;
        self.observation_mode()?;
        if self.grid.resolution == 0 {
            return Err(Error::invalid("grid resolution must be at least 1"));
        }
        if !(self.grid.init_radius > 0.0 && self.grid.init_radius < 1.0) {
            return Err(Error::invalid("initial radius must be in (0, 1)"));
        }
        self.weights.validate()?;
        if self.shape.samples == 0 || self.motion.samples == 0 || self.eval.samples == 0 {
            return Err(Error::invalid("sample counts must be positive"));
        }
        if self.motion.batch_frames == 0 {
            return Err(Error::invalid("batch_frames must be at least 1"));
        }
        check_optimizer(&self.shape.optimizer, "shape")?;
        check_optimizer(&self.motion.optimizer, "motion")?;
        self.model_config()?.validate()
    }

    pub fn analytic_motion(&self) -> Result<AnalyticMotion> {
        let d = &self.dataset;
        let period = d.period.unwrap_or(d.frames.saturating_sub(1).max(1) as f64);
        AnalyticMotion::new(d.motion, d.amplitude, period)
    }

    pub fn observation_mode(&self) -> Result<ObservationMode> {
        match self.observation.mode.as_str() {
            "full" => Ok(ObservationMode::Full),
            "volume" => Ok(ObservationMode::Volume),
            "slices" => {
                if self.observation.k == 0 {
                    return Err(Error::invalid("slice count k must be at least 1"));
                }
                let placement: Placement = self.observation.placement.parse()?;
                if let Placement::Explicit(v) = &placement {
                    if v.len() != self.observation.k {
                        return Err(Error::invalid(format!("{} explicit offsets given for k = {}", v.len(), self.observation.k)));
                    }
                }
                Ok(ObservationMode::Slices { count: self.observation.k, placement })
            }
            other => Err(Error::invalid(format!("unknown observation mode '{other}' (full, slices, volume)"))),
        }
    }

    pub fn steps(&self) -> usize {
        self.motion.steps.unwrap_or(if self.observation.mode == "full" { 3 } else { 2 })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            kind: self.motion.model,
            latent: self.motion.latent,
            hidden: self.motion.hidden,
            feature: self.motion.feature,
            steps: self.steps(),
        })
    }

    pub fn shape_config(&self) -> ShapeFitConfig {
        ShapeFitConfig {
            iterations: self.shape.iterations,
            samples: self.shape.samples,
            weights: self.weights,
            optimizer: self.shape.optimizer,
            chamfer: self.shape.chamfer,
            seed: self.seed,
        }
    }

    pub fn motion_config(&self) -> Result<MotionConfig> {
        Ok(MotionConfig {
            model: self.model_config()?,
            weights: self.weights,
            optimizer: self.motion.optimizer,
            epochs: self.motion.epochs,
            batch_frames: self.motion.batch_frames,
            samples: self.motion.samples,
            chamfer: self.motion.chamfer,
            seed: self.seed,
            reextract: self.motion.reextract,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Parses `sgd`, `sgd-momentum` or `adam` into an optimizer with that
/// kind's defaults and the given learning rate and schedule.
pub fn optimizer_from_parts(kind: &str, learning_rate: Option<f64>, schedule: Option<LrSchedule>, base: OptimizerConfig) -> Result<OptimizerConfig> {
    let mut o = match kind {
        "sgd" | "sgd-momentum" => OptimizerConfig::sgd_default(),
        "adam" => OptimizerConfig::adam(1e-3),
        "" => base,
        other => return Err(Error::invalid(format!("unknown optimizer '{other}' (sgd-momentum, adam)"))),
    };
    if let Some(lr) = learning_rate {
        o.learning_rate = lr;
    }
    if let Some(s) = schedule {
        o.schedule = s;
    }
    Ok(o)
}
