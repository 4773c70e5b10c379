use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::domain::{HyperparameterSet, HyperparameterSpace};
use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;
use crate::surrogate::GaConfig;
use crate::uq::{RegularizationConfig, UqConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    #[default]
    Rbf,
    RbfEnsemble,
    Gp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationMode {
    /// Evaluations run on worker threads; wall time is measured.
    #[default]
    Real,
    /// Discrete-event replay on a virtual clock with modelled trial durations.
    Simulated,
}

/// Virtual duration of one training trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationModel {
    Constant { seconds: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { mean: f64 },
    /// Total duration per evaluation, indexed by `eval_id - 1` (cycling),
    /// split evenly over its trials.
    Scripted { seconds: Vec<f64> },
}

impl Default for DurationModel {
    fn default() -> Self {
        DurationModel::Constant { seconds: 1.0 }
    }
}

impl DurationModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DurationModel::Constant { seconds } => *seconds > 0.0 && seconds.is_finite(),
            DurationModel::Uniform { low, high } => *low > 0.0 && high >= low && high.is_finite(),
            DurationModel::Exponential { mean } => *mean > 0.0 && mean.is_finite(),
            DurationModel::Scripted { seconds } => {
                !seconds.is_empty() && seconds.iter().all(|s| *s > 0.0 && s.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "durations must be positive and finite: {self:?}"
            )))
        }
    }

    pub fn trial_duration<R: Rng + ?Sized>(&self, eval_id: u64, trials: u32, rng: &mut R) -> f64 {
        match self {
            DurationModel::Constant { seconds } => *seconds,
            DurationModel::Uniform { low, high } if low == high => *low,
            DurationModel::Uniform { low, high } => rng.random_range(*low..*high),
            DurationModel::Exponential { mean } => {
                Exp::new(1.0 / mean).expect("validated mean").sample(rng)
            }
            DurationModel::Scripted { seconds } => {
                let i = (eval_id.saturating_sub(1) % seconds.len() as u64) as usize;
                seconds[i] / trials.max(1) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub surrogate: SurrogateKind,
    /// `None` means `max(10, dims + 2)`.
    pub initial_design_size: Option<usize>,
    pub max_evaluations: usize,
    pub workers: usize,
    pub uq: UqConfig,
    pub sampler: SamplerConfig,
    pub reg: RegularizationConfig,
    pub ga: GaConfig,
    pub ensemble_size: usize,
    pub seed: u64,
    pub duration_mode: DurationMode,
    pub durations: DurationModel,
    /// Points evaluated first, ahead of the random part of the initial design.
    pub seed_points: Vec<HyperparameterSet>,
    /// Largest UQ vector stored verbatim in each log record.
    pub uq_log_values: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            surrogate: SurrogateKind::Rbf,
            initial_design_size: None,
            max_evaluations: 100,
            workers: 1,
            uq: UqConfig::default(),
            sampler: SamplerConfig::default(),
            reg: RegularizationConfig::default(),
            ga: GaConfig::default(),
            ensemble_size: 30,
            seed: 0,
            duration_mode: DurationMode::Real,
            durations: DurationModel::default(),
            seed_points: Vec::new(),
            uq_log_values: 256,
        }
    }
}

impl EngineConfig {
    pub fn initial_size(&self, dims: usize) -> usize {
        self.initial_design_size.unwrap_or((dims + 2).max(10))
    }

    pub fn validate(&self, space: &HyperparameterSpace) -> Result<()> {
        let dims = space.dims();
        let n0 = self.initial_size(dims);
        if n0 < dims + 1 {
            return Err(Error::InvalidConfig(format!(
                "initial_design_size {n0} is below dims + 1 = {}",
                dims + 1
            )));
        }
        if self.max_evaluations <= n0 {
            return Err(Error::InvalidConfig(format!(
                "max_evaluations {} must exceed initial_design_size {n0}",
                self.max_evaluations
            )));
        }
        if (n0 as u128) > space.lattice_size() {
            return Err(Error::InvalidConfig(format!(
                "initial_design_size {n0} exceeds the {} lattice points",
                space.lattice_size()
            )));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.uq.passes == 0 {
            return Err(Error::InvalidConfig("uq.passes must be at least 1".into()));
        }
        if self.ensemble_size < 2 {
            return Err(Error::InvalidConfig("ensemble_size must be at least 2".into()));
        }
        if self.seed_points.len() > n0 {
            return Err(Error::InvalidConfig(format!(
                "{} seed points exceed initial_design_size {n0}",
                self.seed_points.len()
            )));
        }
        for (i, p) in self.seed_points.iter().enumerate() {
            if !space.validate_point(p)? {
                return Err(Error::InvalidConfig(format!("seed point {p} lies outside the space")));
            }
            if self.seed_points[..i].contains(p) {
                return Err(Error::InvalidConfig(format!("seed point {p} is repeated")));
            }
        }
        self.uq.validate()?;
        self.reg.validate()?;
        self.sampler.validate()?;
        self.ga.validate()?;
        self.durations.validate()
    }
}
