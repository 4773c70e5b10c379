//! Built-in objectives: an analytic noisy quadratic for fast engine runs and
//! two MLP problems (polynomial regression, sine time series) whose
//! evaluation trains networks and runs MC-dropout UQ.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Codec, HyperparameterSet, HyperparameterSpace};
use crate::error::{Error, Result};
use crate::models::data::{polynomial, sine_series};
use crate::models::{Activation, Dataset, MlpArchitecture, TrainingConfig};
use crate::objective::{EvalContext, Evaluation, Objective};
use crate::uq::{quantify, Quantified, TrialSetup};

pub const BENCHMARKS: [(&str, &str); 3] = [
    (
        "noisy-quadratic",
        "sum of squared offsets from the lattice center plus Gaussian noise; no training",
    ),
    (
        "polyfit6",
        "MLP regression of z = |x|^2; tunes nodes, layers, dropout, learning rate, epochs, batch size",
    ),
    (
        "timeseries",
        "MLP one-step forecast of a noisy sine series; same six hyperparameters as polyfit6",
    ),
];

/// Knobs shared by the built-in benchmarks. Each benchmark reads only the
/// fields that concern it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkOptions {
    /// Noise standard deviation as a fraction of the quadratic's value range.
    pub noise_fraction: f64,
    /// Quadratic minimiser; defaults to the rounded midpoint of each range.
    pub center: Option<Vec<i64>>,
    pub data_seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    /// Input dimension of the polynomial data.
    pub input_dim: usize,
    pub window: usize,
    pub period: f64,
    pub series_noise: f64,
    pub activation: Activation,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            noise_fraction: 0.05,
            center: None,
            data_seed: 0,
            train_size: 200,
            val_size: 50,
            input_dim: 2,
            window: 8,
            period: 24.0,
            series_noise: 0.1,
            activation: Activation::Relu,
        }
    }
}

impl BenchmarkOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return Err(Error::InvalidConfig("benchmark.noise_fraction must be >= 0".into()));
        }
        if self.train_size == 0 || self.val_size == 0 || self.input_dim == 0 || self.window == 0 {
            return Err(Error::InvalidConfig(
                "benchmark sizes (train_size, val_size, input_dim, window) must be positive".into(),
            ));
        }
        if !(self.period > 0.0) || !(self.series_noise >= 0.0) {
            return Err(Error::InvalidConfig(
                "benchmark.period must be > 0 and benchmark.series_noise >= 0".into(),
            ));
        }
        Ok(())
    }
}

pub fn is_benchmark(name: &str) -> bool {
    BENCHMARKS.iter().any(|(n, _)| *n == name)
}

/// Default lattice of a benchmark.
pub fn default_space(name: &str) -> Result<HyperparameterSpace> {
    match name {
        "noisy-quadratic" => HyperparameterSpace::new(
            (0..4).map(|i| format!("x{i}")).collect(),
            vec![1; 4],
            vec![15; 4],
        ),
        "polyfit6" | "timeseries" => mlp_space(),
        other => Err(Error::UnknownBenchmark(other.to_string())),
    }
}

fn mlp_space() -> Result<HyperparameterSpace> {
    let dims: [(&str, i64, i64, Codec); 6] = [
        ("nodes", 2, 32, Codec::IDENTITY),
        ("layers", 1, 4, Codec::IDENTITY),
        ("dropout", 0, 8, Codec { offset: 0.0, step: 0.05 }),
        ("learning_rate", 1, 20, Codec { offset: 0.0, step: 0.005 }),
        ("epochs", 1, 10, Codec { offset: 0.0, step: 5.0 }),
        ("batch_size", 1, 8, Codec { offset: 0.0, step: 8.0 }),
    ];
    HyperparameterSpace::with_codecs(
        dims.iter().map(|d| d.0.to_string()).collect(),
        dims.iter().map(|d| d.1).collect(),
        dims.iter().map(|d| d.2).collect(),
        dims.iter().map(|d| d.3).collect(),
    )
}

/// Builds a benchmark objective over `space` (the benchmark default when
/// `None`).
pub fn load_benchmark(
    name: &str,
    options: &BenchmarkOptions,
    space: Option<HyperparameterSpace>,
) -> Result<Arc<dyn Objective>> {
    options.validate()?;
    let default = default_space(name)?;
    let space = match space {
        Some(s) => {
            if name != "noisy-quadratic" && s.dims() != default.dims() {
                return Err(Error::InvalidConfig(format!(
                    "benchmark `{name}` needs a {}-dimensional space, got {}",
                    default.dims(),
                    s.dims()
                )));
            }
            s
        }
        None => default,
    };
    Ok(match name {
        "noisy-quadratic" => Arc::new(NoisyQuadratic::new(space, options)?),
        "polyfit6" => {
            let (train, val) =
                polynomial(options.input_dim, options.train_size, options.val_size, options.data_seed)?;
            Arc::new(MlpBenchmark::new("polyfit6", space, train, val, options.activation))
        }
        "timeseries" => {
            let (train, val) = sine_series(
                options.window,
                options.train_size,
                options.val_size,
                options.period,
                options.series_noise,
                options.data_seed,
            )?;
            Arc::new(MlpBenchmark::new("timeseries", space, train, val, options.activation))
        }
        other => return Err(Error::UnknownBenchmark(other.to_string())),
    })
}

/// `sum_i (x_i - c_i)^2` plus one `N(0, sd)` draw per evaluation. No
/// training is involved, so UQ is bypassed and the interval is degenerate.
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    space: HyperparameterSpace,
    center: Vec<i64>,
    noise_sd: f64,
}

impl NoisyQuadratic {
    pub fn new(space: HyperparameterSpace, options: &BenchmarkOptions) -> Result<Self> {
        let center = match &options.center {
            Some(c) => {
                let p = HyperparameterSet::new(c.clone());
                if !space.validate_point(&p)? {
                    return Err(Error::InvalidConfig(format!(
                        "benchmark.center {p} lies outside the space"
                    )));
                }
                c.clone()
            }
            None => (0..space.dims())
                .map(|k| (space.lower()[k] + space.upper()[k]).div_euclid(2))
                .collect(),
        };
        let range: f64 = (0..space.dims())
            .map(|k| {
                let lo = (center[k] - space.lower()[k]) as f64;
                let hi = (space.upper()[k] - center[k]) as f64;
                lo.max(hi).powi(2)
            })
            .sum();
        Ok(NoisyQuadratic {
            noise_sd: options.noise_fraction * range,
            space,
            center,
        })
    }

    pub fn center(&self) -> &[i64] {
        &self.center
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    fn value(&self, point: &HyperparameterSet) -> f64 {
        point
            .values()
            .iter()
            .zip(&self.center)
            .map(|(x, c)| ((x - c) as f64).powi(2))
            .sum()
    }
}

impl Objective for NoisyQuadratic {
    fn name(&self) -> &str {
        "noisy-quadratic"
    }

    fn space(&self) -> &HyperparameterSpace {
        &self.space
    }

    fn evaluate(&self, point: &HyperparameterSet, ctx: &EvalContext<'_>) -> Result<Evaluation> {
        if point.dims() != self.space.dims() {
            return Err(Error::dims(self.space.dims(), point.dims()));
        }
        let mut loss = self.value(point);
        if self.noise_sd > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            loss += Normal::new(0.0, self.noise_sd).expect("finite sd").sample(&mut rng);
        }
        Ok(Evaluation::exact(loss))
    }

    fn known_optimum(&self) -> Option<f64> {
        Some(0.0)
    }

    fn noise_free(&self, point: &HyperparameterSet) -> Option<f64> {
        Some(self.value(point))
    }
}

/// Hyperparameters of one MLP evaluation after decoding a lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSetting {
    pub nodes: usize,
    pub layers: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone)]
pub struct MlpBenchmark {
    name: &'static str,
    space: HyperparameterSpace,
    train: Dataset,
    val: Dataset,
    activation: Activation,
}

impl MlpBenchmark {
    pub fn new(
        name: &'static str,
        space: HyperparameterSpace,
        train: Dataset,
        val: Dataset,
        activation: Activation,
    ) -> Self {
        MlpBenchmark {
            name,
            space,
            train,
            val,
            activation,
        }
    }

    pub fn datasets(&self) -> (&Dataset, &Dataset) {
        (&self.train, &self.val)
    }

    pub fn setting(&self, point: &HyperparameterSet) -> MlpSetting {
        let v = self.space.decode(point);
        let count = |x: f64| x.round().max(1.0) as usize;
        MlpSetting {
            nodes: count(v[0]),
            layers: count(v[1]),
            dropout: v[2].clamp(0.0, 0.95),
            learning_rate: v[3].max(1e-12),
            epochs: count(v[4]),
            batch_size: count(v[5]).min(self.train.len()),
        }
    }

    pub fn architecture(&self, setting: &MlpSetting) -> MlpArchitecture {
        MlpArchitecture {
            input_dim: self.train.input_dim(),
            hidden_layers: setting.layers,
            nodes_per_layer: setting.nodes,
            output_dim: self.train.target_dim(),
            dropout_prob: setting.dropout,
            activation: self.activation,
        }
    }
}

impl Objective for MlpBenchmark {
    fn name(&self) -> &str {
        self.name
    }

    fn space(&self) -> &HyperparameterSpace {
        &self.space
    }

    fn evaluate(&self, point: &HyperparameterSet, ctx: &EvalContext<'_>) -> Result<Evaluation> {
        if point.dims() != self.space.dims() {
            return Err(Error::dims(self.space.dims(), point.dims()));
        }
        let setting = self.setting(point);
        let arch = self.architecture(&setting);
        let setup = TrialSetup {
            arch: &arch,
            train: &self.train,
            val: &self.val,
            training: TrainingConfig {
                epochs: setting.epochs,
                batch_size: setting.batch_size,
                learning_rate: setting.learning_rate,
                seed: ctx.seed,
            },
        };
        let params = Some(arch.param_count());
        let trials = ctx.uq.trials as u32;
        let passes = ctx.uq.passes as u32;
        Ok(match quantify(&setup, ctx.uq, ctx.reg, ctx.seed)? {
            Quantified::Ok {
                summary,
                loss,
                regulated_loss,
                ..
            } => Evaluation {
                loss,
                loss_std: summary.interval.radius,
                regulated_loss,
                param_count: params,
                trial_count: trials,
                dropout_passes: passes,
                failed: false,
                uq: Some(summary.to_log(ctx.uq_log_values)),
            },
            Quantified::Failed => Evaluation::failed(trials, passes, params),
        })
    }
}
