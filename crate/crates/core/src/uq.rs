//! MC-dropout uncertainty quantification for one hyperparameter set.
//!
//! `N` models with the same architecture are trained from different seeds.
//! Each one is evaluated without dropout and with `T` dropout masks over the
//! validation set. The weighted pooled mean `mu_pred` and variance `V_model`
//! combine both sources with weights `w_T` (trained outputs) and `w_D`
//! (dropout outputs). One outer loss is computed per trained model and per
//! dropout mask; the population standard deviation of those `N + N*T` values
//! is the confidence radius around the loss of `mu_pred`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ConfidenceInterval, UqLog};
use crate::error::{Error, Result};
use crate::models::{forward, forward_dropout, train, Dataset, MlpArchitecture, TrainingConfig};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UqConfig {
    pub trials: usize,
    pub passes: usize,
    pub weight_trained: f64,
    pub weight_dropout: f64,
}

impl Default for UqConfig {
    fn default() -> Self {
        UqConfig {
            trials: 5,
            passes: 30,
            weight_trained: 0.5,
            weight_dropout: 0.5,
        }
    }
}

impl UqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("uq.trials must be at least 1".into()));
        }
        if !(self.weight_trained >= 0.0) || !(self.weight_dropout > 0.0) {
            return Err(Error::InvalidConfig(
                "uq weights need weight_trained >= 0 and weight_dropout > 0".into(),
            ));
        }
        if (self.weight_trained + self.weight_dropout - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "uq weights must satisfy weight_trained + weight_dropout = 1 \
                 (w_T + w_D = 1), got {} + {}",
                self.weight_trained, self.weight_dropout
            )));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.trials + self.trials * self.passes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `g(v) = || max(0, v) ||_2`
    RectifiedNorm,
    /// `g(v) = sum_j v_j`
    Sum,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizationConfig {
    pub gamma: f64,
    pub g: PenaltyKind,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            gamma: 1.0,
            g: PenaltyKind::RectifiedNorm,
        }
    }
}

impl RegularizationConfig {
    pub fn disabled() -> Self {
        RegularizationConfig {
            gamma: 1.0,
            g: PenaltyKind::None,
        }
    }

    pub fn enabled(&self) -> bool {
        self.g != PenaltyKind::None
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled() && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "regularization.gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Element-wise mean and population variance of repeated dropout passes.
pub fn dropout_stats(passes: &[Vec<f64>]) -> Result<DropoutStats> {
    let first = passes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no dropout passes".into()))?;
    let width = first.len();
    check_widths(passes.iter(), width)?;
    let t = passes.len() as f64;
    let mut mean = vec![0.0; width];
    for y in passes {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut variance = vec![0.0; width];
    for y in passes {
        for ((s, v), m) in variance.iter_mut().zip(y).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= t);
    Ok(DropoutStats { mean, variance })
}

fn check_widths<'a>(vs: impl Iterator<Item = &'a Vec<f64>>, width: usize) -> Result<()> {
    for v in vs {
        if v.len() != width {
            return Err(Error::dims(width, v.len()));
        }
    }
    Ok(())
}

fn check_ensemble_shape(
    trained: &[Vec<f64>],
    dropout: &[Vec<Vec<f64>>],
    cfg: &UqConfig,
) -> Result<usize> {
    let n = trained.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no trained model outputs".into()));
    }
    if dropout.len() != n {
        return Err(Error::dims(n, dropout.len()));
    }
    let t = dropout[0].len();
    if dropout.iter().any(|d| d.len() != t) {
        return Err(Error::InvalidArgument(
            "every trained model needs the same number of dropout passes".into(),
        ));
    }
    if t == 0 && cfg.weight_dropout > 0.0 {
        return Err(Error::InvalidArgument(
            "dropout weight is positive but no dropout passes were given".into(),
        ));
    }
    let width = trained[0].len();
    check_widths(trained.iter(), width)?;
    check_widths(dropout.iter().flatten(), width)?;
    Ok(width)
}

/// Weighted pooled mean for one input: `trained[i]` is `y^i(x)`,
/// `dropout[j][t]` is `y_t^j(x)`.
pub fn ensemble_mean(
    trained: &[Vec<f64>],
    dropout: &[Vec<Vec<f64>>],
    cfg: &UqConfig,
) -> Result<Vec<f64>> {
    let width = check_ensemble_shape(trained, dropout, cfg)?;
    let n = trained.len() as f64;
    let t = dropout[0].len();
    let mut trained_sum = vec![0.0; width];
    for y in trained {
        add_into(&mut trained_sum, y);
    }
    let mut dropout_sum = vec![0.0; width];
    for y in dropout.iter().flatten() {
        add_into(&mut dropout_sum, y);
    }
    let wt = cfg.weight_trained / n;
    let wd = if t == 0 {
        0.0
    } else {
        cfg.weight_dropout / (n * t as f64)
    };
    Ok(trained_sum
        .iter()
        .zip(&dropout_sum)
        .map(|(a, b)| wt * a + wd * b)
        .collect())
}

/// Weighted pooled variance around `mu_pred` for one input.
pub fn ensemble_variance(
    trained: &[Vec<f64>],
    dropout: &[Vec<Vec<f64>>],
    mu_pred: &[f64],
    cfg: &UqConfig,
) -> Result<Vec<f64>> {
    let width = check_ensemble_shape(trained, dropout, cfg)?;
    if mu_pred.len() != width {
        return Err(Error::dims(width, mu_pred.len()));
    }
    let n = trained.len() as f64;
    let t = dropout[0].len();
    let mut trained_sq = vec![0.0; width];
    for y in trained {
        add_sq_dev(&mut trained_sq, y, mu_pred);
    }
    let mut dropout_sq = vec![0.0; width];
    for y in dropout.iter().flatten() {
        add_sq_dev(&mut dropout_sq, y, mu_pred);
    }
    let wt = cfg.weight_trained / n;
    let wd = if t == 0 {
        0.0
    } else {
        cfg.weight_dropout / (n * t as f64)
    };
    Ok(trained_sq
        .iter()
        .zip(&dropout_sq)
        .map(|(a, b)| wt * a + wd * b)
        .collect())
}

fn add_into(acc: &mut [f64], y: &[f64]) {
    acc.iter_mut().zip(y).for_each(|(a, v)| *a += v);
}

fn add_sq_dev(acc: &mut [f64], y: &[f64], mu: &[f64]) {
    acc.iter_mut()
        .zip(y.iter().zip(mu))
        .for_each(|(a, (v, m))| *a += (m - v) * (m - v));
}

/// `(1 / 2D) * sum_d || z^d - y^d ||^2` for predictions `y^d` over the
/// validation set.
pub fn outer_loss(predictions: &[Vec<f64>], val: &Dataset) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    if predictions.len() != val.len() {
        return Err(Error::dims(val.len(), predictions.len()));
    }
    let mut total = 0.0;
    for (y, z) in predictions.iter().zip(&val.targets) {
        if y.len() != z.len() {
            return Err(Error::dims(z.len(), y.len()));
        }
        total += y.iter().zip(z).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
    }
    Ok(total / (2.0 * val.len() as f64))
}

/// Expected outer loss approximated at the pooled mean prediction.
pub fn expected_outer_loss(mu_pred: &[Vec<f64>], val: &Dataset) -> Result<f64> {
    outer_loss(mu_pred, val)
}

/// Interval centered on `center_loss` with the population standard deviation
/// of `loss_samples` as radius.
pub fn confidence_interval(loss_samples: &[f64], center_loss: f64) -> Result<ConfidenceInterval> {
    if loss_samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a confidence radius needs at least 2 loss samples, got {}",
            loss_samples.len()
        )));
    }
    ConfidenceInterval::new(center_loss, population_std(loss_samples))
}

/// Computed on values shifted by the first sample, so identical samples give
/// exactly zero.
pub(crate) fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let shift = xs[0];
    let mean = xs.iter().map(|x| x - shift).sum::<f64>() / n;
    (xs.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `l_reg = l_1 + gamma * sum_d g(V_model(x^d))`.
pub fn regulated_loss(ell1: f64, v_model: &[Vec<f64>], cfg: &RegularizationConfig) -> f64 {
    let penalty: f64 = match cfg.g {
        PenaltyKind::None => return ell1,
        PenaltyKind::RectifiedNorm => v_model
            .iter()
            .map(|v| v.iter().map(|x| x.max(0.0).powi(2)).sum::<f64>().sqrt())
            .sum(),
        PenaltyKind::Sum => v_model.iter().map(|v| v.iter().sum::<f64>()).sum(),
    };
    ell1 + cfg.gamma * penalty
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqSummary {
    pub mu_pred: Vec<Vec<f64>>,
    pub v_model: Vec<Vec<f64>>,
    pub loss_samples: Vec<f64>,
    pub interval: ConfidenceInterval,
}

impl UqSummary {
    /// Log view; full vectors are kept only when `max_values` allows.
    pub fn to_log(&self, max_values: usize) -> UqLog {
        let norm = |vs: &[Vec<f64>]| vs.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let total = |vs: &[Vec<f64>]| vs.iter().map(Vec::len).sum::<usize>();
        UqLog {
            mu_pred_norm: norm(&self.mu_pred),
            v_model_norm: norm(&self.v_model),
            mu_pred: (total(&self.mu_pred) <= max_values).then(|| self.mu_pred.clone()),
            v_model: (total(&self.v_model) <= max_values).then(|| self.v_model.clone()),
            loss_samples: (self.loss_samples.len() <= max_values)
                .then(|| self.loss_samples.clone()),
        }
    }
}

/// Everything needed to train and validate one architecture.
#[derive(Debug, Clone)]
pub struct TrialSetup<'a> {
    pub arch: &'a MlpArchitecture,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Quantified {
    Ok {
        summary: UqSummary,
        /// Loss of `mu_pred`; the interval center.
        loss: f64,
        regulated_loss: Option<f64>,
        /// Trials that trained without diverging.
        usable_trials: usize,
    },
    /// Every trial diverged.
    Failed,
}

struct TrialOutputs {
    trained: Vec<Vec<f64>>,
    /// `[t][d]`
    dropout: Vec<Vec<Vec<f64>>>,
    losses: Vec<f64>,
}

/// Train `cfg.trials` models from seeds derived from `seed` and aggregate
/// their MC-dropout statistics over the validation set. Trials run in
/// parallel; results do not depend on scheduling.
pub fn quantify(
    setup: &TrialSetup<'_>,
    cfg: &UqConfig,
    reg: &RegularizationConfig,
    seed: u64,
) -> Result<Quantified> {
    cfg.validate()?;
    if cfg.passes == 0 {
        return Err(Error::InvalidArgument(
            "dropout weight is positive but uq.passes is 0".into(),
        ));
    }
    setup.arch.validate()?;
    let trials: Vec<Option<TrialOutputs>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(setup, cfg.passes, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    let trials: Vec<TrialOutputs> = trials.into_iter().flatten().collect();
    if trials.is_empty() {
        return Ok(Quantified::Failed);
    }

    let d = setup.val.len();
    let mut mu_pred = Vec::with_capacity(d);
    let mut v_model = Vec::with_capacity(d);
    for k in 0..d {
        let trained: Vec<Vec<f64>> = trials.iter().map(|o| o.trained[k].clone()).collect();
        let dropout: Vec<Vec<Vec<f64>>> = trials
            .iter()
            .map(|o| o.dropout.iter().map(|pass| pass[k].clone()).collect())
            .collect();
        let mu = ensemble_mean(&trained, &dropout, cfg)?;
        v_model.push(ensemble_variance(&trained, &dropout, &mu, cfg)?);
        mu_pred.push(mu);
    }
    let loss = expected_outer_loss(&mu_pred, setup.val)?;
    let loss_samples: Vec<f64> = trials.iter().flat_map(|o| o.losses.iter().copied()).collect();
    let interval = confidence_interval(&loss_samples, loss)?;
    let regulated = reg.enabled().then(|| regulated_loss(loss, &v_model, reg));
    Ok(Quantified::Ok {
        usable_trials: trials.len(),
        summary: UqSummary {
            mu_pred,
            v_model,
            loss_samples,
            interval,
        },
        loss,
        regulated_loss: regulated,
    })
}

/// `None` when training diverged or produced non-finite validation outputs.
fn run_trial(setup: &TrialSetup<'_>, passes: usize, seed: u64) -> Result<Option<TrialOutputs>> {
    let training = TrainingConfig {
        seed,
        ..setup.training.clone()
    };
    let weights = match train(setup.arch, setup.train, &training) {
        Ok(w) => w,
        Err(Error::Diverged) => return Ok(None),
        Err(e) => return Err(e),
    };
    let val = setup.val;
    let trained = val
        .inputs
        .iter()
        .map(|x| forward(&weights, x))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let p = setup.arch.dropout_prob;
    let dropout = (0..passes)
        .map(|_| {
            val.inputs
                .iter()
                .map(|x| forward_dropout(&weights, x, p, &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut losses = Vec::with_capacity(passes + 1);
    losses.push(outer_loss(&trained, val)?);
    for pass in &dropout {
        losses.push(outer_loss(pass, val)?);
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Ok(None);
    }
    Ok(Some(TrialOutputs {
        trained,
        dropout,
        losses,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{data, Activation};
    use rand::Rng;

    fn half() -> UqConfig {
        UqConfig {
            trials: 1,
            passes: 1,
            weight_trained: 0.5,
            weight_dropout: 0.5,
        }
    }

    #[test]
    fn config_requires_weights_summing_to_one() {
        let bad = UqConfig {
            weight_trained: 0.6,
            weight_dropout: 0.5,
            ..UqConfig::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("w_T + w_D = 1"), "{msg}");
        assert!(UqConfig::default().validate().is_ok());
        assert_eq!(UqConfig::default().sample_count(), 155);
    }

    #[test]
    fn dropout_stats_cases() {
        let s = dropout_stats(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(s.mean, vec![1.5, -2.0]);
        assert_eq!(s.variance, vec![0.0, 0.0]);
        let s = dropout_stats(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!((s.mean[0], s.variance[0]), (1.0, 1.0));
        assert!(dropout_stats(&[]).is_err());
        assert!(dropout_stats(&[vec![0.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn ensemble_mean_and_variance_by_hand() {
        let trained = vec![vec![2.0]];
        let dropout = vec![vec![vec![4.0]]];
        let mu = ensemble_mean(&trained, &dropout, &half()).unwrap();
        assert_eq!(mu, vec![3.0]);
        let v = ensemble_variance(&trained, &dropout, &mu, &half()).unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn pure_dropout_weight_collapses_to_dropout_mean() {
        let cfg = UqConfig {
            weight_trained: 0.0,
            weight_dropout: 1.0,
            ..half()
        };
        let trained = vec![vec![100.0], vec![-100.0]];
        let dropout = vec![vec![vec![1.0], vec![2.0]], vec![vec![3.0], vec![6.0]]];
        assert_eq!(ensemble_mean(&trained, &dropout, &cfg).unwrap(), vec![3.0]);
    }

    #[test]
    fn ensemble_rejects_bad_shapes() {
        assert!(ensemble_mean(&[], &[], &half()).is_err());
        let no_passes: Vec<Vec<Vec<f64>>> = vec![vec![]];
        assert!(ensemble_mean(&[vec![1.0]], &no_passes, &half()).is_err());
        assert!(ensemble_variance(&[vec![1.0]], &[vec![vec![1.0]]], &[1.0, 2.0], &half()).is_err());
    }

    #[test]
    fn identical_outputs_have_zero_variance() {
        let trained = vec![vec![0.3, 1.0]; 3];
        let dropout = vec![vec![vec![0.3, 1.0]; 4]; 3];
        let cfg = UqConfig {
            trials: 3,
            passes: 4,
            ..UqConfig::default()
        };
        let mu = ensemble_mean(&trained, &dropout, &cfg).unwrap();
        let v = ensemble_variance(&trained, &dropout, &mu, &cfg).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn outer_loss_cases() {
        let val = Dataset::new(vec![vec![0.0]], vec![vec![1.0]], data::Split::Val).unwrap();
        assert_eq!(expected_outer_loss(&[vec![3.0]], &val).unwrap(), 2.0);
        assert_eq!(expected_outer_loss(&[vec![1.0]], &val).unwrap(), 0.0);
        assert!(expected_outer_loss(&[], &val).is_err());
    }

    #[test]
    fn confidence_interval_cases() {
        let ci = confidence_interval(&[4.0, 4.0, 4.0], 4.0).unwrap();
        assert_eq!(ci.radius, 0.0);
        let ci = confidence_interval(&[1.0, 3.0], 2.0).unwrap();
        assert_eq!((ci.center, ci.radius), (2.0, 1.0));
        assert!(confidence_interval(&[1.0], 1.0).is_err());
    }

    #[test]
    fn regulated_loss_cases() {
        let cfg = RegularizationConfig {
            gamma: 2.0,
            g: PenaltyKind::RectifiedNorm,
        };
        assert_eq!(regulated_loss(1.0, &[vec![3.0, 4.0]], &cfg), 11.0);
        assert_eq!(regulated_loss(1.5, &[vec![0.0, 0.0], vec![0.0, 0.0]], &cfg), 1.5);
        let sum = RegularizationConfig {
            gamma: 0.5,
            g: PenaltyKind::Sum,
        };
        assert_eq!(regulated_loss(1.0, &[vec![3.0, 4.0], vec![1.0, 0.0]], &sum), 5.0);
        assert_eq!(regulated_loss(1.0, &[vec![3.0]], &RegularizationConfig::disabled()), 1.0);
    }

    #[test]
    fn regulated_loss_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let v: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..3).map(|_| rng.random_range(-0.5..2.0)).collect())
                .collect();
            let ell1 = rng.random_range(0.0..3.0);
            let gamma = rng.random_range(0.1..5.0);
            let mut acc = 0.0;
            for row in &v {
                let mut sq = 0.0;
                for &x in row {
                    if x > 0.0 {
                        sq += x * x;
                    }
                }
                acc += sq.sqrt();
            }
            let cfg = RegularizationConfig {
                gamma,
                g: PenaltyKind::RectifiedNorm,
            };
            assert!((regulated_loss(ell1, &v, &cfg) - (ell1 + gamma * acc)).abs() <= 1e-12);
        }
    }

    fn tiny_setup(p: f64) -> (MlpArchitecture, Dataset, Dataset) {
        let (train, val) = data::polynomial(2, 40, 12, 3).unwrap();
        let arch = MlpArchitecture {
            input_dim: 2,
            hidden_layers: 1,
            nodes_per_layer: 6,
            output_dim: 1,
            dropout_prob: p,
            activation: Activation::Tanh,
        };
        (arch, train, val)
    }

    fn training() -> TrainingConfig {
        TrainingConfig {
            epochs: 15,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 0,
        }
    }

    #[test]
    fn quantify_produces_n_plus_nt_samples() {
        let (arch, train, val) = tiny_setup(0.2);
        let setup = TrialSetup {
            arch: &arch,
            train: &train,
            val: &val,
            training: training(),
        };
        let cfg = UqConfig::default();
        match quantify(&setup, &cfg, &RegularizationConfig::default(), 5).unwrap() {
            Quantified::Ok {
                summary,
                loss,
                regulated_loss,
                usable_trials,
            } => {
                assert_eq!(usable_trials, 5);
                assert_eq!(summary.loss_samples.len(), 155);
                assert_eq!(summary.interval.center, loss);
                assert!(summary.interval.radius > 0.0);
                assert!(regulated_loss.unwrap() >= loss);
                assert_eq!(summary.mu_pred.len(), val.len());
            }
            Quantified::Failed => panic!("no trial should diverge"),
        }
        // scheduling-independent
        let again = quantify(&setup, &cfg, &RegularizationConfig::default(), 5).unwrap();
        assert_eq!(again, quantify(&setup, &cfg, &RegularizationConfig::default(), 5).unwrap());
    }

    #[test]
    fn no_dropout_leaves_only_trial_spread() {
        let (arch, train, val) = tiny_setup(0.0);
        let setup = TrialSetup {
            arch: &arch,
            train: &train,
            val: &val,
            training: training(),
        };
        let one = UqConfig {
            trials: 1,
            passes: 4,
            ..UqConfig::default()
        };
        let Quantified::Ok { summary, .. } =
            quantify(&setup, &one, &RegularizationConfig::disabled(), 1).unwrap()
        else {
            panic!("failed")
        };
        assert_eq!(summary.interval.radius, 0.0);
        assert!(summary.v_model.iter().flatten().all(|&v| v == 0.0));

        let three = UqConfig { trials: 3, ..one };
        let Quantified::Ok { summary, .. } =
            quantify(&setup, &three, &RegularizationConfig::disabled(), 1).unwrap()
        else {
            panic!("failed")
        };
        // each trial contributes 1 + T identical losses
        let per_trial: Vec<f64> = summary.loss_samples.chunks(5).map(|c| c[0]).collect();
        for chunk in summary.loss_samples.chunks(5) {
            assert!(chunk.iter().all(|&l| l == chunk[0]));
        }
        assert!((summary.interval.radius - population_std(&per_trial)).abs() < 1e-12);
    }

    #[test]
    fn all_divergent_trials_fail() {
        let (arch, train, val) = tiny_setup(0.0);
        let setup = TrialSetup {
            arch: &arch,
            train: &train,
            val: &val,
            training: TrainingConfig {
                learning_rate: 1e6,
                epochs: 50,
                ..training()
            },
        };
        let cfg = UqConfig {
            trials: 2,
            passes: 2,
            ..UqConfig::default()
        };
        assert_eq!(
            quantify(&setup, &cfg, &RegularizationConfig::default(), 0).unwrap(),
            Quantified::Failed
        );
    }

    #[test]
    fn summary_log_elides_large_vectors() {
        let summary = UqSummary {
            mu_pred: vec![vec![3.0], vec![4.0]],
            v_model: vec![vec![0.0], vec![0.0]],
            loss_samples: vec![1.0; 10],
            interval: ConfidenceInterval::degenerate(1.0),
        };
        let full = summary.to_log(100);
        assert_eq!(full.mu_pred_norm, 5.0);
        assert!(full.mu_pred.is_some() && full.loss_samples.is_some());
        let short = summary.to_log(4);
        assert!(short.mu_pred.is_some() && short.loss_samples.is_none());
        assert!(summary.to_log(1).mu_pred.is_none());
    }
}
