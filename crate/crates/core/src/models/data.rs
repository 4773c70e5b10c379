//! Generated regression datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, split: Split) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset needs matching, nonempty inputs and targets (got {} and {})",
                inputs.len(),
                targets.len()
            )));
        }
        let (di, dt) = (inputs[0].len(), targets[0].len());
        if di == 0 || dt == 0 {
            return Err(Error::InvalidArgument("dataset vectors must be nonempty".into()));
        }
        if inputs.iter().any(|x| x.len() != di) || targets.iter().any(|z| z.len() != dt) {
            return Err(Error::InvalidArgument(
                "dataset vectors have inconsistent dimensions".into(),
            ));
        }
        Ok(Dataset {
            inputs,
            targets,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn target_dim(&self) -> usize {
        self.targets[0].len()
    }
}

/// `z = sum_i x_i^2` with `x` uniform on `[-1, 1]^input_dim`.
pub fn polynomial(
    input_dim: usize,
    train_size: usize,
    val_size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, split| {
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..input_dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let targets = inputs
            .iter()
            .map(|x| vec![x.iter().map(|v| v * v).sum()])
            .collect();
        Dataset::new(inputs, targets, split)
    };
    let train = draw(train_size, Split::Train)?;
    let val = draw(val_size, Split::Val)?;
    Ok((train, val))
}

/// Noisy sine series cut into sliding windows: `window` past values predict
/// the next one. The first `train_size` windows train, the following
/// `val_size` windows validate.
pub fn sine_series(
    window: usize,
    train_size: usize,
    val_size: usize,
    period: f64,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if window == 0 || !(period > 0.0) || !(noise >= 0.0) {
        return Err(Error::InvalidArgument(
            "sine series needs window > 0, period > 0 and noise >= 0".into(),
        ));
    }
    let n = train_size + val_size;
    let len = n + window;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let series: Vec<f64> = (0..len)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period).sin() + normal.sample(&mut rng))
        .collect();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for start in 0..n {
        inputs.push(series[start..start + window].to_vec());
        targets.push(vec![series[start + window]]);
    }
    let val_inputs = inputs.split_off(train_size);
    let val_targets = targets.split_off(train_size);
    Ok((
        Dataset::new(inputs, targets, Split::Train)?,
        Dataset::new(val_inputs, val_targets, Split::Val)?,
    ))
}
