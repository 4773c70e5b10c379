//! Candidate generation and scoring for the RBF-based proposals.
//!
//! Candidates come from two sources: rounded Gaussian perturbations of the
//! incumbent (local search) and uniform lattice draws (global search). Each
//! candidate is scored on a surrogate value (lower is better) and its distance
//! to the nearest evaluated point (larger is better). Both criteria are
//! min-max normalised over the batch and mixed with a weight that cycles
//! through a fixed pattern.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{sq_distance, HyperparameterSet, HyperparameterSpace};
use crate::error::{Error, Result};

const RETRY_CAP: usize = 10;
/// Lattices up to this size are enumerated when sampling an unexplored point.
const ENUMERATION_LIMIT: u128 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// `None` means `min(500 * dims, 5000)`.
    pub n_candidates: Option<usize>,
    pub perturb_fraction: f64,
    /// Perturbation standard deviation in lattice steps for every dimension;
    /// `None` means `max(1, ceil(0.1 * (upper - lower)))` per dimension.
    pub perturb_sigma: Option<f64>,
    pub weight_cycle: Vec<f64>,
    pub alpha: f64,
    pub min_distance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_candidates: None,
            perturb_fraction: 0.5,
            perturb_sigma: None,
            weight_cycle: vec![0.3, 0.5, 0.8, 0.95],
            alpha: 0.0,
            min_distance: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == Some(0) {
            return Err(Error::InvalidConfig("sampler.n_candidates must be positive".into()));
        }
        if !(self.perturb_fraction > 0.0 && self.perturb_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "sampler.perturb_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.perturb_sigma.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("sampler.perturb_sigma must be > 0".into()));
        }
        if self.weight_cycle.is_empty()
            || self.weight_cycle.iter().any(|w| !(0.0..=1.0).contains(w))
        {
            return Err(Error::InvalidConfig(
                "sampler.weight_cycle must be a nonempty list of values in [0, 1]".into(),
            ));
        }
        if !(-2.0..=2.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "sampler.alpha must lie in [-2, 2], got {}",
                self.alpha
            )));
        }
        if !(self.min_distance > 0.0) {
            return Err(Error::InvalidConfig("sampler.min_distance must be > 0".into()));
        }
        Ok(())
    }

    pub fn candidate_count(&self, dims: usize) -> usize {
        self.n_candidates.unwrap_or((500 * dims).min(5000))
    }

    pub fn sigma(&self, space: &HyperparameterSpace, dim: usize) -> f64 {
        self.perturb_sigma
            .unwrap_or_else(|| (0.1 * space.width(dim) as f64).ceil().max(1.0))
    }
}

/// Position in the weight pattern; owned by the single proposer.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CycleState {
    pub position: u64,
}

/// Returns `cycle[k mod len]` and advances `k`.
pub fn next_weight(cycle: &[f64], state: &mut CycleState) -> f64 {
    assert!(!cycle.is_empty(), "weight cycle must be nonempty");
    let w = cycle[(state.position % cycle.len() as u64) as usize];
    state.position += 1;
    w
}

/// Perturbations of `best` plus uniform draws, none of them in `excluded`.
///
/// Fails with [`Error::Exhausted`] when `excluded` covers the whole lattice.
pub fn generate_candidates<R: Rng + ?Sized>(
    space: &HyperparameterSpace,
    best: &HyperparameterSet,
    excluded: &HashSet<HyperparameterSet>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<HyperparameterSet>> {
    if space.lattice_size() <= excluded.len() as u128 {
        return Err(Error::Exhausted);
    }
    if !space.validate_point(best)? {
        return Err(Error::InvalidArgument(format!("best point {best} is outside the space")));
    }
    let n = cfg.candidate_count(space.dims());
    let n_perturb = ((cfg.perturb_fraction * n as f64).ceil() as usize).min(n);
    let normals: Vec<Normal<f64>> = (0..space.dims())
        .map(|k| Normal::new(0.0, cfg.sigma(space, k)).expect("validated sigma"))
        .collect();

    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        for _ in 0..RETRY_CAP {
            let c = if i < n_perturb {
                perturb(space, best, &normals, rng)
            } else {
                space.random_point(rng)
            };
            if excluded.contains(&c) {
                continue;
            }
            if seen.insert(c.clone()) {
                out.push(c);
            }
            break;
        }
    }
    Ok(out)
}

fn perturb<R: Rng + ?Sized>(
    space: &HyperparameterSpace,
    best: &HyperparameterSet,
    normals: &[Normal<f64>],
    rng: &mut R,
) -> HyperparameterSet {
    let deltas: Vec<f64> = normals.iter().map(|n| n.sample(rng)).collect();
    let mut values: Vec<i64> = best
        .values()
        .iter()
        .zip(&deltas)
        .enumerate()
        .map(|(k, (&b, d))| space.clamp(k, b + d.round() as i64))
        .collect();
    if values == best.values() {
        // Force a one-step move on the coordinate with the largest raw
        // delta that is not pinned in both directions.
        let mut order: Vec<usize> = (0..deltas.len()).collect();
        order.sort_by(|&a, &b| deltas[b].abs().total_cmp(&deltas[a].abs()));
        for k in order {
            let step = if deltas[k] >= 0.0 { 1 } else { -1 };
            for s in [step, -step] {
                let v = best.values()[k] + s;
                if v >= space.lower()[k] && v <= space.upper()[k] {
                    values[k] = v;
                    return HyperparameterSet::new(values);
                }
            }
        }
    }
    HyperparameterSet::new(values)
}

/// A uniformly random lattice point not in `excluded`.
pub fn random_unexplored<R: Rng + ?Sized>(
    space: &HyperparameterSpace,
    excluded: &HashSet<HyperparameterSet>,
    rng: &mut R,
) -> Result<HyperparameterSet> {
    let size = space.lattice_size();
    if size <= excluded.len() as u128 {
        return Err(Error::Exhausted);
    }
    for _ in 0..1000 {
        let p = space.random_point(rng);
        if !excluded.contains(&p) {
            return Ok(p);
        }
    }
    if size <= ENUMERATION_LIMIT {
        let free: Vec<HyperparameterSet> =
            space.enumerate().filter(|p| !excluded.contains(p)).collect();
        if free.is_empty() {
            return Err(Error::Exhausted);
        }
        return Ok(free[rng.random_range(0..free.len())].clone());
    }
    loop {
        let p = space.random_point(rng);
        if !excluded.contains(&p) {
            return Ok(p);
        }
    }
}

/// Distance from each candidate to its nearest point in `evaluated`.
pub fn nearest_distances(candidates: &[HyperparameterSet], evaluated: &[HyperparameterSet]) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| {
            evaluated
                .iter()
                .map(|e| sq_distance(c.values(), e.values()))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `w * value_norm + (1 - w) * distance_norm`; lower totals are better.
pub fn score_weighted(values: &[f64], distances: &[f64], weight: f64) -> Result<Vec<f64>> {
    if values.len() != distances.len() {
        return Err(Error::dims(values.len(), distances.len()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("no candidates to score".into()));
    }
    let (vmin, vmax) = min_max(values);
    let (dmin, dmax) = min_max(distances);
    let vspan = vmax - vmin;
    let dspan = dmax - dmin;
    Ok(values
        .iter()
        .zip(distances)
        .map(|(&v, &d)| {
            let vn = if vspan > 0.0 { (v - vmin) / vspan } else { 0.0 };
            let dn = if dspan > 0.0 { (dmax - d) / dspan } else { 0.0 };
            weight * vn + (1.0 - weight) * dn
        })
        .collect())
}

/// Scores the value criterion `mu + alpha * sigma` against distance.
pub fn score_ensemble(
    mu: &[f64],
    sigma: &[f64],
    distances: &[f64],
    alpha: f64,
    weight: f64,
) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() {
        return Err(Error::dims(mu.len(), sigma.len()));
    }
    let values: Vec<f64> = mu.iter().zip(sigma).map(|(m, s)| m + alpha * s).collect();
    score_weighted(&values, distances, weight)
}

/// Index of the lowest total; ties go to the larger raw distance, then the
/// lower index.
pub fn select_best(totals: &[f64], distances: &[f64]) -> Option<usize> {
    (0..totals.len()).min_by(|&a, &b| {
        totals[a]
            .total_cmp(&totals[b])
            .then(distances[b].total_cmp(&distances[a]))
            .then(a.cmp(&b))
    })
}
