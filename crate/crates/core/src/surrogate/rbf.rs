//! Cubic radial basis function interpolant with a linear polynomial tail,
//!
//! `m(x) = sum_j lambda_j ||x - c_j||^3 + beta_0 + beta^T x`,
//!
//! fitted by solving the saddle-point system
//!
//! ```text
//! [ Phi  P ] [ lambda ]   [ f ]
//! [ P^T  0 ] [ beta   ] = [ 0 ]
//! ```
//!
//! with `Phi_ij = ||c_i - c_j||^3` and `P = [1 c_i^T]`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, LU};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{sq_distance, ConfidenceInterval, HyperparameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfModel {
    pub centers: Vec<HyperparameterSet>,
    pub lambdas: Vec<f64>,
    pub beta0: f64,
    pub beta: Vec<f64>,
}

fn cubic(sq_dist: f64) -> f64 {
    let r = sq_dist.sqrt();
    r * r * r
}

/// Factorised interpolation system for a fixed set of centers; solving for
/// several right-hand sides reuses one factorisation.
pub struct RbfSystem {
    centers: Vec<HyperparameterSet>,
    matrix: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl RbfSystem {
    pub fn new(centers: &[HyperparameterSet]) -> Result<Self> {
        let n = centers.len();
        let dims = centers.first().map_or(0, HyperparameterSet::dims);
        if dims == 0 {
            return Err(Error::Fit("no centers".into()));
        }
        if let Some(c) = centers.iter().find(|c| c.dims() != dims) {
            return Err(Error::dims(dims, c.dims()));
        }
        if n < dims + 1 {
            return Err(Error::Fit(format!(
                "{n} centers cannot determine a linear tail in {dims} dimensions (need {})",
                dims + 1
            )));
        }
        let mut seen: HashMap<&HyperparameterSet, usize> = HashMap::with_capacity(n);
        for (i, c) in centers.iter().enumerate() {
            if let Some(j) = seen.insert(c, i) {
                return Err(Error::Fit(format!(
                    "duplicate centers {j} and {i} at {c}"
                )));
            }
        }

        let mut tail = DMatrix::<f64>::zeros(n, dims + 1);
        for (i, c) in centers.iter().enumerate() {
            tail[(i, 0)] = 1.0;
            for (k, &v) in c.values().iter().enumerate() {
                tail[(i, k + 1)] = v as f64;
            }
        }
        if tail.clone().svd(false, false).rank(1e-9 * tail.norm().max(1.0)) < dims + 1 {
            return Err(Error::Fit(
                "centers are affinely dependent; the linear tail is not identifiable".into(),
            ));
        }

        let size = n + dims + 1;
        let mut matrix = DMatrix::<f64>::zeros(size, size);
        for i in 0..n {
            for j in (i + 1)..n {
                let phi = cubic(sq_distance(centers[i].values(), centers[j].values()));
                matrix[(i, j)] = phi;
                matrix[(j, i)] = phi;
            }
            for k in 0..=dims {
                matrix[(i, n + k)] = tail[(i, k)];
                matrix[(n + k, i)] = tail[(i, k)];
            }
        }
        let lu = matrix.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Fit("interpolation system is singular".into()));
        }
        Ok(RbfSystem {
            centers: centers.to_vec(),
            matrix,
            lu,
        })
    }

    pub fn centers(&self) -> &[HyperparameterSet] {
        &self.centers
    }

    pub fn solve(&self, values: &[f64]) -> Result<RbfModel> {
        let n = self.centers.len();
        if values.len() != n {
            return Err(Error::dims(n, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("non-finite value {v} in fit data")));
        }
        let size = self.matrix.nrows();
        let mut rhs = DVector::<f64>::zeros(size);
        rhs.rows_mut(0, n).copy_from_slice(values);
        let mut x = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Fit("interpolation system is singular".into()))?;
        // Two steps of iterative refinement.
        for _ in 0..2 {
            let residual = &rhs - &self.matrix * &x;
            if let Some(dx) = self.lu.solve(&residual) {
                x += dx;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("interpolation system is numerically singular".into()));
        }
        Ok(RbfModel {
            centers: self.centers.clone(),
            lambdas: x.rows(0, n).iter().copied().collect(),
            beta0: x[n],
            beta: x.rows(n + 1, size - n - 1).iter().copied().collect(),
        })
    }
}

/// Fit the interpolant through `(centers[j], values[j])`.
pub fn rbf_fit(centers: &[HyperparameterSet], values: &[f64]) -> Result<RbfModel> {
    if centers.len() != values.len() {
        return Err(Error::dims(centers.len(), values.len()));
    }
    RbfSystem::new(centers)?.solve(values)
}

impl RbfModel {
    pub fn dims(&self) -> usize {
        self.beta.len()
    }

    pub fn predict(&self, point: &HyperparameterSet) -> Result<f64> {
        if point.dims() != self.dims() {
            return Err(Error::dims(self.dims(), point.dims()));
        }
        Ok(self.predict_unchecked(point.values()))
    }

    pub(crate) fn predict_unchecked(&self, x: &[i64]) -> f64 {
        let radial: f64 = self
            .centers
            .iter()
            .zip(&self.lambdas)
            .map(|(c, l)| l * cubic(sq_distance(c.values(), x)))
            .sum();
        let tail: f64 = self.beta.iter().zip(x).map(|(b, &v)| b * v as f64).sum();
        radial + self.beta0 + tail
    }
}

pub fn rbf_predict(model: &RbfModel, point: &HyperparameterSet) -> Result<f64> {
    model.predict(point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfEnsemble {
    pub members: Vec<RbfModel>,
}

impl RbfEnsemble {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }
}

/// Fit `member_count` interpolants, each through values drawn per center
/// uniformly from {lower bound, center, upper bound} of its interval.
pub fn rbf_ensemble_fit<R: Rng + ?Sized>(
    centers: &[HyperparameterSet],
    intervals: &[ConfidenceInterval],
    member_count: usize,
    rng: &mut R,
) -> Result<RbfEnsemble> {
    Ok(rbf_ensemble_fit_with_draws(centers, intervals, member_count, rng)?.0)
}

/// As [`rbf_ensemble_fit`], also returning the drawn values per member.
pub fn rbf_ensemble_fit_with_draws<R: Rng + ?Sized>(
    centers: &[HyperparameterSet],
    intervals: &[ConfidenceInterval],
    member_count: usize,
    rng: &mut R,
) -> Result<(RbfEnsemble, Vec<Vec<f64>>)> {
    if member_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "an RBF ensemble needs at least 2 members, got {member_count}"
        )));
    }
    if centers.len() != intervals.len() {
        return Err(Error::dims(centers.len(), intervals.len()));
    }
    let system = RbfSystem::new(centers)?;
    let mut members = Vec::with_capacity(member_count);
    let mut draws = Vec::with_capacity(member_count);
    for _ in 0..member_count {
        let values: Vec<f64> = intervals
            .iter()
            .map(|ci| match rng.random_range(0..3) {
                0 => ci.lower(),
                1 => ci.center,
                _ => ci.upper(),
            })
            .collect();
        members.push(system.solve(&values)?);
        draws.push(values);
    }
    Ok((RbfEnsemble { members }, draws))
}

/// Mean and population standard deviation of the member predictions.
pub fn rbf_ensemble_stats(ensemble: &RbfEnsemble, point: &HyperparameterSet) -> Result<(f64, f64)> {
    let preds = ensemble
        .members
        .iter()
        .map(|m| m.predict(point))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&preds))
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}
