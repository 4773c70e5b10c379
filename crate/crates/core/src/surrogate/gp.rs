//! Gaussian process surrogate: constant process mean `nu`, process variance
//! `s2`, squared-exponential correlation with one lengthscale per dimension.
//!
//! For a given set of lengthscales, `nu` and `s2` have closed-form maximum
//! likelihood estimates (generalised least squares), so the search only runs
//! over log-lengthscales, maximising the concentrated log-likelihood
//! `-n/2 log s2 - 1/2 log|R|` by a multi-start compass search.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::domain::HyperparameterSet;
use crate::error::{Error, Result};

pub const BASE_NUGGET: f64 = 1e-8;
pub const MAX_NUGGET: f64 = 1e-2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    pub centers: Vec<HyperparameterSet>,
    pub values: Vec<f64>,
    pub lengthscales: Vec<f64>,
    pub nu: f64,
    pub s2: f64,
    /// Diagonal jitter added to the correlation matrix (relative to `s2`).
    pub nugget: f64,
    /// `R^-1 (y - nu)`
    alpha: Vec<f64>,
    #[serde(skip)]
    chol: Option<Cholesky<f64, Dyn>>,
}

fn correlation(a: &[i64], b: &[i64], lengthscales: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((&x, &y), l)| {
            let d = (x - y) as f64 / l;
            d * d
        })
        .sum();
    (-0.5 * s).exp()
}

fn correlation_matrix(centers: &[HyperparameterSet], lengthscales: &[f64]) -> DMatrix<f64> {
    let n = centers.len();
    let mut r = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = correlation(centers[i].values(), centers[j].values(), lengthscales);
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    r
}

/// Cholesky of `R + nugget I`, escalating the nugget tenfold up to
/// [`MAX_NUGGET`].
fn factor(r: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let mut nugget = BASE_NUGGET;
    while nugget <= MAX_NUGGET * (1.0 + 1e-9) {
        let mut m = r.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += nugget;
        }
        if let Some(c) = m.cholesky() {
            return Some((c, nugget));
        }
        nugget *= 10.0;
    }
    None
}

struct Conditioned {
    chol: Cholesky<f64, Dyn>,
    nugget: f64,
    nu: f64,
    s2: f64,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

fn condition_on(
    centers: &[HyperparameterSet],
    values: &[f64],
    lengthscales: &[f64],
) -> Option<Conditioned> {
    let n = values.len();
    let (chol, nugget) = factor(&correlation_matrix(centers, lengthscales))?;
    let y = DVector::from_column_slice(values);
    let ones = DVector::<f64>::from_element(n, 1.0);
    let rinv_one = chol.solve(&ones);
    let rinv_y = chol.solve(&y);
    let denom = ones.dot(&rinv_one);
    if !(denom > 0.0) {
        return None;
    }
    let nu = ones.dot(&rinv_y) / denom;
    let resid = &y - &ones * nu;
    let alpha = chol.solve(&resid);
    let scale = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let s2 = (resid.dot(&alpha) / n as f64).max(1e-12 * scale.max(1.0));
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let log_likelihood = -0.5 * n as f64 * s2.ln() - 0.5 * log_det;
    log_likelihood.is_finite().then_some(Conditioned {
        chol,
        nugget,
        nu,
        s2,
        alpha,
        log_likelihood,
    })
}

impl GpModel {
    /// Condition on data with fixed lengthscales; `nu` and `s2` take their
    /// maximum likelihood values.
    pub fn with_lengthscales(
        centers: &[HyperparameterSet],
        values: &[f64],
        lengthscales: &[f64],
    ) -> Result<Self> {
        check_data(centers, values)?;
        if lengthscales.len() != centers[0].dims() || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Fit("one positive lengthscale per dimension is required".into()));
        }
        let c = condition_on(centers, values, lengthscales).ok_or_else(|| {
            Error::Fit(format!(
                "correlation matrix is not positive definite even with nugget {MAX_NUGGET}"
            ))
        })?;
        Ok(GpModel {
            centers: centers.to_vec(),
            values: values.to_vec(),
            lengthscales: lengthscales.to_vec(),
            nu: c.nu,
            s2: c.s2,
            nugget: c.nugget,
            alpha: c.alpha.iter().copied().collect(),
            chol: Some(c.chol),
        })
    }

    pub fn dims(&self) -> usize {
        self.lengthscales.len()
    }

    fn chol(&self) -> Cholesky<f64, Dyn> {
        match &self.chol {
            Some(c) => c.clone(),
            None => {
                let mut r = correlation_matrix(&self.centers, &self.lengthscales);
                for i in 0..r.nrows() {
                    r[(i, i)] += self.nugget;
                }
                r.cholesky().expect("restored GP factorisation")
            }
        }
    }

    /// Posterior mean and variance (clamped at zero).
    pub fn predict(&self, point: &HyperparameterSet) -> Result<(f64, f64)> {
        if point.dims() != self.dims() {
            return Err(Error::dims(self.dims(), point.dims()));
        }
        let r = DVector::from_iterator(
            self.centers.len(),
            self.centers
                .iter()
                .map(|c| correlation(c.values(), point.values(), &self.lengthscales)),
        );
        let mean = self.nu + r.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let chol = match &self.chol {
            Some(c) => std::borrow::Cow::Borrowed(c),
            None => std::borrow::Cow::Owned(self.chol()),
        };
        let v = chol.l().solve_lower_triangular(&r).unwrap_or_else(|| r.clone());
        let variance = (self.s2 * (1.0 - v.norm_squared())).max(0.0);
        Ok((mean, variance))
    }
}

fn check_data(centers: &[HyperparameterSet], values: &[f64]) -> Result<()> {
    if centers.len() != values.len() {
        return Err(Error::dims(centers.len(), values.len()));
    }
    if centers.len() < 2 {
        return Err(Error::Fit(format!(
            "a GP needs at least 2 distinct centers, got {}",
            centers.len()
        )));
    }
    let dims = centers[0].dims();
    if let Some(c) = centers.iter().find(|c| c.dims() != dims) {
        return Err(Error::dims(dims, c.dims()));
    }
    let mut sorted: Vec<&HyperparameterSet> = centers.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Fit(format!("duplicate center {}", w[0])));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("non-finite value {v} in fit data")));
    }
    Ok(())
}

/// Fit by maximising the concentrated likelihood over log-lengthscales.
pub fn gp_fit(centers: &[HyperparameterSet], values: &[f64]) -> Result<GpModel> {
    check_data(centers, values)?;
    let dims = centers[0].dims();
    let spans: Vec<f64> = (0..dims)
        .map(|k| {
            let (lo, hi) = centers.iter().fold((i64::MAX, i64::MIN), |(lo, hi), c| {
                (lo.min(c.values()[k]), hi.max(c.values()[k]))
            });
            ((hi - lo) as f64).max(1.0)
        })
        .collect();
    let lower: Vec<f64> = spans.iter().map(|s| (0.02 * s).max(0.1).ln()).collect();
    let upper: Vec<f64> = spans.iter().map(|s| (10.0 * s).ln()).collect();

    let score = |logl: &[f64]| -> f64 {
        let ls: Vec<f64> = logl.iter().map(|v| v.exp()).collect();
        condition_on(centers, values, &ls).map_or(f64::NEG_INFINITY, |c| c.log_likelihood)
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    for frac in [0.1, 0.3, 1.0] {
        let start: Vec<f64> = spans
            .iter()
            .zip(lower.iter().zip(&upper))
            .map(|(s, (lo, hi))| (frac * s).ln().clamp(*lo, *hi))
            .collect();
        let found = compass_search(start, &lower, &upper, &score);
        if best.as_ref().is_none_or(|b| found.1 > b.1) {
            best = Some(found);
        }
    }
    let (logl, ll) = best.expect("at least one start");
    if !ll.is_finite() {
        return Err(Error::Fit(format!(
            "correlation matrix is not positive definite even with nugget {MAX_NUGGET}"
        )));
    }
    let ls: Vec<f64> = logl.iter().map(|v| v.exp()).collect();
    GpModel::with_lengthscales(centers, values, &ls)
}

fn compass_search(
    mut x: Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    f: &impl Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let mut fx = f(&x);
    let mut step = 1.0;
    while step > 0.02 {
        let mut improved = false;
        for k in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] = (y[k] + dir * step).clamp(lower[k], upper[k]);
                if y[k] == x[k] {
                    continue;
                }
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

pub fn gp_predict(model: &GpModel, point: &HyperparameterSet) -> Result<(f64, f64)> {
    model.predict(point)
}

fn std_normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `incumbent` of a normal with mean `mu` and
/// standard deviation `sigma`.
pub fn expected_improvement_normal(mu: f64, sigma: f64, incumbent: f64) -> f64 {
    let gain = incumbent - mu;
    if !(sigma > 0.0) {
        return gain.max(0.0);
    }
    let u = gain / sigma;
    (gain * std_normal_cdf(u) + sigma * std_normal_pdf(u)).max(0.0)
}

pub fn expected_improvement(model: &GpModel, point: &HyperparameterSet, incumbent: f64) -> Result<f64> {
    let (mu, var) = model.predict(point)?;
    Ok(expected_improvement_normal(mu, var.sqrt(), incumbent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[&[i64]]) -> Vec<HyperparameterSet> {
        v.iter().map(|p| p.to_vec().into()).collect()
    }

    #[test]
    fn constant_data_predicts_constant() {
        let gp = gp_fit(&pts(&[&[0], &[4]]), &[2.5, 2.5]).unwrap();
        let (m, _) = gp.predict(&vec![2].into()).unwrap();
        assert!((m - 2.5).abs() < 1e-6);
        assert!(gp.s2 > 0.0);
    }

    #[test]
    fn near_interpolation_at_training_points() {
        let centers = pts(&[&[0], &[2], &[3], &[7], &[9]]);
        let values = [1.0, -0.5, 0.3, 2.0, 1.1];
        let gp = gp_fit(&centers, &values).unwrap();
        for (c, v) in centers.iter().zip(&values) {
            let (m, var) = gp.predict(c).unwrap();
            assert!((m - v).abs() < 1e-4, "{m} vs {v}");
            assert!(var <= gp.s2 * (gp.nugget + 1e-6));
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let gp = gp_fit(&pts(&[&[0, 0], &[1, 2], &[3, 1], &[2, 2]]), &[0.0, 1.0, -1.0, 0.5]).unwrap();
        let (m, var) = gp.predict(&vec![10_000, -10_000].into()).unwrap();
        assert!((m - gp.nu).abs() <= 1e-3 * gp.nu.abs().max(1e-9));
        assert!((var - gp.s2).abs() <= 1e-3 * gp.s2);
    }

    #[test]
    fn rejects_duplicates_and_single_points() {
        assert!(gp_fit(&pts(&[&[1]]), &[0.0]).is_err());
        assert!(gp_fit(&pts(&[&[1], &[1]]), &[0.0, 1.0]).is_err());
        assert!(gp_fit(&pts(&[&[1], &[2]]), &[0.0]).is_err());
    }

    /// Dense oracle: explicit inverse of the jittered covariance.
    #[test]
    fn posterior_matches_dense_inverse_oracle() {
        let centers = pts(&[&[0], &[3], &[4], &[8], &[11]]);
        let values = [0.2, 1.7, 1.1, -0.4, 0.9];
        let gp = gp_fit(&centers, &values).unwrap();
        let n = 5;
        let l = gp.lengthscales[0];
        let k = |a: i64, b: i64| (-0.5 * (((a - b) as f64) / l).powi(2)).exp();
        let mut r = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = k(centers[i].values()[0], centers[j].values()[0]);
            }
            r[(i, i)] += gp.nugget;
        }
        let rinv = r.clone().try_inverse().unwrap();
        let y = DVector::from_column_slice(&values);
        let one = DVector::from_element(n, 1.0);
        let nu = (one.transpose() * &rinv * &y)[0] / (one.transpose() * &rinv * &one)[0];
        let resid = &y - &one * nu;
        let s2 = (resid.transpose() * &rinv * &resid)[0] / n as f64;
        assert!((nu - gp.nu).abs() <= 1e-8 * (1.0 + nu.abs()));
        assert!((s2 - gp.s2).abs() <= 1e-8 * (1.0 + s2));
        for q in [-2i64, 1, 5, 6, 10, 15] {
            let rv = DVector::from_iterator(n, centers.iter().map(|c| k(c.values()[0], q)));
            let mean = nu + (rv.transpose() * &rinv * &resid)[0];
            let var = (s2 * (1.0 - (rv.transpose() * &rinv * &rv)[0])).max(0.0);
            let (m, v) = gp.predict(&vec![q].into()).unwrap();
            assert!((m - mean).abs() <= 1e-8 * (1.0 + mean.abs()), "mean at {q}");
            assert!((v - var).abs() <= 1e-8 * (1.0 + var), "var at {q}");
        }
    }

    #[test]
    fn restored_model_predicts_identically() {
        let centers = pts(&[&[0, 1], &[3, 2], &[5, 5], &[1, 4]]);
        let gp = gp_fit(&centers, &[1.0, 2.0, 0.0, 3.0]).unwrap();
        let back: GpModel = serde_json::from_str(&serde_json::to_string(&gp).unwrap()).unwrap();
        let q: HyperparameterSet = vec![2, 2].into();
        let (m1, v1) = gp.predict(&q).unwrap();
        let (m2, v2) = back.predict(&q).unwrap();
        assert!((m1 - m2).abs() < 1e-12 && (v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn ei_closed_form_cases() {
        assert_eq!(expected_improvement_normal(5.0, 0.0, 4.0), 0.0);
        assert_eq!(expected_improvement_normal(4.0, 0.0, 4.0), 0.0);
        assert_eq!(expected_improvement_normal(3.0, 0.0, 4.0), 1.0);
        let ei = expected_improvement_normal(2.0, 1.0, 2.0);
        assert!((ei - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ei_nonnegative_on_random_gp_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let centers = pts(&[&[0, 0], &[5, 1], &[2, 7], &[8, 8], &[4, 4], &[9, 2]]);
        let values: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let gp = gp_fit(&centers, &values).unwrap();
        for _ in 0..2000 {
            let q: HyperparameterSet = vec![rng.random_range(-5..15), rng.random_range(-5..15)].into();
            let inc = rng.random_range(-4.0..4.0);
            let ei = expected_improvement(&gp, &q, inc).unwrap();
            assert!(ei >= 0.0);
            let (_, var) = gp.predict(&q).unwrap();
            assert!(var >= 0.0 && var <= gp.s2 * (1.0 + 1e-6));
        }
    }

    proptest! {
        #[test]
        fn ei_is_nonincreasing_in_mean(
            mu in -10.0f64..10.0, delta in 0.0f64..5.0, sigma in 0.0f64..4.0, inc in -10.0f64..10.0
        ) {
            let a = expected_improvement_normal(mu, sigma, inc);
            let b = expected_improvement_normal(mu + delta, sigma, inc);
            prop_assert!(a >= 0.0 && b >= 0.0);
            prop_assert!(b <= a + 1e-12);
        }
    }
}
