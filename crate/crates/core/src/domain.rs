//! Search space, lattice points, and evaluation records shared by every
//! other module.
//!
//! Hyperparameters are integers. Real-valued knobs (dropout rate, learning
//! rate, ...) are reached through a per-dimension affine [`Codec`]: the
//! optimizer only ever sees the integer index, and the objective decodes it.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map from a lattice index to the value handed to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Codec {
    pub offset: f64,
    pub step: f64,
}

impl Codec {
    pub const IDENTITY: Codec = Codec {
        offset: 0.0,
        step: 1.0,
    };

    pub fn decode(&self, index: i64) -> f64 {
        self.offset + self.step * index as f64
    }
}

impl Default for Codec {
    fn default() -> Self {
        Codec::IDENTITY
    }
}

/// A bounded integer lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    names: Vec<String>,
    lower: Vec<i64>,
    upper: Vec<i64>,
    codecs: Vec<Codec>,
}

impl HyperparameterSpace {
    pub fn new(names: Vec<String>, lower: Vec<i64>, upper: Vec<i64>) -> Result<Self> {
        let codecs = vec![Codec::IDENTITY; names.len()];
        Self::with_codecs(names, lower, upper, codecs)
    }

    pub fn with_codecs(
        names: Vec<String>,
        lower: Vec<i64>,
        upper: Vec<i64>,
        codecs: Vec<Codec>,
    ) -> Result<Self> {
        let dims = names.len();
        if dims == 0 {
            return Err(Error::InvalidSpace("at least one dimension is required".into()));
        }
        if lower.len() != dims || upper.len() != dims || codecs.len() != dims {
            return Err(Error::InvalidSpace(format!(
                "names, lower, upper and codecs must all have length {dims} \
                 (got {}, {}, {})",
                lower.len(),
                upper.len(),
                codecs.len()
            )));
        }
        for i in 0..dims {
            if lower[i] > upper[i] {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}`: lower bound {} exceeds upper bound {}",
                    names[i], lower[i], upper[i]
                )));
            }
            if !codecs[i].offset.is_finite() || !codecs[i].step.is_finite() {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}`: codec must be finite",
                    names[i]
                )));
            }
        }
        Ok(HyperparameterSpace {
            names,
            lower,
            upper,
            codecs,
        })
    }

    /// Unnamed space with identity codecs, mostly for tests and benchmarks.
    pub fn from_bounds(bounds: &[(i64, i64)]) -> Result<Self> {
        let names = (0..bounds.len()).map(|i| format!("x{i}")).collect();
        let lower = bounds.iter().map(|b| b.0).collect();
        let upper = bounds.iter().map(|b| b.1).collect();
        Self::new(names, lower, upper)
    }

    pub fn dims(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    pub fn codecs(&self) -> &[Codec] {
        &self.codecs
    }

    pub fn width(&self, dim: usize) -> i64 {
        self.upper[dim] - self.lower[dim]
    }

    /// Number of lattice points, saturating at `u128::MAX`.
    pub fn lattice_size(&self) -> u128 {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(1u128, |acc, (lo, hi)| {
                acc.saturating_mul((hi - lo) as u128 + 1)
            })
    }

    pub fn validate_point(&self, point: &HyperparameterSet) -> Result<bool> {
        if point.dims() != self.dims() {
            return Err(Error::dims(self.dims(), point.dims()));
        }
        Ok(point
            .values()
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi))
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperparameterSet {
        let values = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| rng.random_range(lo..=hi))
            .collect();
        HyperparameterSet::new(values)
    }

    pub fn clamp(&self, dim: usize, value: i64) -> i64 {
        value.clamp(self.lower[dim], self.upper[dim])
    }

    /// Decoded (objective-facing) values of a point.
    pub fn decode(&self, point: &HyperparameterSet) -> Vec<f64> {
        point
            .values()
            .iter()
            .zip(&self.codecs)
            .map(|(&v, c)| c.decode(v))
            .collect()
    }

    /// Enumerate every lattice point in lexicographic order.
    pub fn enumerate(&self) -> impl Iterator<Item = HyperparameterSet> + '_ {
        let mut current = Some(self.lower.clone());
        std::iter::from_fn(move || {
            let out = current.clone()?;
            let mut next = out.clone();
            let mut dim = self.dims();
            loop {
                if dim == 0 {
                    current = None;
                    break;
                }
                dim -= 1;
                if next[dim] < self.upper[dim] {
                    next[dim] += 1;
                    current = Some(next);
                    break;
                }
                next[dim] = self.lower[dim];
            }
            Some(HyperparameterSet::new(out))
        })
    }
}

/// A point of the lattice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperparameterSet(Vec<i64>);

impl HyperparameterSet {
    pub fn new(values: Vec<i64>) -> Self {
        HyperparameterSet(values)
    }

    pub fn values(&self) -> &[i64] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

impl From<Vec<i64>> for HyperparameterSet {
    fn from(values: Vec<i64>) -> Self {
        HyperparameterSet(values)
    }
}

impl fmt::Display for HyperparameterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Euclidean distance on raw lattice coordinates.
pub fn distance(a: &HyperparameterSet, b: &HyperparameterSet) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims(a.dims(), b.dims()));
    }
    Ok(sq_distance(a.values(), b.values()).sqrt())
}

pub(crate) fn sq_distance(a: &[i64], b: &[i64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub radius: f64,
}

impl ConfidenceInterval {
    pub fn new(center: f64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence interval radius must be >= 0, got {radius}"
            )));
        }
        Ok(ConfidenceInterval { center, radius })
    }

    pub fn degenerate(center: f64) -> Self {
        ConfidenceInterval {
            center,
            radius: 0.0,
        }
    }

    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }
}

/// Loss recorded for evaluations whose every trial diverged.
pub const FAILED_LOSS: f64 = 1e12;

/// One completed black-box evaluation.
///
/// The confidence interval is always centered on `loss` with radius
/// `loss_std`, so it is derived rather than stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RecordWire", from = "RecordWire")]
pub struct EvaluationRecord {
    /// Proposal order, 1-based. Initial-design points come first.
    pub eval_id: u64,
    /// Completion order, 1-based.
    pub completion_index: u64,
    pub point: HyperparameterSet,
    pub loss: f64,
    pub loss_std: f64,
    pub regulated_loss: Option<f64>,
    pub param_count: Option<u64>,
    pub wall_time: f64,
    pub trial_count: u32,
    pub dropout_passes: u32,
    /// `eval_id`s of the completed evaluations the proposing surrogate was fitted on.
    pub proposal_basis: Vec<u64>,
    pub failed: bool,
    /// Proposal came from the uniform-random fallback instead of the surrogate.
    pub fallback: bool,
    pub uq: Option<UqLog>,
}

impl EvaluationRecord {
    pub fn interval(&self) -> ConfidenceInterval {
        ConfidenceInterval {
            center: self.loss,
            radius: self.loss_std,
        }
    }

    /// Value the surrogates and incumbent tracking work with: the regulated
    /// loss when present, otherwise the interval center.
    pub fn objective(&self) -> f64 {
        self.regulated_loss.unwrap_or(self.loss)
    }
}

/// Compact view of the UQ summary persisted alongside a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqLog {
    pub mu_pred_norm: f64,
    pub v_model_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_pred: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_model: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_samples: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    eval_id: u64,
    completion_index: u64,
    point: HyperparameterSet,
    loss: f64,
    loss_std: f64,
    ci_lower: f64,
    ci_upper: f64,
    regulated_loss: Option<f64>,
    param_count: Option<u64>,
    wall_time: f64,
    trial_count: u32,
    dropout_passes: u32,
    proposal_basis: Vec<u64>,
    #[serde(default)]
    failed: bool,
    #[serde(default)]
    fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uq: Option<UqLog>,
}

impl From<EvaluationRecord> for RecordWire {
    fn from(r: EvaluationRecord) -> Self {
        let ci = r.interval();
        RecordWire {
            eval_id: r.eval_id,
            completion_index: r.completion_index,
            point: r.point,
            loss: r.loss,
            loss_std: r.loss_std,
            ci_lower: ci.lower(),
            ci_upper: ci.upper(),
            regulated_loss: r.regulated_loss,
            param_count: r.param_count,
            wall_time: r.wall_time,
            trial_count: r.trial_count,
            dropout_passes: r.dropout_passes,
            proposal_basis: r.proposal_basis,
            failed: r.failed,
            fallback: r.fallback,
            uq: r.uq,
        }
    }
}

impl From<RecordWire> for EvaluationRecord {
    fn from(w: RecordWire) -> Self {
        EvaluationRecord {
            eval_id: w.eval_id,
            completion_index: w.completion_index,
            point: w.point,
            loss: w.loss,
            loss_std: w.loss_std,
            regulated_loss: w.regulated_loss,
            param_count: w.param_count,
            wall_time: w.wall_time,
            trial_count: w.trial_count,
            dropout_passes: w.dropout_passes,
            proposal_basis: w.proposal_basis,
            failed: w.failed,
            fallback: w.fallback,
            uq: w.uq,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square(lo: i64, hi: i64, dims: usize) -> HyperparameterSpace {
        HyperparameterSpace::from_bounds(&vec![(lo, hi); dims]).unwrap()
    }

    #[test]
    fn validate_point_cases() {
        let s = square(1, 10, 2);
        assert!(s.validate_point(&vec![5, 5].into()).unwrap());
        let s1 = square(1, 10, 1);
        assert!(!s1.validate_point(&vec![0].into()).unwrap());
        assert!(matches!(
            s.validate_point(&vec![5].into()),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(HyperparameterSpace::from_bounds(&[(3, 2)]).is_err());
        assert!(HyperparameterSpace::from_bounds(&[]).is_err());
    }

    #[test]
    fn degenerate_space_always_same_point() {
        let s = square(3, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            assert_eq!(s.random_point(&mut rng).values(), &[3]);
        }
    }

    #[test]
    fn random_point_is_uniform_on_binary_dim() {
        let s = square(0, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let zeros = (0..10_000)
            .filter(|_| s.random_point(&mut rng).values()[0] == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn random_point_is_deterministic() {
        let s = square(-5, 40, 3);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| s.random_point(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(77), draw(77));
    }

    #[test]
    fn distance_cases() {
        let d = distance(&vec![0, 0].into(), &vec![3, 4].into()).unwrap();
        assert_eq!(d, 5.0);
        assert_eq!(distance(&vec![2, 7].into(), &vec![2, 7].into()).unwrap(), 0.0);
        assert!(distance(&vec![2].into(), &vec![2, 7].into()).is_err());
    }

    #[test]
    fn distance_matches_coordinate_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = square(-100, 100, 5);
        for _ in 0..500 {
            let a = s.random_point(&mut rng);
            let b = s.random_point(&mut rng);
            let mut acc = 0.0f64;
            for i in 0..5 {
                let diff = a.values()[i] as f64 - b.values()[i] as f64;
                acc += diff * diff;
            }
            let oracle = acc.sqrt();
            assert!((distance(&a, &b).unwrap() - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn enumerate_covers_lattice() {
        let s = HyperparameterSpace::from_bounds(&[(0, 2), (5, 6)]).unwrap();
        let all: Vec<_> = s.enumerate().collect();
        assert_eq!(all.len() as u128, s.lattice_size());
        assert_eq!(all.first().unwrap().values(), &[0, 5]);
        assert_eq!(all.last().unwrap().values(), &[2, 6]);
    }

    #[test]
    fn codec_decodes_affinely() {
        let s = HyperparameterSpace::with_codecs(
            vec!["lr".into()],
            vec![1],
            vec![10],
            vec![Codec {
                offset: 0.0,
                step: 0.01,
            }],
        )
        .unwrap();
        assert_eq!(s.decode(&vec![3].into()), vec![0.03]);
    }

    fn arb_record() -> impl Strategy<Value = EvaluationRecord> {
        (
            prop::collection::vec(-50i64..50, 1..6),
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            0.0f64..1e6,
            prop::option::of(-1e6f64..1e6),
            prop::option::of(0u64..1_000_000),
            prop::collection::vec(1u64..100, 0..10),
            any::<bool>(),
        )
            .prop_map(|(pt, loss, std, reg, params, basis, failed)| EvaluationRecord {
                eval_id: 3,
                completion_index: 2,
                point: pt.into(),
                loss,
                loss_std: std,
                regulated_loss: reg,
                param_count: params,
                wall_time: std / 7.0,
                trial_count: 5,
                dropout_passes: 30,
                proposal_basis: basis,
                failed,
                fallback: !failed,
                uq: None,
            })
    }

    proptest! {
        #[test]
        fn record_json_round_trips_exactly(rec in arb_record()) {
            let line = serde_json::to_string(&rec).unwrap();
            let back: EvaluationRecord = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(back, rec);
        }

        #[test]
        fn random_points_are_valid(seed in any::<u64>(), lo in -20i64..20, w in 0i64..30) {
            let s = square(lo, lo + w, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                prop_assert!(s.validate_point(&s.random_point(&mut rng)).unwrap());
            }
        }

        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(-30i64..30, 3),
            b in prop::collection::vec(-30i64..30, 3),
            c in prop::collection::vec(-30i64..30, 3),
        ) {
            let (a, b, c): (HyperparameterSet, HyperparameterSet, HyperparameterSet) =
                (a.into(), b.into(), c.into());
            let ab = distance(&a, &b).unwrap();
            let bc = distance(&b, &c).unwrap();
            let ac = distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(distance(&a, &b).unwrap(), distance(&b, &a).unwrap());
        }
    }
}
