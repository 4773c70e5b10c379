//! The optimizer loop.
//!
//! The first `n0` evaluation ids are the initial design. They are dispatched
//! as worker slots free up; surrogate proposals start once every initial
//! evaluation has completed, at which point the free slots are filled one
//! proposal at a time on the same basis. From then on every completion
//! triggers one refit and one new proposal, keeping at most `W` evaluations
//! in flight until the budget is issued.

mod config;
mod executor;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{DurationMode, DurationModel, EngineConfig, SurrogateKind};

use crate::domain::{ConfidenceInterval, EvaluationRecord, HyperparameterSet, HyperparameterSpace};
use crate::error::{Error, Result};
use crate::objective::{EvalContext, Evaluation, Objective};
use crate::sampler::{
    generate_candidates, nearest_distances, next_weight, random_unexplored, score_ensemble,
    score_weighted, select_best, CycleState,
};
use crate::seeds::derive_seed;
use crate::surrogate::{
    expected_improvement, ga_maximize, gp_fit, rbf_ensemble_fit, rbf_ensemble_stats, rbf_fit,
};

const DESIGN_STREAM: u64 = 1;
const PROPOSAL_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const DURATION_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Surrogate,
    /// Uniform random unexplored points under the same budget and workers.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEval {
    pub point: HyperparameterSet,
    pub proposal_basis: Vec<u64>,
    pub fallback: bool,
    /// Virtual dispatch time (simulated mode).
    pub dispatched_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub eval_id: u64,
    pub point: HyperparameterSet,
    pub value: f64,
}

/// Everything needed to continue a run; written after every completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub strategy: Strategy,
    pub initial_design: Vec<HyperparameterSet>,
    /// In completion order.
    pub completed: Vec<EvaluationRecord>,
    /// Dispatched but not completed, by eval id.
    pub pending: BTreeMap<u64, PendingEval>,
    /// Number of evaluation ids handed out so far.
    pub issued: u64,
    pub incumbent: Option<Incumbent>,
    pub cycle: CycleState,
    pub proposal_rng: ChaCha8Rng,
    /// Virtual clock of simulated mode.
    pub clock: f64,
    /// The lattice ran out of unexplored points.
    pub exhausted: bool,
}

impl EngineState {
    pub fn next_completion_index(&self) -> u64 {
        self.completed.len() as u64 + 1
    }

    pub fn is_finished(&self, max_evaluations: usize) -> bool {
        self.pending.is_empty() && (self.issued as usize >= max_evaluations || self.exhausted)
    }
}

/// Decision returned by a run observer after each completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    /// Stop immediately, leaving pending evaluations in the state.
    Stop,
}

/// `n0` distinct uniform lattice points, starting with `seed_points`.
pub fn initial_design<R: rand::Rng + ?Sized>(
    space: &HyperparameterSpace,
    n0: usize,
    seed_points: &[HyperparameterSet],
    rng: &mut R,
) -> Result<Vec<HyperparameterSet>> {
    if n0 as u128 > space.lattice_size() {
        return Err(Error::InvalidConfig(format!(
            "initial design of {n0} points exceeds the {} lattice points",
            space.lattice_size()
        )));
    }
    let mut seen: HashSet<HyperparameterSet> = HashSet::with_capacity(n0);
    let mut design = Vec::with_capacity(n0);
    for p in seed_points.iter().take(n0) {
        if seen.insert(p.clone()) {
            design.push(p.clone());
        }
    }
    while design.len() < n0 {
        let p = random_unexplored(space, &seen, rng)?;
        seen.insert(p.clone());
        design.push(p);
    }
    Ok(design)
}

/// Running minimum of the surrogate target over completion order.
pub fn best_so_far(records: &[EvaluationRecord]) -> Vec<f64> {
    records
        .iter()
        .scan(f64::INFINITY, |best, r| {
            if !r.failed {
                *best = best.min(r.objective());
            }
            Some(if best.is_finite() { *best } else { r.objective() })
        })
        .collect()
}

pub struct Engine {
    config: EngineConfig,
    objective: Arc<dyn Objective>,
    state: EngineState,
}

impl Engine {
    pub fn new(config: EngineConfig, objective: Arc<dyn Objective>, strategy: Strategy) -> Result<Self> {
        let space = objective.space().clone();
        config.validate(&space)?;
        let n0 = config.initial_size(space.dims());
        let mut design_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DESIGN_STREAM));
        let design = initial_design(&space, n0, &config.seed_points, &mut design_rng)?;
        let stream = match strategy {
            Strategy::Surrogate => PROPOSAL_STREAM,
            Strategy::Random => PROPOSAL_STREAM + 100,
        };
        let state = EngineState {
            strategy,
            initial_design: design,
            completed: Vec::new(),
            pending: BTreeMap::new(),
            issued: 0,
            incumbent: None,
            cycle: CycleState::default(),
            proposal_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream)),
            clock: 0.0,
            exhausted: false,
        };
        Ok(Engine {
            config,
            objective,
            state,
        })
    }

    /// Continue from a checkpointed state; pending evaluations are dispatched
    /// again.
    pub fn resume(config: EngineConfig, objective: Arc<dyn Objective>, state: EngineState) -> Result<Self> {
        config.validate(objective.space())?;
        for r in &state.completed {
            if !objective.space().validate_point(&r.point)? {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint point {} lies outside the configured space",
                    r.point
                )));
            }
        }
        Ok(Engine {
            config,
            objective,
            state,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn into_state(self) -> EngineState {
        self.state
    }

    pub fn space(&self) -> &HyperparameterSpace {
        self.objective.space()
    }

    /// Run to completion (or until `observer` stops it). The observer sees each
    /// new record together with the state after the follow-up proposals.
    pub fn run<F>(&mut self, mut observer: F) -> Result<()>
    where
        F: FnMut(&EvaluationRecord, &EngineState) -> Result<Control>,
    {
        match self.config.duration_mode {
            DurationMode::Simulated => executor::run_simulated(self, &mut observer),
            DurationMode::Real => executor::run_threaded(self, &mut observer),
        }
    }

    fn eval_seed(&self, eval_id: u64) -> u64 {
        derive_seed(derive_seed(self.config.seed, EVAL_STREAM), eval_id)
    }

    fn duration_seed(&self, eval_id: u64, trial: u32) -> u64 {
        derive_seed(
            derive_seed(derive_seed(self.config.seed, DURATION_STREAM), eval_id),
            trial as u64,
        )
    }

    fn trial_count(&self) -> u32 {
        self.config.uq.trials.max(1) as u32
    }

    /// Runs the objective for one pending evaluation; errors and panics become
    /// failed evaluations.
    fn evaluate(objective: &dyn Objective, config: &EngineConfig, eval_id: u64, seed: u64, point: &HyperparameterSet) -> Evaluation {
        let ctx = EvalContext {
            eval_id,
            seed,
            uq: &config.uq,
            reg: &config.reg,
            uq_log_values: config.uq_log_values,
        };
        let trials = config.uq.trials as u32;
        let passes = config.uq.passes as u32;
        match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| objective.evaluate(point, &ctx))) {
            Ok(Ok(e)) => e,
            Ok(Err(e)) => {
                warn!("evaluation {eval_id} at {point} failed: {e}");
                Evaluation::failed(trials, passes, None)
            }
            Err(_) => {
                warn!("evaluation {eval_id} at {point} panicked");
                Evaluation::failed(trials, passes, None)
            }
        }
    }

    fn complete(&mut self, eval_id: u64, evaluation: Evaluation, wall_time: f64) -> EvaluationRecord {
        let pending = self
            .state
            .pending
            .remove(&eval_id)
            .expect("completed evaluation was pending");
        let record = EvaluationRecord {
            eval_id,
            completion_index: self.state.next_completion_index(),
            point: pending.point,
            loss: evaluation.loss,
            loss_std: evaluation.loss_std,
            regulated_loss: evaluation.regulated_loss,
            param_count: evaluation.param_count,
            wall_time,
            trial_count: evaluation.trial_count,
            dropout_passes: evaluation.dropout_passes,
            proposal_basis: pending.proposal_basis,
            failed: evaluation.failed,
            fallback: pending.fallback,
            uq: evaluation.uq,
        };
        if !record.failed
            && self
                .state
                .incumbent
                .as_ref()
                .is_none_or(|inc| record.objective() < inc.value)
        {
            self.state.incumbent = Some(Incumbent {
                eval_id,
                point: record.point.clone(),
                value: record.objective(),
            });
        }
        self.state.completed.push(record.clone());
        record
    }

    fn initial_outstanding(&self) -> bool {
        let n0 = self.state.initial_design.len() as u64;
        self.state.issued < n0 || self.state.pending.keys().any(|&id| id <= n0)
    }

    /// Issue new evaluations while slots and budget remain. Returns the new ids.
    fn fill(&mut self) -> Result<Vec<u64>> {
        let mut issued = Vec::new();
        while self.state.pending.len() < self.config.workers
            && (self.state.issued as usize) < self.config.max_evaluations
            && !self.state.exhausted
        {
            let id = self.state.issued + 1;
            let n0 = self.state.initial_design.len() as u64;
            let (point, proposal_basis, fallback) = if id <= n0 {
                (self.state.initial_design[(id - 1) as usize].clone(), Vec::new(), false)
            } else {
                if self.state.strategy == Strategy::Surrogate && self.initial_outstanding() {
                    break;
                }
                match self.propose_next()? {
                    Some(p) => p,
                    None => {
                        self.state.exhausted = true;
                        break;
                    }
                }
            };
            self.state.pending.insert(
                id,
                PendingEval {
                    point,
                    proposal_basis,
                    fallback,
                    dispatched_at: self.state.clock,
                },
            );
            self.state.issued = id;
            issued.push(id);
        }
        Ok(issued)
    }

    fn excluded(&self) -> HashSet<HyperparameterSet> {
        self.state
            .completed
            .iter()
            .map(|r| r.point.clone())
            .chain(self.state.pending.values().map(|p| p.point.clone()))
            .collect()
    }

    /// Next point as `(point, proposal_basis, fallback)`, or `None` when the
    /// lattice is exhausted.
    pub fn propose_next(&mut self) -> Result<Option<(HyperparameterSet, Vec<u64>, bool)>> {
        let excluded = self.excluded();
        let space = self.objective.space().clone();
        if self.state.strategy == Strategy::Random {
            return match random_unexplored(&space, &excluded, &mut self.state.proposal_rng) {
                Ok(p) => Ok(Some((p, Vec::new(), false))),
                Err(Error::Exhausted) => Ok(None),
                Err(e) => Err(e),
            };
        }
        let mut basis: Vec<u64> = self.state.completed.iter().map(|r| r.eval_id).collect();
        basis.sort_unstable();
        match self.surrogate_proposal(&space, &excluded) {
            Ok(Some(p)) => return Ok(Some((p, basis, false))),
            Ok(None) => warn!("surrogate produced no admissible point; sampling at random"),
            Err(Error::Exhausted) => return Ok(None),
            Err(e) => warn!("surrogate proposal failed ({e}); sampling at random"),
        }
        match random_unexplored(&space, &excluded, &mut self.state.proposal_rng) {
            Ok(p) => Ok(Some((p, basis, true))),
            Err(Error::Exhausted) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Surrogate training data: points, target values and intervals. Failed
    /// evaluations take the worst successful value so the sentinel does not
    /// swamp the interpolant.
    fn training_data(&self) -> Result<(Vec<HyperparameterSet>, Vec<f64>, Vec<ConfidenceInterval>)> {
        let worst = self
            .state
            .completed
            .iter()
            .filter(|r| !r.failed)
            .map(|r| r.objective())
            .fold(f64::NEG_INFINITY, f64::max);
        if !worst.is_finite() {
            return Err(Error::Fit("no successful evaluation to fit".into()));
        }
        let mut points = Vec::with_capacity(self.state.completed.len());
        let mut values = Vec::with_capacity(points.capacity());
        let mut intervals = Vec::with_capacity(points.capacity());
        for r in &self.state.completed {
            let (v, radius) = if r.failed { (worst, 0.0) } else { (r.objective(), r.loss_std) };
            points.push(r.point.clone());
            values.push(v);
            intervals.push(ConfidenceInterval { center: v, radius });
        }
        Ok((points, values, intervals))
    }

    fn surrogate_proposal(
        &mut self,
        space: &HyperparameterSpace,
        excluded: &HashSet<HyperparameterSet>,
    ) -> Result<Option<HyperparameterSet>> {
        let (points, values, intervals) = self.training_data()?;
        let incumbent_value = self
            .state
            .incumbent
            .as_ref()
            .map(|i| i.value)
            .ok_or_else(|| Error::Fit("no incumbent".into()))?;
        let cfg = &self.config;
        let rng = &mut self.state.proposal_rng;

        if cfg.surrogate == SurrogateKind::Gp {
            let model = gp_fit(&points, &values)?;
            let p = ga_maximize(
                |p| {
                    if excluded.contains(p) {
                        -1.0
                    } else {
                        expected_improvement(&model, p, incumbent_value).unwrap_or(f64::NAN)
                    }
                },
                space,
                &cfg.ga,
                rng,
            )?;
            return Ok((!excluded.contains(&p)).then_some(p));
        }

        let best = &self.state.incumbent.as_ref().expect("checked above").point;
        let mut candidates = generate_candidates(space, best, excluded, &cfg.sampler, rng)?;
        let evaluated: Vec<HyperparameterSet> = excluded.iter().cloned().collect();
        let mut distances = nearest_distances(&candidates, &evaluated);
        let far_enough = |d: &[f64]| -> Vec<usize> {
            (0..d.len()).filter(|&i| d[i] >= cfg.sampler.min_distance).collect()
        };
        let mut keep = far_enough(&distances);
        if keep.is_empty() {
            // fall back to uniform draws that respect the minimum distance
            candidates = (0..cfg.sampler.candidate_count(space.dims()))
                .map(|_| random_unexplored(space, excluded, rng))
                .collect::<Result<_>>()?;
            distances = nearest_distances(&candidates, &evaluated);
            keep = far_enough(&distances);
            if keep.is_empty() {
                return Ok(None);
            }
        }
        let kept_dist: Vec<f64> = keep.iter().map(|&i| distances[i]).collect();
        let weight = next_weight(&cfg.sampler.weight_cycle, &mut self.state.cycle);

        let totals = match cfg.surrogate {
            SurrogateKind::Rbf => {
                let model = rbf_fit(&points, &values)?;
                let predicted: Vec<f64> = keep
                    .iter()
                    .map(|&i| model.predict_unchecked(candidates[i].values()))
                    .collect();
                score_weighted(&predicted, &kept_dist, weight)?
            }
            SurrogateKind::RbfEnsemble => {
                let ensemble = rbf_ensemble_fit(&points, &intervals, cfg.ensemble_size, rng)?;
                let (mu, sigma): (Vec<f64>, Vec<f64>) = keep
                    .iter()
                    .map(|&i| rbf_ensemble_stats(&ensemble, &candidates[i]))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip();
                score_ensemble(&mu, &sigma, &kept_dist, cfg.sampler.alpha, weight)?
            }
            SurrogateKind::Gp => unreachable!(),
        };
        Ok(select_best(&totals, &kept_dist).map(|j| candidates[keep[j]].clone()))
    }
}

#[cfg(test)]
mod tests;
