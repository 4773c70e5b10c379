//! The two ways of driving the engine: worker threads with measured wall
//! time, and a deterministic discrete-event replay on a virtual clock.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::time::Instant;

use crossbeam_channel::unbounded;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Control, Engine, EngineState};
use crate::domain::{EvaluationRecord, HyperparameterSet};
use crate::error::Result;
use crate::objective::Evaluation;

type Observer<'a> = dyn FnMut(&EvaluationRecord, &EngineState) -> Result<Control> + 'a;

/// A trial finishing at `time`; `seq` orders ties by start order.
#[derive(Debug, PartialEq)]
struct Event {
    time: f64,
    seq: u64,
    eval_id: u64,
}

impl Eq for Event {}

impl Ord for Event {
    // reversed for a min-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Trial-level scheduling: every evaluation contributes `trials` tasks to a
/// FIFO queue served by `workers` virtual workers, and completes when its
/// last trial does.
pub(super) fn run_simulated(engine: &mut Engine, observer: &mut Observer<'_>) -> Result<()> {
    let trials = engine.trial_count();
    let workers = engine.config.workers;
    let mut queue: VecDeque<(u64, u32)> = VecDeque::new();
    let mut remaining: HashMap<u64, u32> = HashMap::new();
    let mut events = BinaryHeap::new();
    let mut seq = 0u64;
    let mut busy = 0usize;

    let clock = engine.state.clock;
    let resumed: Vec<u64> = engine.state.pending.keys().copied().collect();
    for p in engine.state.pending.values_mut() {
        p.dispatched_at = clock;
    }
    let fresh = engine.fill()?;
    for id in resumed.into_iter().chain(fresh) {
        queue.extend((0..trials).map(|t| (id, t)));
        remaining.insert(id, trials);
    }

    loop {
        while busy < workers {
            let Some((id, t)) = queue.pop_front() else { break };
            let mut rng = ChaCha8Rng::seed_from_u64(engine.duration_seed(id, t));
            let d = engine.config.durations.trial_duration(id, trials, &mut rng);
            events.push(Event {
                time: engine.state.clock + d,
                seq,
                eval_id: id,
            });
            seq += 1;
            busy += 1;
        }
        let Some(ev) = events.pop() else { break };
        engine.state.clock = ev.time;
        busy -= 1;
        let left = remaining.get_mut(&ev.eval_id).expect("tracked evaluation");
        *left -= 1;
        if *left > 0 {
            continue;
        }
        remaining.remove(&ev.eval_id);
        let pending = &engine.state.pending[&ev.eval_id];
        let wall_time = engine.state.clock - pending.dispatched_at;
        let point = pending.point.clone();
        let evaluation = Engine::evaluate(
            engine.objective.as_ref(),
            &engine.config,
            ev.eval_id,
            engine.eval_seed(ev.eval_id),
            &point,
        );
        let record = engine.complete(ev.eval_id, evaluation, wall_time);
        let fresh = engine.fill()?;
        for &id in &fresh {
            queue.extend((0..trials).map(|t| (id, t)));
            remaining.insert(id, trials);
        }
        if observer(&record, &engine.state)? == Control::Stop {
            return Ok(());
        }
    }
    Ok(())
}

/// Evaluation-level worker pool. Trials inside an evaluation may still run in
/// parallel within the objective.
pub(super) fn run_threaded(engine: &mut Engine, observer: &mut Observer<'_>) -> Result<()> {
    let workers = engine.config.workers;
    let objective = engine.objective.clone();
    let config = engine.config.clone();
    let (job_tx, job_rx) = unbounded::<(u64, u64, HyperparameterSet)>();
    let (done_tx, done_rx) = unbounded::<(u64, Evaluation, f64)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let job_rx = job_rx.clone();
            let done_tx = done_tx.clone();
            let objective = objective.as_ref();
            let config = &config;
            scope.spawn(move || {
                for (id, seed, point) in job_rx.iter() {
                    let start = Instant::now();
                    let e = Engine::evaluate(objective, config, id, seed, &point);
                    if done_tx.send((id, e, start.elapsed().as_secs_f64())).is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);

        let dispatch = |engine: &Engine, ids: &[u64]| {
            for &id in ids {
                let point = engine.state.pending[&id].point.clone();
                job_tx
                    .send((id, engine.eval_seed(id), point))
                    .expect("workers outlive the coordinator");
            }
        };
        let mut coordinate = || -> Result<()> {
            let resumed: Vec<u64> = engine.state.pending.keys().copied().collect();
            dispatch(engine, &resumed);
            let fresh = engine.fill()?;
            dispatch(engine, &fresh);
            while !engine.state.pending.is_empty() {
                let (id, evaluation, wall_time) =
                    done_rx.recv().expect("a worker holds the sender");
                let record = engine.complete(id, evaluation, wall_time);
                let fresh = engine.fill()?;
                dispatch(engine, &fresh);
                if observer(&record, &engine.state)? == Control::Stop {
                    break;
                }
            }
            Ok(())
        };
        let result = coordinate();
        // closing the job channel lets idle workers exit before the scope joins
        drop(job_tx);
        result
    })
}
