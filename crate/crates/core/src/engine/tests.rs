use std::collections::BTreeSet;

use super::*;
use crate::objective::FnObjective;

fn quadratic(space: HyperparameterSpace, center: Vec<i64>) -> Arc<dyn Objective> {
    Arc::new(FnObjective::new("quad", space, move |p: &HyperparameterSet, _: &EvalContext<'_>| {
        let v = p
            .values()
            .iter()
            .zip(&center)
            .map(|(x, c)| ((x - c) as f64).powi(2))
            .sum();
        Ok(Evaluation::exact(v))
    }))
}

fn sim_config(n0: usize, max: usize, workers: usize) -> EngineConfig {
    EngineConfig {
        initial_design_size: Some(n0),
        max_evaluations: max,
        workers,
        uq: UqConfig {
            trials: 1,
            ..UqConfig::default()
        },
        duration_mode: DurationMode::Simulated,
        seed: 5,
        ..EngineConfig::default()
    }
}

use crate::uq::UqConfig;

fn run_all(engine: &mut Engine) {
    engine.run(|_, _| Ok(Control::Continue)).unwrap();
}

fn space3() -> HyperparameterSpace {
    HyperparameterSpace::from_bounds(&[(0, 20), (0, 20), (0, 20)]).unwrap()
}

#[test]
fn initial_design_covers_tiny_lattice() {
    let space = HyperparameterSpace::from_bounds(&[(0, 2), (5, 6)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = initial_design(&space, 6, &[], &mut rng).unwrap();
    let set: BTreeSet<_> = d.iter().cloned().collect();
    assert_eq!(set, space.enumerate().collect());
    assert!(initial_design(&space, 7, &[], &mut rng).is_err());
}

#[test]
fn initial_design_deterministic_and_seeded() {
    let space = space3();
    let seed: HyperparameterSet = vec![1, 2, 3].into();
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        initial_design(&space, 12, std::slice::from_ref(&seed), &mut rng).unwrap()
    };
    let a = draw();
    assert_eq!(a, draw());
    assert_eq!(a[0], seed);
    assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 12);
    assert!(a.iter().all(|p| space.validate_point(p).unwrap()));
}

#[test]
fn async_basis_example() {
    // eval 18 finishes first among 17..20
    let mut durations = vec![10.0; 40];
    durations[17] = 1.0;
    let config = EngineConfig {
        durations: DurationModel::Scripted { seconds: durations },
        ..sim_config(16, 21, 4)
    };
    let mut engine = Engine::new(config, quadratic(space3(), vec![4, 9, 13]), Strategy::Surrogate).unwrap();
    run_all(&mut engine);
    let records = &engine.state().completed;
    assert_eq!(records.len(), 21);
    let by_id = |id: u64| records.iter().find(|r| r.eval_id == id).unwrap();
    let initial: Vec<u64> = (1..=16).collect();
    for id in 17..=20 {
        assert_eq!(by_id(id).proposal_basis, initial, "eval {id}");
    }
    let mut expected = initial.clone();
    expected.push(18);
    assert_eq!(by_id(21).proposal_basis, expected);
    assert_eq!(by_id(18).completion_index, 17);
    for id in 1..=16 {
        assert!(by_id(id).proposal_basis.is_empty());
    }
}

#[test]
fn single_worker_is_sequential() {
    let config = EngineConfig {
        durations: DurationModel::Exponential { mean: 2.0 },
        ..sim_config(10, 30, 1)
    };
    let mut engine = Engine::new(config, quadratic(space3(), vec![3, 3, 3]), Strategy::Surrogate).unwrap();
    run_all(&mut engine);
    for (i, r) in engine.state().completed.iter().enumerate() {
        assert_eq!(r.eval_id, i as u64 + 1);
        assert_eq!(r.completion_index, i as u64 + 1);
        if r.eval_id > 10 {
            let expected: Vec<u64> = (1..r.eval_id).collect();
            assert_eq!(r.proposal_basis, expected);
        }
    }
}

#[test]
fn simulated_replay_is_deterministic() {
    let run = || {
        let config = EngineConfig {
            durations: DurationModel::Uniform { low: 0.5, high: 3.0 },
            ..sim_config(10, 40, 4)
        };
        let mut engine =
            Engine::new(config, quadratic(space3(), vec![10, 2, 7]), Strategy::Surrogate).unwrap();
        run_all(&mut engine);
        serde_json::to_string(&engine.state().completed).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn equal_durations_makespan() {
    for w in [1usize, 2, 4, 5] {
        let config = EngineConfig {
            durations: DurationModel::Constant { seconds: 2.5 },
            ..sim_config(20, 43, w)
        };
        let mut engine =
            Engine::new(config, quadratic(space3(), vec![1, 1, 1]), Strategy::Surrogate).unwrap();
        run_all(&mut engine);
        let expected = (43usize.div_ceil(w)) as f64 * 2.5;
        assert_eq!(engine.state().clock, expected, "W = {w}");
        for r in &engine.state().completed {
            assert_eq!(r.wall_time, 2.5);
        }
    }
}

#[test]
fn invariants_hold_during_run() {
    let config = EngineConfig {
        durations: DurationModel::Exponential { mean: 1.0 },
        ..sim_config(10, 60, 6)
    };
    let mut engine = Engine::new(config, quadratic(space3(), vec![5, 15, 10]), Strategy::Surrogate).unwrap();
    engine
        .run(|record, state| {
            assert!(state.pending.len() <= 6);
            assert!(record.proposal_basis.iter().all(|&id| {
                state
                    .completed
                    .iter()
                    .any(|r| r.eval_id == id && r.completion_index < record.completion_index)
            }));
            let mut pts: Vec<&HyperparameterSet> = state.completed.iter().map(|r| &r.point).collect();
            pts.extend(state.pending.values().map(|p| &p.point));
            let n = pts.len();
            pts.sort();
            pts.dedup();
            assert_eq!(pts.len(), n, "duplicate point");
            Ok(Control::Continue)
        })
        .unwrap();
    let s = engine.state();
    assert_eq!(s.completed.len(), 60);
    assert_eq!(s.issued, 60);
    let curve = best_so_far(&s.completed);
    assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    let inc = s.incumbent.as_ref().unwrap();
    let min = s.completed.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    assert_eq!(inc.value, min);
}

#[test]
fn locates_minimizer_on_small_lattice() {
    let space = HyperparameterSpace::from_bounds(&[(0, 9), (0, 9), (0, 9)]).unwrap();
    let center = vec![7, 2, 5];
    let obj = quadratic(space.clone(), center.clone());
    // exhaustive oracle
    let argmin = space
        .enumerate()
        .min_by(|a, b| {
            let f = |p: &HyperparameterSet| {
                p.values().iter().zip(&center).map(|(x, c)| (x - c) * (x - c)).sum::<i64>()
            };
            f(a).cmp(&f(b))
        })
        .unwrap();
    for kind in [SurrogateKind::Rbf, SurrogateKind::RbfEnsemble, SurrogateKind::Gp] {
        let config = EngineConfig {
            surrogate: kind,
            ..sim_config(10, 40, 1)
        };
        let mut engine = Engine::new(config, obj.clone(), Strategy::Surrogate).unwrap();
        run_all(&mut engine);
        assert_eq!(engine.state().incumbent.as_ref().unwrap().point, argmin, "{kind:?}");
    }
}

#[test]
fn gp_flat_values_still_propose_fresh_points() {
    let space = HyperparameterSpace::from_bounds(&[(0, 6), (0, 6)]).unwrap();
    let obj: Arc<dyn Objective> = Arc::new(FnObjective::new("flat", space, |_: &HyperparameterSet, _: &EvalContext<'_>| {
        Ok(Evaluation::exact(3.0))
    }));
    let config = EngineConfig {
        surrogate: SurrogateKind::Gp,
        ..sim_config(10, 20, 2)
    };
    let mut engine = Engine::new(config, obj, Strategy::Surrogate).unwrap();
    run_all(&mut engine);
    let pts: BTreeSet<_> = engine.state().completed.iter().map(|r| r.point.clone()).collect();
    assert_eq!(pts.len(), 20);
}

#[test]
fn exhausted_lattice_stops_early() {
    let space = HyperparameterSpace::from_bounds(&[(0, 3), (0, 3)]).unwrap();
    let config = sim_config(10, 30, 3);
    let mut engine = Engine::new(config, quadratic(space, vec![1, 2]), Strategy::Surrogate).unwrap();
    run_all(&mut engine);
    assert_eq!(engine.state().completed.len(), 16);
    assert!(engine.state().exhausted);
}

#[test]
fn failures_never_become_incumbent() {
    let space = space3();
    let obj: Arc<dyn Objective> = Arc::new(FnObjective::new("flaky", space, |p: &HyperparameterSet, _: &EvalContext<'_>| {
        if p.values()[0] < 5 {
            panic!("boom");
        }
        if p.values()[0] < 8 {
            return Err(Error::Diverged);
        }
        Ok(Evaluation::exact(p.values()[0] as f64))
    }));
    for mode in [DurationMode::Simulated, DurationMode::Real] {
        let config = EngineConfig {
            duration_mode: mode,
            workers: 3,
            ..sim_config(10, 30, 3)
        };
        let mut engine = Engine::new(config, obj.clone(), Strategy::Surrogate).unwrap();
        run_all(&mut engine);
        let s = engine.state();
        assert_eq!(s.completed.len(), 30);
        let failed = s.completed.iter().filter(|r| r.failed).count();
        assert!(failed > 0);
        assert!(s.completed.iter().filter(|r| r.failed).all(|r| r.loss == crate::domain::FAILED_LOSS));
        assert!(s.incumbent.as_ref().unwrap().point.values()[0] >= 8);
    }
}

#[test]
fn random_search_budget_and_determinism() {
    let run = || {
        let config = sim_config(10, 50, 4);
        let mut engine = Engine::new(config, quadratic(space3(), vec![0, 0, 0]), Strategy::Random).unwrap();
        run_all(&mut engine);
        engine.into_state().completed
    };
    let a = run();
    assert_eq!(a.len(), 50);
    assert_eq!(a.iter().map(|r| &r.point).collect::<BTreeSet<_>>().len(), 50);
    assert!(best_so_far(&a).windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(a, run());
}

#[test]
fn threaded_run_completes() {
    let config = EngineConfig {
        duration_mode: DurationMode::Real,
        ..sim_config(10, 35, 4)
    };
    let mut engine = Engine::new(config, quadratic(space3(), vec![6, 6, 6]), Strategy::Surrogate).unwrap();
    run_all(&mut engine);
    let s = engine.state();
    assert_eq!(s.completed.len(), 35);
    assert!(s.pending.is_empty());
    let idx: Vec<u64> = s.completed.iter().map(|r| r.completion_index).collect();
    assert_eq!(idx, (1..=35).collect::<Vec<_>>());
}

#[test]
fn stop_and_resume_finishes_budget() {
    for mode in [DurationMode::Simulated, DurationMode::Real] {
        let config = EngineConfig {
            duration_mode: mode,
            ..sim_config(10, 30, 3)
        };
        let obj = quadratic(space3(), vec![2, 18, 9]);
        let mut engine = Engine::new(config.clone(), obj.clone(), Strategy::Surrogate).unwrap();
        engine
            .run(|r, _| Ok(if r.completion_index == 13 { Control::Stop } else { Control::Continue }))
            .unwrap();
        let state = engine.into_state();
        assert_eq!(state.completed.len(), 13);
        let json = serde_json::to_string(&state).unwrap();
        let restored: EngineState = serde_json::from_str(&json).unwrap();
        assert_eq!(restored, state);
        let mut engine = Engine::resume(config, obj, restored).unwrap();
        run_all(&mut engine);
        let s = engine.state();
        assert_eq!(s.completed.len(), 30);
        let idx: Vec<u64> = s.completed.iter().map(|r| r.completion_index).collect();
        assert_eq!(idx, (1..=30).collect::<Vec<_>>());
        let ids: BTreeSet<u64> = s.completed.iter().map(|r| r.eval_id).collect();
        assert_eq!(ids, (1..=30).collect());
    }
}

#[test]
fn rejects_bad_budgets() {
    let obj = quadratic(space3(), vec![0, 0, 0]);
    assert!(Engine::new(sim_config(10, 10, 1), obj.clone(), Strategy::Surrogate).is_err());
    assert!(Engine::new(sim_config(3, 20, 1), obj.clone(), Strategy::Surrogate).is_err());
    assert!(Engine::new(sim_config(10, 20, 0), obj, Strategy::Surrogate).is_err());
}
