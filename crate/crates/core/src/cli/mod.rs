//! Command implementations behind the `lattice-hpo` binary.

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Median, OrderStatistics};

use crate::benchmark::BENCHMARKS;
use crate::domain::EvaluationRecord;
use crate::engine::{Control, DurationMode, Engine, EngineState, Incumbent, Strategy};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::persist::{read_json, write_atomic, write_json, LogWriter};

pub use config::{parse_config, RunConfig};
pub use report::{cmd_report, ReportSummary};

/// Environment variable naming the root that relative output dirs resolve against.
pub const OUT_ENV: &str = "LATTICE_HPO_OUT";
pub const LOG_FILE: &str = "evaluations.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const COMPARE_FILE: &str = "compare.json";
pub const CURVES_FILE: &str = "compare_curves.csv";

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub simulate: bool,
    /// Stop after this many completions in this invocation, leaving a
    /// resumable checkpoint.
    pub stop_after: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.engine.seed = seed;
        }
        if let Some(workers) = self.workers {
            config.engine.workers = workers;
        }
        if self.simulate {
            config.engine.duration_mode = DurationMode::Simulated;
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: EngineState,
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    config: &'a RunConfig,
    state: &'a EngineState,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub completed: usize,
    pub incumbent: Option<Incumbent>,
    pub finished: bool,
    /// Present once the run has finished.
    pub report: Option<ReportSummary>,
}

/// `--out` wins; otherwise `output.dir` under `$LATTICE_HPO_OUT` (or the
/// working directory).
pub fn output_dir(config: &RunConfig, out: Option<&Path>) -> PathBuf {
    match out {
        Some(dir) => dir.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(&config.output.dir),
    }
}

fn load(config_path: &Path, overrides: &Overrides) -> Result<(RunConfig, Arc<dyn Objective>)> {
    let (mut config, objective) = parse_config(config_path)?;
    if overrides.seed.is_none() && overrides.workers.is_none() && !overrides.simulate {
        return Ok((config, objective));
    }
    overrides.apply(&mut config);
    let objective = config.validate().map_err(|e| match e {
        Error::InvalidConfig(m) => Error::InvalidArgument(m),
        other => other,
    })?;
    Ok((config, objective))
}

fn drive(
    mut engine: Engine,
    config: &RunConfig,
    out_dir: &Path,
    stop_after: Option<usize>,
) -> Result<RunOutcome> {
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut log = LogWriter::rewrite(&out_dir.join(LOG_FILE), &engine.state().completed)?;
    write_json(
        &checkpoint,
        &CheckpointRef {
            config,
            state: engine.state(),
        },
    )?;
    let mut seen = 0usize;
    engine.run(|record, state| {
        log.write(record)?;
        write_json(&checkpoint, &CheckpointRef { config, state })?;
        seen += 1;
        Ok(match stop_after {
            Some(k) if seen >= k => Control::Stop,
            _ => Control::Continue,
        })
    })?;
    let state = engine.into_state();
    let finished = state.is_finished(config.engine.max_evaluations);
    let report = if finished {
        Some(report::write_report(&state.completed, out_dir, None)?)
    } else {
        None
    };
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        completed: state.completed.len(),
        incumbent: state.incumbent,
        finished,
        report,
    })
}

/// Start a fresh run. Refuses to overwrite a directory that already holds one.
pub fn cmd_run(config_path: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let (config, objective) = load(config_path, overrides)?;
    let out_dir = output_dir(&config, overrides.out.as_deref());
    if out_dir.join(CHECKPOINT_FILE).exists() {
        return Err(Error::InvalidArgument(format!(
            "{} already holds a run; use `resume` or pick another --out",
            out_dir.display()
        )));
    }
    let engine = Engine::new(config.engine_config(), objective, Strategy::Surrogate)?;
    fs::create_dir_all(&out_dir)?;
    let echoed = format!(
        "# Resolved configuration with every default spelled out.\n{}",
        config.to_toml()
    );
    write_atomic(&out_dir.join(CONFIG_FILE), echoed.as_bytes())?;
    drive(engine, &config, &out_dir, overrides.stop_after)
}

/// Continue from a checkpoint. The log is rebuilt from the checkpoint first,
/// so completions after the last checkpoint are never duplicated.
pub fn cmd_resume(checkpoint_path: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let checkpoint: Checkpoint = read_json(checkpoint_path)?;
    let mut config = checkpoint.config;
    if let Some(workers) = overrides.workers {
        config.engine.workers = workers;
    }
    let objective = config.validate()?;
    let out_dir = match &overrides.out {
        Some(dir) => dir.clone(),
        None => checkpoint_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&out_dir)?;
    let engine = Engine::resume(config.engine_config(), objective, checkpoint.state)?;
    drive(engine, &config, &out_dir, overrides.stop_after)
}

/// Distribution summary of evaluations-to-threshold for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    /// Per seed; runs that never reach the threshold count as budget + 1.
    pub evaluations_to_threshold: Vec<u64>,
    pub reached: usize,
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
}

impl StrategyStats {
    fn new(counts: Vec<u64>, budget: usize) -> Self {
        let mut data = Data::new(counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
        StrategyStats {
            reached: counts.iter().filter(|&&c| c as usize <= budget).count(),
            median: data.median(),
            lower_quartile: data.lower_quartile(),
            upper_quartile: data.upper_quartile(),
            evaluations_to_threshold: counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub threshold: f64,
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Whether curves track the noise-free objective rather than observed losses.
    pub noise_free: bool,
    pub surrogate: StrategyStats,
    pub random: StrategyStats,
    /// Surrogate median over random median.
    pub ratio: f64,
    #[serde(skip)]
    pub curves: Vec<Curve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub seed: u64,
    pub strategy: Strategy,
    /// Value per completion (noise-free when available).
    pub values: Vec<f64>,
    pub best_so_far: Vec<f64>,
}

fn run_to_end(config: &RunConfig, objective: Arc<dyn Objective>, strategy: Strategy) -> Result<Vec<EvaluationRecord>> {
    let mut engine = Engine::new(config.engine_config(), objective, strategy)?;
    engine.run(|_, _| Ok(Control::Continue))?;
    Ok(engine.into_state().completed)
}

/// Surrogate search against random search with matched seeds and budgets.
pub fn compare(config: &RunConfig, objective: Arc<dyn Objective>) -> Result<Comparison> {
    let threshold = match (config.compare.threshold, objective.known_optimum()) {
        (Some(t), _) => t,
        (None, Some(opt)) => opt + 1.0,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "compare.threshold is required when the objective has no known optimum".into(),
            ))
        }
    };
    let budget = config.engine.max_evaluations;
    let seeds: Vec<u64> = (0..config.compare.seeds)
        .map(|i| config.engine.seed.wrapping_add(i))
        .collect();
    let jobs: Vec<(u64, Strategy)> = seeds
        .iter()
        .flat_map(|&s| [(s, Strategy::Surrogate), (s, Strategy::Random)])
        .collect();
    let noise_free = objective.noise_free(&objective.space().lower().to_vec().into()).is_some();
    let curves = jobs
        .par_iter()
        .map(|&(seed, strategy)| {
            let mut cfg = config.clone();
            cfg.engine.seed = seed;
            let records = run_to_end(&cfg, objective.clone(), strategy)?;
            let values: Vec<f64> = records
                .iter()
                .map(|r| match (r.failed, objective.noise_free(&r.point)) {
                    (true, _) => f64::INFINITY,
                    (false, Some(v)) => v,
                    (false, None) => r.objective(),
                })
                .collect();
            let best_so_far = values
                .iter()
                .scan(f64::INFINITY, |b, &v| {
                    *b = b.min(v);
                    Some(*b)
                })
                .collect();
            Ok(Curve {
                seed,
                strategy,
                values,
                best_so_far,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = |strategy: Strategy| -> Vec<u64> {
        curves
            .iter()
            .filter(|c| c.strategy == strategy)
            .map(|c| {
                c.best_so_far
                    .iter()
                    .position(|&b| b <= threshold)
                    .map_or(budget as u64 + 1, |i| i as u64 + 1)
            })
            .collect()
    };
    let surrogate = StrategyStats::new(counts(Strategy::Surrogate), budget);
    let random = StrategyStats::new(counts(Strategy::Random), budget);
    Ok(Comparison {
        threshold,
        budget,
        seeds,
        noise_free,
        ratio: surrogate.median / random.median,
        surrogate,
        random,
        curves,
    })
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("seed,strategy,completion_index,value,best_so_far\n");
    for c in curves {
        let name = match c.strategy {
            Strategy::Surrogate => "surrogate",
            Strategy::Random => "random",
        };
        for (i, (v, b)) in c.values.iter().zip(&c.best_so_far).enumerate() {
            let _ = writeln!(out, "{},{name},{},{v},{b}", c.seed, i + 1);
        }
    }
    out
}

pub struct CompareOutcome {
    pub out_dir: PathBuf,
    pub comparison: Comparison,
}

pub fn cmd_compare(config_path: &Path, overrides: &Overrides) -> Result<CompareOutcome> {
    let (config, objective) = load(config_path, overrides)?;
    let out_dir = output_dir(&config, overrides.out.as_deref());
    let comparison = compare(&config, objective)?;
    fs::create_dir_all(&out_dir)?;
    write_atomic(&out_dir.join(CURVES_FILE), curves_csv(&comparison.curves).as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&comparison)?;
    json.push(b'\n');
    write_atomic(&out_dir.join(COMPARE_FILE), &json)?;
    Ok(CompareOutcome { out_dir, comparison })
}

/// One line per built-in benchmark.
pub fn cmd_benchmarks() -> String {
    let width = BENCHMARKS.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    BENCHMARKS
        .iter()
        .map(|(name, description)| format!("{name:width$}  {description}\n"))
        .collect()
}
