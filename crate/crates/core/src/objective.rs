//! The black box: something that maps a lattice point to a loss estimate and
//! its variability.

use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::domain::{HyperparameterSet, HyperparameterSpace, UqLog, FAILED_LOSS};
use crate::error::{Error, Result};
use crate::uq::{RegularizationConfig, UqConfig};

/// Per-evaluation inputs handed to an objective.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub eval_id: u64,
    /// Seed dedicated to this evaluation.
    pub seed: u64,
    pub uq: &'a UqConfig,
    pub reg: &'a RegularizationConfig,
    /// Largest vector kept verbatim in the logged UQ summary.
    pub uq_log_values: usize,
}

/// Outcome of one evaluation, before the engine adds bookkeeping fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub loss_std: f64,
    pub regulated_loss: Option<f64>,
    pub param_count: Option<u64>,
    pub trial_count: u32,
    pub dropout_passes: u32,
    pub failed: bool,
    pub uq: Option<UqLog>,
}

impl Evaluation {
    /// Sentinel result for an evaluation that produced no usable loss.
    pub fn failed(trial_count: u32, dropout_passes: u32, param_count: Option<u64>) -> Self {
        Evaluation {
            loss: FAILED_LOSS,
            loss_std: 0.0,
            regulated_loss: None,
            param_count,
            trial_count: trial_count.max(1),
            dropout_passes,
            failed: true,
            uq: None,
        }
    }
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn space(&self) -> &HyperparameterSpace;

    fn evaluate(&self, point: &HyperparameterSet, ctx: &EvalContext<'_>) -> Result<Evaluation>;

    /// Lowest attainable noise-free value, when known analytically.
    fn known_optimum(&self) -> Option<f64> {
        None
    }

    /// Noise-free value at `point`, when the objective has one.
    fn noise_free(&self, _point: &HyperparameterSet) -> Option<f64> {
        None
    }
}

/// Objective backed by a closure; handy for tests and embedding.
pub struct FnObjective<F> {
    name: String,
    space: HyperparameterSpace,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&HyperparameterSet, &EvalContext<'_>) -> Result<Evaluation> + Send + Sync,
{
    pub fn new(name: impl Into<String>, space: HyperparameterSpace, f: F) -> Self {
        FnObjective {
            name: name.into(),
            space,
            f,
        }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&HyperparameterSet, &EvalContext<'_>) -> Result<Evaluation> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &HyperparameterSpace {
        &self.space
    }

    fn evaluate(&self, point: &HyperparameterSet, ctx: &EvalContext<'_>) -> Result<Evaluation> {
        (self.f)(point, ctx)
    }
}

impl Evaluation {
    /// A single-trial result with a degenerate interval.
    pub fn exact(loss: f64) -> Self {
        Evaluation {
            loss,
            loss_std: 0.0,
            regulated_loss: None,
            param_count: None,
            trial_count: 1,
            dropout_passes: 0,
            failed: false,
            uq: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Shell command; the point is appended as `name=value` arguments.
    pub command: String,
    /// Seconds before the command is killed and the evaluation marked failed.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

fn default_timeout() -> f64 {
    3600.0
}

impl ExternalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.command.trim().is_empty() {
            return Err(Error::InvalidConfig("objective.command is empty".into()));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::InvalidConfig("objective.timeout must be > 0".into()));
        }
        Ok(())
    }
}

/// Runs a user command per evaluation. The command must print a line
/// `loss=<real> std=<real>`; the last such line wins.
///
/// The evaluation id and seed are exported as `HPO_EVAL_ID` and `HPO_SEED`.
#[derive(Debug, Clone)]
pub struct ExternalObjective {
    space: HyperparameterSpace,
    config: ExternalConfig,
}

impl ExternalObjective {
    pub fn new(space: HyperparameterSpace, config: ExternalConfig) -> Result<Self> {
        config.validate()?;
        Ok(ExternalObjective { space, config })
    }

    fn arguments(&self, point: &HyperparameterSet) -> String {
        let decoded = self.space.decode(point);
        self.space
            .names()
            .iter()
            .zip(point.values())
            .zip(self.space.codecs())
            .zip(decoded)
            .map(|(((name, raw), codec), value)| {
                if codec.offset == 0.0 && codec.step == 1.0 {
                    format!("{name}={raw}")
                } else {
                    format!("{name}={value}")
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn run(&self, point: &HyperparameterSet, ctx: &EvalContext<'_>) -> Result<String> {
        let script = format!("{} {}", self.config.command, self.arguments(point));
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&script)
            .env("HPO_EVAL_ID", ctx.eval_id.to_string())
            .env("HPO_SEED", ctx.seed.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            stdout.read_to_string(&mut buf).map(|_| buf)
        });
        let deadline = Instant::now() + Duration::from_secs_f64(self.config.timeout);
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::External(format!(
                    "command timed out after {} s",
                    self.config.timeout
                )));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let output = reader
            .join()
            .map_err(|_| Error::External("stdout reader panicked".into()))??;
        if !status.success() {
            return Err(Error::External(format!("command exited with {status}")));
        }
        Ok(output)
    }
}

/// Parses the last `loss=<x> std=<y>` line of `output`.
pub fn parse_external_output(output: &str) -> Result<(f64, f64)> {
    let parsed = output.lines().rev().find_map(|line| {
        let mut loss = None;
        let mut std = None;
        for token in line.split_whitespace() {
            if let Some(v) = token.strip_prefix("loss=") {
                loss = v.parse::<f64>().ok();
            } else if let Some(v) = token.strip_prefix("std=") {
                std = v.parse::<f64>().ok();
            }
        }
        Some((loss?, std?))
    });
    match parsed {
        Some((loss, std)) if loss.is_finite() && std.is_finite() && std >= 0.0 => Ok((loss, std)),
        Some((loss, std)) => Err(Error::External(format!(
            "invalid values loss={loss} std={std}"
        ))),
        None => Err(Error::External(
            "no `loss=<real> std=<real>` line in command output".into(),
        )),
    }
}

impl Objective for ExternalObjective {
    fn name(&self) -> &str {
        "external"
    }

    fn space(&self) -> &HyperparameterSpace {
        &self.space
    }

    fn evaluate(&self, point: &HyperparameterSet, ctx: &EvalContext<'_>) -> Result<Evaluation> {
        let (loss, loss_std) = parse_external_output(&self.run(point, ctx)?)?;
        Ok(Evaluation {
            loss,
            loss_std,
            regulated_loss: None,
            param_count: None,
            trial_count: 1,
            dropout_passes: 0,
            failed: false,
            uq: None,
        })
    }
}
