//! Run configuration: a strict TOML file. Unknown keys are errors, and every
//! error carries the line it refers to.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::benchmark::{is_benchmark, load_benchmark, BenchmarkOptions};
use crate::domain::{Codec, HyperparameterSet, HyperparameterSpace};
use crate::engine::{DurationMode, DurationModel, EngineConfig, SurrogateKind};
use crate::error::{Error, Result};
use crate::objective::{ExternalConfig, ExternalObjective, Objective};
use crate::sampler::SamplerConfig;
use crate::surrogate::GaConfig;
use crate::uq::{RegularizationConfig, UqConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    pub name: String,
    pub lower: i64,
    pub upper: i64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "unit_step")]
    pub step: f64,
}

fn unit_step() -> f64 {
    1.0
}

/// Exactly one of `benchmark` and `command` must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub surrogate: SurrogateKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_design_size: Option<usize>,
    pub max_evaluations: usize,
    pub workers: usize,
    pub seed: u64,
    pub duration_mode: DurationMode,
    pub ensemble_size: usize,
    pub seed_points: Vec<HyperparameterSet>,
    pub uq_log_values: usize,
    pub durations: DurationModel,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        EngineSection {
            surrogate: e.surrogate,
            initial_design_size: e.initial_design_size,
            max_evaluations: e.max_evaluations,
            workers: e.workers,
            seed: e.seed,
            duration_mode: e.duration_mode,
            ensemble_size: e.ensemble_size,
            seed_points: e.seed_points,
            uq_log_values: e.uq_log_values,
            durations: e.durations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Run directory; relative paths resolve against the output root.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("hpo-run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Number of seeds, starting at `engine.seed`.
    pub seeds: u64,
    /// Target loss; defaults to the known optimum plus one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            seeds: 20,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub space: Vec<DimensionConfig>,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub benchmark: BenchmarkOptions,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub uq: UqConfig,
    #[serde(default)]
    pub regularization: RegularizationConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn space(&self) -> Result<Option<HyperparameterSpace>> {
        if self.space.is_empty() {
            return Ok(None);
        }
        HyperparameterSpace::with_codecs(
            self.space.iter().map(|d| d.name.clone()).collect(),
            self.space.iter().map(|d| d.lower).collect(),
            self.space.iter().map(|d| d.upper).collect(),
            self.space
                .iter()
                .map(|d| Codec {
                    offset: d.offset,
                    step: d.step,
                })
                .collect(),
        )
        .map(Some)
    }

    pub fn engine_config(&self) -> EngineConfig {
        let e = &self.engine;
        EngineConfig {
            surrogate: e.surrogate,
            initial_design_size: e.initial_design_size,
            max_evaluations: e.max_evaluations,
            workers: e.workers,
            uq: self.uq.clone(),
            sampler: self.sampler.clone(),
            reg: self.regularization.clone(),
            ga: self.ga.clone(),
            ensemble_size: e.ensemble_size,
            seed: e.seed,
            duration_mode: e.duration_mode,
            durations: e.durations.clone(),
            seed_points: e.seed_points.clone(),
            uq_log_values: e.uq_log_values,
        }
    }

    pub fn build_objective(&self) -> Result<Arc<dyn Objective>> {
        let o = &self.objective;
        match (&o.benchmark, &o.command) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "objective: set either benchmark or command, not both".into(),
            )),
            (None, None) => Err(Error::InvalidConfig(
                "objective: no objective configured; set objective.benchmark or objective.command"
                    .into(),
            )),
            (Some(name), None) => {
                if o.timeout.is_some() {
                    return Err(Error::InvalidConfig(
                        "objective.timeout only applies to objective.command".into(),
                    ));
                }
                if !is_benchmark(name) {
                    return Err(Error::UnknownBenchmark(name.clone()));
                }
                load_benchmark(name, &self.benchmark, self.space()?)
            }
            (None, Some(command)) => {
                let space = self.space()?.ok_or_else(|| {
                    Error::InvalidConfig("an external objective needs a [[space]] definition".into())
                })?;
                let mut cfg = ExternalConfig {
                    command: command.clone(),
                    timeout: 3600.0,
                };
                if let Some(t) = o.timeout {
                    cfg.timeout = t;
                }
                Ok(Arc::new(ExternalObjective::new(space, cfg)?))
            }
        }
    }

    /// Full validation: objective wiring, space and engine settings.
    pub fn validate(&self) -> Result<Arc<dyn Objective>> {
        let objective = self.build_objective()?;
        self.engine_config().validate(objective.space())?;
        if self.compare.seeds == 0 {
            return Err(Error::InvalidConfig("compare.seeds must be at least 1".into()));
        }
        Ok(objective)
    }
}

/// Keys per section, used to point validation errors at a line.
fn section_of(message: &str) -> &'static str {
    let m = message.to_ascii_lowercase();
    for (prefix, section) in [
        ("objective", "objective"),
        ("unknown benchmark", "objective"),
        ("benchmark", "benchmark"),
        ("uq", "uq"),
        ("regularization", "regularization"),
        ("sampler", "sampler"),
        ("ga", "ga"),
        ("compare", "compare"),
        ("durations", "engine.durations"),
        ("invalid search space", "space"),
        ("dimension", "space"),
    ] {
        if m.starts_with(prefix) || m.contains(&format!(" {prefix}.")) {
            return section;
        }
    }
    "engine"
}

/// Line (1-based) of the key named in `message`, or of the section header,
/// or 1.
fn locate(text: &str, message: &str) -> usize {
    let section = section_of(message);
    let mut current = String::new();
    let mut header_line = None;
    let mut best = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section && header_line.is_none() {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some((key, _)) = line.split_once('=') {
            let key = key.trim();
            if !key.is_empty() && mentions(message, key) && best.is_none() {
                best = Some(i + 1);
            }
        }
    }
    best.or(header_line).unwrap_or(1)
}

/// `message` contains `key` as a whole word.
fn mentions(message: &str, key: &str) -> bool {
    let word = |c: char| c.is_alphanumeric() || c == '_';
    message.match_indices(key).any(|(i, _)| {
        let before = message[..i].chars().next_back();
        let after = message[i + key.len()..].chars().next();
        !before.is_some_and(word) && !after.is_some_and(word)
    })
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Reads, parses and validates a config file. Errors in the contents are
/// [`Error::Parse`] values naming the file and line.
pub fn parse_config(path: &Path) -> Result<(RunConfig, Arc<dyn Objective>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, path)
}

pub fn parse_config_str(text: &str, path: &Path) -> Result<(RunConfig, Arc<dyn Objective>)> {
    let config = RunConfig::from_toml(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(1, |s| line_of_offset(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let objective = config.validate().map_err(|e| {
        let message = e.to_string();
        Error::Parse {
            path: path.to_path_buf(),
            line: locate(text, &strip_kind(&message)),
            message,
        }
    })?;
    Ok((config, objective))
}

fn strip_kind(message: &str) -> String {
    message
        .strip_prefix("invalid configuration: ")
        .unwrap_or(message)
        .to_string()
}
