//! Tables and summary derived from an evaluation log. The output depends only
//! on the log contents.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{EvaluationRecord, HyperparameterSet};
use crate::engine::best_so_far;
use crate::error::{Error, Result};
use crate::persist::{read_log, write_atomic};

pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub eval_id: u64,
    pub completion_index: u64,
    pub point: HyperparameterSet,
    pub loss: f64,
    pub loss_std: f64,
    pub objective: f64,
    pub param_count: Option<u64>,
}

impl From<&EvaluationRecord> for ReportEntry {
    fn from(r: &EvaluationRecord) -> Self {
        ReportEntry {
            eval_id: r.eval_id,
            completion_index: r.completion_index,
            point: r.point.clone(),
            loss: r.loss,
            loss_std: r.loss_std,
            objective: r.objective(),
            param_count: r.param_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub records: usize,
    pub failed: usize,
    pub incumbent: Option<ReportEntry>,
    /// Records not dominated in (loss, loss_std), in completion order.
    pub pareto: Vec<ReportEntry>,
    /// Set when the log was cut short by a malformed line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Indices of successful records that no other successful record dominates
/// in (loss, loss_std), both minimized.
pub fn pareto_front(records: &[EvaluationRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).filter(|&i| !records[i].failed).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        ra.loss.total_cmp(&rb.loss).then(ra.loss_std.total_cmp(&rb.loss_std))
    });
    let mut front = Vec::new();
    // Lowest std among strictly smaller losses.
    let mut best_std = f64::INFINITY;
    let mut start = 0;
    while start < order.len() {
        let loss = records[order[start]].loss;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| records[i].loss == loss)
                .count();
        let group_min = records[order[start]].loss_std;
        if group_min < best_std {
            front.extend(
                order[start..end]
                    .iter()
                    .copied()
                    .filter(|&i| records[i].loss_std == group_min),
            );
            best_std = group_min;
        }
        start = end;
    }
    front.sort_unstable();
    front
}

/// Lowest objective among successful records; the earliest completion wins ties.
pub fn incumbent(records: &[EvaluationRecord]) -> Option<&EvaluationRecord> {
    records
        .iter()
        .filter(|r| !r.failed)
        .min_by(|a, b| {
            a.objective()
                .total_cmp(&b.objective())
                .then(a.completion_index.cmp(&b.completion_index))
        })
}

pub fn convergence_csv(records: &[EvaluationRecord]) -> String {
    let mut out = String::from("completion_index,loss,ci_lower,ci_upper,best_so_far\n");
    for (r, best) in records.iter().zip(best_so_far(records)) {
        let ci = r.interval();
        let _ = writeln!(
            out,
            "{},{},{},{},{best}",
            r.completion_index,
            r.loss,
            ci.lower(),
            ci.upper()
        );
    }
    out
}

/// Empty `param_count` cells where the objective cannot report one.
pub fn scatter_csv(records: &[EvaluationRecord]) -> String {
    let mut out = String::from("eval_id,loss,loss_std,param_count,failed\n");
    for r in records {
        let params = r.param_count.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{params},{}", r.eval_id, r.loss, r.loss_std, r.failed);
    }
    out
}

pub fn summarize(records: &[EvaluationRecord], warning: Option<String>) -> ReportSummary {
    ReportSummary {
        records: records.len(),
        failed: records.iter().filter(|r| r.failed).count(),
        incumbent: incumbent(records).map(ReportEntry::from),
        pareto: pareto_front(records)
            .into_iter()
            .map(|i| ReportEntry::from(&records[i]))
            .collect(),
        warning,
    }
}

pub fn write_report(records: &[EvaluationRecord], dir: &Path, warning: Option<String>) -> Result<ReportSummary> {
    let summary = summarize(records, warning);
    write_atomic(&dir.join(CONVERGENCE_FILE), convergence_csv(records).as_bytes())?;
    write_atomic(&dir.join(SCATTER_FILE), scatter_csv(records).as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(&dir.join(SUMMARY_FILE), &json)?;
    Ok(summary)
}

/// `log` is a log file or a run directory containing one. Reports go to
/// `out`, defaulting to the log's directory.
pub fn cmd_report(log: &Path, out: Option<&Path>) -> Result<(PathBuf, ReportSummary)> {
    let path = if log.is_dir() {
        log.join(super::LOG_FILE)
    } else {
        log.to_path_buf()
    };
    let contents = read_log(&path)?;
    let warning = contents.error.map(|e| {
        let message = format!("log truncated at {e}; reporting the records before it");
        log::warn!("{message}");
        message
    });
    if contents.records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no readable records",
            path.display()
        )));
    }
    let dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir)?;
    let summary = write_report(&contents.records, &dir, warning)?;
    Ok((dir, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64, loss: f64, std: f64) -> EvaluationRecord {
        EvaluationRecord {
            eval_id: i,
            completion_index: i,
            point: HyperparameterSet::new(vec![i as i64]),
            loss,
            loss_std: std,
            regulated_loss: None,
            param_count: None,
            wall_time: 0.0,
            trial_count: 1,
            dropout_passes: 0,
            proposal_basis: Vec::new(),
            failed: false,
            fallback: false,
            uq: None,
        }
    }

    #[test]
    fn single_record_is_incumbent_and_front() {
        let records = vec![rec(1, 3.0, 0.2)];
        let s = summarize(&records, None);
        assert_eq!(s.incumbent.unwrap().eval_id, 1);
        assert_eq!(s.pareto.len(), 1);
    }

    #[test]
    fn dominance_definition() {
        let records = vec![rec(1, 1.0, 0.5), rec(2, 2.0, 0.1)];
        assert_eq!(pareto_front(&records), vec![0, 1]);
        let records = vec![rec(1, 1.0, 0.5), rec(2, 2.0, 0.1), rec(3, 2.0, 0.5)];
        assert_eq!(pareto_front(&records), vec![0, 1]);
    }

    #[test]
    fn ties_and_failures() {
        let mut failed = rec(4, 0.0, 0.0);
        failed.failed = true;
        let records = vec![rec(1, 1.0, 0.5), rec(2, 1.0, 0.5), rec(3, 1.5, 0.5), failed];
        assert_eq!(pareto_front(&records), vec![0, 1]);
        assert_eq!(incumbent(&records).unwrap().eval_id, 1);
    }

    #[test]
    fn convergence_table() {
        let records = vec![rec(1, 3.0, 0.5), rec(2, 4.0, 1.0), rec(3, 1.0, 0.0)];
        assert_eq!(
            convergence_csv(&records),
            "completion_index,loss,ci_lower,ci_upper,best_so_far\n\
             1,3,2.5,3.5,3\n2,4,3,5,3\n3,1,1,1,1\n"
        );
    }
}
