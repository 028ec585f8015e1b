//! Evaluation reports: per-step bands as CSV and scalar summaries as JSON.

use serde::{Deserialize, Serialize};

use crate::config::Case;
use crate::design::{DesignSolution, McStats};
use crate::env::TimeGrid;
use crate::error::{Error, Result};

/// Scalar part of [`McStats`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub mean_err: f64,
    pub std_err: f64,
    pub violation_rate: f64,
    pub total_reward_mean: f64,
    pub total_reward_std: f64,
}

impl From<&McStats> for ControllerSummary {
    fn from(s: &McStats) -> Self {
        Self {
            mean_err: s.mean_err,
            std_err: s.std_err,
            violation_rate: s.violation_rate,
            total_reward_mean: s.total_reward_mean,
            total_reward_std: s.total_reward_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub case: Case,
    pub grid: TimeGrid,
    pub noise_pct: f64,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub policy: McStats,
    /// PD baseline on the same design (tank only).
    pub pd: Option<McStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub case: Case,
    pub n_runs: usize,
    pub noise_pct: f64,
    pub policy: ControllerSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd: Option<ControllerSummary>,
    /// PD mean error over policy mean error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd_to_policy_err_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSolution>,
}

fn fmt(x: f64) -> String {
    format!("{x:.10e}")
}

fn push_bands(header: &mut Vec<String>, prefix: &str, names: &[String]) {
    for stat in ["mean", "std"] {
        for n in names {
            header.push(format!("{prefix}{stat}_{n}"));
        }
    }
}

fn push_row(row: &mut Vec<String>, mean: Option<&Vec<f64>>, std: Option<&Vec<f64>>, width: usize) {
    for band in [mean, std] {
        match band {
            Some(v) => row.extend(v.iter().map(|&x| fmt(x))),
            None => row.extend(std::iter::repeat_n(String::new(), width)),
        }
    }
}

impl EvalReport {
    /// Columns `t`, state mean/std, control mean/std, reward mean/std, then
    /// the same state and control bands prefixed `pd_` when a PD baseline is
    /// present. One row per grid point; control and reward cells are empty
    /// on the final row.
    pub fn to_csv(&self) -> Result<String> {
        let mut header = vec!["t".to_string()];
        let mut sections = vec![("", &self.policy)];
        if let Some(pd) = &self.pd {
            sections.push(("pd_", pd));
        }
        for (prefix, _) in &sections {
            push_bands(&mut header, prefix, &self.state_names);
            push_bands(&mut header, prefix, &self.control_names);
            if prefix.is_empty() {
                header.push("mean_reward".into());
                header.push("std_reward".into());
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).map_err(csv_err)?;
        let n = self.grid.n_steps;
        for k in 0..=n {
            let mut row = vec![fmt(self.grid.time(k))];
            for (prefix, s) in &sections {
                push_row(
                    &mut row,
                    s.state_mean.get(k),
                    s.state_std.get(k),
                    self.state_names.len(),
                );
                push_row(
                    &mut row,
                    s.control_mean.get(k),
                    s.control_std.get(k),
                    self.control_names.len(),
                );
                if prefix.is_empty() {
                    let r = |v: &Vec<f64>| v.get(k).map_or(String::new(), |&x| fmt(x));
                    row.push(r(&s.reward_mean));
                    row.push(r(&s.reward_std));
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| csv_err(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary(&self, design: Option<DesignSolution>) -> Summary {
        let policy = ControllerSummary::from(&self.policy);
        let pd = self.pd.as_ref().map(ControllerSummary::from);
        Summary {
            case: self.case,
            n_runs: self.policy.n_runs,
            noise_pct: self.noise_pct,
            policy,
            pd,
            pd_to_policy_err_ratio: pd.map(|p| p.mean_err / policy.mean_err),
            design,
        }
    }
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Parse {
        what: "csv".into(),
        msg: e.to_string(),
    }
}
