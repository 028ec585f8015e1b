//! Outer design problems with the trained policy embedded as a fixed
//! feedback law.

mod cstr;
mod mc;
mod search;
mod tank;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cstr::{
    cstr_check, cstr_cost, cstr_evaluate, solve_cstr_design, CostBreakdown, CostModel, CstrCheck, CstrProblem,
};
pub use mc::{monte_carlo, McStats, McSummary};
pub use search::{compass_search, nelder_mead, SearchResult};
pub use tank::{
    search_feasible, solve_tank_design, tank_cyclic, tank_error, tank_feasible, InnerResult, TankCheck, TankProblem,
    TankResiduals,
};

use crate::env::{CstrDesign, CstrEnv, CstrParams, TankDesign, TankEnv, TimeGrid};
use crate::error::Result;
use crate::rollout::Controller;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesignValues {
    Tank(TankDesign),
    Cstr(CstrDesign),
}

/// One enumerated settling-tank prefix and the cost found for it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub k: usize,
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    /// `"tank"` or `"cstr"`.
    pub problem: String,
    /// `F_dev` for the tank, total cost for the CSTR.
    pub objective: f64,
    pub design: DesignValues,
    pub feasible: bool,
    pub residuals: BTreeMap<String, f64>,
    /// Error integral of the design rollout.
    pub err: f64,
    /// Settling-tank prefix length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Final bisection bracket on `F_dev`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_dev_bracket: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_components: Option<CostBreakdown>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSummary>,
}

impl DesignSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Parse {
            what: "design solution".into(),
            msg: e.to_string(),
        })
    }
}

/// Monte-Carlo statistics of `ctrl` on a tank design. A run violates when
/// its setpoint error or cyclic mismatch exceeds `epsilon` percent.
pub fn tank_mc<C>(
    ctrl: &C,
    design: TankDesign,
    grid: TimeGrid,
    epsilon: f64,
    n_runs: usize,
    noise_pct: f64,
    seed: u64,
) -> Result<McStats>
where
    C: Controller + ?Sized,
{
    let lim = epsilon / 100.0;
    let sp = design.setpoint();
    monte_carlo(
        || Ok(TankEnv::new(design, grid, noise_pct)),
        ctrl,
        n_runs,
        seed,
        |t| {
            let err = tank_error(t, sp, grid.dt());
            (err, err > lim || tank_cyclic(t) > lim)
        },
    )
}

/// Monte-Carlo statistics of `ctrl` on a CSTR design. A run violates when
/// the temperature ceiling is crossed at any step.
pub fn cstr_mc<C>(
    ctrl: &C,
    design: &CstrDesign,
    params: &CstrParams,
    grid: TimeGrid,
    n_runs: usize,
    noise_pct: f64,
    seed: u64,
) -> Result<McStats>
where
    C: Controller + ?Sized,
{
    let dt = grid.dt();
    monte_carlo(
        || CstrEnv::new(design.clone(), *params, grid, noise_pct),
        ctrl,
        n_runs,
        seed,
        |t| {
            let err = t.states[..t.len()].iter().map(|s| s[0] * dt).sum();
            (err, t.states.iter().any(|s| s[1] > params.t_max))
        },
    )
}
