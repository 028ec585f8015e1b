//! Cost-minimal CSTR design with a prefix settling-tank schedule.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::search::compass_search;
use super::{Candidate, DesignSolution, DesignValues};
use crate::env::{CstrDesign, CstrEnv, CstrParams, Interval, TimeGrid};
use crate::error::{Error, Result};
use crate::rollout::{simulate, Controller, Trajectory};

/// Cost coefficients: equipment `vol_coef*(V - v_ref)/pi + base +
/// settling_capital*Y_S,f`, operational rate `-m (C_A0 - C_A) +
/// settling_rate*Y_S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub vol_coef: f64,
    pub v_ref: f64,
    pub base: f64,
    pub settling_capital: f64,
    pub settling_rate: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            vol_coef: 10.0,
            v_ref: 750.0,
            base: 1000.0,
            settling_capital: 400.0,
            settling_rate: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub equipment: f64,
    pub operational: f64,
    pub total: f64,
}

impl CostModel {
    pub fn equipment(&self, design: &CstrDesign) -> f64 {
        let y = if design.y_exists { 1.0 } else { 0.0 };
        self.vol_coef * (design.v - self.v_ref) / PI + self.base + self.settling_capital * y
    }
}

/// Equipment cost by formula plus operational cost integrated by the
/// rectangle rule over the control intervals. `traj.info[t]` holds
/// `[m, C_A0]` at the start of interval `t`.
pub fn cstr_cost(design: &CstrDesign, traj: &Trajectory, dt: f64, model: &CostModel) -> CostBreakdown {
    let equipment = model.equipment(design);
    let operational: f64 = (0..traj.len())
        .map(|t| {
            let (m, ca0) = (traj.info[t][0], traj.info[t][1]);
            let ca = traj.states[t][0];
            let y = if design.settling(t) { 1.0 } else { 0.0 };
            (-m * (ca0 - ca) + model.settling_rate * y) * dt
        })
        .sum();
    CostBreakdown {
        equipment,
        operational,
        total: equipment + operational,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CstrProblem {
    pub v: Interval,
    pub m_nom: Interval,
    /// `m_dev / m_nom`; keeping the upper end at or below 1 enforces
    /// `m_dev <= m_nom`.
    pub m_dev_frac: Interval,
    pub ca0_nom: Interval,
    /// `ca0_dev / ca0_nom`.
    pub ca0_dev_frac: Interval,
    /// Settling-tank prefixes `k = 0, k_step, 2*k_step, ..., <= k_max`.
    pub k_max: usize,
    pub k_step: usize,
    /// Bound on `int C_A dtau`.
    pub err_max: f64,
    /// Weight on summed constraint violation in the search objective.
    pub penalty: f64,
    /// Initial and final compass mesh, in unit-cube coordinates.
    pub mesh0: f64,
    pub mesh_tol: f64,
    pub max_evals: usize,
    pub noise_pct: f64,
    pub cost: CostModel,
}

impl Default for CstrProblem {
    fn default() -> Self {
        Self {
            v: Interval::new(600.0, 1200.0),
            m_nom: Interval::new(16.0, 20.0),
            m_dev_frac: Interval::new(0.75, 1.0),
            ca0_nom: Interval::new(1.0, 3.0),
            ca0_dev_frac: Interval::new(0.0, 1.0),
            k_max: 60,
            k_step: 5,
            err_max: 100.0,
            penalty: 1.0e4,
            mesh0: 0.25,
            mesh_tol: 1.0e-3,
            max_evals: 3000,
            noise_pct: 0.0,
            cost: CostModel::default(),
        }
    }
}

impl CstrProblem {
    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, i) in self.intervals() {
            i.validate(&format!("{path}.{name}"))?;
        }
        if !(self.v.lo > 0.0) || !(self.m_nom.lo >= 0.0) || !(self.ca0_nom.lo >= 0.0) {
            return Err(Error::config(
                path.to_string(),
                "volume must be positive and flows non-negative",
            ));
        }
        for (name, i) in [("m_dev_frac", self.m_dev_frac), ("ca0_dev_frac", self.ca0_dev_frac)] {
            if i.lo < 0.0 || i.hi > 1.0 {
                return Err(Error::config(format!("{path}.{name}"), "must lie within [0, 1]"));
            }
        }
        if self.k_step == 0 {
            return Err(Error::config(format!("{path}.k_step"), "must be positive"));
        }
        if !(self.err_max > 0.0) {
            return Err(Error::config(format!("{path}.err_max"), "must be positive"));
        }
        if !(self.penalty > 0.0) {
            return Err(Error::config(format!("{path}.penalty"), "must be positive"));
        }
        if !(self.mesh0 > 0.0 && self.mesh0 <= 1.0) || !(self.mesh_tol > 0.0) {
            return Err(Error::config(format!("{path}.mesh0"), "mesh sizes must lie in (0, 1]"));
        }
        if !(self.noise_pct >= 0.0) {
            return Err(Error::config(format!("{path}.noise_pct"), "must be non-negative"));
        }
        Ok(())
    }

    fn intervals(&self) -> [(&'static str, Interval); 5] {
        [
            ("v", self.v),
            ("m_nom", self.m_nom),
            ("m_dev_frac", self.m_dev_frac),
            ("ca0_nom", self.ca0_nom),
            ("ca0_dev_frac", self.ca0_dev_frac),
        ]
    }

    /// Design for unit-cube coordinates `u` and prefix length `k`.
    pub fn design_at(&self, u: &[f64], n_steps: usize, k: usize) -> Result<CstrDesign> {
        let b = self.intervals();
        let x: Vec<f64> = b.iter().zip(u).map(|((_, i), ui)| i.lo + ui * i.width()).collect();
        CstrDesign::with_prefix(x[0], x[1], x[1] * x[2], x[3], x[3] * x[4], n_steps, k.min(n_steps))
    }

    pub fn prefixes(&self, n_steps: usize) -> Vec<usize> {
        (0..=self.k_max.min(n_steps)).step_by(self.k_step).collect()
    }
}

/// Residuals (feasible when `<= 0`) and cost of one design.
#[derive(Clone, Debug, PartialEq)]
pub struct CstrCheck {
    pub cost: CostBreakdown,
    /// `int C_A dtau` by the rectangle rule.
    pub err: f64,
    pub max_temp: f64,
    /// Kelvin-steps above the ceiling, summed over `t = 0..=n_T`.
    pub temp_excess: f64,
    pub residual_temp: f64,
    pub residual_err: f64,
    pub feasible: bool,
}

impl CstrCheck {
    pub fn penalized(&self, weight: f64) -> f64 {
        self.cost.total + weight * (self.temp_excess + self.residual_err.max(0.0))
    }
}

pub fn cstr_check(
    traj: &Trajectory,
    design: &CstrDesign,
    params: &CstrParams,
    grid: TimeGrid,
    problem: &CstrProblem,
) -> CstrCheck {
    let dt = grid.dt();
    let cost = cstr_cost(design, traj, dt, &problem.cost);
    let err = traj.states[..traj.len()].iter().map(|s| s[0] * dt).sum::<f64>();
    let max_temp = traj.states.iter().map(|s| s[1]).fold(f64::NEG_INFINITY, f64::max);
    let temp_excess = traj.states.iter().map(|s| (s[1] - params.t_max).max(0.0)).sum();
    let residual_temp = max_temp - params.t_max;
    let residual_err = err - problem.err_max;
    CstrCheck {
        cost,
        err,
        max_temp,
        temp_excess,
        residual_temp,
        residual_err,
        feasible: residual_temp <= 0.0 && residual_err <= 0.0,
    }
}

/// Rolls `ctrl` out on `design` and scores it.
pub fn cstr_evaluate<C>(
    ctrl: &C,
    design: &CstrDesign,
    params: &CstrParams,
    grid: TimeGrid,
    problem: &CstrProblem,
    seed: u64,
) -> Result<CstrCheck>
where
    C: Controller + ?Sized,
{
    let mut env = CstrEnv::new(design.clone(), *params, grid, problem.noise_pct)?;
    let traj = simulate(&mut env, ctrl, seed)?;
    Ok(cstr_check(&traj, design, params, grid, problem))
}

struct KResult {
    k: usize,
    design: CstrDesign,
    check: Option<CstrCheck>,
}

fn solve_prefix<C>(
    ctrl: &C,
    params: &CstrParams,
    grid: TimeGrid,
    problem: &CstrProblem,
    k: usize,
    seed: u64,
) -> Result<KResult>
where
    C: Controller + ?Sized,
{
    let n = grid.n_steps;
    let objective = |u: &[f64]| match problem.design_at(u, n, k) {
        Ok(d) => match cstr_evaluate(ctrl, &d, params, grid, problem, seed) {
            Ok(c) => c.penalized(problem.penalty),
            Err(_) => f64::INFINITY,
        },
        Err(_) => f64::INFINITY,
    };
    let r = compass_search(objective, &[0.5; 5], problem.mesh0, problem.mesh_tol, problem.max_evals);
    let design = problem.design_at(&r.x, n, k)?;
    let check = cstr_evaluate(ctrl, &design, params, grid, problem, seed).ok();
    log::info!(
        "k={k}: penalized {:.3}, feasible {}",
        r.f,
        check.as_ref().is_some_and(|c| c.feasible)
    );
    Ok(KResult { k, design, check })
}

/// Enumerates prefix lengths, runs a compass search over the continuous
/// design at each, and returns the cheapest feasible candidate.
pub fn solve_cstr_design<C>(
    ctrl: &C,
    params: &CstrParams,
    grid: TimeGrid,
    problem: &CstrProblem,
    seed: u64,
) -> Result<DesignSolution>
where
    C: Controller + ?Sized,
{
    problem.validate("design")?;
    params.validate()?;
    let results: Vec<KResult> = problem
        .prefixes(grid.n_steps)
        .into_par_iter()
        .map(|k| solve_prefix(ctrl, params, grid, problem, k, seed))
        .collect::<Result<_>>()?;
    let candidates: Vec<Candidate> = results
        .iter()
        .map(|r| Candidate {
            k: r.k,
            objective: r.check.as_ref().map_or(f64::INFINITY, |c| c.cost.total),
            feasible: r.check.as_ref().is_some_and(|c| c.feasible),
        })
        .collect();
    let best = results
        .iter()
        .filter(|r| r.check.as_ref().is_some_and(|c| c.feasible))
        .min_by(|a, b| {
            let (ca, cb) = (a.check.as_ref().unwrap(), b.check.as_ref().unwrap());
            ca.cost.total.total_cmp(&cb.cost.total)
        });
    let Some(best) = best else {
        let least_bad = results
            .iter()
            .filter_map(|r| r.check.as_ref().map(|c| (r.k, c)))
            .min_by(|a, b| {
                a.1.penalized(problem.penalty)
                    .total_cmp(&b.1.penalized(problem.penalty))
            });
        let msg = match least_bad {
            Some((k, c)) => format!(
                "no feasible CSTR design for any settling prefix; best at k={k}: max T {:.2} (residual {:.3}), err residual {:.3}",
                c.max_temp, c.residual_temp, c.residual_err
            ),
            None => "no feasible CSTR design: every rollout failed".to_string(),
        };
        return Err(Error::Infeasible(msg));
    };
    let check = best.check.as_ref().expect("feasible candidate has a check");
    Ok(DesignSolution {
        problem: "cstr".into(),
        objective: check.cost.total,
        design: DesignValues::Cstr(best.design.clone()),
        feasible: true,
        residuals: [("temperature", check.residual_temp), ("err", check.residual_err)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        err: check.err,
        k: Some(best.k),
        f_dev_bracket: None,
        cost_components: Some(check.cost),
        candidates,
        mc: None,
    })
}
