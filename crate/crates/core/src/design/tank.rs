//! Maximum-deviation tank design: bisection on `F_dev` around a multi-start
//! Nelder-Mead feasibility search over `(F_nom, V_tank, V(0))`.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::search::nelder_mead;
use super::{DesignSolution, DesignValues};
use crate::env::{EnvRng, Interval, TankDesign, TankEnv, TimeGrid};
use crate::error::{Error, Result};
use crate::rollout::{simulate, stream_seed, Controller, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TankProblem {
    pub f_nom: Interval,
    pub v_tank: Interval,
    /// Initial volume relative to the setpoint.
    pub v0_rel: Interval,
    /// Upper end of the `F_dev` bisection bracket.
    pub f_dev_max: f64,
    /// Allowed error in percent, shared by the setpoint and cyclic
    /// constraints.
    pub epsilon: f64,
    /// Bisection tolerance on `F_dev`.
    pub tol: f64,
    pub n_starts: usize,
    /// Nelder-Mead evaluation budget per start.
    pub max_evals: usize,
    /// Measurement noise during the design rollouts.
    pub noise_pct: f64,
}

impl Default for TankProblem {
    fn default() -> Self {
        Self {
            f_nom: Interval::new(2.0, 6.0),
            v_tank: Interval::new(6.0, 12.0),
            v0_rel: Interval::new(0.95, 1.05),
            f_dev_max: 5.0,
            epsilon: 1.0,
            tol: 0.01,
            n_starts: 6,
            max_evals: 300,
            noise_pct: 0.0,
        }
    }
}

impl TankProblem {
    pub fn validate(&self, path: &str) -> Result<()> {
        self.f_nom.validate(&format!("{path}.f_nom"))?;
        self.v_tank.validate(&format!("{path}.v_tank"))?;
        self.v0_rel.validate(&format!("{path}.v0_rel"))?;
        if !(self.f_nom.lo > 0.0) {
            return Err(Error::config(format!("{path}.f_nom"), "lower bound must be positive"));
        }
        if !(self.v0_rel.lo > 0.0) {
            return Err(Error::config(format!("{path}.v0_rel"), "lower bound must be positive"));
        }
        if !(self.f_dev_max >= 0.0) || !self.f_dev_max.is_finite() {
            return Err(Error::config(format!("{path}.f_dev_max"), "must be non-negative"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("{path}.epsilon"), "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config(format!("{path}.tol"), "must be positive"));
        }
        if self.n_starts == 0 || self.max_evals == 0 {
            return Err(Error::config(
                format!("{path}.n_starts"),
                "need at least one start and one evaluation",
            ));
        }
        if !(self.noise_pct >= 0.0) {
            return Err(Error::config(format!("{path}.noise_pct"), "must be non-negative"));
        }
        Ok(())
    }
}

/// Constraint residuals; each is feasible when `<= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TankResiduals {
    /// `err - eps/100`.
    pub err: f64,
    /// `|V(T_F) - V(0)| / V(0) - eps/100`.
    pub cyclic: f64,
    /// `V_SP - V_tank`.
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TankCheck {
    /// Setpoint error integral, rectangle rule over `t = 0..n_T-1`.
    pub err: f64,
    /// Relative end-point mismatch `|V(T_F) - V(0)| / V(0)`.
    pub cyclic_rel: f64,
    pub residuals: TankResiduals,
    pub feasible: bool,
    /// Set when the rollout itself failed.
    pub diagnostic: Option<String>,
}

impl TankCheck {
    /// Largest residual, with capacity scaled to a fraction of the tank.
    pub fn margin(&self, v_tank: f64) -> f64 {
        let r = &self.residuals;
        r.err.max(r.cyclic).max(r.capacity / v_tank)
    }
}

/// Setpoint error integral `sum_t |V_t - V_SP| / V_SP * dt`.
pub fn tank_error(traj: &Trajectory, setpoint: f64, dt: f64) -> f64 {
    let n = traj.len();
    traj.states[..n]
        .iter()
        .map(|s| (s[0] - setpoint).abs() / setpoint * dt)
        .sum()
}

/// `|V(T_F) - V(0)| / V(0)`.
pub fn tank_cyclic(traj: &Trajectory) -> f64 {
    let v0 = traj.states[0][0];
    let vf = traj.states[traj.len()][0];
    (vf - v0).abs() / v0
}

/// Rolls `ctrl` out on `design` and evaluates the design constraints at
/// tolerance `epsilon` percent.
pub fn tank_feasible<C>(
    ctrl: &C,
    design: TankDesign,
    grid: TimeGrid,
    epsilon: f64,
    noise_pct: f64,
    seed: u64,
) -> TankCheck
where
    C: Controller + ?Sized,
{
    let lim = epsilon / 100.0;
    let capacity = design.setpoint() - design.v_tank;
    match simulate(&mut TankEnv::new(design, grid, noise_pct), ctrl, seed) {
        Ok(traj) => {
            let err = tank_error(&traj, design.setpoint(), grid.dt());
            let cyclic_rel = tank_cyclic(&traj);
            let residuals = TankResiduals {
                err: err - lim,
                cyclic: cyclic_rel - lim,
                capacity,
            };
            let feasible = residuals.err <= 0.0 && residuals.cyclic <= 0.0 && residuals.capacity <= 0.0;
            TankCheck {
                err,
                cyclic_rel,
                residuals,
                feasible,
                diagnostic: None,
            }
        }
        Err(e) => TankCheck {
            err: f64::INFINITY,
            cyclic_rel: f64::INFINITY,
            residuals: TankResiduals {
                err: f64::INFINITY,
                cyclic: f64::INFINITY,
                capacity,
            },
            feasible: false,
            diagnostic: Some(e.to_string()),
        },
    }
}

fn design_at(x: &[f64], f_dev: f64) -> TankDesign {
    let (f_nom, v_tank, v0_rel) = (x[0], x[1], x[2]);
    TankDesign {
        v_tank,
        f_nom,
        f_dev,
        v0: v0_rel * (f_nom + f_dev),
    }
}

/// Best design found by the inner search at a fixed `F_dev`.
#[derive(Clone, Debug)]
pub struct InnerResult {
    pub design: TankDesign,
    pub check: TankCheck,
    pub evals: usize,
}

/// Multi-start Nelder-Mead minimizing the largest constraint residual at
/// fixed `f_dev`. Start 0 is the box centre with the largest tank; the rest
/// are drawn from streams keyed by `seed` only, so every `f_dev` is
/// searched from the same points.
pub fn search_feasible<C>(ctrl: &C, problem: &TankProblem, grid: TimeGrid, f_dev: f64, seed: u64) -> InnerResult
where
    C: Controller + ?Sized,
{
    let p = problem;
    let lo = [p.f_nom.lo, p.v_tank.lo, p.v0_rel.lo];
    let hi = [p.f_nom.hi, p.v_tank.hi, p.v0_rel.hi];
    let step: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.2 * (h - l)).collect();
    let target = -p.epsilon / 1000.0;
    let objective = |x: &[f64]| {
        let d = design_at(x, f_dev);
        tank_feasible(ctrl, d, grid, p.epsilon, p.noise_pct, seed).margin(d.v_tank)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evals = 0;
    for s in 0..p.n_starts {
        let x0 = if s == 0 {
            vec![0.5 * (lo[0] + hi[0]), hi[1], p.v0_rel.clamp(1.0)]
        } else {
            let mut rng = EnvRng::seed_from_u64(stream_seed(seed, 0x7A4E, s as u64));
            vec![
                p.f_nom.sample(&mut rng),
                p.v_tank.sample(&mut rng),
                p.v0_rel.sample(&mut rng),
            ]
        };
        let r = nelder_mead(objective, &x0, &step, &lo, &hi, 1e-10, target, p.max_evals);
        evals += r.evals;
        if best.as_ref().is_none_or(|(_, f)| r.f < *f) {
            best = Some((r.x, r.f));
        }
        if r.f <= target {
            break;
        }
    }
    let (x, _) = best.expect("at least one start");
    let design = design_at(&x, f_dev);
    let check = tank_feasible(ctrl, design, grid, p.epsilon, p.noise_pct, seed);
    InnerResult { design, check, evals }
}

fn describe(r: &InnerResult) -> String {
    let res = &r.check.residuals;
    let mut s = format!(
        "best residuals at F_dev={}: err {:.4e}, cyclic {:.4e}, capacity {:.4e}",
        r.design.f_dev, res.err, res.cyclic, res.capacity
    );
    if let Some(d) = &r.check.diagnostic {
        s.push_str(&format!(" ({d})"));
    }
    s
}

/// Largest `F_dev` in `[0, f_dev_max]` for which the inner search finds a
/// feasible design, to within `problem.tol`.
pub fn solve_tank_design<C>(ctrl: &C, problem: &TankProblem, grid: TimeGrid, seed: u64) -> Result<DesignSolution>
where
    C: Controller + ?Sized,
{
    problem.validate("design")?;
    let at_zero = search_feasible(ctrl, problem, grid, 0.0, seed);
    if !at_zero.check.feasible {
        return Err(Error::Infeasible(format!(
            "policy cannot stabilize nominal design; {}",
            describe(&at_zero)
        )));
    }
    let top = search_feasible(ctrl, problem, grid, problem.f_dev_max, seed);
    let (best, bracket) = if top.check.feasible {
        (top, [problem.f_dev_max, problem.f_dev_max])
    } else {
        let (mut lo, mut hi) = (at_zero, problem.f_dev_max);
        while hi - lo.design.f_dev > problem.tol {
            let mid = 0.5 * (lo.design.f_dev + hi);
            let r = search_feasible(ctrl, problem, grid, mid, seed);
            log::info!("F_dev {mid:.4}: feasible {} ({})", r.check.feasible, describe(&r));
            if r.check.feasible {
                lo = r;
            } else {
                hi = mid;
            }
        }
        let f = lo.design.f_dev;
        (lo, [f, hi])
    };
    let r = best.check.residuals;
    Ok(DesignSolution {
        problem: "tank".into(),
        objective: best.design.f_dev,
        design: DesignValues::Tank(best.design),
        feasible: best.check.feasible,
        residuals: [("err", r.err), ("cyclic", r.cyclic), ("capacity", r.capacity)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        err: best.check.err,
        k: None,
        f_dev_bracket: Some(bracket),
        cost_components: None,
        candidates: Vec::new(),
        mc: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 100, 1).unwrap()
    }

    fn oracle(obs: &[f64], _t: usize) -> Vec<f64> {
        vec![obs[0] / obs[1]]
    }

    fn design(f_dev: f64) -> TankDesign {
        TankDesign {
            v_tank: 10.0,
            f_nom: 4.0,
            f_dev,
            v0: 4.0 + f_dev,
        }
    }

    #[test]
    fn error_integral_examples() {
        let mut traj = Trajectory {
            states: vec![vec![5.0]; 11],
            rewards: vec![0.0; 10],
            ..Default::default()
        };
        assert_eq!(tank_error(&traj, 5.0, 0.1), 0.0);
        assert_eq!(tank_cyclic(&traj), 0.0);
        traj.states.iter_mut().for_each(|s| s[0] = 5.05);
        assert!((tank_error(&traj, 5.0, 0.1) - 0.01).abs() < 1e-12);
        // the final state enters only the cyclic residual
        traj.states[10][0] = 5.05 * 1.02;
        assert!((tank_error(&traj, 5.0, 0.1) - 0.01).abs() < 1e-12);
        assert!((tank_cyclic(&traj) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn oracle_tracks_exactly_at_zero_deviation() {
        let c = tank_feasible(&oracle, design(0.0), grid(), 1.0, 0.0, 0);
        assert!(c.err < 1e-12 && c.cyclic_rel < 1e-12);
        assert!(c.feasible);
        assert_eq!(c.residuals.capacity, 4.0 - 10.0);
    }

    #[test]
    fn closed_valve_is_infeasible() {
        let closed = |_: &[f64], _: usize| vec![0.0];
        let c = tank_feasible(&closed, design(1.0), grid(), 1.0, 0.0, 0);
        assert!(!c.feasible);
        assert!(c.residuals.cyclic > 0.0);
        let err = solve_tank_design(&closed, &TankProblem::default(), grid(), 0).unwrap_err();
        assert!(
            err.to_string().contains("policy cannot stabilize nominal design"),
            "{err}"
        );
    }

    #[test]
    fn capacity_violation_is_reported() {
        let d = TankDesign {
            v_tank: 5.0,
            ..design(2.0)
        };
        let c = tank_feasible(&oracle, d, grid(), 1.0, 0.0, 0);
        assert_eq!(c.residuals.capacity, 1.0);
        assert!(!c.feasible);
    }

    #[test]
    fn oracle_saturates_the_search_box() {
        let p = TankProblem::default();
        let sol = solve_tank_design(&oracle, &p, grid(), 3).unwrap();
        assert_eq!(sol.objective, p.f_dev_max);
        assert!(sol.feasible);
        assert!(sol.residuals.values().all(|&r| r <= 0.0));
    }

    #[test]
    fn bisection_brackets_the_largest_feasible_deviation() {
        // a valve that cannot close below half open loses track once the
        // inflow trough drops under half the setpoint
        let floored = |obs: &[f64], _t: usize| vec![(obs[0] / obs[1]).max(0.5)];
        let p = TankProblem {
            n_starts: 2,
            max_evals: 120,
            ..Default::default()
        };
        let sol = solve_tank_design(&floored, &p, grid(), 5).unwrap();
        let [lo, hi] = sol.f_dev_bracket.unwrap();
        assert_eq!(lo, sol.objective);
        assert!(hi - lo <= p.tol && hi > lo, "{lo} {hi}");
        assert!(sol.feasible);
        assert!(!search_feasible(&floored, &p, grid(), hi, 5).check.feasible);
        let again = solve_tank_design(&floored, &p, grid(), 5).unwrap();
        assert_eq!(again.to_json(), sol.to_json());
    }

    #[test]
    fn problem_validation_names_keys() {
        let p = TankProblem {
            tol: 0.0,
            ..Default::default()
        };
        assert!(p
            .validate("design.tank")
            .unwrap_err()
            .to_string()
            .contains("design.tank.tol"));
    }
}
