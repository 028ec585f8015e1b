//! Monte-Carlo confirmation of a fixed design under measurement noise.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvRng, Environment};
use crate::error::{Error, Result};
use crate::rollout::{simulate_with_rng, stream_seed, Controller, Trajectory};

/// Per-step bands and scalar summaries across runs. Standard deviations are
/// population values, so a single run gives zero bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub n_runs: usize,
    pub state_mean: Vec<Vec<f64>>,
    pub state_std: Vec<Vec<f64>>,
    pub control_mean: Vec<Vec<f64>>,
    pub control_std: Vec<Vec<f64>>,
    pub reward_mean: Vec<f64>,
    pub reward_std: Vec<f64>,
    /// Mean of the case-specific error integral.
    pub mean_err: f64,
    pub std_err: f64,
    /// Fraction of runs violating a path or end-point constraint.
    pub violation_rate: f64,
    pub total_reward_mean: f64,
    pub total_reward_std: f64,
}

/// Compact form stored alongside a design solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n_runs: usize,
    pub noise_pct: f64,
    pub mean_err: f64,
    pub violation_rate: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Column-wise mean and std of `rows[run][step][component]`.
fn bands(rows: &[&Vec<Vec<f64>>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let steps = rows[0].len();
    let mut mean = Vec::with_capacity(steps);
    let mut std = Vec::with_capacity(steps);
    for t in 0..steps {
        let dim = rows[0][t].len();
        let (m, s): (Vec<f64>, Vec<f64>) = (0..dim).map(|i| mean_std(rows.iter().map(|r| r[t][i]), n)).unzip();
        mean.push(m);
        std.push(s);
    }
    (mean, std)
}

/// Runs `n_runs` episodes of `ctrl` on environments from `build`. Run `r`
/// uses the RNG stream `(seed, r)`; results are reduced in run order, so the
/// statistics do not depend on the worker count. `metric` maps a trajectory
/// to its error integral and whether it violated a constraint.
pub fn monte_carlo<E, B, C, M>(build: B, ctrl: &C, n_runs: usize, seed: u64, metric: M) -> Result<McStats>
where
    E: Environment,
    B: Fn() -> Result<E> + Sync,
    C: Controller + ?Sized,
    M: Fn(&Trajectory) -> (f64, bool) + Sync,
{
    if n_runs == 0 {
        return Err(Error::Input("Monte-Carlo evaluation needs at least one run".into()));
    }
    let trajs: Vec<Trajectory> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut env = build()?;
            let mut rng = EnvRng::seed_from_u64(stream_seed(seed, 0x4D43, r as u64));
            simulate_with_rng(&mut env, ctrl, &mut rng)
        })
        .collect::<Result<_>>()?;
    let n = n_runs as f64;
    let (state_mean, state_std) = bands(&trajs.iter().map(|t| &t.states).collect::<Vec<_>>());
    let (control_mean, control_std) = bands(&trajs.iter().map(|t| &t.applied_actions).collect::<Vec<_>>());
    let steps = trajs[0].len();
    let (reward_mean, reward_std) = (0..steps)
        .map(|k| mean_std(trajs.iter().map(|t| t.rewards[k]), n))
        .unzip();
    let metrics: Vec<(f64, bool)> = trajs.iter().map(&metric).collect();
    let (mean_err, std_err) = mean_std(metrics.iter().map(|m| m.0), n);
    let violation_rate = metrics.iter().filter(|m| m.1).count() as f64 / n;
    let (total_reward_mean, total_reward_std) = mean_std(trajs.iter().map(|t| t.total_return), n);
    Ok(McStats {
        n_runs,
        state_mean,
        state_std,
        control_mean,
        control_std,
        reward_mean,
        reward_std,
        mean_err,
        std_err,
        violation_rate,
        total_reward_mean,
        total_reward_std,
    })
}

impl McStats {
    pub fn summary(&self, noise_pct: f64) -> McSummary {
        McSummary {
            n_runs: self.n_runs,
            noise_pct,
            mean_err: self.mean_err,
            violation_rate: self.violation_rate,
        }
    }
}
