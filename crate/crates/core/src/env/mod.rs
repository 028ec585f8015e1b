//! Design-parameterized process environments on a fixed control grid.

mod cstr;
mod sampling;
mod tank;

pub use cstr::{CstrDesign, CstrEnv, CstrParams, CSTR_PERIOD, TEMP_PENALTY};
pub use sampling::{CstrRanges, CstrSampler, EnvFactory, Interval, TankRanges, TankSampler};
pub use tank::{TankDesign, TankEnv, TANK_REWARD_WEIGHT};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RNG used for every stochastic element of a rollout.
pub type EnvRng = ChaCha8Rng;

/// Uniform control grid `t_k = k * dt`, `dt = t_final / n_steps`, with
/// `substeps` RK4 steps per control interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
    pub substeps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize, substeps: usize) -> Result<Self> {
        let g = Self {
            t_final,
            n_steps,
            substeps,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::Input(format!("t_final must be positive, got {}", self.t_final)));
        }
        if self.n_steps == 0 || self.substeps == 0 {
            return Err(Error::Input("n_steps and substeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// Time at grid index `k`.
    pub fn time(&self, k: usize) -> f64 {
        self.t_final * k as f64 / self.n_steps as f64
    }
}

/// One classical fourth-order Runge-Kutta step of `dx/dt = f(t, x)`.
pub fn rk4_step<F>(f: F, x: &[f64], t: f64, dt: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let k1 = f(t, x);
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + 0.5 * dt * k).collect();
    let k2 = f(t + 0.5 * dt, &x2);
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(xi, k)| xi + 0.5 * dt * k).collect();
    let k3 = f(t + 0.5 * dt, &x3);
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(xi, k)| xi + dt * k).collect();
    let k4 = f(t + dt, &x4);
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates one control interval `[t0, t0 + dt]` in `substeps` RK4 steps.
/// `step` is only used to label a failure.
pub(crate) fn integrate<F>(f: F, x: &[f64], t0: f64, dt: f64, substeps: usize, step: usize) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let h = dt / substeps as f64;
    let mut x = x.to_vec();
    for s in 0..substeps {
        x = rk4_step(&f, &x, t0 + s as f64 * h, h);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step, state: x });
        }
    }
    Ok(x)
}

/// Result of advancing an environment by one control interval.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Disturbance values at the start of the interval.
    pub info: Vec<f64>,
}

/// A finite-horizon control environment with design-dependent dynamics.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn n_controls(&self) -> usize;
    fn grid(&self) -> TimeGrid;
    fn action_low(&self) -> Vec<f64>;
    fn action_high(&self) -> Vec<f64>;
    /// Restores the initial state and returns the first observation.
    fn reset(&mut self, rng: &mut EnvRng) -> Vec<f64>;
    fn step(&mut self, u: &[f64], rng: &mut EnvRng) -> Result<StepResult>;
    /// Noise-free physical state.
    fn state(&self) -> Vec<f64>;
    fn state_names(&self) -> Vec<&'static str>;
    fn control_names(&self) -> Vec<&'static str>;
}

/// Frozen per-dimension observation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

pub const MIN_STD: f64 = 1e-8;

impl ObsNormalizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension {
                context: "normalizer std",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::Input("normalizer statistics must be finite".into()));
        }
        let std = std.into_iter().map(|s| s.max(MIN_STD)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and std of each column of `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Input("no observations to fit".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension {
                    context: "observation row",
                    expected: dim,
                    got: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        Self::new(mean, var.into_iter().map(f64::sqrt).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_trivial_fields() {
        let x = rk4_step(|_, x| vec![0.0; x.len()], &[1.5, -2.0], 0.0, 0.3);
        assert_eq!(x, vec![1.5, -2.0]);
        let x = rk4_step(|_, _| vec![1.0], &[2.0], 0.0, 0.1);
        assert!((x[0] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn rk4_exponential_decay() {
        let mut x = vec![1.0];
        for k in 0..100 {
            x = rk4_step(|_, x| vec![-x[0]], &x, k as f64 * 0.01, 0.01);
        }
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn integrate_reports_step_on_blowup() {
        let err = integrate(|_, x| vec![x[0] * x[0] * 1e300], &[1e10], 0.0, 1.0, 4, 7).unwrap_err();
        assert!(matches!(err, Error::Integration { step: 7, .. }));
    }

    #[test]
    fn grid_spacing() {
        let g = TimeGrid::new(1.0, 100, 1).unwrap();
        assert!((g.dt() * g.n_steps as f64 - g.t_final).abs() <= f64::EPSILON);
        assert_eq!(g.time(100), 1.0);
        assert!(TimeGrid::new(0.0, 10, 1).is_err());
        assert!(TimeGrid::new(1.0, 10, 0).is_err());
    }

    #[test]
    fn normalizer_basics() {
        let n = ObsNormalizer::new(vec![1.0, 0.0], vec![0.5, 2.0]).unwrap();
        assert_eq!(n.normalize(&[1.0, 4.0]), vec![0.0, 2.0]);
        let x = [3.7, -1.25];
        let back = n.denormalize(&n.normalize(&x));
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        let z = ObsNormalizer::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(z.std(), &[MIN_STD]);
    }

    #[test]
    fn normalizer_fit() {
        let n = ObsNormalizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(n.mean(), &[2.0, 5.0]);
        assert_eq!(n.std(), &[1.0, MIN_STD]);
        assert!(ObsNormalizer::fit(&[]).is_err());
    }
}
