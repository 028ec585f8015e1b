//! Buffer tank with a sinusoidal inflow and a valve-throttled outflow
//! `F_out = a * V`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{integrate, EnvRng, Environment, StepResult, TimeGrid};
use crate::error::Result;

/// Weight on the squared setpoint error in the per-step reward.
pub const TANK_REWARD_WEIGHT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankDesign {
    pub v_tank: f64,
    pub f_nom: f64,
    pub f_dev: f64,
    pub v0: f64,
}

impl TankDesign {
    pub fn setpoint(&self) -> f64 {
        self.f_nom + self.f_dev
    }

    /// Inflow at time `tau`; one full period per unit time.
    pub fn inflow(&self, tau: f64) -> f64 {
        self.f_nom + self.f_dev * (2.0 * PI * tau).sin()
    }
}

#[derive(Clone, Debug)]
pub struct TankEnv {
    design: TankDesign,
    grid: TimeGrid,
    noise_pct: f64,
    volume: f64,
    measured: f64,
    measured_prev: f64,
    t: usize,
}

impl TankEnv {
    pub fn new(design: TankDesign, grid: TimeGrid, noise_pct: f64) -> Self {
        Self {
            design,
            grid,
            noise_pct,
            volume: design.v0,
            measured: design.v0,
            measured_prev: design.v0,
            t: 0,
        }
    }

    pub fn design(&self) -> &TankDesign {
        &self.design
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    fn measure(&self, v: f64, rng: &mut EnvRng) -> f64 {
        if self.noise_pct > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            v * (1.0 + self.noise_pct / 100.0 * xi)
        } else {
            v
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.design.inflow(self.grid.time(self.t)),
            self.design.setpoint(),
            self.measured,
            self.measured_prev,
        ]
    }
}

impl Environment for TankEnv {
    fn obs_dim(&self) -> usize {
        4
    }

    fn n_controls(&self) -> usize {
        1
    }

    fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn action_low(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn reset(&mut self, rng: &mut EnvRng) -> Vec<f64> {
        self.volume = self.design.v0;
        self.t = 0;
        self.measured = self.measure(self.volume, rng);
        self.measured_prev = self.measured;
        self.observation()
    }

    fn step(&mut self, u: &[f64], rng: &mut EnvRng) -> Result<StepResult> {
        let a = u[0].clamp(0.0, 1.0);
        let design = self.design;
        let t0 = self.grid.time(self.t);
        let info = vec![design.inflow(t0)];
        let next = integrate(
            |tau, x| vec![design.inflow(tau) - a * x[0]],
            &[self.volume],
            t0,
            self.grid.dt(),
            self.grid.substeps,
            self.t,
        )?;
        let mut v = next[0];
        if v < 0.0 {
            log::warn!("tank volume {v} below zero at step {}, floored", self.t);
            v = 0.0;
        }
        self.volume = v;
        self.t += 1;
        self.measured_prev = self.measured;
        self.measured = self.measure(v, rng);
        let err = v - design.setpoint();
        Ok(StepResult {
            next_state: vec![v],
            observation: self.observation(),
            reward: -TANK_REWARD_WEIGHT * err * err,
            info,
        })
    }

    fn state(&self) -> Vec<f64> {
        vec![self.volume]
    }

    fn state_names(&self) -> Vec<&'static str> {
        vec!["V"]
    }

    fn control_names(&self) -> Vec<&'static str> {
        vec!["a"]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> EnvRng {
        EnvRng::seed_from_u64(0)
    }

    fn design(f_nom: f64, f_dev: f64, v0: f64) -> TankDesign {
        TankDesign {
            v_tank: 20.0,
            f_nom,
            f_dev,
            v0,
        }
    }

    fn run_constant(d: TankDesign, grid: TimeGrid, a: f64) -> f64 {
        let mut env = TankEnv::new(d, grid, 0.0);
        let mut r = rng();
        env.reset(&mut r);
        for _ in 0..grid.n_steps {
            env.step(&[a], &mut r).unwrap();
        }
        env.volume()
    }

    #[test]
    fn closed_valve_accumulates() {
        let grid = TimeGrid::new(1.0, 100, 1).unwrap();
        let v = run_constant(design(1.0, 0.0, 0.0), grid, 0.0);
        assert!((v - 1.0).abs() < 1e-9);
        let v = run_constant(design(2.5, 0.0, 3.0), grid, 0.0);
        assert!((v - 5.5).abs() < 1e-9);
    }

    #[test]
    fn inflow_sinusoid_phase() {
        let d = design(3.0, 2.0, 0.0);
        assert_eq!(d.inflow(0.0), 3.0);
        assert!((d.inflow(0.25) - 5.0).abs() < 1e-12);
        assert!((d.inflow(1.0) - d.inflow(0.0)).abs() < 1e-9);
    }

    #[test]
    fn open_valve_linear_ode() {
        let grid = TimeGrid::new(1.0, 100, 1).unwrap();
        let v = run_constant(design(1.0, 0.0, 0.0), grid, 1.0);
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
    }

    #[test]
    fn observation_layout_and_reward() {
        let grid = TimeGrid::new(1.0, 100, 1).unwrap();
        let d = design(3.0, 1.0, 4.0);
        let mut env = TankEnv::new(d, grid, 0.0);
        let mut r = rng();
        let obs = env.reset(&mut r);
        assert_eq!(obs, vec![3.0, 4.0, 4.0, 4.0]);
        let s = env.step(&[0.75], &mut r).unwrap();
        assert_eq!(s.observation[2], s.next_state[0]);
        assert_eq!(s.observation[3], 4.0);
        let e = s.next_state[0] - 4.0;
        assert_eq!(s.reward, -10.0 * e * e);
        assert!(s.reward <= 0.0);
    }

    #[test]
    fn measurement_noise_is_multiplicative() {
        let grid = TimeGrid::new(1.0, 100, 1).unwrap();
        let d = design(3.0, 0.0, 5.0);
        let mut env = TankEnv::new(d, grid, 2.0);
        let mut r = rng();
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| env.reset(&mut r)[2]).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 5.0).abs() < 0.01);
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn rk4_order_on_tank() {
        // smooth closed-loop-free segment: a = 0.5, sinusoidal inflow
        let d = design(3.0, 2.0, 1.0);
        let reference = run_constant(d, TimeGrid::new(1.0, 10, 64).unwrap(), 0.5);
        let coarse = run_constant(d, TimeGrid::new(1.0, 10, 1).unwrap(), 0.5);
        let fine = run_constant(d, TimeGrid::new(1.0, 10, 2).unwrap(), 0.5);
        let ratio = (coarse - reference).abs() / (fine - reference).abs();
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    }
}
