//! Jacketed CSTR running a first-order endothermic reaction. The jacket
//! temperature `T_H` is the manipulated variable; feed flow and feed
//! concentration oscillate with a 100 time-unit period, and an optional
//! settling tank flattens the flow oscillation while it is in use.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{integrate, EnvRng, Environment, StepResult, TimeGrid};
use crate::error::{Error, Result};

/// Reward weight on each kelvin above the temperature ceiling.
pub const TEMP_PENALTY: f64 = 100.0;

/// Disturbance period in time units.
pub const CSTR_PERIOD: f64 = 100.0;

/// Physical constants. The defaults are a self-consistent set: open-loop
/// stable, able to exceed the 450 K ceiling at full jacket temperature, and
/// able to drive `C_A` close to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CstrParams {
    pub rho: f64,
    pub k0: f64,
    pub ea: f64,
    pub r_gas: f64,
    /// Negative: the reaction absorbs heat.
    pub dh_rxn: f64,
    pub cp: f64,
    pub ua: f64,
    /// Feed temperature.
    pub t0: f64,
    pub t_max: f64,
    pub th_min: f64,
    pub th_max: f64,
    /// Initial reactor temperature.
    pub t_init: f64,
    /// Initial `C_A` as a multiple of the nominal feed concentration.
    pub ca_init_factor: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            rho: 0.25,
            k0: 5.0e6,
            ea: 6000.0 * 8.314,
            r_gas: 8.314,
            dh_rxn: -1.25,
            cp: 1.0,
            ua: 10.0,
            t0: 580.0,
            t_max: 450.0,
            th_min: 200.0,
            th_max: 500.0,
            t_init: 420.0,
            ca_init_factor: 1.5,
        }
    }
}

impl CstrParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("k0", self.k0),
            ("ea", self.ea),
            ("r_gas", self.r_gas),
            ("cp", self.cp),
            ("ua", self.ua),
            ("t0", self.t0),
            ("t_max", self.t_max),
            ("th_min", self.th_min),
            ("t_init", self.t_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.th_max > self.th_min) {
            return Err(Error::config("th_max", "must exceed th_min"));
        }
        if !(self.ca_init_factor >= 0.0) || !self.dh_rxn.is_finite() {
            return Err(Error::config("ca_init_factor", "must be non-negative"));
        }
        Ok(())
    }

    /// Arrhenius rate constant at temperature `temp`.
    pub fn rate_constant(&self, temp: f64) -> f64 {
        self.k0 * (-self.ea / (self.r_gas * temp)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrDesign {
    pub v: f64,
    pub m_nom: f64,
    pub m_dev: f64,
    pub ca0_nom: f64,
    pub ca0_dev: f64,
    /// Settling-tank use per control interval; empty means never used.
    pub y_schedule: Vec<bool>,
    pub y_exists: bool,
}

impl CstrDesign {
    pub fn new(
        v: f64,
        m_nom: f64,
        m_dev: f64,
        ca0_nom: f64,
        ca0_dev: f64,
        y_schedule: Vec<bool>,
        y_exists: bool,
    ) -> Result<Self> {
        let d = Self {
            v,
            m_nom,
            m_dev,
            ca0_nom,
            ca0_dev,
            y_schedule,
            y_exists,
        };
        d.validate()?;
        Ok(d)
    }

    /// Settling tank in use for the first `k` intervals only.
    pub fn with_prefix(
        v: f64,
        m_nom: f64,
        m_dev: f64,
        ca0_nom: f64,
        ca0_dev: f64,
        n_steps: usize,
        k: usize,
    ) -> Result<Self> {
        let schedule = (0..n_steps).map(|t| t < k).collect();
        Self::new(v, m_nom, m_dev, ca0_nom, ca0_dev, schedule, k > 0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("v", self.v),
            ("m_nom", self.m_nom),
            ("m_dev", self.m_dev),
            ("ca0_nom", self.ca0_nom),
            ("ca0_dev", self.ca0_dev),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::Input(format!("{name} must be non-negative, got {x}")));
            }
        }
        if !(self.v > 0.0) {
            return Err(Error::Input("reactor volume must be positive".into()));
        }
        if self.m_dev > self.m_nom {
            return Err(Error::Input(format!(
                "m_dev {} exceeds m_nom {}",
                self.m_dev, self.m_nom
            )));
        }
        if self.ca0_dev > self.ca0_nom {
            return Err(Error::Input(format!(
                "ca0_dev {} exceeds ca0_nom {}",
                self.ca0_dev, self.ca0_nom
            )));
        }
        if !self.y_exists {
            if let Some(t) = self.y_schedule.iter().position(|&y| y) {
                return Err(Error::Input(format!("settling tank used at step {t} but Y_S,f = 0")));
            }
        }
        Ok(())
    }

    pub fn settling(&self, t: usize) -> bool {
        self.y_schedule.get(t).copied().unwrap_or(false)
    }

    /// Number of intervals the settling tank is used.
    pub fn settling_steps(&self) -> usize {
        self.y_schedule.iter().filter(|&&y| y).count()
    }

    fn phase(tau: f64) -> f64 {
        (2.0 * PI * tau / CSTR_PERIOD).sin()
    }

    pub fn feed_concentration(&self, tau: f64) -> f64 {
        self.ca0_nom + self.ca0_dev * Self::phase(tau)
    }

    pub fn mass_flow(&self, tau: f64, settling: bool) -> f64 {
        let y = if settling { 1.0 } else { 0.0 };
        self.m_nom + self.m_dev * (1.0 - y) * Self::phase(tau)
    }
}

/// Right-hand side of the `[C_A, T]` balances.
pub(crate) fn cstr_rhs(
    params: &CstrParams,
    design: &CstrDesign,
    settling: bool,
    th: f64,
    tau: f64,
    x: &[f64],
) -> Vec<f64> {
    let (ca, temp) = (x[0], x[1]);
    let m = design.mass_flow(tau, settling);
    let ca0 = design.feed_concentration(tau);
    let rate = params.rate_constant(temp) * ca;
    let v = design.v;
    let d_ca = m / (params.rho * v) * (ca0 - ca) - rate;
    let d_t = (m * params.cp * (params.t0 - temp) + v * params.dh_rxn * rate + params.ua * (th - temp))
        / (v * params.rho * params.cp);
    vec![d_ca, d_t]
}

#[derive(Clone, Debug)]
pub struct CstrEnv {
    design: CstrDesign,
    params: CstrParams,
    grid: TimeGrid,
    noise_pct: f64,
    state: [f64; 2],
    meas: [f64; 2],
    ca_meas_prev: f64,
    t: usize,
}

impl CstrEnv {
    pub fn new(design: CstrDesign, params: CstrParams, grid: TimeGrid, noise_pct: f64) -> Result<Self> {
        design.validate()?;
        params.validate()?;
        let init = [params.ca_init_factor * design.ca0_nom, params.t_init];
        Ok(Self {
            design,
            params,
            grid,
            noise_pct,
            state: init,
            meas: init,
            ca_meas_prev: init[0],
            t: 0,
        })
    }

    pub fn design(&self) -> &CstrDesign {
        &self.design
    }

    pub fn params(&self) -> &CstrParams {
        &self.params
    }

    fn measure(&self, rng: &mut EnvRng) -> [f64; 2] {
        if self.noise_pct > 0.0 {
            let mut out = self.state;
            for v in &mut out {
                let xi: f64 = rng.sample(StandardNormal);
                *v *= 1.0 + self.noise_pct / 100.0 * xi;
            }
            out
        } else {
            self.state
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.meas[0],
            self.ca_meas_prev,
            self.meas[1],
            self.design.v,
            self.design.feed_concentration(self.grid.time(self.t)),
            0.0,
        ]
    }
}

impl Environment for CstrEnv {
    fn obs_dim(&self) -> usize {
        6
    }

    fn n_controls(&self) -> usize {
        1
    }

    fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn action_low(&self) -> Vec<f64> {
        vec![self.params.th_min]
    }

    fn action_high(&self) -> Vec<f64> {
        vec![self.params.th_max]
    }

    fn reset(&mut self, rng: &mut EnvRng) -> Vec<f64> {
        self.state = [self.params.ca_init_factor * self.design.ca0_nom, self.params.t_init];
        self.t = 0;
        self.meas = self.measure(rng);
        self.ca_meas_prev = self.meas[0];
        self.observation()
    }

    fn step(&mut self, u: &[f64], rng: &mut EnvRng) -> Result<StepResult> {
        let th = u[0].clamp(self.params.th_min, self.params.th_max);
        let t0 = self.grid.time(self.t);
        let settling = self.design.settling(self.t);
        let info = vec![self.design.mass_flow(t0, settling), self.design.feed_concentration(t0)];
        let (params, design) = (&self.params, &self.design);
        let next = integrate(
            |tau, x| cstr_rhs(params, design, settling, th, tau, x),
            &self.state,
            t0,
            self.grid.dt(),
            self.grid.substeps,
            self.t,
        )?;
        let mut ca = next[0];
        if ca < 0.0 {
            log::warn!("C_A {ca} below zero at step {}, floored", self.t);
            ca = 0.0;
        }
        self.state = [ca, next[1]];
        self.t += 1;
        self.ca_meas_prev = self.meas[0];
        self.meas = self.measure(rng);
        let over = (self.state[1] - self.params.t_max).max(0.0);
        Ok(StepResult {
            next_state: self.state.to_vec(),
            observation: self.observation(),
            reward: -ca - TEMP_PENALTY * over,
            info,
        })
    }

    fn state(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn state_names(&self) -> Vec<&'static str> {
        vec!["C_A", "T"]
    }

    fn control_names(&self) -> Vec<&'static str> {
        vec!["T_H"]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grid() -> TimeGrid {
        TimeGrid::new(100.0, 100, 10).unwrap()
    }

    fn design(k: usize) -> CstrDesign {
        CstrDesign::with_prefix(750.0, 15.0, 10.0, 2.0, 1.0, 100, k).unwrap()
    }

    #[test]
    fn schedule_coupling_rejected() {
        let err = CstrDesign::new(750.0, 10.0, 5.0, 2.0, 1.0, vec![false, true], false).unwrap_err();
        assert!(err.to_string().contains("step 1"));
        assert!(CstrDesign::new(750.0, 10.0, 11.0, 2.0, 1.0, vec![], false).is_err());
        assert!(CstrDesign::new(750.0, 10.0, 5.0, 2.0, 3.0, vec![], false).is_err());
    }

    #[test]
    fn settling_tank_flattens_flow() {
        let d = design(100);
        for k in 0..=1000 {
            let tau = k as f64 * 0.1;
            assert_eq!(d.mass_flow(tau, true), 15.0);
        }
        assert!((design(0).mass_flow(25.0, false) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn zero_concentration_gives_zero_reward() {
        let mut d = design(0);
        d.ca0_nom = 0.0;
        d.ca0_dev = 0.0;
        d.m_nom = 5.0;
        d.m_dev = 0.0;
        let mut env = CstrEnv::new(d, CstrParams::default(), grid(), 0.0).unwrap();
        let mut rng = EnvRng::seed_from_u64(1);
        env.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..100 {
            let s = env.step(&[200.0], &mut rng).unwrap();
            assert!(s.next_state[1] <= 450.0);
            total += s.reward;
        }
        assert_eq!(total, 0.0);
    }

    #[test]
    fn temperature_excess_penalized() {
        let mut params = CstrParams {
            t_init: 451.0,
            ca_init_factor: 0.0,
            ..Default::default()
        };
        let mut d = design(0);
        d.ca0_nom = 0.0;
        d.ca0_dev = 0.0;
        d.m_nom = 0.0;
        d.m_dev = 0.0;
        params.ua = 1e-12;
        let mut env = CstrEnv::new(d, params, grid(), 0.0).unwrap();
        let mut rng = EnvRng::seed_from_u64(1);
        env.reset(&mut rng);
        let s = env.step(&[451.0], &mut rng).unwrap();
        assert!((s.reward + 100.0).abs() < 1e-6, "{}", s.reward);
    }

    #[test]
    fn observation_layout() {
        let mut env = CstrEnv::new(design(0), CstrParams::default(), grid(), 0.0).unwrap();
        let mut rng = EnvRng::seed_from_u64(1);
        let obs = env.reset(&mut rng);
        assert_eq!(obs, vec![3.0, 3.0, 420.0, 750.0, 2.0, 0.0]);
        let s = env.step(&[500.0], &mut rng).unwrap();
        assert_eq!(s.observation[1], 3.0);
        assert_eq!(s.observation[0], s.next_state[0]);
        assert_eq!(s.info, vec![15.0, 2.0]);
    }

    #[test]
    fn full_jacket_can_cross_ceiling_and_deplete() {
        let mut env = CstrEnv::new(design(0), CstrParams::default(), grid(), 0.0).unwrap();
        let mut rng = EnvRng::seed_from_u64(1);
        env.reset(&mut rng);
        let mut t_max = 0.0f64;
        for _ in 0..100 {
            let s = env.step(&[500.0], &mut rng).unwrap();
            t_max = t_max.max(s.next_state[1]);
        }
        assert!(t_max > 450.0);
        assert!(env.state()[0] < 0.05);

        // the hot feed overwhelms full cooling at the flow peak unless the
        // settling tank flattens the flow
        let mut peak = |k: usize| {
            let d = CstrDesign::with_prefix(600.0, 20.0, 20.0, 3.0, 3.0, 100, k).unwrap();
            let mut env = CstrEnv::new(d, CstrParams::default(), grid(), 0.0).unwrap();
            env.reset(&mut rng);
            (0..100)
                .map(|_| env.step(&[200.0], &mut rng).unwrap().next_state[1])
                .fold(0.0f64, f64::max)
        };
        assert!(peak(0) > 450.0);
        assert!(peak(50) < 450.0);
    }
}
