//! Per-episode design sampling, so one policy is trained across a family of
//! designs rather than a single plant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CstrDesign, CstrEnv, CstrParams, EnvRng, Environment, TankDesign, TankEnv, TimeGrid};
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::config(
                path,
                format!("invalid interval [{}, {}]", self.lo, self.hi),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut EnvRng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Builds a fresh environment for each training episode.
pub trait EnvFactory: Sync {
    type Env: Environment;

    fn sample(&self, rng: &mut EnvRng) -> Result<Self::Env>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankRanges {
    pub f_nom: Interval,
    /// Upper end is additionally capped at the sampled `f_nom`, keeping the
    /// inflow non-negative.
    pub f_dev: Interval,
    pub v_tank: Interval,
    /// Initial volume relative to the setpoint.
    pub v0_rel: Interval,
}

impl Default for TankRanges {
    fn default() -> Self {
        Self {
            f_nom: Interval::new(2.0, 6.0),
            f_dev: Interval::new(0.0, 5.0),
            v_tank: Interval::new(6.0, 12.0),
            v0_rel: Interval::new(0.95, 1.05),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TankSampler {
    pub ranges: TankRanges,
    pub grid: TimeGrid,
    pub noise_pct: f64,
}

impl TankSampler {
    pub fn sample_design(&self, rng: &mut EnvRng) -> TankDesign {
        let r = &self.ranges;
        let f_nom = r.f_nom.sample(rng);
        let f_dev = Interval::new(r.f_dev.lo.min(f_nom), r.f_dev.hi.min(f_nom)).sample(rng);
        let sp = f_nom + f_dev;
        let v0 = sp * r.v0_rel.sample(rng);
        let v_tank = r.v_tank.sample(rng).max(sp);
        TankDesign {
            v_tank,
            f_nom,
            f_dev,
            v0,
        }
    }
}

impl EnvFactory for TankSampler {
    type Env = TankEnv;

    fn sample(&self, rng: &mut EnvRng) -> Result<TankEnv> {
        Ok(TankEnv::new(self.sample_design(rng), self.grid, self.noise_pct))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrRanges {
    pub v: Interval,
    pub m_nom: Interval,
    /// `m_dev / m_nom`.
    pub m_dev_frac: Interval,
    pub ca0_nom: Interval,
    /// `ca0_dev / ca0_nom`.
    pub ca0_dev_frac: Interval,
}

impl Default for CstrRanges {
    fn default() -> Self {
        Self {
            v: Interval::new(600.0, 1200.0),
            m_nom: Interval::new(5.0, 20.0),
            m_dev_frac: Interval::new(0.0, 1.0),
            ca0_nom: Interval::new(1.0, 3.0),
            ca0_dev_frac: Interval::new(0.0, 1.0),
        }
    }
}

/// Training-time CSTR sampler. The settling tank is never used: the
/// controller has to cope with the full flow oscillation.
#[derive(Clone, Debug)]
pub struct CstrSampler {
    pub ranges: CstrRanges,
    pub params: CstrParams,
    pub grid: TimeGrid,
    pub noise_pct: f64,
}

impl CstrSampler {
    pub fn sample_design(&self, rng: &mut EnvRng) -> Result<CstrDesign> {
        let r = &self.ranges;
        let v = r.v.sample(rng);
        let m_nom = r.m_nom.sample(rng);
        let m_dev = m_nom * r.m_dev_frac.sample(rng).min(1.0);
        let ca0_nom = r.ca0_nom.sample(rng);
        let ca0_dev = ca0_nom * r.ca0_dev_frac.sample(rng).min(1.0);
        CstrDesign::new(v, m_nom, m_dev, ca0_nom, ca0_dev, Vec::new(), false)
    }
}

impl EnvFactory for CstrSampler {
    type Env = CstrEnv;

    fn sample(&self, rng: &mut EnvRng) -> Result<CstrEnv> {
        CstrEnv::new(self.sample_design(rng)?, self.params, self.grid, self.noise_pct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn tank_samples_respect_ranges() {
        let s = TankSampler {
            ranges: TankRanges::default(),
            grid: TimeGrid::new(1.0, 100, 1).unwrap(),
            noise_pct: 0.0,
        };
        let mut rng = EnvRng::seed_from_u64(4);
        for _ in 0..500 {
            let d = s.sample_design(&mut rng);
            assert!((2.0..=6.0).contains(&d.f_nom));
            assert!(d.f_dev <= d.f_nom && d.f_dev <= 5.0 && d.f_dev >= 0.0);
            assert!(d.v_tank >= d.setpoint());
            assert!(d.v0 >= 0.95 * d.setpoint() - 1e-12 && d.v0 <= 1.05 * d.setpoint() + 1e-12);
        }
    }

    #[test]
    fn cstr_samples_are_valid_designs() {
        let s = CstrSampler {
            ranges: CstrRanges::default(),
            params: CstrParams::default(),
            grid: TimeGrid::new(100.0, 100, 10).unwrap(),
            noise_pct: 0.0,
        };
        let mut rng = EnvRng::seed_from_u64(4);
        for _ in 0..200 {
            let d = s.sample_design(&mut rng).unwrap();
            assert!(d.m_dev <= d.m_nom && d.ca0_dev <= d.ca0_nom);
            assert_eq!(d.settling_steps(), 0);
        }
    }

    #[test]
    fn interval_json_is_a_pair() {
        let i: Interval = serde_json::from_str("[1.5, 2.0]").unwrap();
        assert_eq!(i, Interval::new(1.5, 2.0));
        assert_eq!(serde_json::to_string(&i).unwrap(), "[1.5,2.0]");
        assert!(Interval::new(2.0, 1.0).validate("x").is_err());
    }
}
