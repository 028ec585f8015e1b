use serde::{Deserialize, Serialize};

use crate::env::{EnvRng, ObsNormalizer};
use crate::error::Result;
use crate::rollout::{Action, Controller};

/// Proportional-derivative law `u = bias + kp*e + kd*(e - e_prev)/dt`,
/// clipped to the actuator range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdController {
    pub kp: f64,
    pub kd: f64,
    #[serde(default)]
    pub bias: f64,
    pub low: f64,
    pub high: f64,
}

impl PdController {
    pub fn unclipped(&self, e: f64, e_prev: f64, dt: f64) -> f64 {
        self.bias + self.kp * e + self.kd * (e - e_prev) / dt
    }

    pub fn act(&self, e: f64, e_prev: f64, dt: f64) -> f64 {
        self.unclipped(e, e_prev, dt).clamp(self.low, self.high)
    }
}

/// Which observation entries form the error signal, per case study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PdWiring {
    /// `e = V_meas - V_SP` from the tank observation `[F_in, V_SP, V, V_prev]`.
    /// With `feedforward`, the inversion `F_in / V_SP` is added to the PD
    /// output so the loop only corrects residual error.
    Tank { feedforward: bool },
    /// `e = T_ref - T_meas` from the CSTR observation. The observation has no
    /// previous temperature, so the derivative term is inactive.
    Cstr { t_ref: f64 },
}

/// PD controller reading its error from raw environment observations.
#[derive(Clone, Debug)]
pub struct PdPolicy {
    pub pd: PdController,
    pub wiring: PdWiring,
    pub dt: f64,
}

impl PdPolicy {
    fn errors(&self, obs: &[f64]) -> (f64, f64) {
        match self.wiring {
            PdWiring::Tank { .. } => (obs[2] - obs[1], obs[3] - obs[1]),
            PdWiring::Cstr { t_ref } => (t_ref - obs[2], t_ref - obs[2]),
        }
    }
}

impl Controller for PdPolicy {
    fn act(&self, obs: &[f64], _t: usize, _rng: &mut EnvRng) -> Result<Action> {
        let (e, e_prev) = self.errors(obs);
        let ff = match self.wiring {
            PdWiring::Tank { feedforward: true } => obs[0] / obs[1],
            _ => 0.0,
        };
        let u = (ff + self.pd.unclipped(e, e_prev, self.dt)).clamp(self.pd.low, self.pd.high);
        Ok(Action::deterministic(vec![u]))
    }
}

/// Labelled state/action pairs for behavioral cloning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Demonstrations {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Demonstrations {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn normalizer(&self) -> Result<ObsNormalizer> {
        ObsNormalizer::fit(&self.states)
    }
}
