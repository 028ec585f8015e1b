//! Run configuration: case-specific defaults, a deep merge of the user's JSON
//! over them, and range validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::design::{CstrProblem, TankProblem};
use crate::env::{CstrParams, CstrRanges, TankRanges, TimeGrid};
use crate::error::{Error, Result};
use crate::optim::LrSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Tank,
    Cstr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub t_final: f64,
    pub n_steps: usize,
    pub substeps: usize,
    /// Measurement noise during training rollouts and demonstrations.
    pub noise_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CstrParams>,
}

impl EnvSection {
    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            t_final: self.t_final,
            n_steps: self.n_steps,
            substeps: self.substeps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub hidden: Vec<usize>,
    /// Std floor as a fraction of the actuator range.
    pub std_floor_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub kp: f64,
    pub kd: f64,
    pub bias: f64,
    /// Tank only: add the `F_in / V_SP` inversion to the PD output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedforward: Option<bool>,
    /// Temperature reference of the CSTR demonstrator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ref: Option<f64>,
    pub n_episodes: usize,
    /// Std of the perturbation added to applied demonstrator actions, as a
    /// fraction of the actuator range.
    pub action_noise: f64,
    pub n_iter: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub schedule: LrSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tank_ranges: Option<TankRanges>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cstr_ranges: Option<CstrRanges>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tank: Option<TankProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cstr: Option<CstrProblem>,
    /// Monte-Carlo confirmation runs.
    pub n_runs: usize,
    pub mc_noise_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: Case,
    pub seed: u64,
    pub env: EnvSection,
    pub policy: PolicySection,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub design: DesignSection,
}

impl RunConfig {
    pub fn defaults(case: Case) -> Self {
        let policy = PolicySection {
            hidden: vec![20, 20],
            std_floor_frac: 0.01,
        };
        match case {
            Case::Tank => Self {
                case,
                seed: 7,
                env: EnvSection {
                    t_final: 1.0,
                    n_steps: 100,
                    substeps: 1,
                    noise_pct: 0.0,
                    params: None,
                },
                policy,
                pretrain: PretrainSection {
                    kp: 1.0,
                    kd: 0.05,
                    bias: 0.0,
                    feedforward: Some(true),
                    t_ref: None,
                    n_episodes: 20,
                    action_noise: 0.05,
                    n_iter: 3000,
                    lr: 3e-3,
                },
                train: TrainSection {
                    epochs: 1000,
                    episodes: 20,
                    gamma: 1.0,
                    schedule: LrSchedule {
                        alpha0: 3e-4,
                        decay: 0.99,
                        start_epoch: 500,
                    },
                    tank_ranges: Some(TankRanges::default()),
                    cstr_ranges: None,
                },
                design: DesignSection {
                    tank: Some(TankProblem::default()),
                    cstr: None,
                    n_runs: 1000,
                    mc_noise_pct: 2.0,
                },
            },
            Case::Cstr => Self {
                case,
                seed: 7,
                env: EnvSection {
                    t_final: 100.0,
                    n_steps: 100,
                    substeps: 10,
                    noise_pct: 0.0,
                    params: Some(CstrParams::default()),
                },
                policy,
                pretrain: PretrainSection {
                    kp: 30.0,
                    kd: 0.0,
                    bias: 200.0,
                    feedforward: None,
                    t_ref: Some(445.0),
                    n_episodes: 20,
                    action_noise: 0.05,
                    n_iter: 3000,
                    lr: 3e-3,
                },
                train: TrainSection {
                    epochs: 200,
                    episodes: 20,
                    gamma: 1.0,
                    schedule: LrSchedule {
                        alpha0: 1e-4,
                        decay: 0.99,
                        start_epoch: 100,
                    },
                    tank_ranges: None,
                    cstr_ranges: Some(CstrRanges::default()),
                },
                design: DesignSection {
                    tank: None,
                    cstr: Some(CstrProblem::default()),
                    n_runs: 1000,
                    mc_noise_pct: 2.0,
                },
            },
        }
    }

    /// Parses `text` as a partial configuration over the case defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", format!("invalid JSON: {e}")))?;
        Self::from_value(user)
    }

    pub fn from_value(user: Value) -> Result<Self> {
        let Value::Object(obj) = &user else {
            return Err(Error::config("<root>", "configuration must be a JSON object"));
        };
        let case = match obj.get("case") {
            None => Case::Tank,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|_| Error::config("case", format!("expected \"tank\" or \"cstr\", got {v}")))?,
        };
        let mut merged = serde_json::to_value(Self::defaults(case)).expect("defaults serialize");
        merge(&mut merged, &user, "")?;
        let cfg: Self = serde_path_to_error::deserialize(merged)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> TimeGrid {
        self.env.grid()
    }

    pub fn cstr_params(&self) -> CstrParams {
        self.env.params.unwrap_or_default()
    }

    pub fn tank_problem(&self) -> TankProblem {
        self.design.tank.unwrap_or_default()
    }

    pub fn cstr_problem(&self) -> CstrProblem {
        self.design.cstr.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()
            .validate()
            .map_err(|e| Error::config("env", e.to_string()))?;
        non_negative("env.noise_pct", self.env.noise_pct)?;
        if let Some(p) = &self.env.params {
            p.validate().map_err(|e| match e {
                Error::Config { path, msg } => Error::config(format!("env.params.{path}"), msg),
                other => other,
            })?;
        }

        if self.policy.hidden.is_empty() || self.policy.hidden.contains(&0) {
            return Err(Error::config(
                "policy.hidden",
                "need at least one hidden layer of positive width",
            ));
        }
        if !(self.policy.std_floor_frac > 0.0 && self.policy.std_floor_frac < 1.0) {
            return Err(Error::config("policy.std_floor_frac", "must lie in (0, 1)"));
        }

        let p = &self.pretrain;
        finite("pretrain.kp", p.kp)?;
        finite("pretrain.kd", p.kd)?;
        finite("pretrain.bias", p.bias)?;
        if self.case == Case::Cstr && p.t_ref.is_none() {
            return Err(Error::config("pretrain.t_ref", "required for the cstr case"));
        }
        non_negative("pretrain.action_noise", p.action_noise)?;
        positive("pretrain.lr", p.lr)?;
        if p.n_iter > 0 && p.n_episodes == 0 {
            return Err(Error::config("pretrain.n_episodes", "must be positive when n_iter > 0"));
        }

        let t = &self.train;
        if !(0.0..=1.0).contains(&t.gamma) {
            return Err(Error::config(
                "train.gamma",
                format!("must lie in [0, 1], got {}", t.gamma),
            ));
        }
        if t.episodes == 0 {
            return Err(Error::config("train.episodes", "must be positive"));
        }
        positive("train.schedule.alpha0", t.schedule.alpha0)?;
        if !(t.schedule.decay > 0.0 && t.schedule.decay <= 1.0) {
            return Err(Error::config("train.schedule.decay", "must lie in (0, 1]"));
        }
        if let Some(r) = &t.tank_ranges {
            r.f_nom.validate("train.tank_ranges.f_nom")?;
            r.f_dev.validate("train.tank_ranges.f_dev")?;
            r.v_tank.validate("train.tank_ranges.v_tank")?;
            r.v0_rel.validate("train.tank_ranges.v0_rel")?;
            if r.f_nom.lo <= 0.0 || r.f_dev.lo < 0.0 || r.v0_rel.lo <= 0.0 {
                return Err(Error::config("train.tank_ranges", "flows and volumes must be positive"));
            }
        }
        if let Some(r) = &t.cstr_ranges {
            for (name, i) in [
                ("v", r.v),
                ("m_nom", r.m_nom),
                ("m_dev_frac", r.m_dev_frac),
                ("ca0_nom", r.ca0_nom),
                ("ca0_dev_frac", r.ca0_dev_frac),
            ] {
                i.validate(&format!("train.cstr_ranges.{name}"))?;
                if i.lo < 0.0 {
                    return Err(Error::config(
                        format!("train.cstr_ranges.{name}"),
                        "must be non-negative",
                    ));
                }
            }
            if r.v.lo <= 0.0 {
                return Err(Error::config("train.cstr_ranges.v", "must be positive"));
            }
        }
        match self.case {
            Case::Tank if t.tank_ranges.is_none() => {
                return Err(Error::config("train.tank_ranges", "required for the tank case"))
            }
            Case::Cstr if t.cstr_ranges.is_none() => {
                return Err(Error::config("train.cstr_ranges", "required for the cstr case"))
            }
            _ => {}
        }

        let d = &self.design;
        if let Some(p) = &d.tank {
            p.validate("design.tank")?;
        }
        if let Some(p) = &d.cstr {
            p.validate("design.cstr")?;
        }
        if d.n_runs == 0 {
            return Err(Error::config("design.n_runs", "must be positive"));
        }
        non_negative("design.mc_noise_pct", d.mc_noise_pct)?;
        Ok(())
    }
}

/// Overlays `user` onto `base`, rejecting keys that `base` does not have.
/// Objects merge recursively; any other value replaces the default.
fn merge(base: &mut Value, user: &Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let sub = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(Error::config(sub, "unknown key")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

fn finite(path: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, "must be finite"))
    }
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {x}")))
    }
}

fn non_negative(path: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be non-negative, got {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_tank_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::defaults(Case::Tank));
    }

    #[test]
    fn cstr_defaults_selected_by_case() {
        let cfg = RunConfig::from_json(r#"{"case": "cstr"}"#).unwrap();
        assert_eq!(cfg, RunConfig::defaults(Case::Cstr));
        assert!(cfg.env.params.is_some());
    }

    #[test]
    fn gamma_out_of_range_names_key() {
        let err = RunConfig::from_json(r#"{"train": {"gamma": 1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("train.gamma"), "{err}");
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let err = RunConfig::from_json(r#"{"train": {"gama": 0.9}}"#).unwrap_err();
        assert!(err.to_string().contains("train.gama"), "{err}");
        // cstr-only section is unknown for the tank case
        let err = RunConfig::from_json(r#"{"env": {"params": {"ua": 3.0}}}"#).unwrap_err();
        assert!(err.to_string().contains("env.params"), "{err}");
    }

    #[test]
    fn type_mismatch_names_key() {
        let err = RunConfig::from_json(r#"{"train": {"epochs": "many"}}"#).unwrap_err();
        assert!(err.to_string().contains("train.epochs"), "{err}");
    }

    #[test]
    fn nested_override_keeps_siblings() {
        let cfg = RunConfig::from_json(r#"{"design": {"tank": {"epsilon": 2.0}}}"#).unwrap();
        let p = cfg.tank_problem();
        assert_eq!(p.epsilon, 2.0);
        assert_eq!(p.tol, TankProblem::default().tol);
    }

    #[test]
    fn epsilon_must_be_positive() {
        let err = RunConfig::from_json(r#"{"design": {"tank": {"epsilon": 0.0}}}"#).unwrap_err();
        assert!(err.to_string().contains("design.tank.epsilon"), "{err}");
    }

    #[test]
    fn effective_config_round_trips() {
        for case in ["tank", "cstr"] {
            let cfg = RunConfig::from_json(&format!(r#"{{"case": "{case}", "seed": 3}}"#)).unwrap();
            let again = RunConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn bad_case_rejected() {
        let err = RunConfig::from_json(r#"{"case": "boiler"}"#).unwrap_err();
        assert!(err.to_string().contains("case"), "{err}");
    }
}
