//! Stage orchestration: pre-training, Reinforce, design solve and Monte-Carlo
//! evaluation, each reading and writing artifacts in an output directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;

use crate::config::{Case, RunConfig};
use crate::design::{cstr_mc, solve_cstr_design, solve_tank_design, tank_mc, DesignSolution, DesignValues, McStats};
use crate::env::{CstrSampler, EnvFactory, EnvRng, Environment, TankSampler};
use crate::error::{Error, Result};
use crate::policy_net::{NetworkShape, PolicyNetwork};
use crate::report::{EvalReport, Summary};
use crate::rollout::{stream_seed, Controller, PolicyController, RolloutMode};
use crate::training::{generate_demos, pretrain, train, PdController, PdPolicy, PdWiring, TrainConfig, TrainReport};

pub const POLICY_FILE: &str = "policy.json";
pub const PRETRAIN_FILE: &str = "pretrain.csv";
pub const TRAIN_FILE: &str = "train.csv";
pub const DESIGN_FILE: &str = "design.json";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

// stream tags separating the RNG use of each stage
const TAG_DEMOS: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_DESIGN: u64 = 4;
const TAG_EVAL: u64 = 5;

fn stage_seed(cfg: &RunConfig, tag: u64) -> u64 {
    stream_seed(cfg.seed, tag, 0)
}

fn tank_sampler(cfg: &RunConfig) -> TankSampler {
    TankSampler {
        ranges: cfg.train.tank_ranges.unwrap_or_default(),
        grid: cfg.grid(),
        noise_pct: cfg.env.noise_pct,
    }
}

fn cstr_sampler(cfg: &RunConfig) -> CstrSampler {
    CstrSampler {
        ranges: cfg.train.cstr_ranges.unwrap_or_default(),
        params: cfg.cstr_params(),
        grid: cfg.grid(),
        noise_pct: cfg.env.noise_pct,
    }
}

/// The PD demonstrator, which is also the baseline in evaluation.
pub fn demonstrator(cfg: &RunConfig) -> PdPolicy {
    let p = &cfg.pretrain;
    let (low, high, wiring) = match cfg.case {
        Case::Tank => (
            0.0,
            1.0,
            PdWiring::Tank {
                feedforward: p.feedforward.unwrap_or(false),
            },
        ),
        Case::Cstr => {
            let params = cfg.cstr_params();
            (
                params.th_min,
                params.th_max,
                PdWiring::Cstr {
                    t_ref: p.t_ref.unwrap_or(params.t_max),
                },
            )
        }
    };
    PdPolicy {
        pd: PdController {
            kp: p.kp,
            kd: p.kd,
            bias: p.bias,
            low,
            high,
        },
        wiring,
        dt: cfg.grid().dt(),
    }
}

fn pretrain_with<F: EnvFactory>(cfg: &RunConfig, factory: &F) -> Result<(PolicyNetwork, Vec<f64>)> {
    let mut rng = EnvRng::seed_from_u64(stage_seed(cfg, TAG_INIT));
    let probe = factory.sample(&mut rng.clone())?;
    let mut shape = NetworkShape::new(
        probe.obs_dim(),
        cfg.policy.hidden.clone(),
        probe.action_low(),
        probe.action_high(),
    );
    shape.std_floor_frac = cfg.policy.std_floor_frac;
    let mut net = PolicyNetwork::init(&shape, &mut rng)?;
    let p = &cfg.pretrain;
    if p.n_iter == 0 {
        return Ok((net, Vec::new()));
    }
    let demos = generate_demos(
        factory,
        &demonstrator(cfg),
        p.n_episodes,
        p.action_noise,
        stage_seed(cfg, TAG_DEMOS),
    )?;
    let curve = pretrain(&mut net, &demos, p.n_iter, p.lr)?;
    Ok((net, curve))
}

/// Initializes a network and clones the PD demonstrator into it. Returns the
/// imitation-loss curve alongside.
pub fn run_pretrain(cfg: &RunConfig) -> Result<(PolicyNetwork, Vec<f64>)> {
    match cfg.case {
        Case::Tank => pretrain_with(cfg, &tank_sampler(cfg)),
        Case::Cstr => pretrain_with(cfg, &cstr_sampler(cfg)),
    }
}

pub fn run_train(cfg: &RunConfig, policy: &mut PolicyNetwork) -> Result<TrainReport> {
    let t = &cfg.train;
    let tc = TrainConfig {
        epochs: t.epochs,
        episodes: t.episodes,
        gamma: t.gamma,
        schedule: t.schedule,
        seed: stage_seed(cfg, TAG_TRAIN),
    };
    match cfg.case {
        Case::Tank => train(&tank_sampler(cfg), policy, &tc),
        Case::Cstr => train(&cstr_sampler(cfg), policy, &tc),
    }
}

/// Solves the design problem with the policy as a fixed control law and
/// attaches a Monte-Carlo confirmation of the result.
pub fn run_design(cfg: &RunConfig, policy: &PolicyNetwork) -> Result<DesignSolution> {
    let ctrl = PolicyController::new(policy, RolloutMode::MeanAction);
    let seed = stage_seed(cfg, TAG_DESIGN);
    let mut sol = match cfg.case {
        Case::Tank => solve_tank_design(&ctrl, &cfg.tank_problem(), cfg.grid(), seed)?,
        Case::Cstr => solve_cstr_design(&ctrl, &cfg.cstr_params(), cfg.grid(), &cfg.cstr_problem(), seed)?,
    };
    let stats = monte_carlo_policy(cfg, policy, &sol.design)?;
    sol.mc = Some(stats.summary(cfg.design.mc_noise_pct));
    Ok(sol)
}

fn monte_carlo_policy(cfg: &RunConfig, policy: &PolicyNetwork, design: &DesignValues) -> Result<McStats> {
    let ctrl = PolicyController::new(policy, RolloutMode::MeanAction);
    monte_carlo_any(cfg, &ctrl, design)
}

fn monte_carlo_any<C>(cfg: &RunConfig, ctrl: &C, design: &DesignValues) -> Result<McStats>
where
    C: Controller + ?Sized,
{
    let d = &cfg.design;
    let seed = stage_seed(cfg, TAG_EVAL);
    match (cfg.case, design) {
        (Case::Tank, DesignValues::Tank(t)) => tank_mc(
            ctrl,
            *t,
            cfg.grid(),
            cfg.tank_problem().epsilon,
            d.n_runs,
            d.mc_noise_pct,
            seed,
        ),
        (Case::Cstr, DesignValues::Cstr(c)) => {
            cstr_mc(ctrl, c, &cfg.cstr_params(), cfg.grid(), d.n_runs, d.mc_noise_pct, seed)
        }
        _ => Err(Error::config("case", "design file does not match the configured case")),
    }
}

/// Monte-Carlo evaluation of the policy at `design`; for the tank the PD
/// demonstrator is evaluated on the same noise streams.
pub fn run_evaluate(cfg: &RunConfig, policy: &PolicyNetwork, design: &DesignValues) -> Result<EvalReport> {
    let stats = monte_carlo_policy(cfg, policy, design)?;
    let pd = match cfg.case {
        Case::Tank => Some(monte_carlo_any(cfg, &demonstrator(cfg), design)?),
        Case::Cstr => None,
    };
    let (state_names, control_names) = match cfg.case {
        Case::Tank => (vec!["V"], vec!["a"]),
        Case::Cstr => (vec!["C_A", "T"], vec!["T_H"]),
    };
    Ok(EvalReport {
        case: cfg.case,
        grid: cfg.grid(),
        noise_pct: cfg.design.mc_noise_pct,
        state_names: state_names.into_iter().map(String::from).collect(),
        control_names: control_names.into_iter().map(String::from).collect(),
        policy: stats,
        pd,
    })
}

/// Writes `contents` to a temporary sibling, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("iter,loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

/// Artifact locations for one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub out: PathBuf,
    /// Policy to read in stages that need one; defaults to the output copy.
    pub policy: Option<PathBuf>,
}

impl RunDir {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            policy: None,
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn policy_path(&self) -> PathBuf {
        self.policy.clone().unwrap_or_else(|| self.path(POLICY_FILE))
    }

    pub fn load_policy(&self) -> Result<PolicyNetwork> {
        let path = self.policy_path();
        let text = std::fs::read_to_string(&path)
            .map_err(|_| Error::config("policy", format!("policy not found at {}", path.display())))?;
        PolicyNetwork::from_json(&text)
    }

    pub fn load_design(&self) -> Result<DesignSolution> {
        let path = self.path(DESIGN_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| Error::config("design", format!("design not found at {}", path.display())))?;
        DesignSolution::from_json(&text)
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        write_atomic(&self.path(CONFIG_FILE), &cfg.to_json())
    }

    pub fn pretrain(&self, cfg: &RunConfig) -> Result<PolicyNetwork> {
        let (net, curve) = run_pretrain(cfg)?;
        if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
            log::info!("pre-training: imitation loss {first:.3e} -> {last:.3e}");
        }
        write_atomic(&self.path(PRETRAIN_FILE), &curve_csv(&curve))?;
        write_atomic(&self.path(POLICY_FILE), &net.to_json())?;
        Ok(net)
    }

    pub fn train(&self, cfg: &RunConfig, mut net: PolicyNetwork) -> Result<PolicyNetwork> {
        let report = run_train(cfg, &mut net)?;
        if let (Some(a), Some(b)) = (report.first_mean_return(), report.tail_mean_return(50)) {
            log::info!(
                "training: mean return {a:.4} -> {b:.4} in {:.1} s",
                report.wall_clock_secs
            );
        }
        write_atomic(&self.path(TRAIN_FILE), &report.to_csv()?)?;
        write_atomic(&self.path(POLICY_FILE), &net.to_json())?;
        Ok(net)
    }

    pub fn design(&self, cfg: &RunConfig, net: &PolicyNetwork) -> Result<DesignSolution> {
        let sol = run_design(cfg, net)?;
        log::info!("design: objective {:.6}, feasible {}", sol.objective, sol.feasible);
        write_atomic(&self.path(DESIGN_FILE), &sol.to_json())?;
        Ok(sol)
    }

    pub fn evaluate(&self, cfg: &RunConfig, net: &PolicyNetwork, sol: &DesignSolution) -> Result<Summary> {
        let report = run_evaluate(cfg, net, &sol.design)?;
        let summary = report.summary(Some(sol.clone()));
        log::info!(
            "evaluation over {} runs: policy err {:.5}{}",
            summary.n_runs,
            summary.policy.mean_err,
            summary
                .pd
                .map(|p| format!(", PD err {:.5}", p.mean_err))
                .unwrap_or_default()
        );
        write_atomic(&self.path(EVAL_FILE), &report.to_csv()?)?;
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_atomic(&self.path(SUMMARY_FILE), &json)?;
        Ok(summary)
    }

    /// All stages in order.
    pub fn pipeline(&self, cfg: &RunConfig) -> Result<Summary> {
        self.write_config(cfg)?;
        let net = self.pretrain(cfg)?;
        let net = self.train(cfg, net)?;
        let sol = self.design(cfg, &net)?;
        self.evaluate(cfg, &net, &sol)
    }
}
