//! Monte-Carlo policy gradient with a batch-mean baseline and a step-decayed
//! learning rate.

use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvFactory, EnvRng};
use crate::error::{Error, Result};
use crate::optim::{AdamState, Direction, LrSchedule};
use crate::policy_net::PolicyNetwork;
use crate::rollout::{simulate_with_rng, stream_seed, PolicyController, RolloutMode, Trajectory};

/// Per-step returns `G_t = R_{t+1} + gamma * G_{t+1}` (with `G_{n_T} = 0`)
/// and the episode return `G_0`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    let total = g.first().copied().unwrap_or(0.0);
    (g, total)
}

/// Summed score `sum_t grad log pi(u_t | x_t)` of one trajectory.
fn score_sum(policy: &PolicyNetwork, traj: &Trajectory) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; policy.n_params()];
    for (obs, u) in traj.observations.iter().zip(&traj.raw_actions) {
        let g = policy.grad_log_prob(&policy.prepare(obs), u)?;
        for (a, gi) in acc.iter_mut().zip(g) {
            *a += gi;
        }
    }
    Ok(acc)
}

/// Policy-gradient estimate
/// `(1/K) sum_k (J_k - b) sum_t grad log pi(u_t^k | x_t^k)` with `b` the
/// batch-mean return. Returns the estimate and `b`.
pub fn policy_gradient(policy: &PolicyNetwork, batch: &[Trajectory], gamma: f64) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::Input("empty trajectory batch".into()));
    }
    let returns: Vec<f64> = batch.iter().map(|t| compute_returns(&t.rewards, gamma).1).collect();
    let k = batch.len() as f64;
    // mean taken about the first return, so identical returns cancel exactly
    let baseline = returns[0] + returns.iter().map(|j| j - returns[0]).sum::<f64>() / k;
    let scores: Vec<Vec<f64>> = batch.par_iter().map(|t| score_sum(policy, t)).collect::<Result<_>>()?;
    let mut grad = vec![0.0; policy.n_params()];
    for (score, j) in scores.iter().zip(&returns) {
        let adv = j - baseline;
        if adv == 0.0 {
            continue;
        }
        for (g, s) in grad.iter_mut().zip(score) {
            *g += adv * s / k;
        }
    }
    Ok((grad, baseline))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub baseline: f64,
    pub grad_norm: f64,
    pub applied: bool,
}

/// One ascent step on the policy-gradient estimate. A non-finite estimate is
/// logged and skipped.
pub fn reinforce_update(
    policy: &mut PolicyNetwork,
    adam: &mut AdamState,
    batch: &[Trajectory],
    gamma: f64,
    lr: f64,
) -> Result<UpdateStats> {
    let (grad, baseline) = policy_gradient(policy, batch, gamma)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    adam.lr = lr;
    match adam.step(policy.params_mut(), &grad, Direction::Ascend) {
        Ok(()) => Ok(UpdateStats {
            baseline,
            grad_norm,
            applied: true,
        }),
        Err(Error::NonFiniteGradient) => {
            log::warn!("non-finite policy gradient, update skipped");
            Ok(UpdateStats {
                baseline,
                grad_norm,
                applied: false,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_return: f64,
    pub baseline: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
}

impl PartialEq for TrainReport {
    /// Wall-clock time is excluded.
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
    }
}

impl TrainReport {
    pub fn first_mean_return(&self) -> Option<f64> {
        self.epochs.first().map(|r| r.mean_return)
    }

    /// Mean return averaged over the last `n` epochs.
    pub fn tail_mean_return(&self, n: usize) -> Option<f64> {
        let n = n.min(self.epochs.len());
        if n == 0 {
            return None;
        }
        Some(
            self.epochs[self.epochs.len() - n..]
                .iter()
                .map(|r| r.mean_return)
                .sum::<f64>()
                / n as f64,
        )
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "mean_return", "baseline", "lr", "grad_norm"])
            .map_err(csv_err)?;
        for r in &self.epochs {
            w.write_record(&[
                r.epoch.to_string(),
                r.mean_return.to_string(),
                r.baseline.to_string(),
                r.lr.to_string(),
                r.grad_norm.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| csv_err(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Parse {
        what: "csv".into(),
        msg: e.to_string(),
    }
}

/// Collects `k` stochastic episodes for `epoch`, each on its own freshly
/// sampled design with an RNG stream keyed by `(seed, epoch, episode)`.
pub fn collect_batch<F: EnvFactory>(
    factory: &F,
    policy: &PolicyNetwork,
    k: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Trajectory>> {
    let ctrl = PolicyController::new(policy, RolloutMode::Stochastic);
    (0..k)
        .into_par_iter()
        .map(|ep| {
            let mut rng = EnvRng::seed_from_u64(stream_seed(seed, epoch as u64, ep as u64));
            let mut env = factory.sample(&mut rng)?;
            simulate_with_rng(&mut env, &ctrl, &mut rng)
        })
        .collect()
}

/// Runs `cfg.epochs` epochs of `cfg.episodes` episodes each and updates
/// `policy` in place.
pub fn train<F: EnvFactory>(factory: &F, policy: &mut PolicyNetwork, cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.episodes == 0 {
        return Err(Error::Input("need at least one episode per epoch".into()));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(policy.n_params(), cfg.schedule.alpha0);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let batch = collect_batch(factory, policy, cfg.episodes, cfg.seed, epoch)?;
        let mean_return = batch
            .iter()
            .map(|t| compute_returns(&t.rewards, cfg.gamma).1)
            .sum::<f64>()
            / batch.len() as f64;
        let stats = reinforce_update(policy, &mut adam, &batch, cfg.gamma, lr)?;
        log::debug!(
            "epoch {epoch}: mean return {mean_return:.4}, lr {lr:.3e}, |g| {:.3e}",
            stats.grad_norm
        );
        report.epochs.push(EpochRecord {
            epoch,
            mean_return,
            baseline: stats.baseline,
            lr,
            grad_norm: stats.grad_norm,
        });
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TankRanges, TankSampler, TimeGrid};
    use crate::policy_net::NetworkShape;

    fn sampler() -> TankSampler {
        TankSampler {
            ranges: TankRanges::default(),
            grid: TimeGrid::new(1.0, 20, 1).unwrap(),
            noise_pct: 2.0,
        }
    }

    fn net(seed: u64) -> PolicyNetwork {
        PolicyNetwork::init(
            &NetworkShape::new(4, vec![6], vec![0.0], vec![1.0]),
            &mut EnvRng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn returns_examples() {
        let (g, total) = compute_returns(&[1.0, 2.0, 3.0], 1.0);
        assert_eq!(g, vec![6.0, 5.0, 3.0]);
        assert_eq!(total, 6.0);
        let (g, total) = compute_returns(&[1.0, 1.0], 0.5);
        assert_eq!(g, vec![1.5, 1.0]);
        assert_eq!(total, 1.5);
        assert_eq!(compute_returns(&[], 0.9).1, 0.0);
    }

    #[test]
    fn constant_reward_shift_leaves_gradient_unchanged() {
        let p = net(1);
        let batch = collect_batch(&sampler(), &p, 8, 3, 0).unwrap();
        let (g0, b0) = policy_gradient(&p, &batch, 1.0).unwrap();
        let shifted: Vec<Trajectory> = batch
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.rewards.iter_mut().for_each(|r| *r += 17.5);
                t
            })
            .collect();
        let (g1, b1) = policy_gradient(&p, &shifted, 1.0).unwrap();
        assert!((b1 - b0 - 17.5 * 20.0).abs() < 1e-9);
        let scale = g0.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(scale > 0.0);
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn identical_returns_give_zero_update() {
        let mut p = net(2);
        let mut batch = collect_batch(&sampler(), &p, 6, 4, 0).unwrap();
        let rewards = batch[0].rewards.clone();
        batch.iter_mut().for_each(|t| t.rewards = rewards.clone());
        let (g, _) = policy_gradient(&p, &batch, 0.9).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let before = p.params().to_vec();
        let mut adam = AdamState::new(p.n_params(), 1e-2);
        let stats = reinforce_update(&mut p, &mut adam, &batch, 0.9, 1e-2).unwrap();
        assert_eq!(stats.grad_norm, 0.0);
        assert_eq!(p.params(), &before[..]);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut p = net(3);
        let before = p.clone();
        let cfg = TrainConfig {
            epochs: 0,
            episodes: 4,
            gamma: 1.0,
            schedule: LrSchedule {
                alpha0: 1e-2,
                decay: 0.99,
                start_epoch: 0,
            },
            seed: 0,
        };
        let report = train(&sampler(), &mut p, &cfg).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(p, before);
        assert!(train(&sampler(), &mut p, &TrainConfig { episodes: 0, ..cfg }).is_err());
    }

    #[test]
    fn training_is_seeded() {
        let cfg = TrainConfig {
            epochs: 3,
            episodes: 4,
            gamma: 1.0,
            schedule: LrSchedule {
                alpha0: 1e-2,
                decay: 0.9,
                start_epoch: 1,
            },
            seed: 11,
        };
        let (mut a, mut b) = (net(4), net(4));
        let ra = train(&sampler(), &mut a, &cfg).unwrap();
        let rb = train(&sampler(), &mut b, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_ne!(a, net(4));
        assert_eq!(ra.epochs[2].lr, 1e-2 * 0.9);
        let csv = ra.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
}
