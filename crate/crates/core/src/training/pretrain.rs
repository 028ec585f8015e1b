//! Behavioral cloning from a demonstrator.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::pd::Demonstrations;
use crate::env::{EnvFactory, EnvRng, Environment};
use crate::error::{Error, Result};
use crate::optim::{mse_loss, AdamState, Direction};
use crate::policy_net::PolicyNetwork;
use crate::rollout::{simulate_with_rng, stream_seed, Action, Controller};

/// Demonstrator whose applied action is perturbed by Gaussian noise
/// (`noise_frac` of the actuator range) while the recorded label stays clean.
struct Perturbed<'a, C: ?Sized> {
    inner: &'a C,
    noise: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl<C: Controller + ?Sized> Controller for Perturbed<'_, C> {
    fn act(&self, obs: &[f64], t: usize, rng: &mut EnvRng) -> Result<Action> {
        let clean = self.inner.act(obs, t, rng)?;
        let applied = clean
            .applied
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let xi: f64 = StandardNormal.sample(rng);
                (u + self.noise[i] * xi).clamp(self.low[i], self.high[i])
            })
            .collect();
        Ok(Action {
            raw: clean.applied,
            applied,
            log_prob: 0.0,
        })
    }
}

/// Rolls the demonstrator out on `n_episodes` sampled designs and records
/// `(observation, demonstrator action)` pairs.
pub fn generate_demos<F, C>(
    factory: &F,
    demonstrator: &C,
    n_episodes: usize,
    noise_frac: f64,
    seed: u64,
) -> Result<Demonstrations>
where
    F: EnvFactory,
    C: Controller + ?Sized,
{
    type Pairs = (Vec<Vec<f64>>, Vec<Vec<f64>>);
    let episodes: Vec<Pairs> = (0..n_episodes)
        .into_par_iter()
        .map(|k| {
            let mut rng = EnvRng::seed_from_u64(stream_seed(seed, 0xDE40, k as u64));
            let mut env = factory.sample(&mut rng)?;
            let (low, high) = (env.action_low(), env.action_high());
            let noise = low.iter().zip(&high).map(|(l, h)| noise_frac * (h - l)).collect();
            let ctrl = Perturbed {
                inner: demonstrator,
                noise,
                low,
                high,
            };
            let traj = simulate_with_rng(&mut env, &ctrl, &mut rng)?;
            Ok((traj.observations, traj.raw_actions))
        })
        .collect::<Result<_>>()?;
    let mut demos = Demonstrations::default();
    for (s, a) in episodes {
        demos.states.extend(s);
        demos.actions.extend(a);
    }
    Ok(demos)
}

/// Mean squared error of the policy mean against the demonstrations, and its
/// parameter gradient. Observations must already be normalized.
pub fn imitation_loss(policy: &PolicyNetwork, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let n = inputs.len();
    let chunk = 256;
    let parts: Vec<(f64, Vec<f64>)> = inputs
        .par_chunks(chunk)
        .zip(targets.par_chunks(chunk))
        .map(|(xs, us)| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; policy.n_params()];
            for (x, u) in xs.iter().zip(us) {
                policy.accumulate_mean_grad(
                    x,
                    |mean| {
                        let (l, dl) = mse_loss(mean, u)?;
                        loss += l;
                        Ok(dl)
                    },
                    &mut grad,
                )?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; policy.n_params()];
    for (l, g) in parts {
        loss += l;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// Fits normalization statistics on the demonstration states, attaches them
/// to `policy`, then runs `n_iter` full-batch Adam steps on the imitation
/// loss. Returns the loss recorded before each step plus the final loss.
pub fn pretrain(policy: &mut PolicyNetwork, demos: &Demonstrations, n_iter: usize, lr: f64) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(Error::Input("no demonstrations to pre-train on".into()));
    }
    if demos.actions.len() != demos.states.len() {
        return Err(Error::Dimension {
            context: "demonstration actions",
            expected: demos.states.len(),
            got: demos.actions.len(),
        });
    }
    policy.set_normalizer(demos.normalizer()?)?;
    let inputs: Vec<Vec<f64>> = demos.states.iter().map(|s| policy.prepare(s)).collect();
    let mut adam = AdamState::new(policy.n_params(), lr);
    let mut curve = Vec::with_capacity(n_iter + 1);
    for _ in 0..n_iter {
        let (loss, grad) = imitation_loss(policy, &inputs, &demos.actions)?;
        curve.push(loss);
        adam.step(policy.params_mut(), &grad, Direction::Descend)?;
    }
    curve.push(imitation_loss(policy, &inputs, &demos.actions)?.0);
    Ok(curve)
}
