//! On-policy experience collection over lockstep environment instances.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gae::compute_gae;
use super::policy::{gaussian_log_prob, GaussianPolicy};
use super::ppo::PpoConfig;
use crate::env::Environment;
use crate::error::{invalid_err, nonfinite_err, Result};
use crate::graph::{AlphaStats, ForwardOptions, GraphBatch, GraphState, PenguinNetwork};
use crate::tensor::{Tape, Tensor};

/// One per-agent timestep.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: GraphState,
    /// Raw (unclamped) action drawn from the Gaussian.
    pub action: [f64; 2],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
}

/// Exactly `train_batch` per-agent samples with advantages and return
/// targets, plus per-iteration statistics.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub samples: Vec<Sample>,
    /// Normalized (zero-mean unit-variance) advantages.
    pub advantages: Vec<f64>,
    /// Raw GAE returns (`advantage + value` before normalization).
    pub returns: Vec<f64>,
    /// Symmetry-score statistics over every node, step, and environment.
    pub alpha: AlphaStats,
    /// Sum over steps of the agent-mean reward, one entry per episode.
    pub episode_returns: Vec<f64>,
    pub mean_episode_reward: f64,
    pub std_episode_reward: f64,
}

struct AlphaAccumulator {
    min: f64,
    max: f64,
    sum: f64,
    count: usize,
}

impl AlphaAccumulator {
    fn new() -> Self {
        Self { min: f64::INFINITY, max: f64::NEG_INFINITY, sum: 0.0, count: 0 }
    }

    fn push_stats(&mut self, s: AlphaStats, nodes: usize) {
        self.min = self.min.min(s.min);
        self.max = self.max.max(s.max);
        self.sum += s.mean * nodes as f64;
        self.count += nodes;
    }

    fn finish(self) -> AlphaStats {
        if self.count == 0 {
            AlphaStats::constant(0.5)
        } else {
            AlphaStats {
                min: self.min,
                mean: self.sum / self.count as f64,
                max: self.max,
            }
        }
    }
}

/// Evaluate policy means/values for a step's worth of observations in one
/// batched pass per network.
fn step_heads(
    policy: &GaussianPolicy,
    value_net: &PenguinNetwork,
    graphs: &[&GraphState],
) -> Result<(Tensor, Tensor, AlphaStats, usize)> {
    let batch = GraphBatch::from_graphs(graphs)?;
    let opts = ForwardOptions { prune_tail: true, ..Default::default() };

    let mut ptape = Tape::new();
    let pvars = policy.net.bind(&mut ptape);
    let pout = pvars.forward_batch(&mut ptape, &batch, opts)?;
    let means = ptape.value(pout.policy_mean).clone();
    if !means.all_finite() {
        return Err(nonfinite_err!("policy mean during rollout"));
    }
    let alpha_stats = pout.alpha_stats(&ptape);

    let mut vtape = Tape::new();
    let vvars = value_net.bind(&mut vtape);
    let vout = vvars.forward_batch(&mut vtape, &batch, opts)?;
    let values = vtape.value(vout.value).clone();
    if !values.all_finite() {
        return Err(nonfinite_err!("value estimate during rollout"));
    }
    Ok((means, values, alpha_stats, batch.total_nodes()))
}

/// Roll out full episodes across `envs` in lockstep until at least
/// `cfg.train_batch` per-agent samples exist, then truncate to exactly that
/// many. Actions are sampled from the Gaussian head (or taken at the mean
/// when `deterministic`), clamped into the action box only for the
/// environment.
pub fn collect_rollouts<E: Environment>(
    policy: &GaussianPolicy,
    value_net: &PenguinNetwork,
    envs: &mut [E],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
    deterministic: bool,
) -> Result<RolloutBatch> {
    if envs.is_empty() {
        return Err(invalid_err!("need at least one environment"));
    }
    let agents = envs[0].num_agents();
    let horizon = envs[0].horizon();
    let per_episode = agents * horizon;
    let episodes = envs.len();
    if episodes * per_episode < cfg.train_batch {
        return Err(invalid_err!(
            "{} environments provide {} samples, batch needs {}",
            episodes,
            episodes * per_episode,
            cfg.train_batch
        ));
    }

    let std: Vec<f64> = policy.std();
    let log_std: Vec<f64> = policy.log_std.data().to_vec();

    // (env, agent)-indexed episode storage.
    let mut graphs: Vec<Vec<GraphState>> = alloc::vec![Vec::with_capacity(horizon); episodes * agents];
    let mut actions: Vec<Vec<[f64; 2]>> = alloc::vec![Vec::with_capacity(horizon); episodes * agents];
    let mut logps: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(horizon); episodes * agents];
    let mut rewards: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(horizon); episodes * agents];
    let mut values: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(horizon); episodes * agents];

    let mut observations: Vec<Vec<GraphState>> = Vec::with_capacity(episodes);
    for env in envs.iter_mut() {
        observations.push(env.reset()?);
    }
    let mut alpha_acc = AlphaAccumulator::new();

    for _t in 0..horizon {
        let flat: Vec<&GraphState> = observations.iter().flatten().collect();
        let (means, vals, alpha_stats, nodes) = step_heads(policy, value_net, &flat)?;
        alpha_acc.push_stats(alpha_stats, nodes);

        for (e, env) in envs.iter_mut().enumerate() {
            let mut env_actions: Vec<[f64; 2]> = Vec::with_capacity(agents);
            for a in 0..agents {
                let row = e * agents + a;
                let mean = [means.get(row, 0), means.get(row, 1)];
                let action = if deterministic {
                    mean
                } else {
                    let eps0: f64 = rng.sample(StandardNormal);
                    let eps1: f64 = rng.sample(StandardNormal);
                    [mean[0] + std[0] * eps0, mean[1] + std[1] * eps1]
                };
                let logp = gaussian_log_prob(&mean, &log_std, &action);
                let slot = e * agents + a;
                graphs[slot].push(observations[e][a].clone());
                actions[slot].push(action);
                logps[slot].push(logp);
                values[slot].push(vals.get(row, 0));
                env_actions.push([action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)]);
            }
            let step = env.step(&env_actions)?;
            for a in 0..agents {
                rewards[e * agents + a].push(step.rewards[a]);
            }
            observations[e] = step.observations;
        }
    }

    // Episode returns: mean over agents of summed rewards.
    let mut episode_returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut total = 0.0;
        for a in 0..agents {
            total += rewards[e * agents + a].iter().sum::<f64>();
        }
        episode_returns.push(total / agents as f64);
    }
    let mean_episode_reward =
        episode_returns.iter().sum::<f64>() / episode_returns.len() as f64;
    let var = episode_returns
        .iter()
        .map(|r| (r - mean_episode_reward) * (r - mean_episode_reward))
        .sum::<f64>()
        / episode_returns.len() as f64;
    let std_episode_reward = crate::math::sqrt(var);

    // Per-episode GAE, then flatten (env, agent, t) and truncate.
    let mut samples = Vec::with_capacity(cfg.train_batch);
    let mut advantages = Vec::with_capacity(cfg.train_batch);
    let mut returns = Vec::with_capacity(cfg.train_batch);
    'outer: for slot in 0..episodes * agents {
        let (adv, ret) = compute_gae(&rewards[slot], &values[slot], cfg.gamma, cfg.gae_lambda)?;
        for t in 0..horizon {
            if samples.len() == cfg.train_batch {
                break 'outer;
            }
            samples.push(Sample {
                graph: core::mem::replace(
                    &mut graphs[slot][t],
                    GraphState::synthetic(Tensor::zeros(0, 1), Tensor::zeros(0, 1), None)?,
                ),
                action: actions[slot][t],
                log_prob: logps[slot][t],
                reward: rewards[slot][t],
                value: values[slot][t],
            });
            advantages.push(adv[t]);
            returns.push(ret[t]);
        }
    }

    // Batch-level advantage normalization.
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
        / advantages.len() as f64;
    let denom = crate::math::sqrt(var) + 1e-8;
    for a in &mut advantages {
        *a = (*a - mean) / denom;
    }

    Ok(RolloutBatch {
        samples,
        advantages,
        returns,
        alpha: alpha_acc.finish(),
        episode_returns,
        mean_episode_reward,
        std_episode_reward,
    })
}
