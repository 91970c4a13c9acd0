//! The collect / estimate / update loop.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::GaussianPolicy;
use super::ppo::{ppo_update, PpoConfig};
use super::rollout::collect_rollouts;
use crate::env::Environment;
use crate::error::{invalid_err, Result};
use crate::graph::{AlphaMode, AlphaStats, Architecture, NetConfig, PenguinNetwork};
use crate::nn::Adam;

/// A full training run's configuration.
#[derive(Debug, Clone, Copy)]
pub struct TrainSettings {
    pub ppo: PpoConfig,
    /// Per-agent environment steps to consume; iterations = ceil(budget /
    /// train_batch), so a zero budget performs no updates.
    pub total_steps: usize,
    pub seed: u64,
}

/// One training iteration's log record.
#[derive(Debug, Clone, Copy)]
pub struct IterationLog {
    pub iteration: usize,
    /// Cumulative per-agent samples consumed after this iteration.
    pub env_steps: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub alpha: AlphaStats,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub skipped_minibatches: usize,
}

/// Final networks plus the per-iteration log.
pub struct TrainOutcome {
    pub policy: GaussianPolicy,
    pub value_net: PenguinNetwork,
    pub logs: Vec<IterationLog>,
}

/// Train `arch` with PPO on environments produced by `env_factory` (seeded
/// deterministically from `settings.seed`). Policy and value networks are
/// separate instances of the same architecture; parameters are shared across
/// the homogeneous agents. `on_iteration` receives each iteration's log
/// record as it completes.
pub fn train<E, F>(
    arch: Architecture,
    alpha_mode: AlphaMode,
    mut env_factory: F,
    settings: &TrainSettings,
    on_iteration: &mut dyn FnMut(&IterationLog),
) -> Result<TrainOutcome>
where
    E: Environment,
    F: FnMut(u64) -> Result<E>,
{
    settings.ppo.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut sample_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.random());
    let env_seed_base: u64 = master.random();

    // Probe one environment for dimensions.
    let mut probe = env_factory(env_seed_base)?;
    let obs = probe.reset()?;
    let first = obs
        .first()
        .ok_or_else(|| invalid_err!("environment produced no observations"))?;
    let h0_dim = first.h_dim();
    let spatial = first.spatial_dim();
    if spatial != 2 {
        return Err(invalid_err!("training expects 2-D worlds, got {spatial}-D"));
    }
    let with_velocity = first.velocity().is_some();
    let agents = probe.num_agents();
    let horizon = probe.horizon();
    drop(probe);

    let cfg = NetConfig {
        with_velocity,
        ..NetConfig::mpe(h0_dim)
    };
    let mut policy = GaussianPolicy::new(PenguinNetwork::new(arch, alpha_mode, cfg, &mut init_rng)?);
    let mut value_net = PenguinNetwork::new(arch, alpha_mode, cfg, &mut init_rng)?;
    let mut adam = Adam::new(settings.ppo.lr);

    let num_envs = settings.ppo.train_batch.div_ceil(agents * horizon);
    let mut envs = Vec::with_capacity(num_envs);
    for i in 0..num_envs {
        envs.push(env_factory(env_seed_base.wrapping_add(1 + i as u64))?);
    }

    let iterations = settings.total_steps.div_ceil(settings.ppo.train_batch);
    let mut logs = Vec::with_capacity(iterations);
    for iteration in 0..iterations {
        let batch = collect_rollouts(
            &policy,
            &value_net,
            &mut envs,
            &settings.ppo,
            &mut sample_rng,
            false,
        )?;
        let stats = ppo_update(
            &mut policy,
            &mut value_net,
            &batch,
            &settings.ppo,
            &mut adam,
            &mut shuffle_rng,
        )?;
        let log = IterationLog {
            iteration,
            env_steps: (iteration + 1) * settings.ppo.train_batch,
            mean_reward: batch.mean_episode_reward,
            std_reward: batch.std_episode_reward,
            alpha: batch.alpha,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            skipped_minibatches: stats.skipped_minibatches,
        };
        on_iteration(&log);
        logs.push(log);
    }

    Ok(TrainOutcome { policy, value_net, logs })
}
