//! The clipped-surrogate update.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::policy::GaussianPolicy;
use super::rollout::RolloutBatch;
use crate::error::{invalid_err, Result};
use crate::graph::{ForwardOptions, GraphBatch, GraphState, PenguinNetwork};
use crate::nn::{clip_grad_norm, Adam};
use crate::tensor::{Tape, Tensor};

/// PPO hyperparameters. Defaults are the particle-world settings: batch
/// 2000, minibatch 1000, clip 0.2, learning rate 3e-4, 10 optimization
/// passes, gamma 0.99, lambda 0.95.
#[derive(Debug, Clone, Copy)]
pub struct PpoConfig {
    /// Per-agent samples gathered per iteration.
    pub train_batch: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub lr: f64,
    /// Optimization passes over the batch per iteration.
    pub sgd_iters: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    /// Samples per backward pass; gradients accumulate across chunks so one
    /// optimizer step still covers the whole minibatch.
    pub chunk: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            train_batch: 2000,
            minibatch: 1000,
            clip: 0.2,
            lr: 3.0e-4,
            sgd_iters: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip: 0.5,
            chunk: 250,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 || self.train_batch == 0 {
            return Err(invalid_err!("batch sizes must be positive"));
        }
        if self.train_batch % self.minibatch != 0 {
            return Err(invalid_err!(
                "minibatch {} must divide train batch {}",
                self.minibatch,
                self.train_batch
            ));
        }
        Ok(())
    }
}

/// Loss diagnostics for one update call.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub skipped_minibatches: usize,
    pub grad_norm: f64,
}

/// Ten (by default) passes over shuffled minibatches: clipped surrogate for
/// the policy, squared-error value loss, entropy bonus; gradients flow
/// through the symmetry-score estimators of both networks. Minibatches with
/// non-finite likelihood ratios are skipped and counted.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    value_net: &mut PenguinNetwork,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let total = batch.samples.len();
    if total == 0 {
        return Err(invalid_err!("empty rollout batch"));
    }
    let mut stats = UpdateStats::default();
    let mut minibatches_done = 0usize;

    let mut indices: Vec<usize> = (0..total).collect();
    for _epoch in 0..cfg.sgd_iters {
        indices.shuffle(rng);
        for mb in indices.chunks(cfg.minibatch) {
            match minibatch_step(policy, value_net, batch, cfg, adam, mb)? {
                Some((pl, vl, ent, gn)) => {
                    stats.policy_loss = pl;
                    stats.value_loss = vl;
                    stats.entropy = ent;
                    stats.grad_norm = gn;
                    minibatches_done += 1;
                }
                None => stats.skipped_minibatches += 1,
            }
        }
    }
    let _ = minibatches_done;
    Ok(stats)
}

/// One minibatch: chunked forward/backward with gradient accumulation, then
/// a single Adam step. Returns `None` when the minibatch was skipped.
#[allow(clippy::type_complexity)]
fn minibatch_step(
    policy: &mut GaussianPolicy,
    value_net: &mut PenguinNetwork,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    adam: &mut Adam,
    mb: &[usize],
) -> Result<Option<(f64, f64, f64, f64)>> {
    let spatial = policy.net.cfg.spatial_dim;
    let mb_len = mb.len();

    // Gradient accumulators in parameter order: policy net, log_std, value
    // net.
    let mut grads: Vec<Tensor> = policy
        .named_params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
        .chain(
            value_net
                .named_params()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols())),
        )
        .collect();

    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy = 0.0;

    for chunk in mb.chunks(cfg.chunk) {
        let weight = chunk.len() as f64 / mb_len as f64;
        let graphs: Vec<&GraphState> = chunk.iter().map(|&i| &batch.samples[i].graph).collect();
        let gbatch = GraphBatch::from_graphs(&graphs)?;

        let mut actions = Tensor::zeros(chunk.len(), spatial);
        let mut old_logp = Tensor::zeros(chunk.len(), 1);
        let mut adv = Tensor::zeros(chunk.len(), 1);
        let mut ret = Tensor::zeros(chunk.len(), 1);
        for (r, &i) in chunk.iter().enumerate() {
            let s = &batch.samples[i];
            for (c, v) in s.action.iter().enumerate() {
                actions.set(r, c, *v);
            }
            old_logp.set(r, 0, s.log_prob);
            adv.set(r, 0, batch.advantages[i]);
            ret.set(r, 0, batch.returns[i]);
        }

        let mut tape = Tape::new();
        let pvars = policy.net.bind(&mut tape);
        let log_std = tape.param(&policy.log_std);
        let vvars = value_net.bind(&mut tape);
        let opts = ForwardOptions { prune_tail: true, ..Default::default() };

        let pout = pvars.forward_batch(&mut tape, &gbatch, opts)?;
        let vout = vvars.forward_batch(&mut tape, &gbatch, opts)?;

        // log pi(a | s) under current parameters.
        let actions_c = tape.constant(actions);
        let diff = tape.sub(actions_c, pout.policy_mean)?;
        let neg_log_std = tape.scale(log_std, -1.0)?;
        let inv_std = tape.exp(neg_log_std)?;
        let z = tape.mul_row(diff, inv_std)?;
        let z2 = tape.mul(z, z)?;
        let sum_sq = tape.sum_cols(z2)?;
        let half = tape.scale(sum_sq, -0.5)?;
        let d = spatial as f64;
        let with_const = tape.add_scalar(
            half,
            -0.5 * d * crate::math::ln(2.0 * core::f64::consts::PI),
        )?;
        let sum_log_std = tape.sum_all(log_std)?;
        let neg_sum_log_std = tape.scale(sum_log_std, -1.0)?;
        let logp = tape.add_scalar_var(with_const, neg_sum_log_std)?;

        // Clipped surrogate.
        let old_c = tape.constant(old_logp);
        let delta = tape.sub(logp, old_c)?;
        let ratio = tape.exp(delta)?;
        if !tape.value(ratio).all_finite() {
            // Skip the whole minibatch.
            return Ok(None);
        }
        let adv_c = tape.constant(adv);
        let surr1 = tape.mul(ratio, adv_c)?;
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)?;
        let surr2 = tape.mul(clipped, adv_c)?;
        let surr = tape.min(surr1, surr2)?;
        let mean_surr = tape.mean_all(surr)?;
        let ploss = tape.scale(mean_surr, -1.0)?;

        // Value regression.
        let ret_c = tape.constant(ret);
        let verr = tape.sub(vout.value, ret_c)?;
        let verr2 = tape.mul(verr, verr)?;
        let vloss = tape.mean_all(verr2)?;

        // Entropy of the diagonal Gaussian (state independent).
        let ent = tape.add_scalar(
            sum_log_std,
            0.5 * d * (1.0 + crate::math::ln(2.0 * core::f64::consts::PI)),
        )?;

        let vterm = tape.scale(vloss, cfg.value_coef)?;
        let eterm = tape.scale(ent, -cfg.entropy_coef)?;
        let sum1 = tape.add(ploss, vterm)?;
        let sum2 = tape.add(sum1, eterm)?;
        let loss = tape.scale(sum2, weight)?;

        policy_loss += tape.value(ploss).item() * weight;
        value_loss += tape.value(vloss).item() * weight;
        entropy = tape.value(ent).item();

        tape.backward(loss)?;

        let mut vars = pvars.param_vars();
        vars.push(log_std);
        vars.extend(vvars.param_vars());
        debug_assert_eq!(vars.len(), grads.len());
        for (acc, var) in grads.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(var) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
    {
        let mut params = policy.params_mut();
        params.extend(value_net.params_mut());
        adam.step(&mut params, &grads)?;
    }
    policy.clamp_log_std();
    Ok(Some((policy_loss, value_loss, entropy, grad_norm)))
}
