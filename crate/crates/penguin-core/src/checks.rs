//! Numerical verification suite: limiting-case equivalences, exact
//! equivariance of the `alpha = 1` path, reverse-mode gradient checks, and
//! environment symmetry. Used by the acceptance tests and the CLI's
//! `verify` command.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Asymmetry, Environment, Scenario, ScenarioConfig, World, SENSOR_BIAS};
use crate::error::Result;
use crate::graph::{
    e2gn2_layer_forward, gnn_layer_forward, penguin_layer_forward, AlphaMode, Architecture,
    ForwardOptions, GraphBatch, GraphState, LayerKind, NetConfig, PenguinLayer, PenguinNetwork,
};
use crate::rl::{gaussian_log_prob, GaussianPolicy};
use crate::symmetry::{graph_equivariance_split, random_orthogonal};
use crate::tensor::{finite_diff_gradient, gradient_rel_error, Tape, Tensor};

/// Outcome of one verification check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub details: String,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64, details: String) -> Self {
        Self {
            name: String::from(name),
            max_error,
            tolerance,
            pass: max_error <= tolerance,
            details,
        }
    }
}

fn random_graph(
    nodes: usize,
    h_dim: usize,
    spatial: usize,
    velocity: bool,
    rng: &mut impl Rng,
) -> GraphState {
    GraphState::synthetic(
        Tensor::from_fn(nodes, h_dim, |_, _| rng.random_range(-1.0..1.0)),
        Tensor::from_fn(nodes, spatial, |_, _| rng.random_range(-1.0..1.0)),
        velocity.then(|| Tensor::from_fn(nodes, spatial, |_, _| rng.random_range(-0.5..0.5))),
    )
    .expect("synthetic graph")
}

/// Limiting case 1: a layer at `alpha = 1` must match the gated equivariant
/// update exactly (tolerance 1e-12) for random weights and graphs.
pub fn theorem1_check(weight_draws: usize, graphs_per_draw: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for draw in 0..weight_draws {
        let with_velocity = draw % 2 == 0;
        let layer = PenguinLayer::new(LayerKind::Penguin, 32, 32, 32, 2, with_velocity, &mut rng);
        for _ in 0..graphs_per_draw {
            let n = rng.random_range(2..=6);
            let g = random_graph(n, 32, 2, with_velocity, &mut rng);
            let a = penguin_layer_forward(&layer, &g, &alloc::vec![1.0; n])?;
            let b = e2gn2_layer_forward(&layer, &g)?;
            worst = worst.max(a.h().max_abs_diff(b.h())?);
            worst = worst.max(a.u().max_abs_diff(b.u())?);
        }
    }
    Ok(CheckResult::new(
        "limit alpha=1 equals gated equivariant layer",
        worst,
        1e-12,
        format!("{weight_draws} weight draws x {graphs_per_draw} graphs, N in 2..=6"),
    ))
}

/// Limiting case 2: a two-layer stack at `alpha = 0` must match the plain
/// message-passing construction on matched weights (tolerance 1e-12).
pub fn theorem2_check(weight_draws: usize, graphs_per_draw: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for draw in 0..weight_draws {
        let with_velocity = draw % 2 == 0;
        let layer0 = PenguinLayer::new(LayerKind::Penguin, 32, 32, 32, 2, with_velocity, &mut rng);
        let layer1 = PenguinLayer::new(LayerKind::Penguin, 32, 32, 32, 2, false, &mut rng);
        for _ in 0..graphs_per_draw {
            let n = rng.random_range(2..=6);
            let g = random_graph(n, 32, 2, with_velocity, &mut rng);
            let zeros = alloc::vec![0.0; n];

            let p1 = penguin_layer_forward(&layer0, &g, &zeros)?;
            let p2 = penguin_layer_forward(&layer1, &p1, &zeros)?;

            let g1 = gnn_layer_forward(&layer0, &g)?;
            let g2 = gnn_layer_forward(&layer1, &g1)?;

            worst = worst.max(p2.h().max_abs_diff(g2.h())?);
            worst = worst.max(p2.u().max_abs_diff(g2.u())?);
        }
    }
    Ok(CheckResult::new(
        "limit alpha=0 equals plain message passing (2 layers)",
        worst,
        1e-12,
        format!("{weight_draws} weight draws x {graphs_per_draw} graphs, matched weights"),
    ))
}

/// Exact O(n) equivariance of the `alpha = 1` network: relative coordinate
/// defect and feature-invariance defect both under 1e-8 over Haar samples
/// (reflections included).
pub fn equivariance_check(
    spatial: usize,
    group_samples: usize,
    seed: u64,
    coord_axis_bias: Option<f64>,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetConfig {
        h0_dim: 5,
        spatial_dim: spatial,
        hidden_dim: 32,
        message_dim: 32,
        num_layers: 2,
        with_velocity: true,
    };
    let net = PenguinNetwork::new(Architecture::Penguin, AlphaMode::Fixed(1.0), cfg, &mut rng)?;
    let forward = |state: &GraphState| -> Result<GraphState> {
        let batch = GraphBatch::from_graphs(&[state])?;
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let opts = ForwardOptions { prune_tail: false, coord_axis_bias };
        let out = vars.forward_batch(&mut tape, &batch, opts)?;
        let (h, u) = out.final_nodes.expect("unpruned");
        GraphState::new(
            tape.value(h).clone(),
            tape.value(u).clone(),
            None,
            state.roles().to_vec(),
        )
    };
    let mut worst = 0.0f64;
    for i in 0..group_samples {
        let q = random_orthogonal(spatial, &mut rng)?;
        let x = random_graph(4 + (i % 3), 5, spatial, true, &mut rng);
        let (rel_u, h_err) = graph_equivariance_split(forward, &q, &x)?;
        worst = worst.max(rel_u).max(h_err);
    }
    Ok(CheckResult::new(
        &format!("exact O({spatial}) equivariance at alpha=1"),
        worst,
        1e-8,
        format!("{group_samples} Haar samples incl. reflections"),
    ))
}

/// Reverse-mode gradients of a full policy-network loss (clipped surrogate
/// + value regression + entropy, touching every MLP including the
/// symmetry-score estimator) against central finite differences.
pub fn gradient_check(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetConfig::mpe(5);
    let policy = GaussianPolicy::new(PenguinNetwork::new(
        Architecture::Penguin,
        AlphaMode::Learned,
        cfg,
        &mut rng,
    )?);

    // Fixed synthetic minibatch.
    let graphs: Vec<GraphState> = (0..3).map(|_| random_graph(4, 5, 2, true, &mut rng)).collect();
    let actions: Vec<[f64; 2]> = (0..3)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let advantages: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let returns: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Old log-probs near (but not at) the current ones keep ratios away
    // from the clip kinks.
    let old_logp: Vec<f64> = {
        let refs: Vec<&GraphState> = graphs.iter().collect();
        let batch = GraphBatch::from_graphs(&refs)?;
        let mut tape = Tape::new();
        let vars = policy.net.bind(&mut tape);
        let out = vars.forward_batch(&mut tape, &batch, ForwardOptions::default())?;
        let means = tape.value(out.policy_mean).clone();
        (0..3)
            .map(|i| {
                gaussian_log_prob(
                    means.row_slice(i),
                    policy.log_std.data(),
                    &actions[i],
                ) + 0.03 * (i as f64 - 1.0)
            })
            .collect()
    };

    let loss_of = |p: &GaussianPolicy| -> Result<f64> {
        let refs: Vec<&GraphState> = graphs.iter().collect();
        let batch = GraphBatch::from_graphs(&refs)?;
        let mut tape = Tape::new();
        let loss = policy_loss_on_tape(&mut tape, p, &batch, &actions, &old_logp, &advantages, &returns)?;
        Ok(tape.value(loss).item())
    };

    // Analytic gradients.
    let analytic: Vec<Tensor> = {
        let refs: Vec<&GraphState> = graphs.iter().collect();
        let batch = GraphBatch::from_graphs(&refs)?;
        let mut tape = Tape::new();
        let vars = policy.net.bind(&mut tape);
        let log_std = tape.param(&policy.log_std);
        let loss = policy_loss_on_tape_bound(
            &mut tape, &vars, log_std, &batch, &actions, &old_logp, &advantages, &returns,
        )?;
        tape.backward(loss)?;
        let mut vars_all = vars.param_vars();
        vars_all.push(log_std);
        vars_all.iter().map(|&v| tape.param_grad(v)).collect()
    };

    // Finite-difference oracle over every parameter.
    let mut probe = policy.clone();
    let mut flat: Vec<Tensor> = probe.named_params().iter().map(|(_, t)| (*t).clone()).collect();
    let numeric = finite_diff_gradient(&mut flat, |params| {
        for (dst, src) in probe.params_mut().into_iter().zip(params) {
            *dst = src.clone();
        }
        loss_of(&probe)
    }, 1e-5)?;

    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            worst = worst.max(gradient_rel_error(av, nv));
        }
    }
    Ok(CheckResult::new(
        "reverse-mode gradients vs central differences",
        worst,
        1e-4,
        format!("{} parameters, step 1e-5", analytic.iter().map(|t| t.numel()).sum::<usize>()),
    ))
}

fn policy_loss_on_tape(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    batch: &GraphBatch,
    actions: &[[f64; 2]],
    old_logp: &[f64],
    advantages: &[f64],
    returns: &[f64],
) -> Result<crate::tensor::Var> {
    let vars = policy.net.bind(tape);
    let log_std = tape.param(&policy.log_std);
    policy_loss_on_tape_bound(tape, &vars, log_std, batch, actions, old_logp, advantages, returns)
}

/// The PPO minibatch loss used by the gradient check; mirrors the training
/// path (clip 0.2, value coefficient 0.5, entropy coefficient 0.01).
#[allow(clippy::too_many_arguments)]
fn policy_loss_on_tape_bound(
    tape: &mut Tape,
    vars: &crate::graph::NetworkVars,
    log_std: crate::tensor::Var,
    batch: &GraphBatch,
    actions: &[[f64; 2]],
    old_logp: &[f64],
    advantages: &[f64],
    returns: &[f64],
) -> Result<crate::tensor::Var> {
    let b = batch.graphs;
    let out = vars.forward_batch(tape, batch, ForwardOptions { prune_tail: true, ..Default::default() })?;
    let mut act = Tensor::zeros(b, 2);
    let mut old = Tensor::zeros(b, 1);
    let mut adv = Tensor::zeros(b, 1);
    let mut ret = Tensor::zeros(b, 1);
    for i in 0..b {
        act.set(i, 0, actions[i][0]);
        act.set(i, 1, actions[i][1]);
        old.set(i, 0, old_logp[i]);
        adv.set(i, 0, advantages[i]);
        ret.set(i, 0, returns[i]);
    }
    let actions_c = tape.constant(act);
    let diff = tape.sub(actions_c, out.policy_mean)?;
    let neg_log_std = tape.scale(log_std, -1.0)?;
    let inv_std = tape.exp(neg_log_std)?;
    let z = tape.mul_row(diff, inv_std)?;
    let z2 = tape.mul(z, z)?;
    let sum_sq = tape.sum_cols(z2)?;
    let half = tape.scale(sum_sq, -0.5)?;
    let with_const = tape.add_scalar(half, -crate::math::ln(2.0 * core::f64::consts::PI))?;
    let sum_log_std = tape.sum_all(log_std)?;
    let neg_sum = tape.scale(sum_log_std, -1.0)?;
    let logp = tape.add_scalar_var(with_const, neg_sum)?;

    let old_c = tape.constant(old);
    let delta = tape.sub(logp, old_c)?;
    let ratio = tape.exp(delta)?;
    let adv_c = tape.constant(adv);
    let surr1 = tape.mul(ratio, adv_c)?;
    let clipped = tape.clamp(ratio, 0.8, 1.2)?;
    let surr2 = tape.mul(clipped, adv_c)?;
    let surr = tape.min(surr1, surr2)?;
    let mean_surr = tape.mean_all(surr)?;
    let ploss = tape.scale(mean_surr, -1.0)?;

    let ret_c = tape.constant(ret);
    let verr = tape.sub(out.value, ret_c)?;
    let verr2 = tape.mul(verr, verr)?;
    let vloss = tape.mean_all(verr2)?;
    let vterm = tape.scale(vloss, 0.5)?;

    let ent = tape.add_scalar(
        sum_log_std,
        1.0 + crate::math::ln(2.0 * core::f64::consts::PI),
    )?;
    let eterm = tape.scale(ent, -0.01)?;

    let s1 = tape.add(ploss, vterm)?;
    tape.add(s1, eterm)
}

/// Symmetric environments commute with rotations: rotating the physical
/// state and the actions yields the rotated next state with identical
/// rewards (tolerance 1e-10).
pub fn env_symmetry_check(rotations: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for scenario in [Scenario::Spread, Scenario::Tag] {
        for i in 0..rotations {
            let cfg = ScenarioConfig::new(scenario, Asymmetry::None, seed ^ ((i as u64) << 1));
            let mut base = World::new(cfg)?;
            // Random warmup steps so velocities are non-trivial.
            for _ in 0..3 {
                let acts = disk_actions(cfg.num_agents, &mut rng);
                base.step(&acts)?;
            }
            let q = random_orthogonal(2, &mut rng)?;
            let mut rotated = base.clone();
            rotated.apply_rotation(&q)?;

            let acts = disk_actions(cfg.num_agents, &mut rng);
            let rotated_acts: Vec<[f64; 2]> = acts
                .iter()
                .map(|a| {
                    let r = q.apply_point(a);
                    [r[0], r[1]]
                })
                .collect();
            let step_a = base.step(&acts)?;
            let step_b = rotated.step(&rotated_acts)?;

            for (ea, eb) in base.entities().iter().zip(rotated.entities()) {
                let p = q.apply_point(&ea.pos);
                let v = q.apply_point(&ea.vel);
                worst = worst.max((p[0] - eb.pos[0]).abs());
                worst = worst.max((p[1] - eb.pos[1]).abs());
                worst = worst.max((v[0] - eb.vel[0]).abs());
                worst = worst.max((v[1] - eb.vel[1]).abs());
            }
            for (ra, rb) in step_a.rewards.iter().zip(&step_b.rewards) {
                worst = worst.max((ra - rb).abs());
            }
            // Observations commute as well: rotating the world rotates u
            // and v and fixes h.
            for a in 0..cfg.num_agents {
                let oa = base.observe(a)?;
                let ob = rotated.observe(a)?;
                let expected_u = q.apply_points(oa.u())?;
                worst = worst.max(expected_u.max_abs_diff(ob.u())?);
                worst = worst.max(oa.h().max_abs_diff(ob.h())?);
            }
        }
    }
    Ok(CheckResult::new(
        "symmetric environment commutes with rotations",
        worst,
        1e-10,
        format!("{rotations} rotations x 2 scenarios, state+reward+observation"),
    ))
}

/// Sensor-bias mode: the observation map's defect equals the closed form
/// `sqrt(n_biased) * ||Qc - c||` with `c` the bias vector.
pub fn bias_defect_check(rotations: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut min_defect = f64::INFINITY;
    for scenario in [Scenario::Spread, Scenario::Tag] {
        let cfg = ScenarioConfig::new(scenario, Asymmetry::Bias, seed);
        let base = World::new(cfg)?;
        let biased_nodes = base
            .entities()
            .iter()
            .filter(|e| e.role != crate::env::EntityRole::Agent)
            .count();
        for _ in 0..rotations {
            let q = random_orthogonal(2, &mut rng)?;
            let mut rotated = base.clone();
            rotated.apply_rotation(&q)?;
            let obs = base.observe(0)?;
            let obs_rot = rotated.observe(0)?;
            let expected_u = q.apply_points(obs.u())?;
            // Frobenius defect of the biased observation map.
            let mut defect = 0.0;
            for (a, b) in obs_rot.u().data().iter().zip(expected_u.data()) {
                defect += (a - b) * (a - b);
            }
            let defect = crate::math::sqrt(defect);
            let qc = q.apply_point(&SENSOR_BIAS);
            let closed = crate::math::sqrt(
                ((qc[0] - SENSOR_BIAS[0]).powi(2) + (qc[1] - SENSOR_BIAS[1]).powi(2))
                    * biased_nodes as f64,
            );
            worst = worst.max((defect - closed).abs());
            min_defect = min_defect.min(defect.max(closed));
        }
    }
    Ok(CheckResult::new(
        "sensor-bias defect matches closed form",
        worst,
        1e-10,
        format!("{rotations} rotations x 2 scenarios; defects observed up to {min_defect:.3}"),
    ))
}

fn disk_actions(n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| loop {
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if a[0] * a[0] + a[1] * a[1] <= 1.0 {
                break a;
            }
        })
        .collect()
}

/// Run the whole suite. `dims` selects the spatial dimensions for the
/// equivariance checks (2 is always covered by the theorems). When
/// `coord_axis_bias` is set, the equivariance checks run against a layer
/// stack whose coordinate update is deliberately perturbed along the first
/// axis — they must then fail, which the caller asserts.
pub fn run_verification(
    dims: &[usize],
    coord_axis_bias: Option<f64>,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    results.push(theorem1_check(20, 20, seed)?);
    results.push(theorem2_check(20, 20, seed ^ 0x5eed)?);
    for &d in dims {
        results.push(equivariance_check(d, 100, seed ^ (d as u64), coord_axis_bias)?);
    }
    results.push(gradient_check(seed ^ 0x9e37)?);
    results.push(env_symmetry_check(100, seed ^ 0x7f4a)?);
    results.push(bias_defect_check(100, seed ^ 0x2c9b)?);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theorem_checks_pass_quick() {
        let r = theorem1_check(3, 3, 11).unwrap();
        assert!(r.pass, "{r:?}");
        let r = theorem2_check(3, 3, 12).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn equivariance_check_passes_and_bug_injection_fails() {
        let ok = equivariance_check(2, 10, 13, None).unwrap();
        assert!(ok.pass, "{ok:?}");
        let bad = equivariance_check(2, 10, 13, Some(1e-3)).unwrap();
        assert!(!bad.pass, "perturbed layer must fail: {bad:?}");
    }

    #[test]
    fn env_checks_pass_quick() {
        let r = env_symmetry_check(5, 14).unwrap();
        assert!(r.pass, "{r:?}");
        let r = bias_defect_check(5, 15).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
