//! Policy/value networks built from stacked layers plus the symmetry-score
//! estimator.
//!
//! The policy mean for a particle world is the final coordinate embedding of
//! the agent-self node; the value estimate is a scalar head on its final
//! invariant embedding. Policy and value use separate networks; each network
//! owns one estimator whose per-node score is reused at every layer.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{layer_forward, LayerHooks, LayerIo, LayerVars};
use super::{GraphBatch, GraphState, LayerKind, PenguinLayer, Topology};
use crate::error::{invalid_err, shape_err, Result};
use crate::nn::{Mlp, MlpVars};
use crate::tensor::{Tape, Tensor, Var};

/// The four update rules a network can be built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Penguin,
    Egnn,
    E2gn2,
    Gnn,
}

impl Architecture {
    pub fn layer_kind(self) -> LayerKind {
        match self {
            Architecture::Penguin => LayerKind::Penguin,
            Architecture::Egnn => LayerKind::Egnn,
            Architecture::E2gn2 => LayerKind::E2gn2,
            Architecture::Gnn => LayerKind::Gnn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Penguin => "penguin",
            Architecture::Egnn => "egnn",
            Architecture::E2gn2 => "e2gn2",
            Architecture::Gnn => "gnn",
        }
    }
}

/// How the symmetry score is produced for a penguin network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// Sigmoid-squashed estimator on the layer-0 node inputs.
    Learned,
    /// The same value (closed endpoints permitted) at every node and layer.
    Fixed(f64),
    /// 0 inside the open positive quadrant, 1 elsewhere (2-D only).
    Hand,
}

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Width of the layer-0 invariant features.
    pub h0_dim: usize,
    /// Spatial dimension of the coordinate embeddings.
    pub spatial_dim: usize,
    /// Invariant embedding width after each layer.
    pub hidden_dim: usize,
    /// Message width.
    pub message_dim: usize,
    pub num_layers: usize,
    /// Whether layer 0 consumes a velocity channel.
    pub with_velocity: bool,
}

impl NetConfig {
    /// The particle-world default: 2 layers of width 32 in 2-D with
    /// velocities.
    pub fn mpe(h0_dim: usize) -> Self {
        Self {
            h0_dim,
            spatial_dim: 2,
            hidden_dim: 32,
            message_dim: 32,
            num_layers: 2,
            with_velocity: true,
        }
    }
}

/// Per-node symmetry-score statistics over one forward pass (or batch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl AlphaStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        Some(Self {
            min,
            mean: sum / values.len() as f64,
            max,
        })
    }

    pub fn constant(v: f64) -> Self {
        Self { min: v, mean: v, max: v }
    }
}

/// A stack of layers with heads and (for the penguin rule) a symmetry-score
/// source.
#[derive(Debug, Clone)]
pub struct PenguinNetwork {
    pub arch: Architecture,
    pub alpha_mode: AlphaMode,
    pub cfg: NetConfig,
    pub layers: Vec<PenguinLayer>,
    /// The symmetry-score estimator `(h0, u0) -> (0,1)`; present only for
    /// `Architecture::Penguin` with `AlphaMode::Learned`.
    pub estimator: Option<Mlp>,
    /// Scalar head on the self node's final invariant embedding.
    pub value_head: Mlp,
}

impl PenguinNetwork {
    pub fn new(
        arch: Architecture,
        alpha_mode: AlphaMode,
        cfg: NetConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.num_layers == 0 {
            return Err(invalid_err!("network needs at least one layer"));
        }
        if let AlphaMode::Fixed(v) = alpha_mode {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid_err!("fixed alpha {v} outside [0, 1]"));
            }
        }
        let kind = arch.layer_kind();
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let in_h = if l == 0 { cfg.h0_dim } else { cfg.hidden_dim };
            layers.push(PenguinLayer::new(
                kind,
                in_h,
                cfg.hidden_dim,
                cfg.message_dim,
                cfg.spatial_dim,
                l == 0 && cfg.with_velocity,
                rng,
            ));
        }
        let estimator = (arch == Architecture::Penguin && alpha_mode == AlphaMode::Learned)
            .then(|| Mlp::new(cfg.h0_dim + cfg.spatial_dim, 1, rng));
        let value_head = Mlp::new(cfg.hidden_dim, 1, rng);
        Ok(Self {
            arch,
            alpha_mode,
            cfg,
            layers,
            estimator,
            value_head,
        })
    }

    /// Named parameters in a fixed traversal order (layers, estimator,
    /// value head).
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.named_params() {
                out.push((alloc::format!("layer{l}/{name}"), t));
            }
        }
        if let Some(e) = &self.estimator {
            for (name, t) in e.params() {
                out.push((alloc::format!("estimator/{name}"), t));
            }
        }
        for (name, t) in self.value_head.params() {
            out.push((alloc::format!("value_head/{name}"), t));
        }
        out
    }

    /// Mutable parameters in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.params_mut());
        }
        if let Some(e) = &mut self.estimator {
            out.extend(e.params_mut());
        }
        out.extend(self.value_head.params_mut());
        out
    }

    /// Register every parameter on `tape`; var order matches
    /// [`Self::named_params`].
    pub fn bind(&self, tape: &mut Tape) -> NetworkVars {
        let layers: Vec<LayerVars> = self.layers.iter().map(|l| l.bind(tape)).collect();
        let estimator = self.estimator.as_ref().map(|e| e.bind(tape));
        let value_head = self.value_head.bind(tape);
        NetworkVars {
            layers,
            estimator,
            value_head,
            arch: self.arch,
            alpha_mode: self.alpha_mode,
            cfg: self.cfg,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum::<usize>()
            + self.estimator.as_ref().map_or(0, |_| 6)
            + 6
    }

    /// Heads for a single observation graph.
    pub fn forward(&self, state: &GraphState) -> Result<NetworkOutput> {
        let batch = GraphBatch::from_graphs(&[state])?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = vars.forward_batch(&mut tape, &batch, ForwardOptions::default())?;
        out.single(&tape)
    }

    /// Full unpruned forward returning the final graph state alongside the
    /// heads; used by the equivariance checks.
    pub fn forward_graph(&self, state: &GraphState) -> Result<(GraphState, NetworkOutput)> {
        let batch = GraphBatch::from_graphs(&[state])?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let opts = ForwardOptions { prune_tail: false, ..Default::default() };
        let out = vars.forward_batch(&mut tape, &batch, opts)?;
        let (h, u) = out.final_nodes.expect("unpruned forward keeps node outputs");
        let graph = GraphState::new(
            tape.value(h).clone(),
            tape.value(u).clone(),
            None,
            state.roles().to_vec(),
        )?;
        Ok((graph, out.single(&tape)?))
    }
}

/// Tape-bound network parameters.
pub struct NetworkVars {
    layers: Vec<LayerVars>,
    estimator: Option<MlpVars>,
    value_head: MlpVars,
    arch: Architecture,
    alpha_mode: AlphaMode,
    cfg: NetConfig,
}

/// Forward-pass options.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Update only the self nodes in the final layer (identical head values,
    /// much less work). Node outputs are then unavailable.
    pub prune_tail: bool,
    /// Equivariance-breaking test hook forwarded to every layer.
    pub coord_axis_bias: Option<f64>,
}

/// Batched network outputs (tape variables).
pub struct BatchOutputs {
    /// `[B, n]` policy mean per graph.
    pub policy_mean: Var,
    /// `[B, 1]` value estimate per graph.
    pub value: Var,
    /// `[B*N, 1]` per-node symmetry scores, when the architecture has them.
    pub alpha: Option<Var>,
    /// Implicit score for architectures without an estimator (1 for the
    /// equivariant baselines, 0 for the plain GNN).
    pub implicit_alpha: Option<f64>,
    /// Final `(h, u)` node tensors when `prune_tail` was off.
    pub final_nodes: Option<(Var, Var)>,
    self_rows: Vec<u32>,
}

impl BatchOutputs {
    /// Collapse a single-graph batch into concrete head values.
    pub fn single(&self, tape: &Tape) -> Result<NetworkOutput> {
        let pm = tape.value(self.policy_mean);
        if pm.rows() != 1 {
            return Err(invalid_err!("single() on a {}-graph batch", pm.rows()));
        }
        Ok(NetworkOutput {
            policy_mean: Tensor::row(pm.row_slice(0))?,
            value: tape.value(self.value).item(),
            alpha_stats: self.alpha_stats(tape),
        })
    }

    /// Symmetry-score statistics over every node in the batch.
    pub fn alpha_stats(&self, tape: &Tape) -> AlphaStats {
        match (&self.alpha, self.implicit_alpha) {
            (Some(a), _) => {
                AlphaStats::from_values(tape.value(*a).data()).unwrap_or(AlphaStats::constant(0.5))
            }
            (None, Some(v)) => AlphaStats::constant(v),
            (None, None) => AlphaStats::constant(0.5),
        }
    }

    pub fn self_rows(&self) -> &[u32] {
        &self.self_rows
    }
}

/// Concrete head values for one graph.
#[derive(Debug, Clone)]
pub struct NetworkOutput {
    /// Final coordinate embedding of the self node (the action mean in 2-D
    /// worlds).
    pub policy_mean: Tensor,
    /// Scalar value estimate from the invariant pathway.
    pub value: f64,
    pub alpha_stats: AlphaStats,
}

impl NetworkVars {
    /// Tape variables of every parameter, ordered exactly like
    /// [`PenguinNetwork::named_params`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.param_vars(&mut out);
        }
        if let Some(e) = &self.estimator {
            out.extend(e.param_vars());
        }
        out.extend(self.value_head.param_vars());
        out
    }

    /// Evaluate the network over a batch of same-shape graphs.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        opts: ForwardOptions,
    ) -> Result<BatchOutputs> {
        if batch.h.cols() != self.cfg.h0_dim {
            return Err(shape_err!(
                "network expects h0 width {}, batch has {}",
                self.cfg.h0_dim,
                batch.h.cols()
            ));
        }
        if batch.u.cols() != self.cfg.spatial_dim {
            return Err(shape_err!(
                "network expects spatial dim {}, batch has {}",
                self.cfg.spatial_dim,
                batch.u.cols()
            ));
        }
        let kind = self.arch.layer_kind();
        let mut h = tape.constant(batch.h.clone());
        let mut u = tape.constant(batch.u.clone());
        let v = batch.v.clone().map(|t| tape.constant(t));

        // Per-node symmetry score from the layer-0 inputs, reused by every
        // layer.
        let (alpha, implicit_alpha) = match self.arch {
            Architecture::Penguin => (Some(self.alpha_from_inputs(tape, batch, h, u)?), None),
            Architecture::Egnn | Architecture::E2gn2 => (None, Some(1.0)),
            Architecture::Gnn => (None, Some(0.0)),
        };

        let full = Topology::full(batch);
        let hooks = LayerHooks { coord_axis_bias: opts.coord_axis_bias };
        let last = self.layers.len() - 1;
        let mut final_nodes = None;
        let mut heads = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let prune_here = opts.prune_tail && l == last;
            let topo = if prune_here { Topology::self_only(batch) } else { full.clone() };
            let io = LayerIo {
                h,
                u,
                v: if l == 0 { v } else { None },
                alpha,
            };
            let (h_next, u_next) = layer_forward(tape, layer, kind, &topo, &io, hooks, None)?;
            if l == last {
                if prune_here {
                    // Rows already correspond to graphs.
                    heads = Some((h_next, u_next));
                } else {
                    final_nodes = Some((h_next, u_next));
                    let self_rows: alloc::rc::Rc<[u32]> = batch.self_rows.clone().into();
                    let hs = tape.gather_rows(h_next, self_rows.clone())?;
                    let us = tape.gather_rows(u_next, self_rows)?;
                    heads = Some((hs, us));
                }
            } else {
                h = h_next;
                u = u_next;
            }
        }
        let (h_self, u_self) = heads.expect("at least one layer");
        let value = self.value_head.forward(tape, h_self)?;
        Ok(BatchOutputs {
            policy_mean: u_self,
            value,
            alpha,
            implicit_alpha,
            final_nodes,
            self_rows: batch.self_rows.clone(),
        })
    }

    /// `[B*N, 1]` symmetry scores for a penguin network.
    fn alpha_from_inputs(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        h: Var,
        u: Var,
    ) -> Result<Var> {
        match self.alpha_mode {
            AlphaMode::Learned => {
                let est = self
                    .estimator
                    .as_ref()
                    .ok_or_else(|| invalid_err!("learned alpha mode without estimator"))?;
                let input = tape.concat_cols(&[h, u])?;
                let raw = est.forward(tape, input)?;
                tape.ensure_finite(raw, "phi_alpha output")?;
                tape.sigmoid(raw)
            }
            AlphaMode::Fixed(v) => {
                Ok(tape.constant(Tensor::full(batch.total_nodes(), 1, v)))
            }
            AlphaMode::Hand => {
                let values = hand_designed_alpha_rows(&batch.u)?;
                Ok(tape.constant(Tensor::new(values.len(), 1, values)?))
            }
        }
    }
}

/// Squashed estimator output for each node of a graph: `sigmoid(phi_alpha
/// (h0, u0))`, strictly inside (0, 1) for finite inputs.
pub fn estimate_alpha(estimator: &Mlp, state: &GraphState) -> Result<Vec<f64>> {
    if estimator.in_dim() != state.h_dim() + state.spatial_dim() {
        return Err(shape_err!(
            "estimator expects {} inputs, graph provides {}",
            estimator.in_dim(),
            state.h_dim() + state.spatial_dim()
        ));
    }
    let n = state.num_nodes();
    let mut input = Tensor::zeros(n, state.h_dim() + state.spatial_dim());
    for i in 0..n {
        let row = &mut input.data_mut()
            [i * (state.h_dim() + state.spatial_dim())..(i + 1) * (state.h_dim() + state.spatial_dim())];
        row[..state.h_dim()].copy_from_slice(state.h().row_slice(i));
        row[state.h_dim()..].copy_from_slice(state.u().row_slice(i));
    }
    let raw = estimator.forward_tensor(&input)?;
    Ok(raw.data().iter().map(|&v| crate::math::sigmoid(v)).collect())
}

/// Domain-knowledge score: 0 where both coordinates are strictly positive,
/// 1 elsewhere. Requires 2-D coordinates.
pub fn hand_designed_alpha(state: &GraphState) -> Result<Vec<f64>> {
    if state.spatial_dim() != 2 {
        return Err(invalid_err!(
            "hand-designed alpha is defined for 2-D coordinates"
        ));
    }
    hand_designed_alpha_rows(state.u())
}

fn hand_designed_alpha_rows(u: &Tensor) -> Result<Vec<f64>> {
    if u.cols() != 2 {
        return Err(invalid_err!("hand-designed alpha needs 2-D rows"));
    }
    Ok((0..u.rows())
        .map(|i| {
            if u.get(i, 0) > 0.0 && u.get(i, 1) > 0.0 {
                0.0
            } else {
                1.0
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeRole;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe_graph(n: usize, h0: usize, seed: u64) -> GraphState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GraphState::synthetic(
            Tensor::from_fn(n, h0, |_, _| rng.random_range(-1.0..1.0)),
            Tensor::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0)),
            Some(Tensor::from_fn(n, 2, |_, _| rng.random_range(-0.5..0.5))),
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_estimator_gives_half() {
        let est = Mlp::zeroed(5 + 2, 1);
        let g = probe_graph(4, 5, 1);
        let alpha = estimate_alpha(&est, &g).unwrap();
        assert!(alpha.iter().all(|&a| (a - 0.5).abs() < 1e-15));
    }

    #[test]
    fn identical_nodes_get_identical_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = Mlp::new(3 + 2, 1, &mut rng);
        let h = Tensor::new(2, 3, vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.3]).unwrap();
        let u = Tensor::new(2, 2, vec![0.4, -0.6, 0.4, -0.6]).unwrap();
        let g = GraphState::synthetic(h, u, None).unwrap();
        let alpha = estimate_alpha(&est, &g).unwrap();
        assert_eq!(alpha[0], alpha[1]);
        assert!(alpha[0] > 0.0 && alpha[0] < 1.0);
    }

    #[test]
    fn hand_alpha_rule() {
        let u = Tensor::new(3, 2, vec![0.5, 0.5, -0.5, 0.5, 0.0, 0.0]).unwrap();
        let g = GraphState::synthetic(Tensor::zeros(3, 1), u, None).unwrap();
        assert_eq!(hand_designed_alpha(&g).unwrap(), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn fixed_alpha_stats_are_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PenguinNetwork::new(
            Architecture::Penguin,
            AlphaMode::Fixed(0.7),
            NetConfig::mpe(5),
            &mut rng,
        )
        .unwrap();
        let g = probe_graph(4, 5, 5);
        let out = net.forward(&g).unwrap();
        assert_eq!(out.alpha_stats, AlphaStats::constant(0.7));
    }

    #[test]
    fn single_node_graph_supports_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = PenguinNetwork::new(
            Architecture::Penguin,
            AlphaMode::Learned,
            NetConfig::mpe(5),
            &mut rng,
        )
        .unwrap();
        let g = probe_graph(1, 5, 7);
        let out = net.forward(&g).unwrap();
        assert!(out.policy_mean.all_finite());
        assert!(out.value.is_finite());
    }

    #[test]
    fn pruned_and_full_forward_agree_on_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for arch in [
            Architecture::Penguin,
            Architecture::Egnn,
            Architecture::E2gn2,
            Architecture::Gnn,
        ] {
            let net = PenguinNetwork::new(arch, AlphaMode::Learned, NetConfig::mpe(5), &mut rng)
                .unwrap();
            let graphs: Vec<GraphState> = (0..3).map(|i| probe_graph(5, 5, 100 + i)).collect();
            let refs: Vec<&GraphState> = graphs.iter().collect();
            let batch = GraphBatch::from_graphs(&refs).unwrap();

            let mut t1 = Tape::new();
            let v1 = net.bind(&mut t1);
            let full = v1
                .forward_batch(&mut t1, &batch, ForwardOptions::default())
                .unwrap();
            let mut t2 = Tape::new();
            let v2 = net.bind(&mut t2);
            let pruned = v2
                .forward_batch(
                    &mut t2,
                    &batch,
                    ForwardOptions { prune_tail: true, ..Default::default() },
                )
                .unwrap();

            let a = t1.value(full.policy_mean);
            let b = t2.value(pruned.policy_mean);
            assert!(a.max_abs_diff(b).unwrap() < 1e-14, "{arch:?} policy");
            let av = t1.value(full.value);
            let bv = t2.value(pruned.value);
            assert!(av.max_abs_diff(bv).unwrap() < 1e-14, "{arch:?} value");
        }
    }

    #[test]
    fn forward_requires_unique_self_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net =
            PenguinNetwork::new(Architecture::Gnn, AlphaMode::Learned, NetConfig::mpe(3), &mut rng)
                .unwrap();
        let h = Tensor::zeros(2, 3);
        let u = Tensor::zeros(2, 2);
        let v = Tensor::zeros(2, 2);
        let g = GraphState::new(h, u, Some(v), vec![NodeRole::Teammate, NodeRole::Landmark])
            .unwrap();
        assert!(net.forward(&g).is_err());
    }
}
