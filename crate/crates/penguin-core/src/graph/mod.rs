//! Graph states, batching, and the partially equivariant layer stack.

mod layers;
mod network;

pub use layers::{
    e2gn2_layer_forward, egnn_layer_forward, gnn_layer_forward, penguin_layer_forward,
    penguin_layer_with_branches, LayerKind, PenguinBranches, PenguinLayer,
};
pub use network::{
    estimate_alpha, hand_designed_alpha, AlphaMode, AlphaStats, Architecture, BatchOutputs,
    ForwardOptions, NetConfig, NetworkOutput, NetworkVars, PenguinNetwork,
};

use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::error::{invalid_err, shape_err, Result};
use crate::tensor::Tensor;

/// Entity category attached to each node. Observations may disguise a decoy
/// as the objective it mimics; `roles` always records the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    AgentSelf,
    Teammate,
    Adversary,
    Landmark,
    Decoy,
}

/// Per-node invariant features `h`, coordinate embeddings `u`, and optional
/// layer-0 velocities over a complete graph (all ordered pairs, no
/// self-edges — the layer code enumerates exactly that edge set).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    h: Tensor,
    u: Tensor,
    v: Option<Tensor>,
    roles: Vec<NodeRole>,
}

impl GraphState {
    pub fn new(h: Tensor, u: Tensor, v: Option<Tensor>, roles: Vec<NodeRole>) -> Result<Self> {
        let n = h.rows();
        if u.rows() != n {
            return Err(shape_err!("h has {n} nodes but u has {}", u.rows()));
        }
        if roles.len() != n {
            return Err(shape_err!("{n} nodes but {} roles", roles.len()));
        }
        if let Some(v) = &v {
            if v.shape() != u.shape() {
                return Err(shape_err!(
                    "velocity shape {:?} differs from coordinate shape {:?}",
                    v.shape(),
                    u.shape()
                ));
            }
        }
        Ok(Self { h, u, v, roles })
    }

    /// Synthetic state with all nodes marked `Teammate` except node 0
    /// (`AgentSelf`) — convenient for layer-level tests and probes.
    pub fn synthetic(h: Tensor, u: Tensor, v: Option<Tensor>) -> Result<Self> {
        let n = h.rows();
        let mut roles = alloc::vec![NodeRole::Teammate; n];
        if n > 0 {
            roles[0] = NodeRole::AgentSelf;
        }
        Self::new(h, u, v, roles)
    }

    pub fn num_nodes(&self) -> usize {
        self.h.rows()
    }

    pub fn h_dim(&self) -> usize {
        self.h.cols()
    }

    pub fn spatial_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn h(&self) -> &Tensor {
        &self.h
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }

    pub fn velocity(&self) -> Option<&Tensor> {
        self.v.as_ref()
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    /// Index of the unique `AgentSelf` node, if exactly one exists.
    pub fn self_index(&self) -> Result<usize> {
        let mut found = None;
        for (i, r) in self.roles.iter().enumerate() {
            if *r == NodeRole::AgentSelf {
                if found.is_some() {
                    return Err(invalid_err!("multiple agent-self nodes"));
                }
                found = Some(i);
            }
        }
        found.ok_or_else(|| invalid_err!("no agent-self node"))
    }

    /// Replace coordinates (and velocities when given), keeping features.
    pub fn with_geometry(&self, u: Tensor, v: Option<Tensor>) -> Result<Self> {
        Self::new(self.h.clone(), u, v, self.roles.clone())
    }
}

/// A stack of same-shape graphs flattened into contiguous node rows for
/// batched evaluation.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub h: Tensor,
    pub u: Tensor,
    pub v: Option<Tensor>,
    pub graphs: usize,
    pub nodes_per_graph: usize,
    /// Row of the agent-self node for each graph.
    pub self_rows: Vec<u32>,
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[&GraphState]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| invalid_err!("empty graph batch"))?;
        let n = first.num_nodes();
        let hd = first.h_dim();
        let sd = first.spatial_dim();
        let has_v = first.v.is_some();
        let b = graphs.len();

        let mut h = Tensor::zeros(b * n, hd);
        let mut u = Tensor::zeros(b * n, sd);
        let mut v = if has_v { Some(Tensor::zeros(b * n, sd)) } else { None };
        let mut self_rows = Vec::with_capacity(b);

        for (gi, g) in graphs.iter().enumerate() {
            if g.num_nodes() != n || g.h_dim() != hd || g.spatial_dim() != sd || g.v.is_some() != has_v {
                return Err(shape_err!("graph {gi} differs in shape from graph 0"));
            }
            let row0 = gi * n;
            h.data_mut()[row0 * hd..(row0 + n) * hd].copy_from_slice(g.h.data());
            u.data_mut()[row0 * sd..(row0 + n) * sd].copy_from_slice(g.u.data());
            if let (Some(dst), Some(src)) = (v.as_mut(), g.v.as_ref()) {
                dst.data_mut()[row0 * sd..(row0 + n) * sd].copy_from_slice(src.data());
            }
            self_rows.push((row0 + g.self_index()?) as u32);
        }
        Ok(Self {
            h,
            u,
            v,
            graphs: b,
            nodes_per_graph: n,
            self_rows,
        })
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs * self.nodes_per_graph
    }
}

/// Edge/aggregation index tables for one layer evaluation.
///
/// `pair_src[p]`/`pair_dst[p]` are input node rows of the ordered pair
/// (i, j); messages scatter into `pair_out[p]` over `out_rows` slots, and
/// `node_rows` maps each output slot back to its input node row.
#[derive(Debug, Clone)]
pub(crate) struct Topology {
    pub pair_src: Rc<[u32]>,
    pub pair_dst: Rc<[u32]>,
    pub pair_out: Rc<[u32]>,
    pub out_rows: usize,
    pub node_rows: Rc<[u32]>,
}

impl Topology {
    /// Complete-graph message passing updating every node.
    pub fn full(batch: &GraphBatch) -> Self {
        let (b, n) = (batch.graphs, batch.nodes_per_graph);
        let pairs = b * n * n.saturating_sub(1);
        let mut src = Vec::with_capacity(pairs);
        let mut dst = Vec::with_capacity(pairs);
        for g in 0..b {
            let base = (g * n) as u32;
            for i in 0..n as u32 {
                for j in 0..n as u32 {
                    if i != j {
                        src.push(base + i);
                        dst.push(base + j);
                    }
                }
            }
        }
        let src: Rc<[u32]> = src.into();
        Self {
            pair_src: src.clone(),
            pair_dst: dst.into(),
            pair_out: src.clone(),
            out_rows: b * n,
            node_rows: (0..(b * n) as u32).collect::<Vec<_>>().into(),
        }
    }

    /// Message passing that only updates each graph's agent-self node; used
    /// for the final layer when only the head outputs are needed. Produces
    /// identical values for those nodes as [`Topology::full`].
    pub fn self_only(batch: &GraphBatch) -> Self {
        let (b, n) = (batch.graphs, batch.nodes_per_graph);
        let mut src = Vec::with_capacity(b * (n - 1));
        let mut dst = Vec::with_capacity(b * (n - 1));
        let mut out = Vec::with_capacity(b * (n - 1));
        for (g, &self_row) in batch.self_rows.iter().enumerate() {
            let base = (g * n) as u32;
            for j in 0..n as u32 {
                if base + j != self_row {
                    src.push(self_row);
                    dst.push(base + j);
                    out.push(g as u32);
                }
            }
        }
        Self {
            pair_src: src.into(),
            pair_dst: dst.into(),
            pair_out: out.into(),
            out_rows: b,
            node_rows: batch.self_rows.clone().into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny_graph(n: usize) -> GraphState {
        GraphState::synthetic(
            Tensor::from_fn(n, 3, |i, j| (i * 3 + j) as f64 * 0.1),
            Tensor::from_fn(n, 2, |i, j| (i + j) as f64),
            None,
        )
        .unwrap()
    }

    #[test]
    fn batch_stacks_rows_and_tracks_self() {
        let g0 = tiny_graph(3);
        let g1 = tiny_graph(3);
        let b = GraphBatch::from_graphs(&[&g0, &g1]).unwrap();
        assert_eq!(b.total_nodes(), 6);
        assert_eq!(b.self_rows, vec![0, 3]);
        assert_eq!(b.h.row_slice(4), g1.h().row_slice(1));
    }

    #[test]
    fn full_topology_enumerates_ordered_pairs() {
        let g = tiny_graph(3);
        let b = GraphBatch::from_graphs(&[&g]).unwrap();
        let t = Topology::full(&b);
        assert_eq!(t.pair_src.len(), 6); // 3 * 2 ordered pairs
        assert_eq!(t.out_rows, 3);
        // Every ordered pair (i, j), i != j appears exactly once.
        let mut seen: Vec<(u32, u32)> = t
            .pair_src
            .iter()
            .zip(t.pair_dst.iter())
            .map(|(&a, &b)| (a, b))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn self_only_topology_restricts_to_flagged_node() {
        let g = tiny_graph(4);
        let b = GraphBatch::from_graphs(&[&g, &g]).unwrap();
        let t = Topology::self_only(&b);
        assert_eq!(t.pair_src.len(), 6); // 3 neighbours per graph
        assert_eq!(t.out_rows, 2);
        assert!(t.pair_src.iter().all(|&s| s == 0 || s == 4));
    }

    #[test]
    fn self_index_errors_without_unique_self() {
        let h = Tensor::zeros(2, 1);
        let u = Tensor::zeros(2, 2);
        let g = GraphState::new(h, u, None, vec![NodeRole::Teammate, NodeRole::Landmark]).unwrap();
        assert!(g.self_index().is_err());
    }
}
