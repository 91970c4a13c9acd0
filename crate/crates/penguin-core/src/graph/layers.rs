//! The partially equivariant message-passing layer and its limiting cases.
//!
//! One layer update for node i with symmetry score `alpha_i`:
//!
//! ```text
//! m_ij     = phi_m(h_i, h_j, ||u_i - u_j||^2)              (equivariant msg)
//! n_ij     = phi_n(h_i, h_j, u_i, u_j)                     (plain msg)
//! m_i      = alpha_i * sum_j m_ij + (1 - alpha_i) * sum_j n_ij
//! u_i_eq   = u_i * phi_e(m_i) + sum_j (u_i - u_j) * phi_u(m_ij)
//!            [+ v_i * phi_v(m_i) on the first layer]
//! h_i', u_i_p = split(phi_h(h_i, m_i))
//! u_i'     = alpha_i * u_i_eq + (1 - alpha_i) * u_i_p
//! ```
//!
//! `alpha = 1` reduces to the gated equivariant update (E2GN2), `alpha = 0`
//! to plain message passing on the concatenated node vector (GNN); both are
//! exposed as dedicated forwards that skip the dead branch, along with the
//! classic additive-skip EGNN coordinate update.

use alloc::vec::Vec;

use rand::Rng;

use super::{GraphBatch, GraphState, Topology};
use crate::error::{invalid_err, shape_err, Result};
use crate::nn::{Mlp, MlpVars};
use crate::tensor::{Tape, Tensor, Var};

/// Which update rule a forward pass applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Blend of both branches, per-node alpha.
    Penguin,
    /// Gated equivariant coordinate update (`alpha = 1` limit).
    E2gn2,
    /// Additive-skip equivariant coordinate update.
    Egnn,
    /// Plain message passing (`alpha = 0` limit).
    Gnn,
}

/// Weights for one layer. MLPs a given architecture never evaluates are
/// absent; the full set is:
///
/// - `phi_m`: `2h+1 -> M` equivariant message
/// - `phi_n`: `2h+2n -> M` non-equivariant message
/// - `phi_e`: `M -> 1` coordinate gate
/// - `phi_u`: `M -> 1` relative-position gate (output layer damped at init)
/// - `phi_v`: `M -> 1` velocity gate, first layer only
/// - `phi_h`: `h+M -> H+n`, split into the feature update and `u_p`
#[derive(Debug, Clone)]
pub struct PenguinLayer {
    pub phi_m: Option<Mlp>,
    pub phi_n: Option<Mlp>,
    pub phi_e: Option<Mlp>,
    pub phi_u: Option<Mlp>,
    pub phi_v: Option<Mlp>,
    pub phi_h: Mlp,
    in_h: usize,
    out_h: usize,
    msg: usize,
    spatial: usize,
}

impl PenguinLayer {
    /// Build a layer for `kind` with input feature width `in_h`, output
    /// feature width `out_h`, message width `msg`, and spatial dimension
    /// `spatial`. `with_velocity` adds the first-layer velocity gate.
    pub fn new(
        kind: LayerKind,
        in_h: usize,
        out_h: usize,
        msg: usize,
        spatial: usize,
        with_velocity: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let equivariant = !matches!(kind, LayerKind::Gnn);
        let plain = matches!(kind, LayerKind::Penguin | LayerKind::Gnn);
        let phi_m = equivariant.then(|| Mlp::new(2 * in_h + 1, msg, rng));
        let phi_n = plain.then(|| Mlp::new(2 * in_h + 2 * spatial, msg, rng));
        let phi_e = matches!(kind, LayerKind::Penguin | LayerKind::E2gn2)
            .then(|| Mlp::new(msg, 1, rng));
        let phi_u = equivariant.then(|| {
            let mut m = Mlp::new(msg, 1, rng);
            // The coordinate update multiplies relative positions; damp it
            // so early steps stay small.
            m.scale_output(0.01);
            m
        });
        let phi_v = (equivariant && with_velocity).then(|| Mlp::new(msg, 1, rng));
        let phi_h = Mlp::new(in_h + msg, out_h + spatial, rng);
        Self {
            phi_m,
            phi_n,
            phi_e,
            phi_u,
            phi_v,
            phi_h,
            in_h,
            out_h,
            msg,
            spatial,
        }
    }

    pub fn in_h(&self) -> usize {
        self.in_h
    }

    pub fn out_h(&self) -> usize {
        self.out_h
    }

    pub fn message_dim(&self) -> usize {
        self.msg
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial
    }

    /// Named parameter traversal in a fixed order.
    pub fn named_params(&self) -> Vec<(alloc::string::String, &Tensor)> {
        let mut out = Vec::new();
        for (name, mlp) in self.mlps() {
            for (pname, t) in mlp.params() {
                out.push((alloc::format!("{name}/{pname}"), t));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for mlp in [
            self.phi_m.as_mut(),
            self.phi_n.as_mut(),
            self.phi_e.as_mut(),
            self.phi_u.as_mut(),
            self.phi_v.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            out.extend(mlp.params_mut());
        }
        out.extend(self.phi_h.params_mut());
        out
    }

    fn mlps(&self) -> Vec<(&'static str, &Mlp)> {
        let mut out = Vec::new();
        if let Some(m) = &self.phi_m {
            out.push(("phi_m", m));
        }
        if let Some(m) = &self.phi_n {
            out.push(("phi_n", m));
        }
        if let Some(m) = &self.phi_e {
            out.push(("phi_e", m));
        }
        if let Some(m) = &self.phi_u {
            out.push(("phi_u", m));
        }
        if let Some(m) = &self.phi_v {
            out.push(("phi_v", m));
        }
        out.push(("phi_h", &self.phi_h));
        out
    }

    pub(crate) fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            phi_m: self.phi_m.as_ref().map(|m| m.bind(tape)),
            phi_n: self.phi_n.as_ref().map(|m| m.bind(tape)),
            phi_e: self.phi_e.as_ref().map(|m| m.bind(tape)),
            phi_u: self.phi_u.as_ref().map(|m| m.bind(tape)),
            phi_v: self.phi_v.as_ref().map(|m| m.bind(tape)),
            phi_h: self.phi_h.bind(tape),
            out_h: self.out_h,
            spatial: self.spatial,
        }
    }

    pub(crate) fn param_count(&self) -> usize {
        self.mlps().len() * 6
    }
}

/// Tape-bound layer weights.
pub(crate) struct LayerVars {
    phi_m: Option<MlpVars>,
    phi_n: Option<MlpVars>,
    phi_e: Option<MlpVars>,
    phi_u: Option<MlpVars>,
    phi_v: Option<MlpVars>,
    phi_h: MlpVars,
    out_h: usize,
    spatial: usize,
}

impl LayerVars {
    pub fn param_vars(&self, out: &mut Vec<Var>) {
        for m in [&self.phi_m, &self.phi_n, &self.phi_e, &self.phi_u, &self.phi_v]
            .into_iter()
            .flatten()
        {
            out.extend(m.param_vars());
        }
        out.extend(self.phi_h.param_vars());
    }

    fn phi(&self, which: &'static str) -> Result<&MlpVars> {
        let slot = match which {
            "phi_m" => &self.phi_m,
            "phi_n" => &self.phi_n,
            "phi_e" => &self.phi_e,
            "phi_u" => &self.phi_u,
            "phi_v" => &self.phi_v,
            _ => return Err(invalid_err!("unknown mlp {which}")),
        };
        slot.as_ref()
            .ok_or_else(|| invalid_err!("layer is missing {which} for this update rule"))
    }
}

/// Inputs/outputs of one batched layer evaluation.
pub(crate) struct LayerIo {
    /// `[R, h]` node features.
    pub h: Var,
    /// `[R, n]` coordinates.
    pub u: Var,
    /// `[R, n]` velocities, consumed only when the layer has `phi_v`.
    pub v: Option<Var>,
    /// `[R, 1]` per-node symmetry score (penguin rule only).
    pub alpha: Option<Var>,
}

/// Optional test hook: adds a constant along the first coordinate axis to
/// every pair term of the equivariant coordinate update, breaking rotation
/// equivariance on purpose (used by the verification command's mutation
/// mode).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LayerHooks {
    pub coord_axis_bias: Option<f64>,
}

/// Intermediate values of one layer evaluation, captured for the blend
/// interpolation checks.
pub(crate) struct LayerTrace {
    /// Aggregated equivariant messages before blending.
    pub sum_m: Option<Var>,
    /// Aggregated plain messages before blending.
    pub sum_n: Option<Var>,
    /// Blended (or sole) aggregated message.
    pub m_i: Var,
    /// Equivariant coordinate candidate.
    pub u_eq: Option<Var>,
    /// Plain coordinate candidate from the feature update.
    pub u_p: Var,
}

/// Evaluate one layer over a batch. Returns `[out_rows, out_h]` features and
/// `[out_rows, n]` coordinates following `topo`'s output slots. When `trace`
/// is given, intermediate variables are stored there.
pub(crate) fn layer_forward(
    tape: &mut Tape,
    vars: &LayerVars,
    kind: LayerKind,
    topo: &Topology,
    io: &LayerIo,
    hooks: LayerHooks,
    trace: Option<&mut Option<LayerTrace>>,
) -> Result<(Var, Var)> {
    let hi = tape.gather_rows(io.h, topo.pair_src.clone())?;
    let hj = tape.gather_rows(io.h, topo.pair_dst.clone())?;
    let ui = tape.gather_rows(io.u, topo.pair_src.clone())?;
    let uj = tape.gather_rows(io.u, topo.pair_dst.clone())?;
    let du = tape.sub(ui, uj)?;

    let needs_equivariant = !matches!(kind, LayerKind::Gnn);
    let needs_plain = matches!(kind, LayerKind::Penguin | LayerKind::Gnn);

    // Pair messages.
    let m_ij = if needs_equivariant {
        let sq = tape.mul(du, du)?;
        let dist2 = tape.sum_cols(sq)?;
        let input = tape.concat_cols(&[hi, hj, dist2])?;
        let m = vars.phi("phi_m")?.forward(tape, input)?;
        tape.ensure_finite(m, "phi_m output")?;
        Some(m)
    } else {
        None
    };
    let n_ij = if needs_plain {
        let input = tape.concat_cols(&[hi, hj, ui, uj])?;
        let n = vars.phi("phi_n")?.forward(tape, input)?;
        tape.ensure_finite(n, "phi_n output")?;
        Some(n)
    } else {
        None
    };

    // Aggregation, blended by alpha for the penguin rule.
    let (alpha_out, one_minus_alpha) = match (kind, io.alpha) {
        (LayerKind::Penguin, Some(alpha)) => {
            let a = tape.gather_rows(alpha, topo.node_rows.clone())?;
            let neg = tape.scale(a, -1.0)?;
            let om = tape.add_scalar(neg, 1.0)?;
            (Some(a), Some(om))
        }
        (LayerKind::Penguin, None) => {
            return Err(invalid_err!("penguin layer needs per-node alpha"));
        }
        _ => (None, None),
    };

    let mut traced_sums = (None, None);
    let m_i = match kind {
        LayerKind::Penguin => {
            let sum_m = tape.scatter_add_rows(m_ij.unwrap(), topo.pair_out.clone(), topo.out_rows)?;
            let sum_n = tape.scatter_add_rows(n_ij.unwrap(), topo.pair_out.clone(), topo.out_rows)?;
            traced_sums = (Some(sum_m), Some(sum_n));
            let am = tape.mul_col(sum_m, alpha_out.unwrap())?;
            let an = tape.mul_col(sum_n, one_minus_alpha.unwrap())?;
            tape.add(am, an)?
        }
        LayerKind::E2gn2 | LayerKind::Egnn => {
            tape.scatter_add_rows(m_ij.unwrap(), topo.pair_out.clone(), topo.out_rows)?
        }
        LayerKind::Gnn => {
            tape.scatter_add_rows(n_ij.unwrap(), topo.pair_out.clone(), topo.out_rows)?
        }
    };

    // Equivariant coordinate pathway.
    let u_nodes = tape.gather_rows(io.u, topo.node_rows.clone())?;
    let u_eq = if needs_equivariant {
        let gate_u = vars.phi("phi_u")?.forward(tape, m_ij.unwrap())?;
        tape.ensure_finite(gate_u, "phi_u output")?;
        let mut terms = tape.mul_col(du, gate_u)?;
        if let Some(bias) = hooks.coord_axis_bias {
            let rows = tape.value(terms).rows();
            let mut shift = Tensor::zeros(rows, vars.spatial);
            for r in 0..rows {
                shift.set(r, 0, bias);
            }
            let shift = tape.constant(shift);
            terms = tape.add(terms, shift)?;
        }
        let coord_sum = tape.scatter_add_rows(terms, topo.pair_out.clone(), topo.out_rows)?;
        let mut u_eq = match kind {
            LayerKind::Egnn => tape.add(u_nodes, coord_sum)?,
            _ => {
                let gate_e = vars.phi("phi_e")?.forward(tape, m_i)?;
                tape.ensure_finite(gate_e, "phi_e output")?;
                let gated = tape.mul_col(u_nodes, gate_e)?;
                tape.add(gated, coord_sum)?
            }
        };
        if let (Some(phi_v), Some(v)) = (&vars.phi_v, io.v) {
            let gate_v = phi_v.forward(tape, m_i)?;
            tape.ensure_finite(gate_v, "phi_v output")?;
            let v_nodes = tape.gather_rows(v, topo.node_rows.clone())?;
            let vterm = tape.mul_col(v_nodes, gate_v)?;
            u_eq = tape.add(u_eq, vterm)?;
        }
        Some(u_eq)
    } else {
        None
    };

    // Feature update; the trailing `spatial` columns are the plain-branch
    // coordinate candidate u_p.
    let h_nodes = tape.gather_rows(io.h, topo.node_rows.clone())?;
    let h_input = tape.concat_cols(&[h_nodes, m_i])?;
    let ph = vars.phi_h.forward(tape, h_input)?;
    tape.ensure_finite(ph, "phi_h output")?;
    let h_next = tape.slice_cols(ph, 0, vars.out_h)?;
    let u_p = tape.slice_cols(ph, vars.out_h, vars.spatial)?;

    let u_next = match kind {
        LayerKind::Penguin => {
            let eq = tape.mul_col(u_eq.unwrap(), alpha_out.unwrap())?;
            let pl = tape.mul_col(u_p, one_minus_alpha.unwrap())?;
            tape.add(eq, pl)?
        }
        LayerKind::E2gn2 | LayerKind::Egnn => u_eq.unwrap(),
        LayerKind::Gnn => u_p,
    };
    if let Some(slot) = trace {
        *slot = Some(LayerTrace {
            sum_m: traced_sums.0,
            sum_n: traced_sums.1,
            m_i,
            u_eq,
            u_p,
        });
    }
    Ok((h_next, u_next))
}

// ── Single-graph entry points ──────────────────────────────────────────────

fn single_graph_layer(
    layer: &PenguinLayer,
    state: &GraphState,
    kind: LayerKind,
    alpha: Option<&[f64]>,
) -> Result<GraphState> {
    if state.h_dim() != layer.in_h {
        return Err(shape_err!(
            "layer expects h width {}, graph has {}",
            layer.in_h,
            state.h_dim()
        ));
    }
    if state.spatial_dim() != layer.spatial {
        return Err(shape_err!(
            "layer expects spatial dim {}, graph has {}",
            layer.spatial,
            state.spatial_dim()
        ));
    }
    let mut tape = Tape::new();
    let batch = GraphBatch::from_graphs(&[state])?;
    let topo = Topology::full(&batch);
    let vars = layer.bind(&mut tape);
    let h = tape.constant(batch.h.clone());
    let u = tape.constant(batch.u.clone());
    let v = batch.v.clone().map(|t| tape.constant(t));
    let alpha_var = match alpha {
        Some(a) => {
            if a.len() != state.num_nodes() {
                return Err(shape_err!(
                    "{} alpha values for {} nodes",
                    a.len(),
                    state.num_nodes()
                ));
            }
            Some(tape.constant(Tensor::new(a.len(), 1, a.to_vec())?))
        }
        None => None,
    };
    let io = LayerIo { h, u, v, alpha: alpha_var };
    let (h_next, u_next) =
        layer_forward(&mut tape, &vars, kind, &topo, &io, LayerHooks::default(), None)?;
    GraphState::new(
        tape.value(h_next).clone(),
        tape.value(u_next).clone(),
        None,
        state.roles().to_vec(),
    )
}

/// Run one penguin update and expose the internal branch values alongside
/// the outputs; used to verify that blending happens at exactly the two
/// convex-combination sites.
pub fn penguin_layer_with_branches(
    layer: &PenguinLayer,
    state: &GraphState,
    alpha: &[f64],
) -> Result<PenguinBranches> {
    let mut tape = Tape::new();
    let batch = GraphBatch::from_graphs(&[state])?;
    let topo = Topology::full(&batch);
    let vars = layer.bind(&mut tape);
    let h = tape.constant(batch.h.clone());
    let u = tape.constant(batch.u.clone());
    let v = batch.v.clone().map(|t| tape.constant(t));
    let alpha_var = tape.constant(Tensor::new(alpha.len(), 1, alpha.to_vec())?);
    let io = LayerIo { h, u, v, alpha: Some(alpha_var) };
    let mut trace = None;
    let (h_next, u_next) = layer_forward(
        &mut tape,
        &vars,
        LayerKind::Penguin,
        &topo,
        &io,
        LayerHooks::default(),
        Some(&mut trace),
    )?;
    let trace = trace.expect("trace requested");
    let take = |v: Var| tape.value(v).clone();
    Ok(PenguinBranches {
        sum_m: take(trace.sum_m.expect("penguin records sum_m")),
        sum_n: take(trace.sum_n.expect("penguin records sum_n")),
        m_i: take(trace.m_i),
        u_eq: take(trace.u_eq.expect("penguin records u_eq")),
        u_p: take(trace.u_p),
        h_next: take(h_next),
        u_next: take(u_next),
    })
}

/// Branch values of one penguin layer evaluation (see
/// [`penguin_layer_with_branches`]).
#[derive(Debug, Clone)]
pub struct PenguinBranches {
    pub sum_m: Tensor,
    pub sum_n: Tensor,
    pub m_i: Tensor,
    pub u_eq: Tensor,
    pub u_p: Tensor,
    pub h_next: Tensor,
    pub u_next: Tensor,
}

/// One partially equivariant update with per-node symmetry scores
/// (endpoints 0 and 1 are permitted and reproduce the limiting rules).
pub fn penguin_layer_forward(
    layer: &PenguinLayer,
    state: &GraphState,
    alpha: &[f64],
) -> Result<GraphState> {
    single_graph_layer(layer, state, LayerKind::Penguin, Some(alpha))
}

/// The `alpha = 1` specialization: gated equivariant coordinate update, no
/// plain branch.
pub fn e2gn2_layer_forward(layer: &PenguinLayer, state: &GraphState) -> Result<GraphState> {
    single_graph_layer(layer, state, LayerKind::E2gn2, None)
}

/// Classic equivariant update with an additive coordinate skip:
/// `u_i' = u_i + sum_j (u_i - u_j) phi_u(m_ij)`.
pub fn egnn_layer_forward(layer: &PenguinLayer, state: &GraphState) -> Result<GraphState> {
    single_graph_layer(layer, state, LayerKind::Egnn, None)
}

/// Plain message passing over the concatenated node vector `(h_i, u_i)`:
/// `n_ij = phi_n(h_i, h_j, u_i, u_j)`, `h', u' = split(phi_h(h_i, sum n_ij))`.
/// There is no coordinate pathway; `u'` is just the trailing slice of the
/// feature update.
pub fn gnn_layer_forward(layer: &PenguinLayer, state: &GraphState) -> Result<GraphState> {
    single_graph_layer(layer, state, LayerKind::Gnn, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, h_dim: usize, spatial: usize, seed: u64) -> GraphState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GraphState::synthetic(
            Tensor::from_fn(n, h_dim, |_, _| rng.random_range(-1.0..1.0)),
            Tensor::from_fn(n, spatial, |_, _| rng.random_range(-1.0..1.0)),
            Some(Tensor::from_fn(n, spatial, |_, _| rng.random_range(-0.5..0.5))),
        )
        .unwrap()
    }

    #[test]
    fn single_node_graph_aggregates_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = PenguinLayer::new(LayerKind::Penguin, 4, 8, 8, 2, true, &mut rng);
        let g = random_graph(1, 4, 2, 9);
        let out = penguin_layer_forward(&layer, &g, &[0.4]).unwrap();
        // With no neighbours the aggregated message is all zeros, so the
        // feature update must equal phi_h(h, 0).
        let mut input = alloc::vec::Vec::new();
        input.extend_from_slice(g.h().row_slice(0));
        input.extend_from_slice(&[0.0; 8]);
        let expect = layer
            .phi_h
            .forward_tensor(&Tensor::row(&input).unwrap())
            .unwrap();
        for j in 0..8 {
            assert!((out.h().get(0, j) - expect.get(0, j)).abs() < 1e-15);
        }
    }

    #[test]
    fn penguin_at_alpha_one_equals_e2gn2() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let layer = PenguinLayer::new(LayerKind::Penguin, 5, 6, 7, 2, true, &mut rng);
        let g = random_graph(4, 5, 2, 21);
        let a = penguin_layer_forward(&layer, &g, &[1.0; 4]).unwrap();
        let b = e2gn2_layer_forward(&layer, &g).unwrap();
        assert!(a.h().max_abs_diff(b.h()).unwrap() < 1e-12);
        assert!(a.u().max_abs_diff(b.u()).unwrap() < 1e-12);
    }

    #[test]
    fn penguin_at_alpha_zero_equals_gnn() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let layer = PenguinLayer::new(LayerKind::Penguin, 5, 6, 7, 2, false, &mut rng);
        let g = random_graph(4, 5, 2, 33);
        let a = penguin_layer_forward(&layer, &g, &[0.0; 4]).unwrap();
        let b = gnn_layer_forward(&layer, &g).unwrap();
        assert!(a.h().max_abs_diff(b.h()).unwrap() < 1e-12);
        assert!(a.u().max_abs_diff(b.u()).unwrap() < 1e-12);
    }

    #[test]
    fn egnn_with_zero_gate_is_a_pure_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = PenguinLayer::new(LayerKind::Egnn, 3, 4, 6, 2, false, &mut rng);
        layer.phi_u = Some(Mlp::zeroed(6, 1));
        let g = random_graph(3, 3, 2, 8);
        let out = egnn_layer_forward(&layer, &g).unwrap();
        assert!(out.u().max_abs_diff(g.u()).unwrap() < 1e-15);
    }

    #[test]
    fn gnn_with_zero_messages_reduces_to_phi_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = PenguinLayer::new(LayerKind::Gnn, 3, 4, 6, 2, false, &mut rng);
        layer.phi_n = Some(Mlp::zeroed(3 * 2 + 2 * 2, 6));
        let g = random_graph(3, 3, 2, 13);
        let out = gnn_layer_forward(&layer, &g).unwrap();
        for i in 0..3 {
            let mut input = alloc::vec::Vec::new();
            input.extend_from_slice(g.h().row_slice(i));
            input.extend_from_slice(&[0.0; 6]);
            let expect = layer
                .phi_h
                .forward_tensor(&Tensor::row(&input).unwrap())
                .unwrap();
            for j in 0..4 {
                assert!((out.h().get(i, j) - expect.get(0, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blend_is_convex_at_exactly_the_two_mixing_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let layer = PenguinLayer::new(LayerKind::Penguin, 4, 5, 6, 2, false, &mut rng);
        let g = random_graph(4, 4, 2, 42);
        let alpha = [0.3, 0.8, 0.05, 0.6];

        let br = penguin_layer_with_branches(&layer, &g, &alpha).unwrap();
        for (i, &a) in alpha.iter().enumerate() {
            // Aggregation site: m_i = a * sum_m + (1-a) * sum_n.
            for c in 0..br.m_i.cols() {
                let expect = a * br.sum_m.get(i, c) + (1.0 - a) * br.sum_n.get(i, c);
                assert!((br.m_i.get(i, c) - expect).abs() < 1e-12);
            }
            // Coordinate site: u' = a * u_eq + (1-a) * u_p.
            for c in 0..br.u_next.cols() {
                let expect = a * br.u_eq.get(i, c) + (1.0 - a) * br.u_p.get(i, c);
                assert!((br.u_next.get(i, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coincident_nodes_are_legal() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let layer = PenguinLayer::new(LayerKind::Penguin, 3, 4, 6, 2, false, &mut rng);
        let h = Tensor::from_fn(2, 3, |i, j| (i + j) as f64 * 0.1);
        let u = Tensor::new(2, 2, alloc::vec![0.5, -0.5, 0.5, -0.5]).unwrap();
        let g = GraphState::synthetic(h, u, None).unwrap();
        let out = penguin_layer_forward(&layer, &g, &[0.5, 0.5]).unwrap();
        assert!(out.h().all_finite());
        assert!(out.u().all_finite());
    }
}
