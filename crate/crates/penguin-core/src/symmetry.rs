//! Orthogonal group actions on graph states and measurement of the four
//! partial-equivariance categories: approximate (bounded defect everywhere),
//! subgroup (exact on a subset of the group), feature-wise (action applied
//! to a subset of nodes), and regional (defect depending on where in the
//! input space the probe sits).

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid_err, shape_err, Result};
use crate::graph::{GraphState, NetworkOutput};
use crate::tensor::Tensor;

/// Maximum allowed `||Q^T Q - I||_inf` for a stored group element.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// An orthogonal matrix acting on coordinate channels, with an optional
/// translation (used for invariance probes; network equivariance checks act
/// about the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    q: Tensor,
    t: Option<Vec<f64>>,
}

impl GroupElement {
    /// Validates squareness and orthogonality.
    pub fn new(q: Tensor, t: Option<Vec<f64>>) -> Result<Self> {
        if q.rows() != q.cols() {
            return Err(shape_err!("group element must be square, got {:?}", q.shape()));
        }
        if let Some(t) = &t {
            if t.len() != q.rows() {
                return Err(shape_err!(
                    "translation dim {} vs matrix dim {}",
                    t.len(),
                    q.rows()
                ));
            }
        }
        let el = Self { q, t };
        let resid = el.orthogonality_residual();
        if resid > ORTHOGONALITY_TOL {
            return Err(invalid_err!(
                "matrix is not orthogonal (residual {resid:.3e})"
            ));
        }
        Ok(el)
    }

    pub fn identity(n: usize) -> Self {
        Self { q: Tensor::eye(n), t: None }
    }

    /// Planar rotation by `theta` (2-D).
    pub fn rotation2(theta: f64) -> Self {
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        Self {
            q: Tensor::new(2, 2, alloc::vec![c, -s, s, c]).expect("rotation matrix"),
            t: None,
        }
    }

    /// Reflection across the x-axis (2-D).
    pub fn reflection2() -> Self {
        Self {
            q: Tensor::new(2, 2, alloc::vec![1.0, 0.0, 0.0, -1.0]).expect("reflection matrix"),
            t: None,
        }
    }

    pub fn with_translation(mut self, t: Vec<f64>) -> Result<Self> {
        if t.len() != self.dim() {
            return Err(shape_err!("translation dim {} vs {}", t.len(), self.dim()));
        }
        self.t = Some(t);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.q
    }

    pub fn translation(&self) -> Option<&[f64]> {
        self.t.as_deref()
    }

    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.dim();
        let qtq = self.q.transpose().matmul(&self.q).expect("square product");
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((qtq.get(i, j) - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        determinant(&self.q)
    }

    /// `g^{-1}`: transpose matrix, translation `-Q^T t`.
    pub fn inverse(&self) -> Self {
        let qt = self.q.transpose();
        let t = self.t.as_ref().map(|t| {
            let n = self.dim();
            let mut out = alloc::vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for (j, tv) in t.iter().enumerate() {
                    acc -= qt.get(i, j) * tv;
                }
                out[i] = acc;
            }
            out
        });
        Self { q: qt, t }
    }

    /// Transform one point: `Q p + t`.
    pub fn apply_point(&self, p: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = alloc::vec![0.0; n];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, pv) in p.iter().enumerate() {
                acc += self.q.get(i, j) * pv;
            }
            if let Some(t) = &self.t {
                acc += t[i];
            }
            *slot = acc;
        }
        out
    }

    /// Transform row-stacked points: `P Q^T + 1 t^T`.
    pub fn apply_points(&self, points: &Tensor) -> Result<Tensor> {
        let rotated = self.rotate_rows(points)?;
        match &self.t {
            None => Ok(rotated),
            Some(t) => {
                let mut out = rotated;
                let n = out.cols();
                for chunk in out.data_mut().chunks_exact_mut(n) {
                    for (v, tv) in chunk.iter_mut().zip(t) {
                        *v += tv;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Rotate row-stacked direction vectors (no translation).
    pub fn rotate_rows(&self, vectors: &Tensor) -> Result<Tensor> {
        if vectors.cols() != self.dim() {
            return Err(shape_err!(
                "group element is {}-dimensional, vectors are {}-dimensional",
                self.dim(),
                vectors.cols()
            ));
        }
        vectors.matmul(&self.q.transpose())
    }

    /// Act on a graph state: coordinates get `Q u + t`, velocities rotate,
    /// invariant features are untouched.
    pub fn apply_graph(&self, state: &GraphState) -> Result<GraphState> {
        let u = self.apply_points(state.u())?;
        let v = state.velocity().map(|v| self.rotate_rows(v)).transpose()?;
        state.with_geometry(u, v)
    }

    /// Act on a subset of nodes only (feature-wise probes); unmasked nodes
    /// keep their geometry.
    pub fn apply_graph_masked(&self, state: &GraphState, mask: &[bool]) -> Result<GraphState> {
        if mask.len() != state.num_nodes() {
            return Err(shape_err!(
                "{} mask entries for {} nodes",
                mask.len(),
                state.num_nodes()
            ));
        }
        let full_u = self.apply_points(state.u())?;
        let full_v = state.velocity().map(|v| self.rotate_rows(v)).transpose()?;
        let n = state.spatial_dim();
        let mut u = state.u().clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for j in 0..n {
                    u.set(i, j, full_u.get(i, j));
                }
            }
        }
        let v = match (state.velocity(), full_v) {
            (Some(orig), Some(rot)) => {
                let mut v = orig.clone();
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        for j in 0..n {
                            v.set(i, j, rot.get(i, j));
                        }
                    }
                }
                Some(v)
            }
            _ => None,
        };
        state.with_geometry(u, v)
    }
}

fn determinant(m: &Tensor) -> f64 {
    let n = m.rows();
    let mut a: Vec<f64> = m.data().to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        det *= a[col * n + col];
        let inv = 1.0 / a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] * inv;
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
        }
    }
    det
}

/// Haar-distributed element of O(n): QR of a Gaussian matrix via twice-run
/// modified Gram-Schmidt with positive-diagonal normalization, then a row
/// flip with probability 1/2 so both determinant components appear.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Result<GroupElement> {
    if n == 0 {
        return Err(invalid_err!("group dimension must be >= 1"));
    }
    loop {
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut ok = true;
        for k in 0..n {
            // Re-orthogonalize twice for residuals near machine precision.
            for _ in 0..2 {
                for j in 0..k {
                    let dot: f64 = (0..n).map(|i| cols[k][i] * cols[j][i]).sum();
                    for i in 0..n {
                        let adj = dot * cols[j][i];
                        cols[k][i] -= adj;
                    }
                }
            }
            let norm = crate::math::sqrt(cols[k].iter().map(|v| v * v).sum());
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for v in cols[k].iter_mut() {
                *v /= norm;
            }
        }
        if !ok {
            continue;
        }
        let mut q = Tensor::zeros(n, n);
        for (k, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                q.set(i, k, *v);
            }
        }
        if rng.random::<bool>() {
            // Flip the last row: flips the determinant sign, stays Haar.
            for j in 0..n {
                let v = q.get(n - 1, j);
                q.set(n - 1, j, -v);
            }
        }
        return GroupElement::new(q, None);
    }
}

/// Haar-distributed proper rotation (det +1).
pub fn random_rotation(n: usize, rng: &mut impl Rng) -> Result<GroupElement> {
    let el = random_orthogonal(n, rng)?;
    if el.determinant() >= 0.0 {
        return Ok(el);
    }
    let mut q = el.q.clone();
    for j in 0..n {
        let v = q.get(n - 1, j);
        q.set(n - 1, j, -v);
    }
    GroupElement::new(q, None)
}

// ── Equivariance defect measurement ─────────────────────────────────────────

/// Defect of a graph-to-graph map: Euclidean norm over the concatenated
/// coordinate defect `u(f(T_g x)) - Q u(f(x))` and feature defect
/// `h(f(T_g x)) - h(f(x))`.
pub fn graph_equivariance_error<F>(f: F, g: &GroupElement, x: &GraphState) -> Result<f64>
where
    F: Fn(&GraphState) -> Result<GraphState>,
{
    let base = f(x)?;
    let transformed = f(&g.apply_graph(x)?)?;
    let expected_u = g.apply_points(base.u())?;
    let mut acc = 0.0;
    for (a, b) in transformed.u().data().iter().zip(expected_u.data()) {
        acc += (a - b) * (a - b);
    }
    for (a, b) in transformed.h().data().iter().zip(base.h().data()) {
        acc += (a - b) * (a - b);
    }
    Ok(crate::math::sqrt(acc))
}

/// Defect of a graph-to-heads map: the policy mean transforms like a vector,
/// the value is invariant.
pub fn head_equivariance_error<F>(f: F, g: &GroupElement, x: &GraphState) -> Result<f64>
where
    F: Fn(&GraphState) -> Result<NetworkOutput>,
{
    let base = f(x)?;
    let transformed = f(&g.apply_graph(x)?)?;
    head_defect(&g.rotate_rows(&base.policy_mean)?, base.value, &transformed)
}

fn head_defect(expected_mean: &Tensor, expected_value: f64, got: &NetworkOutput) -> Result<f64> {
    let mut acc = 0.0;
    for (a, b) in got.policy_mean.data().iter().zip(expected_mean.data()) {
        acc += (a - b) * (a - b);
    }
    let dv = got.value - expected_value;
    acc += dv * dv;
    Ok(crate::math::sqrt(acc))
}

/// Split defect of a graph-to-graph map: relative coordinate error and
/// max-abs feature error, the quantities bounded by the exact-equivariance
/// acceptance checks.
pub fn graph_equivariance_split<F>(f: F, g: &GroupElement, x: &GraphState) -> Result<(f64, f64)>
where
    F: Fn(&GraphState) -> Result<GraphState>,
{
    let base = f(x)?;
    let transformed = f(&g.apply_graph(x)?)?;
    let expected_u = g.apply_points(base.u())?;
    let mut unum = 0.0;
    let mut uref = 0.0;
    for (a, b) in transformed.u().data().iter().zip(expected_u.data()) {
        unum += (a - b) * (a - b);
    }
    for b in expected_u.data() {
        uref += b * b;
    }
    let mut hnum = 0.0f64;
    for (a, b) in transformed.h().data().iter().zip(base.h().data()) {
        hnum = hnum.max((a - b).abs());
    }
    let rel_u = crate::math::sqrt(unum) / (crate::math::sqrt(uref) + 1e-12);
    Ok((rel_u, hnum))
}

/// Measurement summary for one partial-equivariance probe.
#[derive(Debug, Clone)]
pub struct EquivarianceReport {
    /// One defect per (group element, state) pair, in sampling order.
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub mean_error: f64,
    pub tolerance: f64,
    /// Verdict: every sampled defect under tolerance.
    pub pass: bool,
}

impl EquivarianceReport {
    pub fn from_errors(errors: Vec<f64>, tolerance: f64) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        let mean_error = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        Self {
            errors,
            max_error,
            mean_error,
            tolerance,
            pass: max_error <= tolerance,
        }
    }
}

/// Exactness of equivariance restricted to the sampled subgroup elements.
pub fn subgroup_equivariance_check<F>(
    f: F,
    elements: &[GroupElement],
    states: &[GraphState],
    tolerance: f64,
) -> Result<EquivarianceReport>
where
    F: Fn(&GraphState) -> Result<NetworkOutput>,
{
    let mut errors = Vec::with_capacity(elements.len() * states.len());
    for g in elements {
        for x in states {
            errors.push(head_equivariance_error(&f, g, x)?);
        }
    }
    Ok(EquivarianceReport::from_errors(errors, tolerance))
}

/// Defect when the action is applied only to masked nodes' geometry while
/// the rest of the input is held fixed.
pub fn featurewise_equivariance_check<F>(
    f: F,
    mask: &[bool],
    elements: &[GroupElement],
    states: &[GraphState],
    tolerance: f64,
) -> Result<EquivarianceReport>
where
    F: Fn(&GraphState) -> Result<NetworkOutput>,
{
    if !mask.iter().any(|&m| m) {
        return Err(invalid_err!("feature-wise check needs a non-empty mask"));
    }
    let mut errors = Vec::with_capacity(elements.len() * states.len());
    for g in elements {
        for x in states {
            let base = f(x)?;
            let transformed = f(&g.apply_graph_masked(x, mask)?)?;
            errors.push(head_defect(
                &g.rotate_rows(&base.policy_mean)?,
                base.value,
                &transformed,
            )?);
        }
    }
    Ok(EquivarianceReport::from_errors(errors, tolerance))
}

/// Mean defect per probe state (typically states anchored on a spatial grid,
/// producing the data behind regional-equivariance heatmaps).
pub fn regional_equivariance_map<F>(
    f: F,
    states: &[GraphState],
    elements: &[GroupElement],
) -> Result<Vec<f64>>
where
    F: Fn(&GraphState) -> Result<NetworkOutput>,
{
    let mut out = Vec::with_capacity(states.len());
    for x in states {
        let mut acc = 0.0;
        for g in elements {
            acc += head_equivariance_error(&f, g, x)?;
        }
        out.push(if elements.is_empty() {
            0.0
        } else {
            acc / elements.len() as f64
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AlphaStats, GraphState};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, seed: u64) -> GraphState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GraphState::synthetic(
            Tensor::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)),
            Tensor::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0)),
            Some(Tensor::from_fn(n, 2, |_, _| rng.random_range(-0.5..0.5))),
        )
        .unwrap()
    }

    #[test]
    fn o1_elements_are_plus_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false, false];
        for _ in 0..50 {
            let g = random_orthogonal(1, &mut rng).unwrap();
            let v = g.matrix().get(0, 0);
            assert!((v.abs() - 1.0).abs() < 1e-12);
            seen[usize::from(v > 0.0)] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn sampled_elements_are_orthogonal_with_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [2usize, 3] {
            let mut dets = [0usize; 2];
            for _ in 0..1000 {
                let g = random_orthogonal(n, &mut rng).unwrap();
                assert!(g.orthogonality_residual() < 1e-10);
                let d = g.determinant();
                assert!((d.abs() - 1.0).abs() < 1e-10);
                dets[usize::from(d > 0.0)] += 1;
            }
            // Both components of O(n) show up.
            assert!(dets[0] > 300 && dets[1] > 300, "dets {dets:?}");
        }
    }

    #[test]
    fn identity_action_is_a_no_op() {
        let g = GroupElement::identity(2);
        let x = random_state(4, 3);
        let y = g.apply_graph(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn quarter_turn_rotates_unit_x_to_unit_y() {
        let g = GroupElement::rotation2(core::f64::consts::FRAC_PI_2);
        let p = g.apply_point(&[1.0, 0.0]);
        assert!(p[0].abs() < 1e-15);
        assert!((p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_composition_restores_the_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..5 {
            let g = random_orthogonal(2, &mut rng)
                .unwrap()
                .with_translation(vec![0.3, -1.2])
                .unwrap();
            let x = random_state(5, 100 + seed);
            let roundtrip = g.inverse().apply_graph(&g.apply_graph(&x).unwrap()).unwrap();
            assert!(roundtrip.u().max_abs_diff(x.u()).unwrap() < 1e-12);
            assert!(
                roundtrip
                    .velocity()
                    .unwrap()
                    .max_abs_diff(x.velocity().unwrap())
                    .unwrap()
                    < 1e-12
            );
        }
    }

    #[test]
    fn action_is_an_isometry_and_preserves_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..10 {
            let g = random_orthogonal(2, &mut rng).unwrap();
            let x = random_state(5, 200 + seed);
            let y = g.apply_graph(&x).unwrap();
            assert_eq!(x.h(), y.h());
            for i in 0..5 {
                for j in 0..5 {
                    assert!((dist(x.u(), i, j) - dist(y.u(), i, j)).abs() < 1e-12);
                }
            }
        }
    }

    fn dist(u: &Tensor, i: usize, j: usize) -> f64 {
        let dx = u.get(i, 0) - u.get(j, 0);
        let dy = u.get(i, 1) - u.get(j, 1);
        crate::math::sqrt(dx * dx + dy * dy)
    }

    #[test]
    fn identity_map_has_zero_defect() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_orthogonal(2, &mut rng).unwrap();
        let x = random_state(4, 7);
        let err = graph_equivariance_error(|s| Ok(s.clone()), &g, &x).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn constant_offset_defect_matches_closed_form() {
        // f shifts every coordinate by c; the defect per node is Qc - c.
        let c = [0.3, 0.0];
        let g = GroupElement::rotation2(0.77);
        let x = random_state(4, 8);
        let f = |s: &GraphState| {
            let mut u = s.u().clone();
            for row in 0..u.rows() {
                for (j, cv) in c.iter().enumerate() {
                    let v = u.get(row, j) + cv;
                    u.set(row, j, v);
                }
            }
            s.with_geometry(u, s.velocity().cloned())
        };
        let err = graph_equivariance_error(f, &g, &x).unwrap();
        let qc = g.apply_point(&c);
        let per_node = crate::math::sqrt((qc[0] - c[0]).powi(2) + (qc[1] - c[1]).powi(2));
        let expect = per_node * crate::math::sqrt(4.0);
        assert!((err - expect).abs() < 1e-12, "{err} vs {expect}");
    }

    #[test]
    fn subgroup_report_passes_on_identity_only() {
        let x = random_state(3, 9);
        let report = subgroup_equivariance_check(
            |s| {
                Ok(NetworkOutput {
                    policy_mean: Tensor::row(s.u().row_slice(0)).unwrap(),
                    value: 1.0,
                    alpha_stats: AlphaStats::constant(1.0),
                })
            },
            &[GroupElement::identity(2)],
            core::slice::from_ref(&x),
            1e-12,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.max_error, 0.0);
    }

    #[test]
    fn featurewise_check_requires_non_empty_mask() {
        let x = random_state(3, 10);
        let res = featurewise_equivariance_check(
            |_| {
                Ok(NetworkOutput {
                    policy_mean: Tensor::row(&[0.0, 0.0]).unwrap(),
                    value: 0.0,
                    alpha_stats: AlphaStats::constant(1.0),
                })
            },
            &[false, false, false],
            &[GroupElement::identity(2)],
            core::slice::from_ref(&x),
            1e-12,
        );
        assert!(res.is_err());
    }

    #[test]
    fn full_mask_featurewise_matches_plain_equivariance_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_orthogonal(2, &mut rng).unwrap();
        let x = random_state(3, 12);
        // A deliberately non-equivariant head: policy mean is the raw
        // coordinates of node 0 plus a fixed offset.
        let f = |s: &GraphState| {
            Ok(NetworkOutput {
                policy_mean: Tensor::row(&[s.u().get(0, 0) + 0.5, s.u().get(0, 1)]).unwrap(),
                value: s.u().get(1, 0),
                alpha_stats: AlphaStats::constant(0.5),
            })
        };
        let full_mask = featurewise_equivariance_check(
            f,
            &[true, true, true],
            core::slice::from_ref(&g),
            core::slice::from_ref(&x),
            1e-12,
        )
        .unwrap();
        let direct = head_equivariance_error(f, &g, &x).unwrap();
        assert!((full_mask.max_error - direct).abs() < 1e-15);
    }
}
