//! Two-hidden-layer MLPs and the Adam optimizer.
//!
//! Every learnable function in the graph layers is an [`Mlp`] with two
//! hidden layers of width 32 and tanh activations; the output layer is
//! linear. Weights use uniform fan-in initialization, biases start at zero.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid_err, nonfinite_err, shape_err, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Hidden width shared by every MLP in the networks.
pub const HIDDEN_WIDTH: usize = 32;

/// Hidden-layer nonlinearity. `Identity` exists for algebraic unit tests
/// (e.g. checking that an identity-initialized stack is a no-op).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// A dense `in -> 32 -> 32 -> out` network with linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
    activation: Activation,
}

/// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn init_weight(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / crate::math::sqrt(rows as f64);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

impl Mlp {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let h = HIDDEN_WIDTH;
        Self {
            w1: init_weight(in_dim, h, rng),
            b1: Tensor::zeros(1, h),
            w2: init_weight(h, h, rng),
            b2: Tensor::zeros(1, h),
            w3: init_weight(h, out_dim, rng),
            b3: Tensor::zeros(1, out_dim),
            activation: Activation::Tanh,
        }
    }

    /// All-zero weights and biases (maps everything to zero).
    pub fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        let h = HIDDEN_WIDTH;
        Self {
            w1: Tensor::zeros(in_dim, h),
            b1: Tensor::zeros(1, h),
            w2: Tensor::zeros(h, h),
            b2: Tensor::zeros(1, h),
            w3: Tensor::zeros(h, out_dim),
            b3: Tensor::zeros(1, out_dim),
            activation: Activation::Tanh,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Scale the output layer in place (used to damp coordinate-gate MLPs at
    /// initialization).
    pub fn scale_output(&mut self, factor: f64) {
        for v in self.w3.data_mut() {
            *v *= factor;
        }
        for v in self.b3.data_mut() {
            *v *= factor;
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w3.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Canonical parameter traversal; `named_params`, `params_mut`, and
    /// [`MlpVars::param_vars`] all follow this order.
    pub fn params(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    /// Register the parameters on a tape for a differentiable forward pass.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.param(&self.w1),
            b1: tape.param(&self.b1),
            w2: tape.param(&self.w2),
            b2: tape.param(&self.b2),
            w3: tape.param(&self.w3),
            b3: tape.param(&self.b3),
            activation: self.activation,
            in_dim: self.in_dim(),
        }
    }

    /// Evaluate on a `[rows, in_dim]` input without gradient tracking.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = self.bind(&mut tape);
        let y = vars.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// Tape-bound MLP parameters.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
    activation: Activation,
    in_dim: usize,
}

impl MlpVars {
    /// Forward pass on a `[rows, in_dim]` batch. Rejects width mismatches and
    /// non-finite inputs.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.in_dim {
            return Err(shape_err!(
                "mlp expects {} input features, got {cols}",
                self.in_dim
            ));
        }
        tape.ensure_finite(x, "mlp input")?;
        let mut h = x;
        for (w, b) in [(self.w1, self.b1), (self.w2, self.b2)] {
            let lin = tape.matmul(h, w)?;
            let lin = tape.add_row(lin, b)?;
            h = match self.activation {
                Activation::Tanh => tape.tanh(lin)?,
                Activation::Identity => lin,
            };
        }
        let out = tape.matmul(h, self.w3)?;
        tape.add_row(out, self.b3)
    }

    pub fn param_vars(&self) -> [Var; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }
}

/// Adam with bias correction; moments are allocated lazily on first use.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over a parameter list and matching gradients. Non-finite
    /// gradients abort before any parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err!(
                "adam: {} params vs {} grads",
                params.len(),
                grads.len()
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err!(
                    "adam: param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                ));
            }
            if !g.all_finite() {
                return Err(nonfinite_err!("adam gradient"));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() {
            return Err(invalid_err!(
                "adam state initialized for {} tensors, got {}",
                self.m.len(),
                grads.len()
            ));
        }

        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (((pv, &gv), mv), vv) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (crate::math::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = crate::math::sqrt(total);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mlp_maps_everything_to_zero() {
        let mlp = Mlp::zeroed(4, 3);
        let x = Tensor::row(&[1.0, -2.0, 0.5, 9.0]).unwrap();
        let y = mlp.forward_tensor(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_stub_passes_input_through() {
        let mut mlp = Mlp::zeroed(HIDDEN_WIDTH, HIDDEN_WIDTH).with_activation(Activation::Identity);
        mlp.w1 = Tensor::eye(HIDDEN_WIDTH);
        mlp.w2 = Tensor::eye(HIDDEN_WIDTH);
        mlp.w3 = Tensor::eye(HIDDEN_WIDTH);
        let x = Tensor::from_fn(1, HIDDEN_WIDTH, |_, j| j as f64 * 0.25 - 3.0);
        let y = mlp.forward_tensor(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        // Independent scalar-by-scalar re-evaluation of the affine/tanh chain.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(4, 2, &mut rng);
        let x = [0.3, -1.2, 0.8, 2.5];
        let y = mlp.forward_tensor(&Tensor::row(&x).unwrap()).unwrap();

        let dense = |input: &[f64], w: &Tensor, b: &Tensor| -> std::vec::Vec<f64> {
            (0..w.cols())
                .map(|j| {
                    let mut acc = b.get(0, j);
                    for (i, v) in input.iter().enumerate() {
                        acc += v * w.get(i, j);
                    }
                    acc
                })
                .collect()
        };
        let h1: std::vec::Vec<f64> = dense(&x, &mlp.w1, &mlp.b1).iter().map(|v| libm::tanh(*v)).collect();
        let h2: std::vec::Vec<f64> = dense(&h1, &mlp.w2, &mlp.b2).iter().map(|v| libm::tanh(*v)).collect();
        let expect = dense(&h2, &mlp.w3, &mlp.b3);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_wrong_width_and_nonfinite() {
        let mlp = Mlp::zeroed(3, 1);
        assert!(mlp.forward_tensor(&Tensor::row(&[1.0, 2.0]).unwrap()).is_err());
        // Non-finite input cannot even be constructed as a Tensor; the tape
        // check still guards values that drift, exercised via ensure_finite.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0, 2.0, 3.0]).unwrap());
        assert!(tape.ensure_finite(x, "probe").is_ok());
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::row(&[1.0, -2.0]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        // With m = (1-b1)g, v = (1-b2)g^2 and bias correction, the first
        // update is exactly -lr * g / (|g| + eps).
        let g = 0.37;
        let lr = 1e-3;
        let mut p = Tensor::scalar(5.0);
        let mut adam = Adam::new(lr);
        adam.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();
        let expect = 5.0 - lr * g / (g.abs() + 1e-8);
        assert!((p.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_on_constant_gradient() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = Adam::new(1e-3);
        let mut last = p.item();
        for _ in 0..2 {
            adam.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
            assert!(p.item() < last);
            last = p.item();
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Tensor::scalar(1.0);
        let before = p.clone();
        let mut adam = Adam::new(1e-3);
        let mut bad = Tensor::scalar(0.0);
        bad.data_mut()[0] = f64::NAN;
        assert!(adam.step(&mut [&mut p], &[bad]).is_err());
        assert_eq!(p, before);
    }

    #[test]
    fn grad_clip_rescales_to_max_norm() {
        let mut grads = [Tensor::row(&[3.0, 4.0]).unwrap()];
        let norm = clip_grad_norm(&mut grads, 0.5);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped: f64 = grads[0].data().iter().map(|v| v * v).sum::<f64>();
        assert!((clipped.sqrt() - 0.5).abs() < 1e-12);
    }
}
