//! Gaussian action head over a graph network's coordinate output.

use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::PenguinNetwork;
use crate::tensor::Tensor;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const LOG_STD_INIT: f64 = -0.693_147_180_559_945_3; // ln(0.5)

/// A graph policy network plus a state-independent per-dimension log
/// standard deviation, clamped to `[-5, 1]` after every optimizer step.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub net: PenguinNetwork,
    pub log_std: Tensor,
}

impl GaussianPolicy {
    pub fn new(net: PenguinNetwork) -> Self {
        let log_std = Tensor::full(1, net.cfg.spatial_dim, LOG_STD_INIT);
        Self { net, log_std }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.net.named_params() {
            out.push((alloc::format!("net/{name}"), t));
        }
        out.push((String::from("log_std"), &self.log_std));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.net.params_mut();
        out.push(&mut self.log_std);
        out
    }

    /// Project the log-std back into its legal interval (applied after each
    /// optimizer step rather than inside the differentiable graph).
    pub fn clamp_log_std(&mut self) {
        for v in self.log_std.data_mut() {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.data().iter().map(|&v| crate::math::exp(v)).collect()
    }
}

/// Log-density of a diagonal Gaussian, computed with the same primitive
/// order as the tape path so rollout-time values match update-time
/// recomputation bit for bit:
/// `((-0.5 * sum_d z_d^2) + (-D/2 ln 2pi)) + (-sum_d logstd_d)` with
/// `z_d = (a_d - mu_d) * exp(-logstd_d)`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), action.len());
    let d = mean.len() as f64;
    let mut sum_sq = 0.0;
    for ((a, m), ls) in action.iter().zip(mean).zip(log_std) {
        let z = (a - m) * crate::math::exp(-ls);
        sum_sq += z * z;
    }
    let mut neg_sum_logstd = 0.0;
    for ls in log_std {
        neg_sum_logstd += ls;
    }
    neg_sum_logstd = -neg_sum_logstd;
    (sum_sq * -0.5 + -0.5 * d * crate::math::ln(2.0 * core::f64::consts::PI)) + neg_sum_logstd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_peaks_at_the_mean() {
        let mean = [0.3, -0.7];
        let ls = [-0.5, 0.2];
        let at_mean = gaussian_log_prob(&mean, &ls, &mean);
        let off = gaussian_log_prob(&mean, &ls, &[0.5, -0.7]);
        assert!(at_mean > off);
    }

    #[test]
    fn log_prob_matches_direct_density() {
        let mean = [0.1, 0.4];
        let ls = [-0.2, -1.0];
        let a = [-0.3, 0.9];
        let got = gaussian_log_prob(&mean, &ls, &a);
        let mut expect = 0.0;
        for i in 0..2 {
            let sd = libm::exp(ls[i]);
            let z = (a[i] - mean[i]) / sd;
            expect += -0.5 * z * z - ls[i] - 0.5 * libm::log(2.0 * core::f64::consts::PI);
        }
        assert!((got - expect).abs() < 1e-12);
    }
}
