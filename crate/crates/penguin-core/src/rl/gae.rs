//! Generalized advantage estimation for one completed episode.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};

/// GAE(gamma, lambda) over one episode with terminal bootstrap value 0:
/// `delta_t = r_t + gamma V_{t+1} - V_t`, `A_t = delta_t + gamma lambda
/// A_{t+1}`; returns are `A_t + V_t`. Advantages here are raw — batch-level
/// normalization happens at collection time.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(shape_err!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        ));
    }
    let t_max = rewards.len();
    let mut advantages = vec![0.0; t_max];
    let mut returns = vec![0.0; t_max];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..t_max).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
        returns[t] = next_adv + values[t];
        next_value = values[t];
    }
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_in_zeros_out() {
        let (adv, ret) = compute_gae(&[0.0; 5], &[0.0; 5], 0.99, 0.95).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
        assert!(ret.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn single_step_base_case() {
        let (adv, ret) = compute_gae(&[1.0], &[0.0], 0.99, 0.95).unwrap();
        assert_eq!(adv, vec![1.0]);
        assert_eq!(ret, vec![1.0]);
    }

    #[test]
    fn three_step_hand_unrolled() {
        let rewards = [1.0, 0.0, 1.0];
        let values = [0.5, 0.2, 0.1];
        let (gamma, lam) = (0.99, 0.95);
        let (adv, ret) = compute_gae(&rewards, &values, gamma, lam).unwrap();

        // Hand recursion from the back.
        let d2 = 1.0 + gamma * 0.0 - 0.1;
        let a2 = d2;
        let d1 = 0.0 + gamma * 0.1 - 0.2;
        let a1 = d1 + gamma * lam * a2;
        let d0 = 1.0 + gamma * 0.2 - 0.5;
        let a0 = d0 + gamma * lam * a1;
        for (got, want) in adv.iter().zip([a0, a1, a2]) {
            assert!((got - want).abs() < 1e-15);
        }
        for t in 0..3 {
            assert!((ret[t] - (adv[t] + values[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(compute_gae(&[1.0, 2.0], &[0.0], 0.99, 0.95).is_err());
    }
}
