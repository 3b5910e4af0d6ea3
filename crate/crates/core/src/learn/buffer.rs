//! Rollout storage and advantage estimation.
//!
//! Slots are stored time-major: slot `t * n_envs + e` holds step `t` of
//! environment `e`.

use ndarray::Array2;
use num_traits::Num;

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RolloutBuffer<T> {
    pub n_envs: usize,
    pub n_steps: usize,
    pub obs: Array2<T>,
    pub actions: Array2<T>,
    pub log_probs: Vec<T>,
    pub rewards: Vec<T>,
    pub values: Vec<T>,
    /// `V(s_{t+1})`. For timed-out slots this is the value of the final
    /// pre-reset observation; for terminated slots it is unused.
    pub next_values: Vec<T>,
    pub terminated: Vec<bool>,
    pub timed_out: Vec<bool>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T: Scalar> RolloutBuffer<T> {
    pub fn new(n_envs: usize, n_steps: usize, obs_dim: usize, action_dim: usize) -> Self {
        let b = n_envs * n_steps;
        RolloutBuffer {
            n_envs,
            n_steps,
            obs: Array2::zeros((b, obs_dim)),
            actions: Array2::zeros((b, action_dim)),
            log_probs: vec![T::zero(); b],
            rewards: vec![T::zero(); b],
            values: vec![T::zero(); b],
            next_values: vec![T::zero(); b],
            terminated: vec![false; b],
            timed_out: vec![false; b],
            advantages: vec![T::zero(); b],
            returns: vec![T::zero(); b],
        }
    }

    pub fn capacity(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn slot(&self, t: usize, e: usize) -> usize {
        t * self.n_envs + e
    }

    /// Fills `advantages` and `returns`. See [`gae`].
    pub fn compute_gae(&mut self, gamma: T, lambda: T, bootstrap_timeouts: bool) {
        let (adv, ret) = gae(
            self.n_envs,
            self.n_steps,
            &self.rewards,
            &self.values,
            &self.next_values,
            &self.terminated,
            &self.timed_out,
            gamma,
            lambda,
            bootstrap_timeouts,
        );
        self.advantages = adv;
        self.returns = ret;
    }

    pub fn normalize_advantages(&mut self) {
        normalize(&mut self.advantages);
    }
}

/// Generalised advantage estimation over a time-major buffer.
///
/// Per slot, with `V' = next_values`:
///
/// ```text
/// r'  = r + gamma * V'          if timed out and bootstrapping, else r
/// done = terminated || timed_out
/// delta = r' + gamma * V' * (1 - done) - V
/// A = delta + gamma * lambda * (1 - done) * A_next
/// ```
///
/// Returns are `A + V`. Generic over any field so the recursion can be
/// checked in exact arithmetic.
#[allow(clippy::too_many_arguments)]
pub fn gae<T: Num + Clone>(
    n_envs: usize,
    n_steps: usize,
    rewards: &[T],
    values: &[T],
    next_values: &[T],
    terminated: &[bool],
    timed_out: &[bool],
    gamma: T,
    lambda: T,
    bootstrap_timeouts: bool,
) -> (Vec<T>, Vec<T>) {
    let b = n_envs * n_steps;
    assert!(
        [rewards.len(), values.len(), next_values.len(), terminated.len(), timed_out.len()]
            .iter()
            .all(|&l| l == b),
        "buffer arrays must hold n_envs * n_steps slots"
    );
    let mut adv = vec![T::zero(); b];
    let gl = gamma.clone() * lambda;
    for e in 0..n_envs {
        let mut next_adv = T::zero();
        for t in (0..n_steps).rev() {
            let i = t * n_envs + e;
            let done = terminated[i] || timed_out[i];
            let mut r = rewards[i].clone();
            if timed_out[i] && bootstrap_timeouts {
                r = r + gamma.clone() * next_values[i].clone();
            }
            let delta = if done {
                r - values[i].clone()
            } else {
                r + gamma.clone() * next_values[i].clone() - values[i].clone()
            };
            let a = if done { delta } else { delta + gl.clone() * next_adv };
            adv[i] = a.clone();
            next_adv = a;
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a.clone() + v.clone()).collect();
    (adv, ret)
}

/// Shift to zero mean and scale to unit (population) standard deviation.
pub fn normalize<T: Scalar>(x: &mut [T]) {
    if x.is_empty() {
        return;
    }
    // Accumulate in f64 so f32 batches normalise as tightly as f64 ones.
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.f64()).sum::<f64>() / n;
    let var = x.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let denom = if std > 1e-12 { std } else { 1.0 };
    for v in x.iter_mut() {
        *v = T::c((v.f64() - mean) / denom);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_terminal() {
        let (a, r) = gae(1, 1, &[1.0], &[0.5], &[9.0], &[true], &[false], 0.9, 0.95, true);
        assert_eq!(a, vec![0.5]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn timeout_bootstraps_next_value() {
        let (_, with) = gae(1, 1, &[1.0], &[0.0], &[2.0], &[false], &[true], 0.5, 0.95, true);
        let (_, without) = gae(1, 1, &[1.0], &[0.0], &[2.0], &[false], &[true], 0.5, 0.95, false);
        assert_eq!(with, vec![2.0]);
        assert_eq!(without, vec![1.0]);
    }

    #[test]
    fn normalisation_moments() {
        let mut x: Vec<f64> = (0..100).map(|k| (k as f64).sin() * 3.0 + 2.0).collect();
        normalize(&mut x);
        let mean = x.iter().sum::<f64>() / 100.0;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(mean.abs() < 1e-12 && (std - 1.0).abs() < 1e-12);
    }
}
