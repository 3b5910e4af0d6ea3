//! A two-state chain for checking critic targets.
//!
//! The state alternates between 0 and 1 every step and every step pays the
//! same reward. Episodes are cut by a timeout only, so the infinite-horizon
//! value of both states is the same geometric series. Environments start at
//! staggered points of their episodes.

use ndarray::Array2;

use super::buffer::RolloutBuffer;
use super::policy::{Policy, PolicyLayout};
use super::ppo::{ppo_update, Adam};
use super::{LearnError, TrainConfig};
use crate::rng::{stream, StreamKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStateChain {
    pub reward: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub episode_len: usize,
    pub n_envs: usize,
    pub n_steps: usize,
    pub iterations: usize,
    pub lr: f64,
    pub bootstrap_timeouts: bool,
    pub seed: u64,
}

impl Default for TwoStateChain {
    fn default() -> Self {
        TwoStateChain {
            reward: 1.0,
            gamma: 0.9,
            lambda: 0.95,
            episode_len: 10,
            n_envs: 20,
            n_steps: 20,
            iterations: 400,
            lr: 0.05,
            bootstrap_timeouts: true,
            seed: 0,
        }
    }
}

impl TwoStateChain {
    /// Trains a linear critic on GAE returns; returns the learned values of
    /// states 0 and 1.
    pub fn fit_critic(&self) -> Result<[f64; 2], LearnError> {
        let layout = PolicyLayout::new(2, 1, &[]);
        let mut policy = Policy::<f64>::zeros(layout, 0.0);
        let mut adam = Adam::new(policy.layout.param_count(), self.lr);
        let cfg = TrainConfig {
            gamma: self.gamma,
            lambda: self.lambda,
            epochs: 4,
            minibatches: 1,
            max_grad_norm: 0.0,
            ent_coef: 0.0,
            vf_coef: 1.0,
            lr: self.lr,
            ..TrainConfig::default()
        };
        let mut shuffle = stream(self.seed, StreamKind::Shuffle, 0);
        let (n, len) = (self.n_envs, self.episode_len);
        let mut clock: Vec<usize> = (0..n).map(|e| e * len / n).collect();
        let mut state: Vec<usize> = (0..n).map(|e| e % 2).collect();
        let one_hot = |s: &[usize]| Array2::from_shape_fn((s.len(), 2), |(i, j)| if s[i] == j { 1.0 } else { 0.0 });
        let mut buf = RolloutBuffer::<f64>::new(n, self.n_steps, 2, 1);
        for it in 0..self.iterations {
            adam.lr = self.lr * (1.0 - 0.9 * it as f64 / self.iterations as f64);
            for t in 0..self.n_steps {
                let obs = one_hot(&state);
                let v = policy.value(obs.view())?;
                let mut next = state.clone();
                for e in 0..n {
                    let i = buf.slot(t, e);
                    buf.obs.row_mut(i).assign(&obs.row(e));
                    buf.rewards[i] = self.reward;
                    buf.values[i] = v[e];
                    buf.terminated[i] = false;
                    clock[e] += 1;
                    next[e] = 1 - state[e];
                    buf.timed_out[i] = clock[e] >= len;
                }
                let v_next = policy.value(one_hot(&next).view())?;
                for e in 0..n {
                    let i = buf.slot(t, e);
                    buf.next_values[i] = v_next[e];
                    if buf.timed_out[i] {
                        clock[e] = 0;
                        next[e] = e % 2;
                    }
                }
                state = next;
            }
            buf.compute_gae(self.gamma, self.lambda, self.bootstrap_timeouts);
            // Value regression only: the surrogate term vanishes.
            buf.advantages.iter_mut().for_each(|a| *a = 0.0);
            ppo_update(&mut policy, &mut adam, &buf, &cfg, &mut shuffle)?;
        }
        let v = policy.value(one_hot(&[0, 1]).view())?;
        Ok([v[0], v[1]])
    }
}
