//! Clipped-surrogate loss, its gradient and the optimiser.
//!
//! The minimised loss over a mini-batch of `M` slots is
//!
//! ```text
//! ratio_i = exp(log pi(a_i | s_i) - log pi_old(a_i | s_i))
//! surr_i  = min(ratio_i * A_i, clip(ratio_i, 1 - eps, 1 + eps) * A_i)
//! L = -mean(surr) + c_v * mean((V(s_i) - R_i)^2) - c_e * H[pi]
//! ```
//!
//! Gradients are derived by hand and pushed through the two MLPs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::buffer::RolloutBuffer;
use super::policy::{gaussian_entropy, Policy};
use super::{LearnError, TrainConfig};
use crate::scalar::Scalar;

/// Inputs of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MiniBatch<'a, T> {
    pub obs: ArrayView2<'a, T>,
    pub actions: ArrayView2<'a, T>,
    pub old_log_probs: ArrayView1<'a, T>,
    pub advantages: ArrayView1<'a, T>,
    pub returns: ArrayView1<'a, T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
}

impl From<&TrainConfig> for LossCoefs {
    fn from(c: &TrainConfig) -> Self {
        LossCoefs {
            clip: c.clip,
            vf_coef: c.vf_coef,
            ent_coef: c.ent_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub loss: f64,
    /// Mean clipped surrogate (maximised).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `mean((ratio - 1) - ln ratio)`.
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Loss and, if `grad` is given, its gradient with respect to `policy.theta`
/// (written, not accumulated).
pub fn loss_and_grad<T: Scalar>(
    policy: &Policy<T>,
    batch: &MiniBatch<'_, T>,
    coefs: LossCoefs,
    grad: Option<&mut [T]>,
) -> LossStats {
    let layout = &policy.layout;
    let m = batch.obs.nrows();
    let inv_m = T::one() / T::from_count(m);
    let x = policy.normalize(batch.obs);
    let actor = layout.actor();
    let critic = layout.critic();
    let (mean, cache_a) = actor.forward_cached(policy.actor_params(), x.view());
    let (value, cache_c) = critic.forward_cached(policy.critic_params(), x.view());
    let log_std = policy.log_std();
    let std: Array1<T> = log_std.mapv(|v| v.exp());
    let ls = log_std.as_slice().unwrap();
    let half_log_2pi = T::c(0.5 * (2.0 * std::f64::consts::PI).ln());
    let eps = T::c(coefs.clip);
    let (lo, hi) = (T::one() - eps, T::one() + eps);

    let mut d_mean = Array2::<T>::zeros(mean.dim());
    let mut d_ls = vec![T::zero(); layout.action_dim];
    let mut d_v = Array2::<T>::zeros((m, 1));
    let mut surr_sum = T::zero();
    let mut vloss_sum = T::zero();
    let mut kl_sum = T::zero();
    let mut clipped = 0usize;
    let vf = T::c(coefs.vf_coef);
    for i in 0..m {
        let mu = mean.row(i);
        let a = batch.actions.row(i);
        let mut logp = T::zero();
        for j in 0..layout.action_dim {
            let z = (a[j] - mu[j]) / std[j];
            logp = logp - T::c(0.5) * z * z - ls[j] - half_log_2pi;
        }
        let log_ratio = logp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped_obj = ratio.max(lo).min(hi) * adv;
        let (s, ds_dratio) = if unclipped <= clipped_obj {
            (unclipped, adv)
        } else {
            (clipped_obj, T::zero())
        };
        surr_sum = surr_sum + s;
        kl_sum = kl_sum + (ratio - T::one()) - log_ratio;
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        let g_ratio = -ds_dratio * inv_m;
        if g_ratio != T::zero() {
            let g_logp = g_ratio * ratio;
            for j in 0..layout.action_dim {
                let z = (a[j] - mu[j]) / std[j];
                d_mean[[i, j]] = g_logp * z / std[j];
                d_ls[j] = d_ls[j] + g_logp * (z * z - T::one());
            }
        }
        let err = value[[i, 0]] - batch.returns[i];
        vloss_sum = vloss_sum + err * err;
        d_v[[i, 0]] = vf * T::c(2.0) * err * inv_m;
    }
    let entropy = gaussian_entropy(ls);
    let surrogate = surr_sum * inv_m;
    let value_loss = vloss_sum * inv_m;
    let loss = -surrogate + vf * value_loss - T::c(coefs.ent_coef) * entropy;

    if let Some(grad) = grad {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let ls_off = layout.log_std_offset();
        let c_off = layout.critic_offset();
        let (g_actor, rest) = grad.split_at_mut(ls_off);
        let (g_ls, g_critic) = rest.split_at_mut(layout.action_dim);
        actor.backward(policy.actor_params(), &cache_a, d_mean, g_actor);
        for j in 0..layout.action_dim {
            g_ls[j] = d_ls[j] - T::c(coefs.ent_coef);
        }
        debug_assert_eq!(c_off, ls_off + layout.action_dim);
        critic.backward(policy.critic_params(), &cache_c, d_v, g_critic);
    }

    LossStats {
        loss: loss.f64(),
        surrogate: surrogate.f64(),
        value_loss: value_loss.f64(),
        entropy: entropy.f64(),
        approx_kl: (kl_sum * inv_m).f64(),
        clip_fraction: clipped as f64 / m as f64,
    }
}

/// Adam with bias correction:
///
/// ```text
/// m <- b1 m + (1 - b1) g
/// v <- b2 v + (1 - b2) g^2
/// theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn step(&mut self, theta: &mut [T], grad: &[T]) {
        self.t += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::c(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::c(self.lr);
        let eps = T::c(self.eps);
        for (((p, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Scales `grad` down to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grad: &mut [T], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::c(max_norm / norm);
        grad.iter_mut().for_each(|g| *g = *g * s);
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateMetrics {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Runs `epochs` passes of shuffled mini-batch descent over the buffer.
/// Advantages must already be computed.
pub fn ppo_update<T: Scalar, R: Rng>(
    policy: &mut Policy<T>,
    adam: &mut Adam<T>,
    buffer: &RolloutBuffer<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateMetrics, LearnError> {
    let b = buffer.capacity();
    let n_mb = cfg.minibatches.clamp(1, b);
    let coefs = LossCoefs::from(cfg);
    let adv = ArrayView1::from(&buffer.advantages[..]);
    let ret = ArrayView1::from(&buffer.returns[..]);
    let old = ArrayView1::from(&buffer.log_probs[..]);
    let mut idx: Vec<usize> = (0..b).collect();
    let mut grad = vec![T::zero(); policy.layout.param_count()];
    let mut acc = UpdateMetrics::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for k in 0..n_mb {
            let chunk = &idx[k * b / n_mb..(k + 1) * b / n_mb];
            let obs = buffer.obs.select(Axis(0), chunk);
            let actions = buffer.actions.select(Axis(0), chunk);
            let old_lp = old.select(Axis(0), chunk);
            let a = adv.select(Axis(0), chunk);
            let r = ret.select(Axis(0), chunk);
            let mb = MiniBatch {
                obs: obs.view(),
                actions: actions.view(),
                old_log_probs: old_lp.view(),
                advantages: a.view(),
                returns: r.view(),
            };
            let stats = loss_and_grad(policy, &mb, coefs, Some(&mut grad));
            if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::NonFinite(format!(
                    "loss {} (surrogate {}, value loss {}) on a mini-batch of {} slots; advantages mean {:.4e} std {:.4e}, returns mean {:.4e}",
                    stats.loss,
                    stats.surrogate,
                    stats.value_loss,
                    chunk.len(),
                    mean(a.iter()),
                    std(a.iter()),
                    mean(r.iter()),
                )));
            }
            let norm = clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(policy.theta.as_slice_mut().unwrap(), &grad);
            policy.clamp_log_std();
            acc.surrogate += stats.surrogate;
            acc.value_loss += stats.value_loss;
            acc.entropy += stats.entropy;
            acc.approx_kl += stats.approx_kl;
            acc.clip_fraction += stats.clip_fraction;
            acc.grad_norm += norm;
            count += 1.0;
        }
    }
    if count > 0.0 {
        acc.surrogate /= count;
        acc.value_loss /= count;
        acc.entropy /= count;
        acc.approx_kl /= count;
        acc.clip_fraction /= count;
        acc.grad_norm /= count;
    }
    Ok(acc)
}

fn mean<'a, T: Scalar>(it: impl Iterator<Item = &'a T>) -> f64 {
    let v: Vec<f64> = it.map(|x| x.f64()).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn std<'a, T: Scalar>(it: impl Iterator<Item = &'a T>) -> f64 {
    let v: Vec<f64> = it.map(|x| x.f64()).collect();
    let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}
