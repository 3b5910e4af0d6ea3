//! Gaussian actor-critic over one flat parameter vector.
//!
//! Parameter order: actor MLP, log-std (`action_dim`), critic MLP. The actor
//! and critic share the hidden sizes but not their weights.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::net::MlpShape;
use super::LearnError;
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Normalised observations are clipped to this magnitude.
pub const OBS_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
}

impl PolicyLayout {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        PolicyLayout {
            obs_dim,
            action_dim,
            hidden: hidden.to_vec(),
        }
    }

    pub fn actor(&self) -> MlpShape {
        MlpShape::new(self.obs_dim, &self.hidden, self.action_dim)
    }

    pub fn critic(&self) -> MlpShape {
        MlpShape::new(self.obs_dim, &self.hidden, 1)
    }

    pub fn log_std_offset(&self) -> usize {
        self.actor().param_count()
    }

    pub fn critic_offset(&self) -> usize {
        self.log_std_offset() + self.action_dim
    }

    pub fn param_count(&self) -> usize {
        self.critic_offset() + self.critic().param_count()
    }
}

#[derive(Debug, Clone)]
pub struct PolicyOutput<T> {
    pub mean: Array2<T>,
    pub log_std: Array1<T>,
    pub value: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    pub layout: PolicyLayout,
    pub theta: Array1<T>,
    /// Fixed observation normaliser: `(obs - center) / scale`.
    pub obs_center: Array1<T>,
    pub obs_scale: Array1<T>,
}

impl<T: Scalar> Policy<T> {
    /// All parameters zero except the log-std, identity normaliser.
    pub fn zeros(layout: PolicyLayout, log_std: f64) -> Self {
        let mut theta = Array1::zeros(layout.param_count());
        let off = layout.log_std_offset();
        theta
            .slice_mut(ndarray::s![off..off + layout.action_dim])
            .fill(T::c(log_std));
        Policy {
            obs_center: Array1::zeros(layout.obs_dim),
            obs_scale: Array1::ones(layout.obs_dim),
            layout,
            theta,
        }
    }

    /// Scaled normal initialisation. Output layers start small so the
    /// initial policy is close to a zero-mean Gaussian.
    pub fn init<R: Rng>(layout: PolicyLayout, log_std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout, log_std);
        let layout = p.layout.clone();
        let theta = p.theta.as_slice_mut().unwrap();
        let (actor_part, rest) = theta.split_at_mut(layout.log_std_offset());
        let critic_part = &mut rest[layout.action_dim..];
        for (shape, part, out_gain) in [(layout.actor(), actor_part, 0.01), (layout.critic(), critic_part, 1.0)] {
            for l in 0..shape.n_layers() {
                let fan_in = shape.sizes[l] as f64;
                let gain = if l + 1 == shape.n_layers() { out_gain } else { 2f64.sqrt() };
                let n = Normal::new(0.0, gain / fan_in.sqrt()).unwrap();
                let (mut w, _) = shape.layer_mut(part, l);
                w.mapv_inplace(|_| T::c(n.sample(rng)));
            }
        }
        p
    }

    pub fn set_normalizer(&mut self, center: &[T], scale: &[T]) -> Result<(), LearnError> {
        if center.len() != self.layout.obs_dim || scale.len() != self.layout.obs_dim {
            return Err(LearnError::Shape(format!(
                "normaliser length {}/{} for obs_dim {}",
                center.len(),
                scale.len(),
                self.layout.obs_dim
            )));
        }
        if scale.iter().any(|s| !(*s > T::zero())) {
            return Err(LearnError::Shape("normaliser scales must be positive".into()));
        }
        self.obs_center = Array1::from(center.to_vec());
        self.obs_scale = Array1::from(scale.to_vec());
        Ok(())
    }

    pub fn normalize(&self, obs: ArrayView2<'_, T>) -> Array2<T> {
        let lim = T::c(OBS_CLIP);
        let mut x = obs.to_owned();
        for mut row in x.axis_iter_mut(Axis(0)) {
            for ((v, c), s) in row.iter_mut().zip(&self.obs_center).zip(&self.obs_scale) {
                *v = ((*v - *c) / *s).max(-lim).min(lim);
            }
        }
        x
    }

    pub fn actor_params(&self) -> &[T] {
        &self.theta.as_slice().unwrap()[..self.layout.log_std_offset()]
    }

    pub fn critic_params(&self) -> &[T] {
        &self.theta.as_slice().unwrap()[self.layout.critic_offset()..]
    }

    pub fn log_std(&self) -> Array1<T> {
        let off = self.layout.log_std_offset();
        self.theta.slice(ndarray::s![off..off + self.layout.action_dim]).to_owned()
    }

    /// Clamp the log-std into its admissible range.
    pub fn clamp_log_std(&mut self) {
        let off = self.layout.log_std_offset();
        let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
        self.theta
            .slice_mut(ndarray::s![off..off + self.layout.action_dim])
            .mapv_inplace(|v| v.max(lo).min(hi));
    }

    pub fn value(&self, obs: ArrayView2<'_, T>) -> Result<Array1<T>, LearnError> {
        self.check_obs(obs)?;
        let x = self.normalize(obs);
        let v = self.layout.critic().forward(self.critic_params(), x.view());
        let v = v.index_axis_move(Axis(1), 0);
        check_finite(&v, "value")?;
        Ok(v)
    }

    pub fn forward(&self, obs: ArrayView2<'_, T>) -> Result<PolicyOutput<T>, LearnError> {
        self.check_obs(obs)?;
        let x = self.normalize(obs);
        let mean = self.layout.actor().forward(self.actor_params(), x.view());
        check_finite(&mean, "action mean")?;
        let value = self
            .layout
            .critic()
            .forward(self.critic_params(), x.view())
            .index_axis_move(Axis(1), 0);
        check_finite(&value, "value")?;
        Ok(PolicyOutput {
            mean,
            log_std: self.log_std(),
            value,
        })
    }

    /// Deterministic action: the mean, clamped to `[-1, 1]`.
    pub fn act_deterministic(&self, obs: ArrayView2<'_, T>) -> Result<Array2<T>, LearnError> {
        let out = self.forward(obs)?;
        Ok(out.mean.mapv(clamp_action))
    }

    fn check_obs(&self, obs: ArrayView2<'_, T>) -> Result<(), LearnError> {
        if obs.ncols() != self.layout.obs_dim {
            return Err(LearnError::Shape(format!(
                "observation width {} for obs_dim {}",
                obs.ncols(),
                self.layout.obs_dim
            )));
        }
        Ok(())
    }
}

pub fn clamp_action<T: Scalar>(a: T) -> T {
    a.max(-T::one()).min(T::one())
}

/// Diagonal Gaussian log-density summed over action dimensions.
pub fn gaussian_log_prob<T: Scalar>(action: &[T], mean: &[T], log_std: &[T]) -> T {
    let half_log_2pi = T::c(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut lp = T::zero();
    for ((a, m), ls) in action.iter().zip(mean).zip(log_std) {
        let z = (*a - *m) / ls.exp();
        lp = lp - T::c(0.5) * z * z - *ls - half_log_2pi;
    }
    lp
}

/// Entropy of the diagonal Gaussian.
pub fn gaussian_entropy<T: Scalar>(log_std: &[T]) -> T {
    let k = T::c(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln());
    log_std.iter().fold(T::zero(), |acc, ls| acc + *ls + k)
}

fn check_finite<T: Scalar, D: ndarray::Dimension>(a: &ndarray::Array<T, D>, what: &str) -> Result<(), LearnError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LearnError::NonFinite(format!("{what} contains non-finite values")))
    }
}
