//! Batched joint-space dynamics.
//!
//! Each DoF is an independent second-order plant with diagonal inertia and
//! viscous damping (no gravity, Coriolis or link coupling). A control step
//! is split into `substeps` semi-implicit Euler substeps; after every
//! substep the position is projected back into the joint limits and the
//! velocity along a violated limit is zeroed.
//!
//! All modes consume actions in `[-1, 1]`:
//!
//! * `Position`: affine map onto `[limit_lo, limit_hi]` as the PD target,
//!   `tau = kp (q_target - q) - kd qdot`. A jaw DoF is binary (open when the
//!   action is non-negative).
//! * `Velocity`: target velocity `a * velocity_limit`, `tau = kd (v - qdot)`.
//! * `Torque`: `tau = a * effort_limit`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::iter::{IntoParallelIterator, ParallelIterator};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::robot::RobotModel;
use crate::rng::{row_streams, StreamKind};
use crate::scalar::Scalar;

/// `x` solving `1 - (1 + x) e^-x = 0.9`: the 90 % rise point of a critically
/// damped second-order step response, in units of `1 / omega`.
const CRITICAL_RISE_90: f64 = 3.889_720_169_867_429;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite action at row {row}, dof {dof}")]
    NonFiniteAction { row: usize, dof: usize },
    #[error("invalid dynamics config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    #[default]
    Position,
    Velocity,
    Torque,
}

/// Run-configuration section for the integrator.
///
/// Per-DoF vectors left empty are derived from the robot description:
/// `inertia` and `damping` come from the joint records, `kp` is chosen so a
/// critically damped loop reaches 90 % of a step in `rise_time`, and
/// `kd = 2 sqrt(kp * inertia)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub control_dt: f64,
    pub substeps: usize,
    pub control_mode: ControlMode,
    pub rise_time: f64,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            control_dt: 0.01,
            substeps: 4,
            control_mode: ControlMode::Position,
            rise_time: 0.2,
            kp: vec![],
            kd: vec![],
            inertia: vec![],
            damping: vec![],
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidConfig(m.to_string()));
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return bad("control_dt must be positive");
        }
        if self.substeps < 1 {
            return bad("substeps must be at least 1");
        }
        if !(self.rise_time > 0.0) {
            return bad("rise_time must be positive");
        }
        for (name, v) in [("kp", &self.kp), ("kd", &self.kd), ("inertia", &self.inertia)] {
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return bad(&format!("{name} entries must be positive"));
            }
        }
        if self.damping.iter().any(|x| !(*x >= 0.0)) {
            return bad("damping entries must be non-negative");
        }
        Ok(())
    }

    /// Per-DoF parameters for `model`.
    pub fn resolve<T: Scalar>(&self, model: &RobotModel<T>) -> Result<DynamicsParams<T>, DynamicsError> {
        self.validate()?;
        let n = model.dof_count();
        let pick = |what: &str, v: &[f64], fallback: &dyn Fn(usize) -> f64| -> Result<Vec<f64>, DynamicsError> {
            match v.len() {
                0 => Ok((0..n).map(fallback).collect()),
                l if l == n => Ok(v.to_vec()),
                l => Err(DynamicsError::InvalidConfig(format!(
                    "{what} has {l} entries, robot `{}` has {n} dofs",
                    model.name
                ))),
            }
        };
        let inertia = pick("inertia", &self.inertia, &|i| model.dof_joint(i).inertia.f64())?;
        let damping = pick("damping", &self.damping, &|i| model.dof_joint(i).damping.f64())?;
        let omega = CRITICAL_RISE_90 / self.rise_time;
        let kp = pick("kp", &self.kp, &|i| omega * omega * inertia[i])?;
        let kd = pick("kd", &self.kd, &|i| 2.0 * (kp[i] * inertia[i]).sqrt())?;
        let h = self.control_dt / self.substeps as f64;
        let dofs = (0..n)
            .map(|i| {
                let j = model.dof_joint(i);
                DofParams {
                    kp: T::c(kp[i]),
                    kd: T::c(kd[i]),
                    damping: T::c(damping[i]),
                    h_over_inertia: T::c(h / inertia[i]),
                    lo: j.limit_lo,
                    hi: j.limit_hi,
                    velocity_limit: j.velocity_limit,
                    effort_limit: j.effort_limit,
                }
            })
            .collect();
        Ok(DynamicsParams {
            mode: self.control_mode,
            substeps: self.substeps,
            h: T::c(h),
            dofs,
            jaw: model.jaw.map(|j| (j.dof_index, j.open_angle)),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DofParams<T> {
    pub kp: T,
    pub kd: T,
    pub damping: T,
    pub h_over_inertia: T,
    pub lo: T,
    pub hi: T,
    pub velocity_limit: T,
    pub effort_limit: T,
}

/// Resolved per-DoF integrator parameters.
#[derive(Debug, Clone)]
pub struct DynamicsParams<T> {
    pub mode: ControlMode,
    pub substeps: usize,
    /// Substep length in seconds.
    pub h: T,
    pub dofs: Vec<DofParams<T>>,
    /// Jaw DoF index and open angle.
    pub jaw: Option<(usize, T)>,
}

impl<T: Scalar> DynamicsParams<T> {
    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    pub fn control_dt(&self) -> T {
        self.h * T::from_count(self.substeps)
    }

    /// Position-mode PD target for action `a` on DoF `i`.
    #[inline]
    pub fn position_target(&self, i: usize, a: T) -> T {
        let d = &self.dofs[i];
        if let Some((jaw, open)) = self.jaw {
            if jaw == i {
                let closed = T::zero().max(d.lo).min(d.hi);
                return if a >= T::zero() { open } else { closed };
            }
        }
        // Interpolation form hits both endpoints exactly.
        let s = (a + T::one()) * T::c(0.5);
        d.lo * (T::one() - s) + d.hi * s
    }

    /// Advances one row by one control step; returns how many action
    /// entries had to be clamped into `[-1, 1]`.
    #[inline]
    fn step_row(&self, q: &mut [T], qd: &mut [T], qt: &mut [T], a: ArrayView1<'_, T>) -> u64 {
        let zero = T::zero();
        let mut saturated = 0;
        for (i, d) in self.dofs.iter().enumerate() {
            let cmd = a[i].max(-T::one()).min(T::one());
            saturated += u64::from(cmd != a[i]);
            if self.mode == ControlMode::Position {
                qt[i] = self.position_target(i, cmd);
            }
            let (mut x, mut v) = (q[i], qd[i]);
            for _ in 0..self.substeps {
                let tau = match self.mode {
                    ControlMode::Position => d.kp * (qt[i] - x) - d.kd * v,
                    ControlMode::Velocity => d.kd * (cmd * d.velocity_limit - v),
                    ControlMode::Torque => cmd * d.effort_limit,
                };
                let tau = tau.max(-d.effort_limit).min(d.effort_limit);
                v = v + (tau - d.damping * v) * d.h_over_inertia;
                v = v.max(-d.velocity_limit).min(d.velocity_limit);
                x = x + v * self.h;
                if x < d.lo {
                    x = d.lo;
                    v = zero;
                } else if x > d.hi {
                    x = d.hi;
                    v = zero;
                }
            }
            q[i] = x;
            qd[i] = v;
        }
        saturated
    }
}

/// Joint state for `N` environments, one row per environment.
#[derive(Debug, Clone)]
pub struct SimBatch<T> {
    pub q: Array2<T>,
    pub qdot: Array2<T>,
    pub q_target: Array2<T>,
    rngs: Vec<ChaCha8Rng>,
    /// Clamped action entries in the most recent step.
    pub last_saturation: u64,
    /// Clamped action entries since creation.
    pub total_saturation: u64,
}

impl<T: Scalar> SimBatch<T> {
    /// All rows at the mid configuration at rest.
    pub fn new(model: &RobotModel<T>, n: usize, seed: u64) -> Self {
        let mid = model.mid_configuration();
        let dof = mid.len();
        let q = Array2::from_shape_fn((n, dof), |(_, j)| mid[j]);
        SimBatch {
            q_target: q.clone(),
            q,
            qdot: Array2::zeros((n, dof)),
            rngs: row_streams(seed, StreamKind::Dynamics, n),
            last_saturation: 0,
            total_saturation: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.nrows() == 0
    }

    pub fn dof_count(&self) -> usize {
        self.q.ncols()
    }

    /// One control step for every row.
    ///
    /// Non-finite actions are rejected before any state changes; finite
    /// actions outside `[-1, 1]` are clamped and counted.
    pub fn step(&mut self, actions: ArrayView2<'_, T>, params: &DynamicsParams<T>) -> Result<(), DynamicsError> {
        let shape = (self.len(), params.dof_count());
        if self.q.dim() != shape {
            return Err(DynamicsError::ShapeMismatch {
                what: "state",
                expected: shape,
                got: self.q.dim(),
            });
        }
        if actions.dim() != shape {
            return Err(DynamicsError::ShapeMismatch {
                what: "actions",
                expected: shape,
                got: actions.dim(),
            });
        }
        if let Some(((row, dof), _)) = actions.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteAction { row, dof });
        }
        let saturated: u64 = Zip::from(self.q.rows_mut())
            .and(self.qdot.rows_mut())
            .and(self.q_target.rows_mut())
            .and(actions.rows())
            .into_par_iter()
            .map(|(mut q, mut qd, mut qt, a)| {
                params.step_row(
                    q.as_slice_mut().expect("standard layout"),
                    qd.as_slice_mut().expect("standard layout"),
                    qt.as_slice_mut().expect("standard layout"),
                    a,
                )
            })
            .sum();
        self.last_saturation = saturated;
        self.total_saturation += saturated;
        Ok(())
    }

    /// Re-initialises masked rows: positions uniform in the middle half of
    /// each joint range, zero velocity, target equal to position. Unmasked
    /// rows are not touched.
    pub fn reset_rows(&mut self, mask: &[bool], model: &RobotModel<T>) {
        assert_eq!(mask.len(), self.len(), "reset mask length");
        let joints: Vec<_> = model.dof_joints().map(|j| (j.limit_lo, j.range())).collect();
        Zip::from(self.q.rows_mut())
            .and(self.qdot.rows_mut())
            .and(self.q_target.rows_mut())
            .and(ndarray::ArrayView1::from(mask))
            .and(ndarray::ArrayViewMut1::from(self.rngs.as_mut_slice()))
            .par_for_each(|mut q, mut qd, mut qt, &m, rng| {
                if !m {
                    return;
                }
                for (i, &(lo, range)) in joints.iter().enumerate() {
                    let u: f64 = rng.random();
                    let v = lo + range * T::c(0.25 + 0.5 * u);
                    q[i] = v;
                    qt[i] = v;
                    qd[i] = T::zero();
                }
            });
    }

    /// Per-row random stream, for callers that need row-local randomness
    /// tied to the dynamics seed.
    pub fn rng_mut(&mut self, row: usize) -> &mut ChaCha8Rng {
        &mut self.rngs[row]
    }

    /// Selects a subset of rows (used to build single-environment views).
    pub fn select_rows(&self, rows: &[usize]) -> SimBatch<T> {
        SimBatch {
            q: self.q.select(Axis(0), rows),
            qdot: self.qdot.select(Axis(0), rows),
            q_target: self.q_target.select(Axis(0), rows),
            rngs: rows.iter().map(|&r| self.rngs[r].clone()).collect(),
            last_saturation: 0,
            total_saturation: 0,
        }
    }
}
