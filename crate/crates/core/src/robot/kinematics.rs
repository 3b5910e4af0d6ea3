use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::{JointKind, RobotError, RobotModel};
use crate::geom::{Pose, Quat, Vec3};
use crate::scalar::Scalar;

/// Positional tip Jacobian, `3 x dof`.
pub type TipJacobian<T> = Array2<T>;

/// World-frame placement of one actuated joint at a given configuration.
#[derive(Debug, Clone, Copy)]
pub struct JointFrame<T> {
    pub kind: JointKind,
    /// Joint origin (a point on the motion axis).
    pub origin: Vec3<T>,
    /// Unit motion axis in world coordinates.
    pub axis: Vec3<T>,
}

impl<T: Scalar> RobotModel<T> {
    /// End-effector pose for configuration `q`.
    pub fn forward_kinematics(&self, q: &[T]) -> Result<Pose<T>, RobotError> {
        self.check_configuration(q)?;
        Ok(self.tip_pose(q))
    }

    /// Forward kinematics without the limit check. `q` must have
    /// `dof_count` entries.
    #[inline]
    pub fn tip_pose(&self, q: &[T]) -> Pose<T> {
        debug_assert_eq!(q.len(), self.dof_count());
        let mut frame = Pose::identity();
        let mut k = 0;
        for j in &self.joints {
            frame = frame.compose(&j.origin);
            match j.kind {
                JointKind::Fixed => {}
                JointKind::Revolute => {
                    frame.orientation = frame.orientation * Quat::from_axis_angle(j.axis, q[k]);
                    k += 1;
                }
                JointKind::Prismatic => {
                    frame.position += frame.orientation.rotate(j.axis.scale(q[k]));
                    k += 1;
                }
            }
        }
        frame.compose(&self.tool_tip)
    }

    /// Row-wise forward kinematics over an `N x dof` matrix. Rows are
    /// evaluated independently, so results do not depend on the batch size
    /// or the number of worker threads.
    pub fn forward_kinematics_batch(&self, q: ArrayView2<'_, T>) -> Result<Vec<Pose<T>>, RobotError> {
        if q.ncols() != self.dof_count() {
            return Err(RobotError::DimensionMismatch {
                expected: self.dof_count(),
                got: q.ncols(),
            });
        }
        let rows: Vec<_> = q.outer_iter().collect();
        rows.par_iter()
            .map(|row| match row.as_slice() {
                Some(s) => self.forward_kinematics(s),
                None => self.forward_kinematics(&row.to_vec()),
            })
            .collect()
    }

    /// World-frame joint axes and origins plus the tip pose.
    pub fn joint_frames(&self, q: &[T]) -> (Vec<JointFrame<T>>, Pose<T>) {
        let mut frames = Vec::with_capacity(self.dof_count());
        let mut frame = Pose::identity();
        let mut k = 0;
        for j in &self.joints {
            frame = frame.compose(&j.origin);
            if j.kind == JointKind::Fixed {
                continue;
            }
            frames.push(JointFrame {
                kind: j.kind,
                origin: frame.position,
                axis: frame.orientation.rotate(j.axis),
            });
            match j.kind {
                JointKind::Revolute => {
                    frame.orientation = frame.orientation * Quat::from_axis_angle(j.axis, q[k])
                }
                _ => frame.position += frame.orientation.rotate(j.axis.scale(q[k])),
            }
            k += 1;
        }
        (frames, frame.compose(&self.tool_tip))
    }

    /// Geometric positional Jacobian of the tool tip, `d p_tip / d q`.
    pub fn tip_jacobian(&self, q: &[T]) -> Result<TipJacobian<T>, RobotError> {
        self.check_configuration(q)?;
        let (frames, tip) = self.joint_frames(q);
        let mut jac = Array2::zeros((3, frames.len()));
        for (c, f) in frames.iter().enumerate() {
            let col = match f.kind {
                JointKind::Revolute => f.axis.cross(tip.position - f.origin),
                _ => f.axis,
            };
            for r in 0..3 {
                jac[[r, c]] = col[r];
            }
        }
        Ok(jac)
    }
}
