//! Kinematic chain descriptions for the supported arms.
//!
//! A [`RobotModel`] is an ordered list of joints from base to tip followed by
//! a fixed tool-tip frame. Revolute and prismatic joints contribute one
//! degree of freedom each; fixed joints contribute none. Models are immutable
//! after loading and are shared freely across worker threads.

mod descriptor;
mod kinematics;

pub use descriptor::{
    bundled_names, load_bundled, load_robot, load_robot_file, JawDescriptor, JointDescriptor,
    RobotDescriptor, ToolTipDescriptor, WorkspaceDescriptor, DESCRIPTOR_VERSION,
};
pub use kinematics::{JointFrame, TipJacobian};

use serde::{Deserialize, Serialize};

use crate::geom::{Pose, Vec3};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum RobotError {
    #[error("robot descriptor parse error: {0}")]
    Parse(String),
    #[error("joint `{joint}`: {reason}")]
    InvalidJoint { joint: String, reason: String },
    #[error("invalid robot descriptor: {0}")]
    InvalidModel(String),
    #[error("unknown bundled robot `{0}`")]
    UnknownRobot(String),
    #[error("cannot read robot file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("expected {expected} joint coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dof {dof}: value {value} outside [{lo}, {hi}]")]
    OutOfLimits { dof: usize, value: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

impl JointKind {
    pub fn dof(self) -> usize {
        match self {
            JointKind::Fixed => 0,
            _ => 1,
        }
    }

    pub fn letter(self) -> char {
        match self {
            JointKind::Revolute => 'R',
            JointKind::Prismatic => 'P',
            JointKind::Fixed => 'F',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec<T> {
    pub name: String,
    pub kind: JointKind,
    /// Motion axis in the joint frame.
    pub axis: Vec3<T>,
    /// Joint frame relative to the previous link frame.
    pub origin: Pose<T>,
    pub limit_lo: T,
    pub limit_hi: T,
    pub velocity_limit: T,
    pub effort_limit: T,
    /// Effective diagonal inertia seen by this DoF (kg m^2 or kg).
    pub inertia: T,
    /// Viscous damping coefficient.
    pub damping: T,
}

impl<T: Scalar> JointSpec<T> {
    pub fn range(&self) -> T {
        self.limit_hi - self.limit_lo
    }

    pub fn mid(&self) -> T {
        (self.limit_lo + self.limit_hi) * T::c(0.5)
    }
}

/// Gripper jaw attached to one DoF. Binary open/close commands map to
/// PD targets `0` and `open_angle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jaw<T> {
    pub dof_index: usize,
    pub open_angle: T,
}

/// Region goals are sampled from: a ball of `radius` about `center`,
/// both in the robot base frame. Goal offsets from the center are drawn
/// per axis from `N(0, goal_sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace<T> {
    pub center: Vec3<T>,
    pub radius: T,
    pub goal_sigma: T,
}

impl<T: Scalar> Workspace<T> {
    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.distance(self.center) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel<T> {
    pub name: String,
    pub joints: Vec<JointSpec<T>>,
    pub tool_tip: Pose<T>,
    pub jaw: Option<Jaw<T>>,
    pub workspace: Workspace<T>,
    /// For each DoF, the index of the joint that drives it.
    dof_joints: Vec<usize>,
}

impl<T: Scalar> RobotModel<T> {
    /// Assembles a model and checks every joint invariant.
    pub fn new(
        name: impl Into<String>,
        joints: Vec<JointSpec<T>>,
        tool_tip: Pose<T>,
        jaw: Option<Jaw<T>>,
        workspace: Workspace<T>,
    ) -> Result<Self, RobotError> {
        let name = name.into();
        for j in &joints {
            validate_joint(j)?;
        }
        if !tool_tip.is_valid(T::c(1e-9)) {
            return Err(RobotError::InvalidModel(
                "tool tip rotation is not a unit quaternion".into(),
            ));
        }
        let dof_joints: Vec<usize> = joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.kind != JointKind::Fixed)
            .map(|(i, _)| i)
            .collect();
        if dof_joints.is_empty() {
            return Err(RobotError::InvalidModel("robot has no movable joints".into()));
        }
        if let Some(jaw) = &jaw {
            let Some(&ji) = dof_joints.get(jaw.dof_index) else {
                return Err(RobotError::InvalidModel(format!(
                    "jaw dof index {} out of range for {} dofs",
                    jaw.dof_index,
                    dof_joints.len()
                )));
            };
            let j = &joints[ji];
            if jaw.open_angle < j.limit_lo || jaw.open_angle > j.limit_hi {
                return Err(RobotError::InvalidJoint {
                    joint: j.name.clone(),
                    reason: "jaw open angle outside joint limits".into(),
                });
            }
        }
        if !(workspace.radius > T::zero() && workspace.goal_sigma > T::zero())
            || !workspace.center.is_finite()
        {
            return Err(RobotError::InvalidModel(
                "workspace radius and goal_sigma must be positive".into(),
            ));
        }
        Ok(RobotModel {
            name,
            joints,
            tool_tip,
            jaw,
            workspace,
            dof_joints,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.dof_joints.len()
    }

    /// Joint driving DoF `i`.
    pub fn dof_joint(&self, i: usize) -> &JointSpec<T> {
        &self.joints[self.dof_joints[i]]
    }

    pub fn dof_joints(&self) -> impl Iterator<Item = &JointSpec<T>> + '_ {
        self.dof_joints.iter().map(move |&i| &self.joints[i])
    }

    /// Actuated joint sequence, e.g. `RRPRRRR` for the PSM including its jaw.
    pub fn joint_sequence(&self) -> String {
        self.dof_joints().map(|j| j.kind.letter()).collect()
    }

    pub fn lower_limits(&self) -> Vec<T> {
        self.dof_joints().map(|j| j.limit_lo).collect()
    }

    pub fn upper_limits(&self) -> Vec<T> {
        self.dof_joints().map(|j| j.limit_hi).collect()
    }

    /// Configuration at the middle of every joint range.
    pub fn mid_configuration(&self) -> Vec<T> {
        self.dof_joints().map(|j| j.mid()).collect()
    }

    /// Checks `q` has the right length and lies inside the joint limits.
    pub fn check_configuration(&self, q: &[T]) -> Result<(), RobotError> {
        if q.len() != self.dof_count() {
            return Err(RobotError::DimensionMismatch {
                expected: self.dof_count(),
                got: q.len(),
            });
        }
        for (i, (j, &v)) in self.dof_joints().zip(q).enumerate() {
            if !(v >= j.limit_lo && v <= j.limit_hi) {
                return Err(RobotError::OutOfLimits {
                    dof: i,
                    value: v.f64(),
                    lo: j.limit_lo.f64(),
                    hi: j.limit_hi.f64(),
                });
            }
        }
        Ok(())
    }

    /// Converts between scalar types through the `f64` descriptor form.
    pub fn cast<U: Scalar>(&self) -> RobotModel<U> {
        RobotDescriptor::from_model(self)
            .to_model()
            .expect("a valid model stays valid after a cast")
    }
}

fn validate_joint<T: Scalar>(j: &JointSpec<T>) -> Result<(), RobotError> {
    let bad = |reason: String| RobotError::InvalidJoint {
        joint: j.name.clone(),
        reason,
    };
    if !j.origin.is_valid(T::c(1e-9)) {
        return Err(bad("origin rotation is not a unit quaternion".into()));
    }
    if j.kind == JointKind::Fixed {
        return Ok(());
    }
    if !((j.axis.norm() - T::one()).abs() <= T::c(1e-12)) {
        return Err(bad(format!("axis norm {} is not 1", j.axis.norm())));
    }
    if !(j.limit_lo < j.limit_hi) {
        return Err(bad(format!(
            "lower limit {} must be below upper limit {}",
            j.limit_lo, j.limit_hi
        )));
    }
    for (what, v) in [
        ("velocity limit", j.velocity_limit),
        ("effort limit", j.effort_limit),
        ("inertia", j.inertia),
    ] {
        if !(v > T::zero()) || !v.is_finite() {
            return Err(bad(format!("{what} must be positive and finite, got {v}")));
        }
    }
    if !(j.damping >= T::zero()) {
        return Err(bad("damping must be non-negative".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_sequences() {
        let psm = load_bundled::<f64>("psm").unwrap();
        assert_eq!(psm.dof_count(), 7);
        assert_eq!(psm.joint_sequence(), "RRPRRRR");
        assert_eq!(psm.jaw.unwrap().dof_index, 6);

        let ecm = load_bundled::<f64>("ecm").unwrap();
        assert_eq!(ecm.dof_count(), 6);
        assert_eq!(ecm.joint_sequence(), "RRPRRR");
        assert!(ecm.jaw.is_none());

        let star = load_bundled::<f64>("star").unwrap();
        assert_eq!(star.dof_count(), 8);
        assert_eq!(star.joint_sequence(), "RRRRRRRR");
    }

    #[test]
    fn configuration_checks() {
        let psm = load_bundled::<f64>("psm").unwrap();
        let mut q = psm.mid_configuration();
        assert!(psm.check_configuration(&q).is_ok());
        assert!(matches!(
            psm.check_configuration(&q[..3]),
            Err(RobotError::DimensionMismatch { expected: 7, got: 3 })
        ));
        q[2] = psm.dof_joint(2).limit_hi + 1e-3;
        assert!(matches!(
            psm.check_configuration(&q),
            Err(RobotError::OutOfLimits { dof: 2, .. })
        ));
        q[2] = f64::NAN;
        assert!(psm.check_configuration(&q).is_err());
    }

    #[test]
    fn mid_configuration_tip_sits_at_workspace_center() {
        for name in bundled_names() {
            let m = load_bundled::<f64>(name).unwrap();
            let tip = m.forward_kinematics(&m.mid_configuration()).unwrap();
            assert!(
                tip.position.distance(m.workspace.center) < 1e-3,
                "{name}: {:?} vs {:?}",
                tip.position,
                m.workspace.center
            );
        }
    }
}
