//! Robot description files.
//!
//! Descriptors are TOML documents:
//!
//! ```toml
//! format_version = 1
//! name = "psm"
//!
//! [tool_tip]
//! translation = [0.0, 0.0, 0.0]
//! rotation = [1.0, 0.0, 0.0, 0.0]   # w, x, y, z
//!
//! [workspace]
//! center = [0.0, 0.0, -0.17]
//! radius = 0.12
//! goal_sigma = 0.05                  # per-axis std of sampled goal offsets
//!
//! [jaw]                              # optional
//! dof_index = 6
//! open_angle = 0.8
//!
//! [[joints]]                         # base to tip, one record per joint
//! name = "outer_yaw"
//! kind = "revolute"                  # revolute | prismatic | fixed
//! axis = [1.0, 0.0, 0.0]
//! origin_translation = [0.0, 0.0, 0.0]
//! origin_rotation = [1.0, 0.0, 0.0, 0.0]
//! limits = [-1.2, 1.2]               # rad or m
//! velocity_limit = 4.0
//! effort_limit = 10.0
//! inertia = 0.01
//! damping = 0.002
//! ```
//!
//! Fixed joints may omit every field after `origin_rotation`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Jaw, JointKind, JointSpec, RobotError, RobotModel, Workspace};
use crate::geom::{Pose, Quat, Vec3};
use crate::scalar::Scalar;

pub const DESCRIPTOR_VERSION: u32 = 1;

const BUNDLED: &[(&str, &str)] = &[
    ("psm", include_str!("../../robots/psm.toml")),
    ("ecm", include_str!("../../robots/ecm.toml")),
    ("star", include_str!("../../robots/star.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescriptor {
    pub format_version: u32,
    pub name: String,
    pub tool_tip: ToolTipDescriptor,
    pub workspace: WorkspaceDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jaw: Option<JawDescriptor>,
    pub joints: Vec<JointDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolTipDescriptor {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceDescriptor {
    pub center: [f64; 3],
    pub radius: f64,
    pub goal_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JawDescriptor {
    pub dof_index: usize,
    pub open_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDescriptor {
    pub name: String,
    pub kind: JointKind,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    pub origin_translation: [f64; 3],
    pub origin_rotation: [f64; 4],
    #[serde(default)]
    pub limits: [f64; 2],
    #[serde(default)]
    pub velocity_limit: f64,
    #[serde(default)]
    pub effort_limit: f64,
    #[serde(default)]
    pub inertia: f64,
    #[serde(default)]
    pub damping: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl RobotDescriptor {
    pub fn parse(text: &str) -> Result<Self, RobotError> {
        let d: RobotDescriptor =
            toml::from_str(text).map_err(|e| RobotError::Parse(e.to_string()))?;
        if d.format_version != DESCRIPTOR_VERSION {
            return Err(RobotError::Parse(format!(
                "unsupported format_version {} (expected {DESCRIPTOR_VERSION})",
                d.format_version
            )));
        }
        Ok(d)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor is always representable as TOML")
    }

    pub fn to_model<T: Scalar>(&self) -> Result<RobotModel<T>, RobotError> {
        let joints = self
            .joints
            .iter()
            .map(|j| JointSpec {
                name: j.name.clone(),
                kind: j.kind,
                axis: Vec3::from_f64(j.axis),
                origin: pose_from(j.origin_translation, j.origin_rotation),
                limit_lo: T::c(j.limits[0]),
                limit_hi: T::c(j.limits[1]),
                velocity_limit: T::c(j.velocity_limit),
                effort_limit: T::c(j.effort_limit),
                inertia: T::c(j.inertia),
                damping: T::c(j.damping),
            })
            .collect();
        RobotModel::new(
            self.name.clone(),
            joints,
            pose_from(self.tool_tip.translation, self.tool_tip.rotation),
            self.jaw.as_ref().map(|j| Jaw {
                dof_index: j.dof_index,
                open_angle: T::c(j.open_angle),
            }),
            Workspace {
                center: Vec3::from_f64(self.workspace.center),
                radius: T::c(self.workspace.radius),
                goal_sigma: T::c(self.workspace.goal_sigma),
            },
        )
    }

    pub fn from_model<T: Scalar>(m: &RobotModel<T>) -> Self {
        let q4 = |q: Quat<T>| q.to_wxyz().map(|v| v.f64());
        RobotDescriptor {
            format_version: DESCRIPTOR_VERSION,
            name: m.name.clone(),
            tool_tip: ToolTipDescriptor {
                translation: m.tool_tip.position.to_f64(),
                rotation: q4(m.tool_tip.orientation),
            },
            workspace: WorkspaceDescriptor {
                center: m.workspace.center.to_f64(),
                radius: m.workspace.radius.f64(),
                goal_sigma: m.workspace.goal_sigma.f64(),
            },
            jaw: m.jaw.map(|j| JawDescriptor {
                dof_index: j.dof_index,
                open_angle: j.open_angle.f64(),
            }),
            joints: m
                .joints
                .iter()
                .map(|j| JointDescriptor {
                    name: j.name.clone(),
                    kind: j.kind,
                    axis: j.axis.to_f64(),
                    origin_translation: j.origin.position.to_f64(),
                    origin_rotation: q4(j.origin.orientation),
                    limits: [j.limit_lo.f64(), j.limit_hi.f64()],
                    velocity_limit: j.velocity_limit.f64(),
                    effort_limit: j.effort_limit.f64(),
                    inertia: j.inertia.f64(),
                    damping: j.damping.f64(),
                })
                .collect(),
        }
    }
}

fn pose_from<T: Scalar>(t: [f64; 3], r: [f64; 4]) -> Pose<T> {
    Pose::new(Vec3::from_f64(t), Quat::from_wxyz(r.map(T::c)))
}

/// Parses and validates a descriptor document.
pub fn load_robot<T: Scalar>(text: &str) -> Result<RobotModel<T>, RobotError> {
    RobotDescriptor::parse(text)?.to_model()
}

pub fn load_robot_file<T: Scalar>(path: impl AsRef<Path>) -> Result<RobotModel<T>, RobotError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RobotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_robot(&text)
}

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn load_bundled<T: Scalar>(name: &str) -> Result<RobotModel<T>, RobotError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| RobotError::UnknownRobot(name.to_string()))?;
    load_robot(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_LINK: &str = r#"
format_version = 1
name = "one"
[tool_tip]
translation = [0.5, 0.0, 0.0]
rotation = [1.0, 0.0, 0.0, 0.0]
[workspace]
center = [0.0, 0.0, 0.0]
radius = 1.0
goal_sigma = 0.1
[[joints]]
name = "j0"
kind = "revolute"
axis = [0.0, 0.0, 1.0]
origin_translation = [0.0, 0.0, 0.0]
origin_rotation = [1.0, 0.0, 0.0, 0.0]
limits = [LO, HI]
velocity_limit = 1.0
effort_limit = 1.0
inertia = 0.1
damping = 0.0
"#;

    #[test]
    fn inverted_limits_name_the_joint() {
        let text = ONE_LINK.replace("LO", "1.0").replace("HI", "0.5");
        match load_robot::<f64>(&text) {
            Err(RobotError::InvalidJoint { joint, reason }) => {
                assert_eq!(joint, "j0");
                assert!(reason.contains("lower limit"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let equal = ONE_LINK.replace("LO", "0.5").replace("HI", "0.5");
        assert!(matches!(
            load_robot::<f64>(&equal),
            Err(RobotError::InvalidJoint { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = ONE_LINK.replace("LO", "-1.0").replace("HI", "1.0").replace("kind = \"revolute\"", "kind = \"helical\"");
        let err = load_robot::<f64>(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("helical"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ONE_LINK.replace("LO", "-1.0").replace("HI", "1.0").replace("damping = 0.0", "damping = 0.0\nstiffness = 3.0");
        assert!(matches!(load_robot::<f64>(&text), Err(RobotError::Parse(_))));
    }

    #[test]
    fn non_unit_axis_rejected() {
        let text = ONE_LINK
            .replace("LO", "-1.0")
            .replace("HI", "1.0")
            .replace("axis = [0.0, 0.0, 1.0]", "axis = [0.0, 0.0, 1.001]");
        assert!(matches!(
            load_robot::<f64>(&text),
            Err(RobotError::InvalidJoint { .. })
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let text = ONE_LINK
            .replace("LO", "-1.0")
            .replace("HI", "1.0")
            .replace("format_version = 1", "format_version = 7");
        assert!(load_robot::<f64>(&text).is_err());
    }

    #[test]
    fn bundled_round_trip() {
        for name in bundled_names() {
            let m = load_bundled::<f64>(name).unwrap();
            let text = RobotDescriptor::from_model(&m).to_toml();
            let again = load_robot::<f64>(&text).unwrap();
            assert_eq!(m, again, "{name}");
        }
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_robot_file::<f64>("/nonexistent/arm.toml").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/arm.toml"));
    }
}
