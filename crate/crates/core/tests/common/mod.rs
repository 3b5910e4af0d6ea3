//! Reference implementations shared by the integration tests. Nothing
//! here calls into the library's geometry code.

#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surgsim::envs::{view_axis_distance, EnvBatch, EnvConfig, MultiToolLayout, Task, ToolRole};
use surgsim::geom::{Pose, Vec3};
use surgsim::robot::{load_bundled, JointKind, RobotModel};

pub type Mat4 = [[f64; 4]; 4];

pub fn identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Homogeneous transform from a rotation matrix and a translation.
pub fn homogeneous(r: [[f64; 3]; 3], t: [f64; 3]) -> Mat4 {
    let mut m = identity();
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m
}

/// Rotation matrix of the unit quaternion `(w, x, y, z)`.
pub fn quat_matrix(w: f64, x: f64, y: f64, z: f64) -> [[f64; 3]; 3] {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Rodrigues: `I + sin(t) K + (1 - cos(t)) K^2`.
pub fn axis_angle_matrix(axis: [f64; 3], t: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let mut k2 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k2[i][j] = (0..3).map(|l| k[i][l] * k[l][j]).sum();
        }
    }
    let (s, c) = t.sin_cos();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = f64::from(u8::from(i == j)) + s * k[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    r
}

fn pose_matrix(p: &Pose<f64>) -> Mat4 {
    let [w, x, y, z] = p.orientation.to_wxyz();
    homogeneous(quat_matrix(w, x, y, z), p.position.to_f64())
}

/// Tool tip position by chaining 4x4 homogeneous transforms.
pub fn fk_oracle(model: &RobotModel<f64>, q: &[f64]) -> [f64; 3] {
    let mut m = identity();
    let mut k = 0;
    for j in &model.joints {
        m = matmul(&m, &pose_matrix(&j.origin));
        let axis = j.axis.to_f64();
        let motion = match j.kind {
            JointKind::Fixed => identity(),
            JointKind::Revolute => homogeneous(axis_angle_matrix(axis, q[k]), [0.0; 3]),
            JointKind::Prismatic => {
                let mut t = identity();
                for i in 0..3 {
                    t[i][3] = axis[i] * q[k];
                }
                t
            }
        };
        if j.kind != JointKind::Fixed {
            k += 1;
        }
        m = matmul(&m, &motion);
    }
    m = matmul(&m, &pose_matrix(&model.tool_tip));
    [m[0][3], m[1][3], m[2][3]]
}

/// Uniform configuration inside the joint limits.
pub fn random_configuration<R: Rng>(model: &RobotModel<f64>, rng: &mut R) -> Vec<f64> {
    model
        .dof_joints()
        .map(|j| rng.random_range(j.limit_lo..=j.limit_hi))
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn batch(cfg: &EnvConfig, robot: &str) -> EnvBatch<f64> {
    let model = Arc::new(load_bundled::<f64>(robot).unwrap());
    EnvBatch::from_model(cfg, model, &Default::default(), &Default::default()).unwrap()
}

pub fn random_actions(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |_| {
        if rng.random_bool(0.2) {
            rng.random_range(-4.0..4.0)
        } else {
            rng.random_range(-1.0..=1.0)
        }
    })
}

/// Distance from `p` to the `+z` ray of `camera`, from a rotation matrix.
pub fn axis_distance_oracle(camera: &Pose<f64>, p: Vec3<f64>) -> f64 {
    let [w, x, y, z] = camera.orientation.to_wxyz();
    let r = quat_matrix(w, x, y, z);
    let axis = [r[0][2], r[1][2], r[2][2]];
    let d = (p - camera.position).to_f64();
    let along: f64 = (0..3).map(|i| d[i] * axis[i]).sum();
    let norm = |v: [f64; 3]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if along <= 0.0 {
        norm(d)
    } else {
        norm([d[0] - along * axis[0], d[1] - along * axis[1], d[2] - along * axis[2]])
    }
}

pub fn min_separation_oracle(tips: &[[f64; 3]]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in tips.iter().enumerate() {
        for b in &tips[i + 1..] {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Checks every multi-tool reward against per-tool terms plus the collision
/// penalty, recomputed from the row state.
pub fn check_decomposition(layout: MultiToolLayout, threshold: f64, seed: u64) -> (usize, usize) {
    let cfg = EnvConfig {
        task: Task::MultiToolReaching,
        n_envs: 24,
        episode_len: 10_000,
        terminate_on_success: false,
        multi_tool: layout,
        collision_threshold: threshold,
        collision_penalty: 0.75,
        seed,
        ..EnvConfig::default()
    };
    let robot = if layout == MultiToolLayout::BimanualStar { "star" } else { "psm" };
    let mut env = batch(&cfg, robot);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut collided, mut clear) = (0, 0);
    for _ in 0..60 {
        let a = random_actions(&mut rng, env.n_envs(), env.action_dim());
        let out = env.step(a.view()).unwrap();
        for (i, row) in env.rows().iter().enumerate() {
            let mut expected = 0.0;
            let mut err = 0.0;
            for (t, tool) in env.tools().iter().enumerate() {
                let e = match tool.spec.role {
                    ToolRole::Reach => row.tips[t].position.distance(row.goals[t]),
                    ToolRole::View => {
                        let e = view_axis_distance(&row.tips[t], row.goals[t]);
                        assert!((e - axis_distance_oracle(&row.tips[t], row.goals[t])).abs() < 1e-12);
                        e
                    }
                };
                expected += cfg.reward_scale * e;
                err += e;
            }
            let tips: Vec<[f64; 3]> = row.tips.iter().map(|p| p.position.to_f64()).collect();
            if min_separation_oracle(&tips) < threshold {
                expected -= cfg.collision_penalty;
                collided += 1;
            } else {
                clear += 1;
            }
            assert_eq!(out.rewards[i], expected, "{layout:?} row {i}");
            assert!((out.errors[i] - err / env.tools().len() as f64).abs() < 1e-15);
        }
    }
    (collided, clear)
}

pub fn batch_f32(cfg: &EnvConfig, robot: &str) -> EnvBatch<f32> {
    let model = Arc::new(load_bundled::<f32>(robot).unwrap());
    EnvBatch::from_model(cfg, model, &Default::default(), &Default::default()).unwrap()
}
