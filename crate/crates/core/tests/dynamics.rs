use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surgsim::dynamics::{ControlMode, DynamicsConfig, DynamicsParams, SimBatch};
use surgsim::robot::{bundled_names, load_bundled, RobotModel};

fn models() -> Vec<RobotModel<f64>> {
    bundled_names().map(|n| load_bundled(n).unwrap()).collect()
}

fn params(model: &RobotModel<f64>, mode: ControlMode, substeps: usize) -> DynamicsParams<f64> {
    DynamicsConfig {
        control_mode: mode,
        substeps,
        ..DynamicsConfig::default()
    }
    .resolve(model)
    .unwrap()
}

fn assert_within_limits(sim: &SimBatch<f64>, p: &DynamicsParams<f64>) {
    for (row_q, row_v) in sim.q.rows().into_iter().zip(sim.qdot.rows()) {
        for (i, d) in p.dofs.iter().enumerate() {
            assert!(row_q[i] >= d.lo && row_q[i] <= d.hi, "q[{i}] = {} outside [{}, {}]", row_q[i], d.lo, d.hi);
            assert!(row_v[i].abs() <= d.velocity_limit, "qdot[{i}] = {}", row_v[i]);
        }
    }
}

/// Bang-bang, out-of-range and uniform commands mixed per entry.
fn adversarial_actions(rng: &mut ChaCha8Rng, n: usize, dof: usize, step: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dof), |(i, j)| match (i + j + step / 7) % 4 {
        0 => if (step / 3 + i) % 2 == 0 { 1.0 } else { -1.0 },
        1 => rng.random_range(-50.0..50.0),
        2 => rng.random_range(-1.0..=1.0),
        _ => if rng.random_bool(0.5) { 1e6 } else { -1e6 },
    })
}

#[test]
fn limits_hold_under_adversarial_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, steps) = (50, 2000);
    for model in models() {
        for mode in [ControlMode::Position, ControlMode::Velocity, ControlMode::Torque] {
            let p = params(&model, mode, 4);
            let mut sim = SimBatch::new(&model, n, 3);
            sim.reset_rows(&vec![true; n], &model);
            for step in 0..steps {
                let a = adversarial_actions(&mut rng, n, model.dof_count(), step);
                sim.step(a.view(), &p).unwrap();
                assert_within_limits(&sim, &p);
            }
        }
    }
}

#[test]
fn unforced_damped_motion_loses_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for model in models() {
        let p = params(&model, ControlMode::Torque, 4);
        assert!(p.dofs.iter().all(|d| d.damping > 0.0));
        let n = 32;
        let mut sim = SimBatch::new(&model, n, 5);
        for ((_, j), v) in sim.qdot.indexed_iter_mut() {
            *v = rng.random_range(-1.0..1.0) * p.dofs[j].velocity_limit;
        }
        let zero = Array2::zeros((n, model.dof_count()));
        let energy = |s: &SimBatch<f64>| -> Vec<f64> {
            s.qdot.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum()).collect()
        };
        let mut prev = energy(&sim);
        for _ in 0..500 {
            sim.step(zero.view(), &p).unwrap();
            let now = energy(&sim);
            for (a, b) in now.iter().zip(&prev) {
                assert!(a <= b, "{}: kinetic proxy rose from {b} to {a}", model.name);
            }
            prev = now;
        }
    }
}

/// Max joint error after a small position step, against a very finely
/// substepped reference.
fn step_response(model: &RobotModel<f64>, substeps: usize, steps: usize) -> Vec<f64> {
    let p = params(model, ControlMode::Position, substeps);
    let mut sim = SimBatch::new(model, 1, 0);
    let a = Array2::from_elem((1, model.dof_count()), 0.05);
    for _ in 0..steps {
        sim.step(a.view(), &p).unwrap();
    }
    sim.q.row(0).to_vec()
}

#[test]
fn substep_refinement_is_first_order() {
    for model in models() {
        let jaw = model.jaw.map(|j| j.dof_index);
        let reference = step_response(&model, 4096, 20);
        let err = |s: usize| {
            let q = step_response(&model, s, 20);
            (0..q.len())
                .filter(|i| Some(*i) != jaw)
                .map(|i| (q[i] - reference[i]).abs())
                .fold(0.0, f64::max)
        };
        for s in [4, 8, 16] {
            let ratio = err(s) / err(2 * s);
            assert!((1.5..=2.5).contains(&ratio), "{} substeps {s}: ratio {ratio}", model.name);
        }
    }
}

/// Per-substep update of `(q - q_target, qdot)` for an unsaturated PD loop.
fn pd_matrix(kp: f64, kd: f64, c: f64, h: f64, inertia: f64) -> [[f64; 2]; 2] {
    let a = h * kp / inertia;
    let b = 1.0 - h * (kd + c) / inertia;
    [[1.0 - h * a, h * b], [-a, b]]
}

fn eigenvalues(m: [[f64; 2]; 2]) -> Option<(f64, f64)> {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr - 4.0 * det;
    (disc >= 0.0).then(|| ((tr - disc.sqrt()) / 2.0, (tr + disc.sqrt()) / 2.0))
}

#[test]
fn pd_loop_matches_linear_oracle_and_settles() {
    for model in models() {
        let p = params(&model, ControlMode::Position, 4);
        let jaw = model.jaw.map(|j| j.dof_index);
        let mut sim = SimBatch::new(&model, 1, 0);
        let a = Array2::from_elem((1, model.dof_count()), 0.05);
        let start = sim.q.row(0).to_vec();
        let mut states: Vec<[f64; 2]> = (0..model.dof_count())
            .map(|i| [start[i] - p.position_target(i, 0.05), 0.0])
            .collect();
        for step in 0..500 {
            sim.step(a.view(), &p).unwrap();
            for (i, d) in p.dofs.iter().enumerate() {
                if Some(i) == jaw {
                    continue;
                }
                let inertia = p.h / d.h_over_inertia;
                let m = pd_matrix(d.kp, d.kd, d.damping, p.h, inertia);
                for _ in 0..p.substeps {
                    let [e, v] = states[i];
                    states[i] = [m[0][0] * e + m[0][1] * v, m[1][0] * e + m[1][1] * v];
                }
                let target = p.position_target(i, 0.05);
                let q = sim.q[[0, i]];
                assert!(
                    (q - target - states[i][0]).abs() < 1e-9,
                    "{} dof {i} step {step}: {} vs oracle {}",
                    model.name,
                    q - target,
                    states[i][0]
                );
                if step == 0 {
                    let (l1, l2) = eigenvalues(m).expect("real poles");
                    assert!(l1 > 0.0 && l2 < 1.0, "{} dof {i}: poles {l1}, {l2}", model.name);
                }
            }
        }
        for i in (0..model.dof_count()).filter(|i| Some(*i) != jaw) {
            assert!((sim.q[[0, i]] - p.position_target(i, 0.05)).abs() < 1e-3);
        }
    }
}

#[test]
fn resets_land_in_middle_half_at_rest() {
    for model in models() {
        let n = 100;
        let mut sim = SimBatch::new(&model, n, 9);
        for _ in 0..100 {
            sim.reset_rows(&vec![true; n], &model);
            for row in sim.q.rows() {
                for (i, j) in model.dof_joints().enumerate() {
                    let lo = j.limit_lo + 0.25 * j.range();
                    let hi = j.limit_lo + 0.75 * j.range();
                    assert!(row[i] >= lo && row[i] <= hi);
                }
            }
            assert!(sim.qdot.iter().all(|v| *v == 0.0));
            assert_eq!(sim.q, sim.q_target);
        }
    }
}

fn run_with_threads(threads: usize) -> (Array2<f64>, Array2<f64>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let model = load_bundled::<f64>("star").unwrap();
        let p = params(&model, ControlMode::Position, 4);
        let mut sim = SimBatch::new(&model, 257, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for step in 0..50 {
            let a = adversarial_actions(&mut rng, 257, model.dof_count(), step);
            sim.step(a.view(), &p).unwrap();
            if step % 10 == 9 {
                let mask: Vec<bool> = (0..257).map(|i| i % 3 == step % 3).collect();
                sim.reset_rows(&mask, &model);
            }
        }
        (sim.q, sim.qdot)
    })
}

#[test]
fn thread_count_does_not_change_results() {
    assert_eq!(run_with_threads(1), run_with_threads(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_step_limits(seed in any::<u64>(), a in prop::collection::vec(-5.0f64..5.0, 7), mode in 0usize..3) {
        let model = load_bundled::<f64>("psm").unwrap();
        let mode = [ControlMode::Position, ControlMode::Velocity, ControlMode::Torque][mode];
        let p = params(&model, mode, 1 + (seed % 8) as usize);
        let mut sim = SimBatch::new(&model, 1, seed);
        sim.reset_rows(&[true], &model);
        let a = Array2::from_shape_vec((1, 7), a).unwrap();
        let clamped = a.iter().filter(|v| v.abs() > 1.0).count() as u64;
        sim.step(a.view(), &p).unwrap();
        prop_assert_eq!(sim.last_saturation, clamped);
        for (i, d) in p.dofs.iter().enumerate() {
            prop_assert!(sim.q[[0, i]] >= d.lo && sim.q[[0, i]] <= d.hi);
            prop_assert!(sim.qdot[[0, i]].abs() <= d.velocity_limit);
        }
    }
}
