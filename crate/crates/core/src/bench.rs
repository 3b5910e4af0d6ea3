//! Throughput measurement.
//!
//! A run steps the batch with uniform random actions (or runs the full
//! training loop) until `total_steps` aggregate transitions have been
//! timed. A step counts `n_envs` transitions. The clock starts after one
//! untimed warm-up step.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsConfig;
use crate::envs::{EnvBatch, EnvConfig, EnvError, ToolSpec};
use crate::learn::{LearnError, TrainConfig, Trainer};
use crate::render::RenderConfig;
use crate::rng::{row_streams, StreamKind};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("invalid bench protocol: {0}")]
    InvalidProtocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    #[default]
    #[serde(alias = "sim")]
    SimOnly,
    #[serde(alias = "learn")]
    WithLearning,
}

impl BenchMode {
    pub fn parse(s: &str) -> Option<BenchMode> {
        match s {
            "sim" | "sim_only" => Some(BenchMode::SimOnly),
            "learn" | "with_learning" => Some(BenchMode::WithLearning),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchProtocol {
    pub mode: BenchMode,
    pub total_steps: u64,
    pub runs: usize,
    pub n_envs: usize,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        BenchProtocol {
            mode: BenchMode::SimOnly,
            total_steps: 1_000_000,
            runs: 30,
            n_envs: 4096,
        }
    }
}

impl BenchProtocol {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.total_steps < 1 || self.runs < 1 || self.n_envs < 1 {
            return Err(BenchError::InvalidProtocol(
                "total_steps, runs and n_envs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub logical_cores: usize,
    pub worker_threads: usize,
    pub os: String,
    pub arch: String,
    pub clock: String,
}

impl HostInfo {
    pub fn current() -> Self {
        HostInfo {
            logical_cores: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            worker_threads: rayon::current_num_threads(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            clock: "monotonic (std::time::Instant)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub mode: BenchMode,
    pub task: String,
    pub robot: String,
    pub precision: String,
    pub n_envs: usize,
    pub runs: usize,
    /// Transitions timed in each run (at least the requested total).
    pub steps_per_run: u64,
    pub elapsed_s: Vec<f64>,
    pub fps: Vec<f64>,
    pub seconds_per_1m_mean: f64,
    pub seconds_per_1m_std: f64,
    pub fps_mean: f64,
    pub fps_std: f64,
    /// Runs whose elapsed time was not a positive finite number.
    pub clock_anomalies: usize,
    pub host: HostInfo,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BenchReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_runs(
        label: impl Into<String>,
        mode: BenchMode,
        task: &str,
        robot: &str,
        precision: &str,
        n_envs: usize,
        steps_per_run: u64,
        elapsed_s: Vec<f64>,
    ) -> Self {
        let clock_anomalies = elapsed_s.iter().filter(|e| !(e.is_finite() && **e > 0.0)).count();
        let fps: Vec<f64> = elapsed_s.iter().map(|e| steps_per_run as f64 / e).collect();
        let per_1m: Vec<f64> = elapsed_s.iter().map(|e| e * 1e6 / steps_per_run as f64).collect();
        let (s_mean, s_std) = mean_std(&per_1m);
        let (f_mean, f_std) = mean_std(&fps);
        BenchReport {
            label: label.into(),
            mode,
            task: task.into(),
            robot: robot.into(),
            precision: precision.into(),
            n_envs,
            runs: elapsed_s.len(),
            steps_per_run,
            elapsed_s,
            fps,
            seconds_per_1m_mean: s_mean,
            seconds_per_1m_std: s_std,
            fps_mean: f_mean,
            fps_std: f_std,
            clock_anomalies,
            host: HostInfo::current(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub const TABLE_HEADER: &'static str =
        "| Simulator | Mode | Envs | Seconds per 1M Timesteps | Frames per second |\n|---|---|---|---|---|";

    /// One table row: mean ± std over runs.
    pub fn table_row(&self) -> String {
        let mode = match self.mode {
            BenchMode::SimOnly => "sim",
            BenchMode::WithLearning => "learn",
        };
        format!(
            "| {} | {} | {} | {:.2} ± {:.2} | {:.0} ± {:.0} |",
            self.label, mode, self.n_envs, self.seconds_per_1m_mean, self.seconds_per_1m_std, self.fps_mean, self.fps_std
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n{}\n", Self::TABLE_HEADER, self.table_row());
        s.push_str(&format!(
            "\n{} runs of {} steps; {} / {} | host: {} logical cores, {} worker threads, {}-{}, clock {}",
            self.runs,
            self.steps_per_run,
            self.task,
            self.robot,
            self.host.logical_cores,
            self.host.worker_threads,
            self.host.os,
            self.host.arch,
            self.host.clock
        ));
        if self.clock_anomalies > 0 {
            s.push_str(&format!("\nWARNING: {} runs had non-positive elapsed time", self.clock_anomalies));
        }
        s
    }
}

/// Everything needed to build the environment under test.
#[derive(Debug, Clone)]
pub struct BenchSetup<T> {
    pub env: EnvConfig,
    pub tools: Vec<ToolSpec<T>>,
    pub dynamics: DynamicsConfig,
    pub render: RenderConfig,
}

impl<T: Scalar> BenchSetup<T> {
    pub fn build(&self, n_envs: usize) -> Result<EnvBatch<T>, EnvError> {
        let cfg = EnvConfig {
            n_envs,
            ..self.env.clone()
        };
        EnvBatch::new(&cfg, self.tools.clone(), &self.dynamics, &self.render)
    }

    fn robot_name(&self) -> String {
        self.tools.iter().map(|t| t.model.name.as_str()).collect::<Vec<_>>().join("+")
    }
}

/// Uniform actions in `[-1, 1]` from per-row streams.
pub struct RandomActions {
    rngs: Vec<rand_chacha::ChaCha8Rng>,
}

impl RandomActions {
    pub fn new(seed: u64, n: usize) -> Self {
        RandomActions {
            rngs: row_streams(seed, StreamKind::Bench, n),
        }
    }

    pub fn fill<T: Scalar>(&mut self, out: &mut Array2<T>) {
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(self.rngs.par_iter_mut())
            .for_each(|(mut row, rng)| row.iter_mut().for_each(|a| *a = T::c(rng.random_range(-1.0..=1.0))));
    }
}

fn timed_steps(total: u64, n_envs: usize) -> u64 {
    total.div_ceil(n_envs as u64)
}

/// Batched stepping with random actions.
pub fn bench_sim<T: Scalar>(setup: &BenchSetup<T>, protocol: &BenchProtocol) -> Result<BenchReport, BenchError> {
    protocol.validate()?;
    let n = protocol.n_envs;
    let steps = timed_steps(protocol.total_steps, n);
    let mut elapsed = Vec::with_capacity(protocol.runs);
    let mut env = setup.build(n)?;
    for run in 0..protocol.runs {
        env.reset_all()?;
        let mut actions = Array2::<T>::zeros((n, env.action_dim()));
        let mut rng = RandomActions::new(setup.env.seed.wrapping_add(run as u64), n);
        rng.fill(&mut actions);
        env.step(actions.view())?;
        let t0 = Instant::now();
        for _ in 0..steps {
            rng.fill(&mut actions);
            std::hint::black_box(env.step(actions.view())?);
        }
        elapsed.push(t0.elapsed().as_secs_f64());
    }
    Ok(BenchReport::from_runs(
        "surgsim batched",
        BenchMode::SimOnly,
        setup.env.task.name(),
        &setup.robot_name(),
        T::NAME,
        n,
        steps * n as u64,
        elapsed,
    ))
}

/// Baseline: `protocol.n_envs` independent single-env instances stepped one
/// after another, as a non-batched simulator would be driven.
pub fn bench_sim_sequential<T: Scalar>(
    setup: &BenchSetup<T>,
    protocol: &BenchProtocol,
) -> Result<BenchReport, BenchError> {
    protocol.validate()?;
    let n = protocol.n_envs;
    let steps = timed_steps(protocol.total_steps, n);
    let mut elapsed = Vec::with_capacity(protocol.runs);
    let mut envs = (0..n)
        .map(|i| {
            let cfg = EnvConfig {
                n_envs: 1,
                seed: setup.env.seed.wrapping_add(i as u64),
                ..setup.env.clone()
            };
            EnvBatch::new(&cfg, setup.tools.clone(), &setup.dynamics, &setup.render)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ad = envs[0].action_dim();
    for run in 0..protocol.runs {
        let mut rngs = RandomActions::new(setup.env.seed.wrapping_add(run as u64), n);
        let mut actions = Array2::<T>::zeros((n, ad));
        for e in envs.iter_mut() {
            e.reset_all()?;
        }
        rngs.fill(&mut actions);
        for (i, e) in envs.iter_mut().enumerate() {
            e.step(actions.slice(ndarray::s![i..i + 1, ..]))?;
        }
        let t0 = Instant::now();
        for _ in 0..steps {
            rngs.fill(&mut actions);
            for (i, e) in envs.iter_mut().enumerate() {
                std::hint::black_box(e.step(actions.slice(ndarray::s![i..i + 1, ..]))?);
            }
        }
        elapsed.push(t0.elapsed().as_secs_f64());
    }
    Ok(BenchReport::from_runs(
        "surgsim sequential",
        BenchMode::SimOnly,
        setup.env.task.name(),
        &setup.robot_name(),
        T::NAME,
        n,
        steps * n as u64,
        elapsed,
    ))
}

/// Full training loop (rollouts, GAE, PPO updates) inside the timed region.
/// `train.n_robots` is replaced by `protocol.n_envs`.
pub fn bench_learning<T: Scalar>(
    setup: &BenchSetup<T>,
    train: &TrainConfig,
    protocol: &BenchProtocol,
) -> Result<BenchReport, BenchError> {
    protocol.validate()?;
    let n = protocol.n_envs;
    let cfg = TrainConfig {
        n_robots: n,
        total_steps: protocol.total_steps,
        ..train.clone()
    };
    let mut elapsed = Vec::with_capacity(protocol.runs);
    let mut counted = 0;
    for _ in 0..protocol.runs {
        let env = setup.build(n)?;
        let mut trainer = Trainer::new(cfg.clone(), env)?;
        let warm = Array2::<T>::zeros((n, trainer.env.action_dim()));
        trainer.env.step(warm.view())?;
        let t0 = Instant::now();
        while trainer.env_steps < cfg.total_steps {
            trainer.iterate()?;
        }
        elapsed.push(t0.elapsed().as_secs_f64());
        counted = trainer.env_steps;
    }
    Ok(BenchReport::from_runs(
        "surgsim batched",
        BenchMode::WithLearning,
        setup.env.task.name(),
        &setup.robot_name(),
        T::NAME,
        n,
        counted,
        elapsed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::tool_specs;
    use crate::robot::load_bundled;
    use std::sync::Arc;

    fn setup() -> BenchSetup<f64> {
        let env = EnvConfig::default();
        let tools = tool_specs(&env, &Arc::new(load_bundled("psm").unwrap())).unwrap();
        BenchSetup {
            env,
            tools,
            dynamics: DynamicsConfig::default(),
            render: RenderConfig::default(),
        }
    }

    #[test]
    fn report_arithmetic() {
        let p = BenchProtocol {
            total_steps: 1000,
            runs: 2,
            n_envs: 8,
            ..Default::default()
        };
        let r = bench_sim(&setup(), &p).unwrap();
        assert_eq!(r.elapsed_s.len(), 2);
        assert_eq!(r.steps_per_run, 1000);
        for (f, e) in r.fps.iter().zip(&r.elapsed_s) {
            assert_eq!(*f, 1000.0 / e);
        }
        let (m, _) = mean_std(&r.fps);
        assert_eq!(r.fps_mean, m);
        // Seconds per 1M and FPS agree.
        for (f, e) in r.fps.iter().zip(&r.elapsed_s) {
            assert!((e * 1e6 / 1000.0 - 1e6 / f).abs() <= 1e-9 * (1e6 / f));
        }
        assert_eq!(r.clock_anomalies, 0);
        assert!(r.to_table().contains("Seconds per 1M Timesteps"));
    }

    #[test]
    fn doubling_envs_keeps_step_count() {
        let mk = |n| BenchProtocol {
            total_steps: 1024,
            runs: 1,
            n_envs: n,
            ..Default::default()
        };
        let a = bench_sim(&setup(), &mk(8)).unwrap();
        let b = bench_sim(&setup(), &mk(16)).unwrap();
        assert_eq!(a.steps_per_run, b.steps_per_run);
        let s = bench_sim_sequential(&setup(), &mk(4)).unwrap();
        assert_eq!(s.steps_per_run, 1024);
    }

    #[test]
    fn mean_std_example() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn anomalies_are_flagged() {
        let r = BenchReport::from_runs("x", BenchMode::SimOnly, "t", "r", "f64", 1, 10, vec![0.0, 1.0]);
        assert_eq!(r.clock_anomalies, 1);
        assert!(r.to_table().contains("WARNING"));
    }

    #[test]
    fn protocol_validation() {
        let p = BenchProtocol {
            runs: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
