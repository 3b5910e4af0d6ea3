use std::fmt;
use std::path::{Path, PathBuf};

use log::info;
use surgsim::bench::{bench_learning, bench_sim, bench_sim_sequential, BenchMode, BenchReport, BenchSetup};
use surgsim::config::{ConfigError, RunConfig};
use surgsim::envs::{tool_specs, EnvBatch, EnvConfig, EnvError, Task};
use surgsim::learn::{evaluate, Checkpoint, CheckpointError, LearnError, Trainer};
use surgsim::render::write_pgm;
use surgsim::robot::{bundled_names, load_bundled};
use surgsim::scalar::{Precision, Scalar};

use crate::{ConfigArgs, OUTPUT_ROOT_VAR};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or inputs; exit code 2.
    Config(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig(_) | EnvError::Robot(_) | EnvError::WorkspaceRejection { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Config(format!("checkpoint: {e}"))
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Env(e) => e.into(),
            LearnError::Checkpoint(e) => e.into(),
            LearnError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<surgsim::bench::BenchError> for CliError {
    fn from(e: surgsim::bench::BenchError) -> Self {
        use surgsim::bench::BenchError as B;
        match e {
            B::Env(e) => e.into(),
            B::Learn(e) => e.into(),
            B::InvalidProtocol(_) => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(what: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", what.display()))
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn output_dir(cfg: &RunConfig, args: &ConfigArgs, default_name: String) -> PathBuf {
    let d = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(default_name));
    if d.is_absolute() {
        d
    } else {
        output_root().join(d)
    }
}

fn load_config(args: &ConfigArgs, extra: &[String]) -> Result<RunConfig, CliError> {
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    Ok(RunConfig::load(args.config.as_deref(), &overrides)?)
}

fn build_env<T: Scalar>(cfg: &RunConfig, env_cfg: &EnvConfig) -> Result<EnvBatch<T>, CliError> {
    let model = cfg.robot.load::<T>()?;
    let tools = tool_specs(env_cfg, &model)?;
    Ok(EnvBatch::new(env_cfg, tools, &cfg.dynamics, &cfg.render)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

pub fn train(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(args, &[])?;
    match cfg.precision {
        Precision::F32 => train_impl::<f32>(cfg, args),
        Precision::F64 => train_impl::<f64>(cfg, args),
    }
}

fn train_impl<T: Scalar>(mut cfg: RunConfig, args: &ConfigArgs) -> Result<(), CliError> {
    let env = build_env::<T>(&cfg, &cfg.train_env())?;
    let dir = output_dir(
        &cfg,
        args,
        format!("{}-{}-seed{}", cfg.env.task.name(), env.layout().robots.join("+"), cfg.seed),
    );
    create_dir(&dir)?;
    cfg.output_dir = Some(dir.clone());
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;
    write_file(&dir.join("obs_layout.json"), &env.layout().to_json())?;
    let train_cfg = cfg.train_config();
    let total = train_cfg.n_updates();
    info!(
        "training {} on {} ({} robots x {} steps, {} updates, {}) -> {}",
        cfg.env.task.name(),
        env.layout().robots.join("+"),
        train_cfg.n_robots,
        train_cfg.n_steps,
        total,
        T::NAME,
        dir.display()
    );
    let mut trainer = Trainer::new(train_cfg, env)?;
    let outcome = trainer.run(Some(&dir), |r| {
        info!(
            "update {}/{} steps {} episodes {} final_error {} reward {} kl {:.4} fps {:.0}",
            r.update,
            total,
            r.env_steps,
            r.rollout.episodes,
            r.rollout.mean_final_error.map_or("-".into(), |v| format!("{v:.4}")),
            r.rollout.mean_episode_reward.map_or("-".into(), |v| format!("{v:.3}")),
            r.optim.approx_kl,
            r.fps
        )
    })?;
    println!(
        "trained {} updates, {} env steps in {:.1} s; checkpoint {}",
        outcome.updates,
        outcome.env_steps,
        outcome.wall_time_s,
        outcome.checkpoint.map(|p| p.display().to_string()).unwrap_or_default()
    );
    Ok(())
}

pub struct BenchFlags {
    pub mode: Option<String>,
    pub envs: Option<usize>,
    pub steps: Option<u64>,
    pub runs: Option<usize>,
    pub task: Option<String>,
    pub robot: Option<String>,
    pub baseline: bool,
}

impl BenchFlags {
    fn overrides(&self) -> Result<Vec<String>, CliError> {
        let mut o = vec![];
        if let Some(m) = &self.mode {
            let mode = BenchMode::parse(m)
                .ok_or_else(|| CliError::Config(format!("--mode: expected `sim` or `learn`, got `{m}`")))?;
            let name = match mode {
                BenchMode::SimOnly => "sim_only",
                BenchMode::WithLearning => "with_learning",
            };
            o.push(format!("bench.mode=\"{name}\""));
        }
        if let Some(n) = self.envs {
            o.push(format!("bench.n_envs={n}"));
        }
        if let Some(n) = self.steps {
            o.push(format!("bench.total_steps={n}"));
        }
        if let Some(n) = self.runs {
            o.push(format!("bench.runs={n}"));
        }
        if let Some(t) = &self.task {
            if Task::parse(t).is_none() {
                return Err(CliError::Config(format!("--task: unknown task `{t}`")));
            }
            o.push(format!("env.task=\"{t}\""));
        }
        if let Some(r) = &self.robot {
            if r.ends_with(".toml") || r.contains('/') {
                o.push(format!("robot.file={}", toml_string(r)));
            } else {
                o.push(format!("robot.name={}", toml_string(r)));
            }
        }
        Ok(o)
    }
}

fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialises")
}

pub fn bench(args: &ConfigArgs, flags: &BenchFlags) -> Result<(), CliError> {
    let cfg = load_config(args, &flags.overrides()?)?;
    match cfg.precision {
        Precision::F32 => bench_impl::<f32>(cfg, args, flags.baseline),
        Precision::F64 => bench_impl::<f64>(cfg, args, flags.baseline),
    }
}

fn bench_impl<T: Scalar>(cfg: RunConfig, args: &ConfigArgs, baseline: bool) -> Result<(), CliError> {
    let model = cfg.robot.load::<T>()?;
    let env = EnvConfig {
        seed: cfg.seed,
        ..cfg.env.clone()
    };
    let setup = BenchSetup {
        tools: tool_specs(&env, &model)?,
        env,
        dynamics: cfg.dynamics.clone(),
        render: cfg.render.clone(),
    };
    let p = &cfg.bench;
    info!(
        "bench {:?}: {} envs, {} steps x {} runs, {} threads",
        p.mode,
        p.n_envs,
        p.total_steps,
        p.runs,
        rayon_threads()
    );
    let mut reports: Vec<BenchReport> = vec![];
    match p.mode {
        BenchMode::SimOnly => {
            reports.push(bench_sim(&setup, p)?);
            if baseline {
                reports.push(bench_sim_sequential(&setup, p)?);
            }
        }
        BenchMode::WithLearning => reports.push(bench_learning(&setup, &cfg.train_config(), p)?),
    }
    println!("{}", BenchReport::TABLE_HEADER);
    for r in &reports {
        println!("{}", r.table_row());
    }
    if reports.len() == 2 {
        println!("\nbatched / sequential FPS: {:.2}x", reports[0].fps_mean / reports[1].fps_mean);
    }
    let r = &reports[0];
    println!(
        "\n{} runs of {} steps | host: {} logical cores, {} worker threads, {}-{}, clock {}",
        r.runs, r.steps_per_run, r.host.logical_cores, r.host.worker_threads, r.host.os, r.host.arch, r.host.clock
    );
    let anomalies: usize = reports.iter().map(|r| r.clock_anomalies).sum();
    if anomalies > 0 {
        println!("WARNING: {anomalies} runs had non-positive elapsed time");
    }
    let dir = output_dir(&cfg, args, "bench".into());
    create_dir(&dir)?;
    let name = match p.mode {
        BenchMode::SimOnly => "bench-sim.json",
        BenchMode::WithLearning => "bench-learn.json",
    };
    let path = dir.join(name);
    let json = serde_json::to_string_pretty(&reports).expect("reports serialise");
    write_file(&path, &json)?;
    info!("report written to {}", path.display());
    Ok(())
}

fn rayon_threads() -> usize {
    surgsim::bench::HostInfo::current().worker_threads
}

pub fn eval(
    args: &ConfigArgs,
    checkpoint: &Path,
    episodes: usize,
    trajectory: Option<&Path>,
    dump_images: Option<&Path>,
) -> Result<(), CliError> {
    if episodes == 0 {
        return Err(CliError::Config("--episodes must be at least 1".into()));
    }
    let cfg = load_config(args, &[])?;
    match cfg.precision {
        Precision::F32 => eval_impl::<f32>(cfg, checkpoint, episodes, trajectory, dump_images),
        Precision::F64 => eval_impl::<f64>(cfg, checkpoint, episodes, trajectory, dump_images),
    }
}

/// Observation fields written to the trajectory CSV, in order.
fn trajectory_fields(layout: &surgsim::envs::ObsLayout) -> Vec<(String, usize, usize)> {
    let wanted = |name: &str| {
        let base = name.rsplit('.').next().unwrap_or(name);
        matches!(base, "q" | "p_tip" | "goal" | "waypoint")
    };
    let order = |name: &str| match name.rsplit('.').next().unwrap_or(name) {
        "q" => 0,
        "p_tip" => 1,
        _ => 2,
    };
    let mut f: Vec<_> = layout
        .fields
        .iter()
        .filter(|f| wanted(&f.name))
        .map(|f| (f.name.clone(), f.offset, f.len))
        .collect();
    f.sort_by_key(|(n, off, _)| (order(n), *off));
    f
}

fn column_names(fields: &[(String, usize, usize)]) -> Vec<String> {
    let mut cols = vec!["episode".to_string(), "step".to_string()];
    for (name, _, len) in fields {
        let base = name.rsplit('.').next().unwrap_or(name);
        for k in 0..*len {
            if base == "q" {
                cols.push(format!("{name}_{k}"));
            } else {
                cols.push(format!("{name}_{}", ["x", "y", "z"][k]));
            }
        }
    }
    cols.push("reward".into());
    cols
}

fn eval_impl<T: Scalar>(
    cfg: RunConfig,
    checkpoint: &Path,
    episodes: usize,
    trajectory: Option<&Path>,
    dump_images: Option<&Path>,
) -> Result<(), CliError> {
    let ckpt = Checkpoint::<T>::load(checkpoint)?;
    let env_cfg = EnvConfig {
        n_envs: episodes.min(1024),
        terminate_on_success: false,
        seed: cfg.seed,
        ..cfg.env.clone()
    };
    let mut env = build_env::<T>(&cfg, &env_cfg)?;
    ckpt.check_compatible(&env.layout().robots.join("+"), env.obs_dim(), env.action_dim())?;
    if ckpt.task != env.layout().task {
        log::warn!("checkpoint was trained on {}, evaluating on {}", ckpt.task, env.layout().task);
    }
    let layout = env.layout().clone();
    let fields = trajectory_fields(&layout);
    let mut writer = match trajectory {
        Some(p) => {
            let mut w = csv::Writer::from_path(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            w.write_record(column_names(&fields))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            Some(w)
        }
        None => None,
    };
    let images = match (dump_images, layout.field("target_image"), layout.field("current_image")) {
        (Some(dir), Some(t), Some(c)) => {
            create_dir(dir)?;
            Some((dir.to_path_buf(), t.clone(), c.clone()))
        }
        (Some(_), _, _) => {
            log::warn!("--dump-images only applies to the image_matching task");
            None
        }
        _ => None,
    };
    let len = env_cfg.episode_len;
    let mut failure: Option<CliError> = None;
    let threshold = match env_cfg.task {
        Task::ImageMatching => env_cfg.image_success_threshold,
        _ => env_cfg.success_radius,
    };
    let summary = evaluate(&ckpt.policy, &mut env, episodes, threshold, |rec| {
        if failure.is_some() {
            return;
        }
        if let Some(w) = writer.as_mut() {
            let mut row = vec![rec.episode.to_string(), rec.step.to_string()];
            for (_, off, n) in &fields {
                row.extend(rec.observation[*off..off + n].iter().map(|v| v.f64().to_string()));
            }
            row.push(rec.reward.f64().to_string());
            if let Err(e) = w.write_record(&row) {
                failure = Some(CliError::Runtime(e.to_string()));
            }
        }
        if let Some((dir, t, c)) = &images {
            if rec.step == len {
                let (w, h) = (cfg.render.width, cfg.render.height);
                for (name, f) in [("target", t), ("final", c)] {
                    let path = dir.join(format!("episode{:04}_{name}.pgm", rec.episode));
                    let img = &rec.observation[f.offset..f.offset + f.len];
                    if let Err(e) = write_pgm(&path, w, h, img) {
                        failure = Some(CliError::Runtime(format!("{}: {e}", path.display())));
                    }
                }
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(mut w) = writer {
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
    Ok(())
}

pub fn list_robots() -> Result<(), CliError> {
    println!("{:<6} {:>4}  joints", "name", "dof");
    for name in bundled_names() {
        let m = load_bundled::<f64>(name).map_err(|e| CliError::Runtime(e.to_string()))?;
        let jaw = if m.jaw.is_some() { "  (jaw)" } else { "" };
        println!("{:<6} {:>4}  {}{jaw}", m.name, m.dof_count(), m.joint_sequence());
    }
    Ok(())
}
