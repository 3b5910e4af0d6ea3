//! Vectorized surgical tasks over batched joint state.
//!
//! An [`EnvBatch`] owns `n_envs` rows. Each row is one robot setup (one or
//! more tools) with its own task state and random stream. Stepping applies
//! the dynamics, evaluates the task reward, reports goal terminations and
//! timeouts as separate flags and resets finished rows before the next
//! observations are written.
//!
//! Base observation per tool: `[q, qdot, p_tip, q_target]`, followed by task
//! extras (goal, current waypoint, or target and current images). The exact
//! layout is available as an [`ObsLayout`] manifest.

mod layout;
pub mod spline;

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use layout::{ObsField, ObsLayout};
use spline::{sample_spline_waypoints, CubicSegment, CubicSpline};

use crate::dynamics::{DynamicsConfig, DynamicsError, DynamicsParams, SimBatch};
use crate::geom::{Pose, Vec3};
use crate::render::{mean_abs_diff, render_into, RenderConfig, Sphere};
use crate::rng::{derive_seed, stream, StreamKind};
use crate::robot::{load_bundled, RobotError, RobotModel};
use crate::scalar::Scalar;

/// Goal and path samples tried per row before the workspace is declared
/// misconfigured.
pub const MAX_GOAL_ATTEMPTS: usize = 1000;

/// Distance from the camera at its mid configuration to the image-matching
/// scene anchor, along the view axis.
const SCENE_DEPTH: f64 = 0.18;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error("invalid env config: {0}")]
    InvalidConfig(String),
    #[error("env {row}: no admissible sample after {attempts} attempts; workspace is misconfigured")]
    WorkspaceRejection { row: usize, attempts: usize },
    #[error("env {row}: non-finite reward")]
    NonFiniteReward { row: usize },
    #[error("actions: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    TargetReaching,
    ActiveTracking,
    ImageMatching,
    PathFollowing,
    MultiToolReaching,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::TargetReaching => "target_reaching",
            Task::ActiveTracking => "active_tracking",
            Task::ImageMatching => "image_matching",
            Task::PathFollowing => "path_following",
            Task::MultiToolReaching => "multi_tool_reaching",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        [
            Task::TargetReaching,
            Task::ActiveTracking,
            Task::ImageMatching,
            Task::PathFollowing,
            Task::MultiToolReaching,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }
}

/// Tool arrangement for the multi-tool task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiToolLayout {
    #[default]
    BimanualPsm,
    BimanualStar,
    /// Two PSMs plus an ECM whose goal is to center the PSM goals on its
    /// optical axis.
    TrimanualPsmEcm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub task: Task,
    pub n_envs: usize,
    /// Steps per episode before a timeout.
    pub episode_len: usize,
    /// Per-axis goal std in meters; `None` uses the robot's workspace value.
    pub goal_sigma: Option<f64>,
    /// Goal offsets from the workspace center are clipped to this per axis.
    pub goal_offset_clip: f64,
    /// Distance reward scale (must be negative).
    pub reward_scale: f64,
    /// Path deviation penalty scale (must be positive).
    pub path_penalty: f64,
    pub success_radius: f64,
    /// Consecutive in-radius steps before a goal counts as reached.
    pub success_hold: usize,
    /// When false, reaching the goal never ends an episode early; used for
    /// fixed-length evaluation.
    pub terminate_on_success: bool,
    /// Image error below which the view counts as matched.
    pub image_success_threshold: f64,
    pub waypoint_spacing: f64,
    /// Half-widths of the uniform ranges for the cubic coefficients.
    pub spline_a_range: f64,
    pub spline_b_range: f64,
    pub spline_c_range: f64,
    /// Multiplier on the coefficient ranges; `None` scales with
    /// `goal_sigma / 0.15`.
    pub spline_scale: Option<f64>,
    /// Per-step std of the tracking goal velocity noise (m / step).
    pub tracking_noise_std: f64,
    /// Tracking goal speed clamp (m / step).
    pub tracking_max_speed: f64,
    pub multi_tool: MultiToolLayout,
    pub collision_threshold: f64,
    pub collision_penalty: f64,
    pub collision_penalty_enabled: bool,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            task: Task::TargetReaching,
            n_envs: 1024,
            episode_len: 300,
            goal_sigma: None,
            goal_offset_clip: 0.2,
            reward_scale: -1.0,
            path_penalty: 1.0,
            success_radius: 0.005,
            success_hold: 10,
            terminate_on_success: true,
            image_success_threshold: 0.01,
            waypoint_spacing: 0.02,
            spline_a_range: 0.5,
            spline_b_range: 0.5,
            spline_c_range: 0.3,
            spline_scale: None,
            tracking_noise_std: 0.01,
            tracking_max_speed: 0.01,
            multi_tool: MultiToolLayout::BimanualPsm,
            collision_threshold: 0.01,
            collision_penalty: 1.0,
            collision_penalty_enabled: true,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if self.n_envs < 1 {
            return bad("n_envs must be at least 1");
        }
        if self.episode_len < 1 {
            return bad("episode_len must be at least 1");
        }
        if let Some(s) = self.goal_sigma {
            if !(s > 0.0) {
                return bad("goal_sigma must be positive");
            }
        }
        if !(self.goal_offset_clip > 0.0) {
            return bad("goal_offset_clip must be positive");
        }
        if !(self.reward_scale < 0.0) {
            return bad("reward_scale must be negative");
        }
        if !(self.path_penalty > 0.0) {
            return bad("path_penalty must be positive");
        }
        if !(self.success_radius > 0.0) {
            return bad("success_radius must be positive");
        }
        if !(self.waypoint_spacing > 0.0) {
            return bad("waypoint_spacing must be positive");
        }
        if !(self.image_success_threshold > 0.0) {
            return bad("image_success_threshold must be positive");
        }
        if !(self.tracking_noise_std >= 0.0 && self.tracking_max_speed >= 0.0) {
            return bad("tracking noise and speed must be non-negative");
        }
        if !(self.collision_threshold >= 0.0 && self.collision_penalty >= 0.0) {
            return bad("collision threshold and penalty must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolRole {
    /// Bring the tool tip onto a point goal.
    Reach,
    /// Put a point on the camera's optical axis.
    View,
}

/// A robot placed in the scene.
#[derive(Debug, Clone)]
pub struct ToolSpec<T> {
    pub model: Arc<RobotModel<T>>,
    pub mount: Pose<T>,
    pub role: ToolRole,
}

impl<T: Scalar> ToolSpec<T> {
    pub fn at_origin(model: Arc<RobotModel<T>>) -> Self {
        ToolSpec {
            model,
            mount: Pose::identity(),
            role: ToolRole::Reach,
        }
    }
}

/// Tools for `cfg.task`. Single-arm tasks use `primary`; multi-tool layouts
/// use `primary` where the robot names match and bundled models otherwise.
pub fn tool_specs<T: Scalar>(cfg: &EnvConfig, primary: &Arc<RobotModel<T>>) -> Result<Vec<ToolSpec<T>>, EnvError> {
    if cfg.task != Task::MultiToolReaching {
        return Ok(vec![ToolSpec::at_origin(primary.clone())]);
    }
    let get = |name: &str| -> Result<Arc<RobotModel<T>>, EnvError> {
        if primary.name == name {
            Ok(primary.clone())
        } else {
            Ok(Arc::new(load_bundled(name)?))
        }
    };
    let at = |model: &Arc<RobotModel<T>>, x: f64, y: f64, z: f64, role| ToolSpec {
        model: model.clone(),
        mount: Pose::from_translation(Vec3::from_f64([x, y, z])),
        role,
    };
    Ok(match cfg.multi_tool {
        MultiToolLayout::BimanualPsm => {
            let psm = get("psm")?;
            vec![at(&psm, -0.06, 0.0, 0.0, ToolRole::Reach), at(&psm, 0.06, 0.0, 0.0, ToolRole::Reach)]
        }
        MultiToolLayout::BimanualStar => {
            let star = get("star")?;
            vec![at(&star, 0.0, -0.3, 0.0, ToolRole::Reach), at(&star, 0.0, 0.3, 0.0, ToolRole::Reach)]
        }
        MultiToolLayout::TrimanualPsmEcm => {
            let psm = get("psm")?;
            let ecm = get("ecm")?;
            vec![
                at(&psm, -0.06, 0.0, 0.0, ToolRole::Reach),
                at(&psm, 0.06, 0.0, 0.0, ToolRole::Reach),
                at(&ecm, 0.0, 0.08, 0.02, ToolRole::View),
            ]
        }
    })
}

/// One robot of the batch with its dynamics state.
#[derive(Debug, Clone)]
pub struct Tool<T> {
    pub spec: ToolSpec<T>,
    pub params: DynamicsParams<T>,
    pub sim: SimBatch<T>,
    /// Column offset of this tool in the action matrix.
    pub action_offset: usize,
    sigma: T,
}

/// Task state of one environment row.
#[derive(Debug, Clone)]
pub struct TaskRow<T> {
    rng: ChaCha8Rng,
    /// World-frame tip pose per tool.
    pub tips: Vec<Pose<T>>,
    /// World-frame goal per tool.
    pub goals: Vec<Vec3<T>>,
    /// Tracking goal at spawn.
    pub goal_origin: Vec3<T>,
    /// Tracking goal velocity (m / step).
    pub goal_vel: Vec3<T>,
    pub spline: Option<CubicSpline<T>>,
    pub waypoints: Vec<Vec3<T>>,
    pub waypoint: usize,
    pub scene: Vec<Sphere<T>>,
    pub target_image: Vec<T>,
    pub image: Vec<T>,
    /// Steps taken in the current episode.
    pub step: usize,
    /// Consecutive steps inside the success criterion.
    pub hold: usize,
    pub episodes: u64,
    pub episode_return: T,
}

/// Summary of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub env: usize,
    pub length: usize,
    pub total_reward: f64,
    /// Task error at the last step (distance, path deviation or image error).
    pub final_error: f64,
    pub terminated: bool,
    pub timed_out: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult<T> {
    /// Observations after any resets.
    pub observations: Array2<T>,
    pub rewards: Vec<T>,
    /// Goal reached.
    pub terminated: Vec<bool>,
    /// Episode length reached.
    pub timed_out: Vec<bool>,
    /// Task error at this step, before resets.
    pub errors: Vec<T>,
    /// Pre-reset observation for every row that finished this step.
    pub final_observations: Vec<(usize, Vec<T>)>,
}

pub struct EnvBatch<T> {
    cfg: EnvConfig,
    render: RenderConfig,
    tools: Vec<Tool<T>>,
    rows: Vec<TaskRow<T>>,
    layout: ObsLayout,
    obs: Array2<T>,
    scene_anchor: Vec3<T>,
    spline_scale: T,
    completed: Vec<EpisodeStats>,
}

/// Immutable view shared by the per-row workers.
struct Ctx<'a, T> {
    cfg: &'a EnvConfig,
    render: &'a RenderConfig,
    tools: &'a [Tool<T>],
    anchor: Vec3<T>,
    spline_scale: T,
}

impl<T: Scalar> EnvBatch<T> {
    /// Builds the batch and resets every row.
    pub fn new(
        cfg: &EnvConfig,
        specs: Vec<ToolSpec<T>>,
        dynamics: &DynamicsConfig,
        render: &RenderConfig,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        if specs.is_empty() {
            return Err(EnvError::InvalidConfig("at least one tool is required".into()));
        }
        if cfg.task == Task::ImageMatching {
            render.validate().map_err(EnvError::InvalidConfig)?;
        }
        if cfg.task != Task::MultiToolReaching && specs.len() != 1 {
            return Err(EnvError::InvalidConfig(format!(
                "task {} drives exactly one tool",
                cfg.task.name()
            )));
        }
        let n = cfg.n_envs;
        let mut tools = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (t, spec) in specs.into_iter().enumerate() {
            let params = dynamics.resolve(&spec.model)?;
            let sim = SimBatch::new(&spec.model, n, derive_seed(cfg.seed, StreamKind::Dynamics, t as u64));
            let dof = spec.model.dof_count();
            let sigma = cfg
                .goal_sigma
                .map(T::c)
                .unwrap_or(spec.model.workspace.goal_sigma);
            tools.push(Tool {
                spec,
                params,
                sim,
                action_offset: offset,
                sigma,
            });
            offset += dof;
        }
        let layout = build_layout(cfg.task, &tools, render);
        let cam = &tools[0].spec;
        let mid = cam.mount.compose(&cam.model.tip_pose(&cam.model.mid_configuration()));
        let scene_anchor = mid.transform_point(Vec3::new(T::zero(), T::zero(), T::c(SCENE_DEPTH)));
        let spline_scale = T::c(cfg.spline_scale.unwrap_or(tools[0].sigma.f64() / 0.15));
        let n_tools = tools.len();
        let pixels = if cfg.task == Task::ImageMatching { render.pixels() } else { 0 };
        let rows = (0..n)
            .map(|i| TaskRow {
                rng: stream(cfg.seed, StreamKind::Task, i as u64),
                tips: vec![Pose::identity(); n_tools],
                goals: vec![Vec3::zero(); n_tools],
                goal_origin: Vec3::zero(),
                goal_vel: Vec3::zero(),
                spline: None,
                waypoints: vec![],
                waypoint: 0,
                scene: vec![],
                target_image: vec![T::zero(); pixels],
                image: vec![T::zero(); pixels],
                step: 0,
                hold: 0,
                episodes: 0,
                episode_return: T::zero(),
            })
            .collect();
        let obs = Array2::zeros((n, layout.dim));
        let mut env = EnvBatch {
            cfg: cfg.clone(),
            render: render.clone(),
            tools,
            rows,
            layout,
            obs,
            scene_anchor,
            spline_scale,
            completed: vec![],
        };
        env.reset_all()?;
        Ok(env)
    }

    /// Convenience constructor for a single bundled or loaded robot.
    pub fn from_model(
        cfg: &EnvConfig,
        model: Arc<RobotModel<T>>,
        dynamics: &DynamicsConfig,
        render: &RenderConfig,
    ) -> Result<Self, EnvError> {
        let specs = tool_specs(cfg, &model)?;
        Self::new(cfg, specs, dynamics, render)
    }

    /// Resets every row and returns the initial observations.
    pub fn reset_all(&mut self) -> Result<&Array2<T>, EnvError> {
        let mask = vec![true; self.n_envs()];
        self.reset_masked(&mask)?;
        Ok(&self.obs)
    }

    pub fn n_envs(&self) -> usize {
        self.rows.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.dim
    }

    pub fn action_dim(&self) -> usize {
        self.layout.action_dim
    }

    pub fn layout(&self) -> &ObsLayout {
        &self.layout
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn observations(&self) -> &Array2<T> {
        &self.obs
    }

    pub fn tools(&self) -> &[Tool<T>] {
        &self.tools
    }

    pub fn rows(&self) -> &[TaskRow<T>] {
        &self.rows
    }

    /// Episodes finished since the last call, in row order per step.
    pub fn drain_episodes(&mut self) -> Vec<EpisodeStats> {
        std::mem::take(&mut self.completed)
    }

    /// Per-element `(center, scale)` for normalising observations.
    pub fn obs_normalizer(&self) -> (Vec<T>, Vec<T>) {
        let mut center = Vec::with_capacity(self.obs_dim());
        let mut scale = Vec::with_capacity(self.obs_dim());
        for tool in &self.tools {
            let m = &tool.spec.model;
            let mids: Vec<T> = m.dof_joints().map(|j| j.mid()).collect();
            let halves: Vec<T> = m.dof_joints().map(|j| j.range() * T::c(0.5)).collect();
            center.extend(&mids);
            scale.extend(&halves);
            center.extend(std::iter::repeat_n(T::zero(), mids.len()));
            scale.extend(m.dof_joints().map(|j| j.velocity_limit));
            center.extend(tool.spec.mount.transform_point(m.workspace.center).0);
            scale.extend([m.workspace.radius; 3]);
            center.extend(&mids);
            scale.extend(&halves);
        }
        match self.cfg.task {
            Task::ImageMatching => {
                center.extend(std::iter::repeat_n(T::c(0.5), 2 * self.render.pixels()));
                scale.extend(std::iter::repeat_n(T::c(0.5), 2 * self.render.pixels()));
            }
            _ => {
                let n_goals = if self.cfg.task == Task::MultiToolReaching { self.tools.len() } else { 1 };
                for tool in &self.tools[..n_goals] {
                    let m = &tool.spec.model;
                    center.extend(tool.spec.mount.transform_point(m.workspace.center).0);
                    scale.extend([m.workspace.radius; 3]);
                }
            }
        }
        debug_assert_eq!(center.len(), self.obs_dim());
        (center, scale)
    }

    /// Advances every row one control step.
    pub fn step(&mut self, actions: ArrayView2<'_, T>) -> Result<StepResult<T>, EnvError> {
        let expected = (self.n_envs(), self.action_dim());
        if actions.dim() != expected {
            return Err(EnvError::ShapeMismatch {
                expected,
                got: actions.dim(),
            });
        }
        if let Some(((row, dof), _)) = actions.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteAction { row, dof }.into());
        }
        for tool in &mut self.tools {
            let cols = tool.action_offset..tool.action_offset + tool.params.dof_count();
            tool.sim.step(actions.slice(s![.., cols]), &tool.params)?;
        }

        let ctx = Ctx {
            cfg: &self.cfg,
            render: &self.render,
            tools: &self.tools,
            anchor: self.scene_anchor,
            spline_scale: self.spline_scale,
        };
        let outcomes: Vec<Result<(T, bool, bool, T), EnvError>> = self
            .rows
            .par_iter_mut()
            .enumerate()
            .map(|(i, row)| step_row(&ctx, i, row))
            .collect();
        let n = self.n_envs();
        let mut rewards = Vec::with_capacity(n);
        let mut terminated = Vec::with_capacity(n);
        let mut timed_out = Vec::with_capacity(n);
        let mut errors = Vec::with_capacity(n);
        for o in outcomes {
            let (r, term, tout, err) = o?;
            rewards.push(r);
            terminated.push(term);
            timed_out.push(tout);
            errors.push(err);
        }

        write_all_obs(&ctx, &self.rows, &mut self.obs);
        let done: Vec<bool> = terminated.iter().zip(&timed_out).map(|(a, b)| *a || *b).collect();
        let mut final_observations = vec![];
        for (i, _) in done.iter().enumerate().filter(|(_, d)| **d) {
            final_observations.push((i, self.obs.row(i).to_vec()));
            let row = &self.rows[i];
            self.completed.push(EpisodeStats {
                env: i,
                length: row.step,
                total_reward: row.episode_return.f64(),
                final_error: errors[i].f64(),
                terminated: terminated[i],
                timed_out: timed_out[i],
            });
        }
        if !final_observations.is_empty() {
            self.reset_masked(&done)?;
        }
        Ok(StepResult {
            observations: self.obs.clone(),
            rewards,
            terminated,
            timed_out,
            errors,
            final_observations,
        })
    }

    fn reset_masked(&mut self, mask: &[bool]) -> Result<(), EnvError> {
        for tool in &mut self.tools {
            let model = tool.spec.model.clone();
            tool.sim.reset_rows(mask, &model);
        }
        let ctx = Ctx {
            cfg: &self.cfg,
            render: &self.render,
            tools: &self.tools,
            anchor: self.scene_anchor,
            spline_scale: self.spline_scale,
        };
        let results: Vec<Result<(), EnvError>> = self
            .rows
            .par_iter_mut()
            .zip(self.obs.axis_iter_mut(Axis(0)).into_par_iter())
            .zip(mask.par_iter())
            .enumerate()
            .map(|(i, ((row, mut out), &m))| {
                if m {
                    reset_row(&ctx, i, row)?;
                    write_obs(&ctx, i, row, out.as_slice_mut().expect("standard layout"));
                }
                Ok(())
            })
            .collect();
        results.into_iter().collect()
    }
}

fn build_layout<T: Scalar>(task: Task, tools: &[Tool<T>], render: &RenderConfig) -> ObsLayout {
    let robots = tools.iter().map(|t| t.spec.model.name.clone()).collect();
    let action_dim = tools.iter().map(|t| t.params.dof_count()).sum();
    let mut l = ObsLayout::new(task.name(), robots, action_dim);
    let multi = tools.len() > 1;
    let prefix = |t: usize, name: &str| if multi { format!("tool{t}.{name}") } else { name.to_string() };
    for (t, tool) in tools.iter().enumerate() {
        let dof = tool.params.dof_count();
        l.push(prefix(t, "q"), dof);
        l.push(prefix(t, "qdot"), dof);
        l.push(prefix(t, "p_tip"), 3);
        l.push(prefix(t, "q_target"), dof);
    }
    match task {
        Task::TargetReaching | Task::ActiveTracking => l.push("goal", 3),
        Task::PathFollowing => l.push("waypoint", 3),
        Task::ImageMatching => {
            l.push("target_image", render.pixels());
            l.push("current_image", render.pixels());
        }
        Task::MultiToolReaching => {
            for t in 0..tools.len() {
                l.push(prefix(t, "goal"), 3);
            }
        }
    }
    l
}

/// Minimum pairwise distance between tool tips.
pub fn multi_tool_min_separation<T: Scalar>(tips: &[Vec3<T>]) -> T {
    let mut best = T::infinity();
    for i in 0..tips.len() {
        for j in i + 1..tips.len() {
            best = best.min(tips[i].distance(tips[j]));
        }
    }
    best
}

/// `reward_scale * ||tip - goal||`.
pub fn reach_reward<T: Scalar>(reward_scale: T, tip: Vec3<T>, goal: Vec3<T>) -> T {
    reward_scale * tip.distance(goal)
}

/// Distance from `point` to the optical axis (local `+z`) of `camera`;
/// points behind the camera measure to the camera center.
pub fn view_axis_distance<T: Scalar>(camera: &Pose<T>, point: Vec3<T>) -> T {
    let local = camera.inverse().transform_point(point);
    if local.z() <= T::zero() {
        local.norm()
    } else {
        (local.x() * local.x() + local.y() * local.y()).sqrt()
    }
}

fn tool_error<T: Scalar>(tool: &Tool<T>, tip: &Pose<T>, goal: Vec3<T>) -> T {
    match tool.spec.role {
        ToolRole::Reach => tip.position.distance(goal),
        ToolRole::View => view_axis_distance(tip, goal),
    }
}

fn update_tips<T: Scalar>(tools: &[Tool<T>], i: usize, row: &mut TaskRow<T>) {
    for (t, tool) in tools.iter().enumerate() {
        let q = tool.sim.q.row(i);
        let local = tool.spec.model.tip_pose(q.as_slice().expect("standard layout"));
        row.tips[t] = tool.spec.mount.compose(&local);
    }
}

/// Task error, reward and success flag for the current state of `row`.
fn evaluate<T: Scalar>(ctx: &Ctx<'_, T>, row: &TaskRow<T>) -> (T, T, bool) {
    let cfg = ctx.cfg;
    let rho = T::c(cfg.reward_scale);
    let radius = T::c(cfg.success_radius);
    match cfg.task {
        Task::TargetReaching | Task::ActiveTracking => {
            let d = row.tips[0].position.distance(row.goals[0]);
            (d, rho * d, d < radius)
        }
        Task::PathFollowing => {
            let d = row.tips[0].position.distance(row.waypoints[row.waypoint]);
            let last = row.waypoint + 1 == row.waypoints.len();
            (d, -T::c(cfg.path_penalty) * d, last && d < radius)
        }
        Task::ImageMatching => {
            let e = mean_abs_diff(&row.image, &row.target_image);
            (e, -e, e < T::c(cfg.image_success_threshold))
        }
        Task::MultiToolReaching => {
            let mut reward = T::zero();
            let mut err_sum = T::zero();
            let mut all_in = true;
            for (t, tool) in ctx.tools.iter().enumerate() {
                let e = tool_error(tool, &row.tips[t], row.goals[t]);
                reward = reward + rho * e;
                err_sum = err_sum + e;
                all_in &= e < radius;
            }
            if cfg.collision_penalty_enabled {
                let tips: Vec<Vec3<T>> = row.tips.iter().map(|p| p.position).collect();
                if multi_tool_min_separation(&tips) < T::c(cfg.collision_threshold) {
                    reward = reward - T::c(cfg.collision_penalty);
                }
            }
            (err_sum / T::from_count(ctx.tools.len()), reward, all_in)
        }
    }
}

fn step_row<T: Scalar>(ctx: &Ctx<'_, T>, i: usize, row: &mut TaskRow<T>) -> Result<(T, bool, bool, T), EnvError> {
    let cfg = ctx.cfg;
    row.step += 1;
    update_tips(ctx.tools, i, row);
    if cfg.task == Task::ImageMatching {
        render_into(&row.tips[0], ctx.render, &row.scene, &mut row.image);
    }
    let (err, reward, success) = evaluate(ctx, row);
    if !reward.is_finite() {
        return Err(EnvError::NonFiniteReward { row: i });
    }
    row.hold = if success { row.hold + 1 } else { 0 };
    let terminated = cfg.terminate_on_success
        && match cfg.task {
            Task::PathFollowing => success,
            _ => row.hold >= cfg.success_hold.max(1),
        };
    match cfg.task {
        Task::ActiveTracking => {
            let clip = T::c(cfg.goal_offset_clip);
            let vmax = T::c(cfg.tracking_max_speed);
            let mut g = row.goals[0];
            for k in 0..3 {
                let lo = row.goal_origin.0[k] - clip;
                let hi = row.goal_origin.0[k] + clip;
                g.0[k] = (g.0[k] + row.goal_vel.0[k]).max(lo).min(hi);
                let noise: f64 = row.rng.sample::<f64, _>(StandardNormal) * cfg.tracking_noise_std;
                row.goal_vel.0[k] = (row.goal_vel.0[k] + T::c(noise)).max(-vmax).min(vmax);
            }
            row.goals[0] = g;
        }
        Task::PathFollowing => {
            if err < T::c(cfg.success_radius) && row.waypoint + 1 < row.waypoints.len() {
                row.waypoint += 1;
            }
        }
        _ => {}
    }
    row.episode_return = row.episode_return + reward;
    let timed_out = row.step >= cfg.episode_len;
    Ok((reward, terminated, timed_out, err))
}

/// Raw goal offset draw, `N(0, sigma^2)` per axis, before clipping and
/// workspace rejection.
pub fn sample_goal_offset<T: Scalar, R: Rng>(rng: &mut R, sigma: T) -> Vec3<T> {
    let n = Normal::new(0.0, sigma.f64()).expect("positive sigma");
    Vec3::new(T::c(n.sample(rng)), T::c(n.sample(rng)), T::c(n.sample(rng)))
}

/// Clipped, workspace-checked goal in the world frame.
fn sample_goal<T: Scalar>(ctx: &Ctx<'_, T>, tool: &Tool<T>, rng: &mut ChaCha8Rng, row: usize) -> Result<Vec3<T>, EnvError> {
    let ws = tool.spec.model.workspace;
    let clip = T::c(ctx.cfg.goal_offset_clip);
    for _ in 0..MAX_GOAL_ATTEMPTS {
        let raw = sample_goal_offset(rng, tool.sigma);
        let off = Vec3(raw.0.map(|v| v.max(-clip).min(clip)));
        if off.norm() <= ws.radius {
            return Ok(tool.spec.mount.transform_point(ws.center + off));
        }
    }
    Err(EnvError::WorkspaceRejection {
        row,
        attempts: MAX_GOAL_ATTEMPTS,
    })
}

fn reset_row<T: Scalar>(ctx: &Ctx<'_, T>, i: usize, row: &mut TaskRow<T>) -> Result<(), EnvError> {
    let cfg = ctx.cfg;
    row.step = 0;
    row.hold = 0;
    row.episode_return = T::zero();
    row.episodes += 1;
    update_tips(ctx.tools, i, row);
    let mut rng = row.rng.clone();
    match cfg.task {
        Task::TargetReaching => row.goals[0] = sample_goal(ctx, &ctx.tools[0], &mut rng, i)?,
        Task::ActiveTracking => {
            let g = sample_goal(ctx, &ctx.tools[0], &mut rng, i)?;
            row.goals[0] = g;
            row.goal_origin = g;
            row.goal_vel = Vec3::zero();
        }
        Task::MultiToolReaching => reset_multi_goals(ctx, i, row, &mut rng)?,
        Task::PathFollowing => reset_path(ctx, i, row, &mut rng)?,
        Task::ImageMatching => reset_image(ctx, i, row, &mut rng)?,
    }
    row.rng = rng;
    Ok(())
}

fn reset_multi_goals<T: Scalar>(ctx: &Ctx<'_, T>, i: usize, row: &mut TaskRow<T>, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
    let threshold = T::c(ctx.cfg.collision_threshold);
    for _ in 0..MAX_GOAL_ATTEMPTS {
        let mut reach_goals = vec![];
        for (t, tool) in ctx.tools.iter().enumerate() {
            if tool.spec.role == ToolRole::Reach {
                let g = sample_goal(ctx, tool, rng, i)?;
                row.goals[t] = g;
                reach_goals.push(g);
            }
        }
        if multi_tool_min_separation(&reach_goals) <= threshold {
            continue;
        }
        let n = T::from_count(reach_goals.len());
        let mid = reach_goals.iter().fold(Vec3::zero(), |a, g| a + *g).scale(T::one() / n);
        for (t, tool) in ctx.tools.iter().enumerate() {
            if tool.spec.role == ToolRole::View {
                row.goals[t] = mid;
            }
        }
        return Ok(());
    }
    Err(EnvError::WorkspaceRejection {
        row: i,
        attempts: MAX_GOAL_ATTEMPTS,
    })
}

fn reset_path<T: Scalar>(ctx: &Ctx<'_, T>, i: usize, row: &mut TaskRow<T>, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
    let cfg = ctx.cfg;
    let tool = &ctx.tools[0];
    let ws = tool.spec.model.workspace;
    let to_base = tool.spec.mount.inverse();
    let scale = ctx.spline_scale.f64();
    let uni = |rng: &mut ChaCha8Rng, half: f64| -> Vec3<T> {
        let h = half * scale;
        Vec3::from_f64([
            rng.random_range(-h..=h),
            rng.random_range(-h..=h),
            rng.random_range(-h..=h),
        ])
    };
    for _ in 0..MAX_GOAL_ATTEMPTS {
        let d = sample_goal(ctx, tool, rng, i)?;
        let seg = CubicSegment {
            a: uni(rng, cfg.spline_a_range),
            b: uni(rng, cfg.spline_b_range),
            c: uni(rng, cfg.spline_c_range),
            d,
        };
        let spline = CubicSpline::single(seg, T::zero(), T::one());
        let waypoints = sample_spline_waypoints(&spline, T::c(cfg.waypoint_spacing));
        if waypoints.iter().all(|w| ws.contains(to_base.transform_point(*w))) {
            row.spline = Some(spline);
            row.waypoints = waypoints;
            row.waypoint = 0;
            return Ok(());
        }
    }
    Err(EnvError::WorkspaceRejection {
        row: i,
        attempts: MAX_GOAL_ATTEMPTS,
    })
}

fn reset_image<T: Scalar>(ctx: &Ctx<'_, T>, i: usize, row: &mut TaskRow<T>, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
    let tool = &ctx.tools[0];
    let model = &tool.spec.model;
    for _ in 0..MAX_GOAL_ATTEMPTS {
        row.scene.clear();
        for _ in 0..ctx.render.spheres_per_scene {
            let off = Vec3::from_f64([
                rng.random_range(-0.05..=0.05),
                rng.random_range(-0.05..=0.05),
                rng.random_range(-0.03..=0.03),
            ]);
            row.scene.push(Sphere {
                center: ctx.anchor + off,
                radius: T::c(rng.random_range(0.015..=0.035)),
                albedo: T::c(rng.random_range(0.3..=1.0)),
            });
        }
        // Target viewpoint from the middle 30 % of every joint range.
        let q: Vec<T> = model
            .dof_joints()
            .map(|j| j.limit_lo + j.range() * T::c(0.35 + 0.3 * rng.random::<f64>()))
            .collect();
        let cam = tool.spec.mount.compose(&model.tip_pose(&q));
        render_into(&cam, ctx.render, &row.scene, &mut row.target_image);
        if row.target_image.iter().any(|&p| p > T::zero()) {
            render_into(&row.tips[0], ctx.render, &row.scene, &mut row.image);
            return Ok(());
        }
    }
    Err(EnvError::WorkspaceRejection {
        row: i,
        attempts: MAX_GOAL_ATTEMPTS,
    })
}

fn write_all_obs<T: Scalar>(ctx: &Ctx<'_, T>, rows: &[TaskRow<T>], obs: &mut Array2<T>) {
    obs.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .enumerate()
        .for_each(|(i, (mut out, row))| write_obs(ctx, i, row, out.as_slice_mut().expect("standard layout")));
}

fn write_obs<T: Scalar>(ctx: &Ctx<'_, T>, i: usize, row: &TaskRow<T>, out: &mut [T]) {
    let mut k = 0;
    let mut put = |vals: &[T]| {
        out[k..k + vals.len()].copy_from_slice(vals);
        k += vals.len();
    };
    for (t, tool) in ctx.tools.iter().enumerate() {
        let sim = &tool.sim;
        put(sim.q.row(i).as_slice().expect("standard layout"));
        put(sim.qdot.row(i).as_slice().expect("standard layout"));
        put(&row.tips[t].position.0);
        put(sim.q_target.row(i).as_slice().expect("standard layout"));
    }
    match ctx.cfg.task {
        Task::TargetReaching | Task::ActiveTracking => put(&row.goals[0].0),
        Task::PathFollowing => put(&row.waypoints[row.waypoint].0),
        Task::ImageMatching => {
            put(&row.target_image);
            put(&row.image);
        }
        Task::MultiToolReaching => {
            for g in &row.goals {
                put(&g.0);
            }
        }
    }
}
