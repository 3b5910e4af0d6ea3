use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::buffer::RolloutBuffer;
use super::checkpoint::Checkpoint;
use super::policy::{clamp_action, gaussian_log_prob, Policy, PolicyLayout};
use super::ppo::{ppo_update, Adam, UpdateMetrics};
use super::{LearnError, TrainConfig};
use crate::envs::EnvBatch;
use crate::rng::{row_streams, stream, StreamKind};
use crate::scalar::Scalar;

/// Episode statistics of one rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RolloutStats {
    pub episodes: usize,
    pub mean_episode_reward: Option<f64>,
    pub mean_final_error: Option<f64>,
    pub success_rate: Option<f64>,
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub env_steps: u64,
    #[serde(flatten)]
    pub rollout: RolloutStats,
    #[serde(flatten)]
    pub optim: UpdateMetrics,
    pub log_std_mean: f64,
    pub fps: f64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    /// Fields that depend on the wall clock.
    pub const WALL_CLOCK_FIELDS: [&'static str; 2] = ["fps", "wall_time_s"];

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialise")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub updates: u64,
    pub env_steps: u64,
    pub last: Option<MetricsRecord>,
    pub checkpoint: Option<PathBuf>,
    pub wall_time_s: f64,
}

pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub env: EnvBatch<T>,
    pub policy: Policy<T>,
    adam: Adam<T>,
    buffer: RolloutBuffer<T>,
    noise: Vec<ChaCha8Rng>,
    shuffle: ChaCha8Rng,
    pub env_steps: u64,
    pub updates: u64,
}

impl<T: Scalar> Trainer<T> {
    /// The batch size is taken from the environment; `cfg.n_robots` must
    /// match it.
    pub fn new(cfg: TrainConfig, env: EnvBatch<T>) -> Result<Self, LearnError> {
        cfg.validate()?;
        if env.n_envs() != cfg.n_robots {
            return Err(LearnError::InvalidConfig(format!(
                "environment has {} rows but n_robots is {}",
                env.n_envs(),
                cfg.n_robots
            )));
        }
        let layout = PolicyLayout::new(env.obs_dim(), env.action_dim(), &cfg.hidden);
        let mut policy = Policy::init(layout, cfg.init_log_std, &mut stream(cfg.seed, StreamKind::Init, 0));
        let (center, scale) = env.obs_normalizer();
        policy.set_normalizer(&center, &scale)?;
        let adam = Adam::new(policy.layout.param_count(), cfg.lr);
        let buffer = RolloutBuffer::new(cfg.n_robots, cfg.n_steps, env.obs_dim(), env.action_dim());
        Ok(Trainer {
            noise: row_streams(cfg.seed, StreamKind::Policy, cfg.n_robots),
            shuffle: stream(cfg.seed, StreamKind::Shuffle, 0),
            cfg,
            env,
            policy,
            adam,
            buffer,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn buffer(&self) -> &RolloutBuffer<T> {
        &self.buffer
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let robots = &self.env.layout().robots;
        Checkpoint {
            policy: self.policy.clone(),
            robot: robots.join("+"),
            task: self.env.layout().task.clone(),
            env_steps: self.env_steps,
        }
    }

    /// Fills the buffer with `n_steps` transitions per env.
    pub fn collect_rollout(&mut self) -> Result<RolloutStats, LearnError> {
        let n = self.cfg.n_robots;
        let ad = self.policy.layout.action_dim;
        let mut episodes = vec![];
        for t in 0..self.cfg.n_steps {
            let obs = self.env.observations().clone();
            let out = self.policy.forward(obs.view())?;
            if t > 0 {
                for e in 0..n {
                    let prev = self.buffer.slot(t - 1, e);
                    if !(self.buffer.terminated[prev] || self.buffer.timed_out[prev]) {
                        self.buffer.next_values[prev] = out.value[e];
                    }
                }
            }
            let std = out.log_std.mapv(|v| v.exp());
            let ls = out.log_std.as_slice().unwrap();
            let mut raw = Array2::<T>::zeros((n, ad));
            let mut logp = vec![T::zero(); n];
            raw.axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(self.noise.par_iter_mut())
                .zip(logp.par_iter_mut())
                .enumerate()
                .for_each(|(e, ((mut a, rng), lp))| {
                    let mu = out.mean.row(e);
                    for j in 0..ad {
                        let eps: f64 = StandardNormal.sample(rng);
                        a[j] = mu[j] + std[j] * T::c(eps);
                    }
                    *lp = gaussian_log_prob(a.as_slice().unwrap(), mu.as_slice().unwrap(), ls);
                });
            let step = self.env.step(raw.mapv(clamp_action).view())?;
            let base = t * n;
            self.buffer.obs.slice_mut(ndarray::s![base..base + n, ..]).assign(&obs);
            self.buffer.actions.slice_mut(ndarray::s![base..base + n, ..]).assign(&raw);
            for e in 0..n {
                let i = base + e;
                self.buffer.log_probs[i] = logp[e];
                self.buffer.rewards[i] = step.rewards[e];
                self.buffer.values[i] = out.value[e];
                self.buffer.terminated[i] = step.terminated[e];
                self.buffer.timed_out[i] = step.timed_out[e];
                self.buffer.next_values[i] = T::zero();
            }
            let timeouts: Vec<&(usize, Vec<T>)> =
                step.final_observations.iter().filter(|(e, _)| step.timed_out[*e]).collect();
            if !timeouts.is_empty() {
                let mut fin = Array2::<T>::zeros((timeouts.len(), self.policy.layout.obs_dim));
                for (k, (_, o)) in timeouts.iter().enumerate() {
                    fin.row_mut(k).assign(&ndarray::ArrayView1::from(&o[..]));
                }
                let v = self.policy.value(fin.view())?;
                for (k, (e, _)) in timeouts.iter().enumerate() {
                    self.buffer.next_values[base + e] = v[k];
                }
            }
            episodes.extend(self.env.drain_episodes());
        }
        let last = self.policy.value(self.env.observations().view())?;
        let t = self.cfg.n_steps - 1;
        for e in 0..n {
            let i = self.buffer.slot(t, e);
            if !(self.buffer.terminated[i] || self.buffer.timed_out[i]) {
                self.buffer.next_values[i] = last[e];
            }
        }
        self.env_steps += (n * self.cfg.n_steps) as u64;
        Ok(summarize(&episodes))
    }

    /// One rollout plus one PPO update.
    pub fn iterate(&mut self) -> Result<(RolloutStats, UpdateMetrics), LearnError> {
        let rollout = self.collect_rollout()?;
        let c = &self.cfg;
        self.buffer.compute_gae(T::c(c.gamma), T::c(c.lambda), c.bootstrap_timeouts);
        if c.normalize_advantages {
            self.buffer.normalize_advantages();
        }
        let optim = ppo_update(&mut self.policy, &mut self.adam, &self.buffer, &self.cfg, &mut self.shuffle)?;
        self.updates += 1;
        Ok((rollout, optim))
    }

    /// Trains until `total_steps`. With an output directory, writes
    /// `metrics.jsonl` and `policy.ckpt` there; `on_record` sees every
    /// metric line.
    pub fn run(
        &mut self,
        out_dir: Option<&Path>,
        mut on_record: impl FnMut(&MetricsRecord),
    ) -> Result<TrainOutcome, LearnError> {
        let start = Instant::now();
        let io = |context: String| move |source| LearnError::Io { context, source };
        let mut log = match out_dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(io(format!("creating {}", d.display())))?;
                let p = d.join("metrics.jsonl");
                Some(std::fs::File::create(&p).map_err(io(format!("creating {}", p.display())))?)
            }
            None => None,
        };
        let ckpt_path = out_dir.map(|d| d.join("policy.ckpt"));
        let mut last = None;
        let total = self.cfg.n_updates();
        while self.updates < total {
            let t0 = Instant::now();
            let (rollout, optim) = self.iterate()?;
            let dt = t0.elapsed().as_secs_f64();
            let rec = MetricsRecord {
                update: self.updates,
                env_steps: self.env_steps,
                rollout,
                optim,
                log_std_mean: self.policy.log_std().iter().map(|v| v.f64()).sum::<f64>()
                    / self.policy.layout.action_dim as f64,
                fps: self.cfg.batch_size() as f64 / dt.max(1e-12),
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", rec.to_json()).map_err(io("writing metrics.jsonl".into()))?;
            }
            on_record(&rec);
            if let Some(p) = &ckpt_path {
                let interval = self.cfg.checkpoint_interval;
                if self.updates == total || (interval > 0 && self.updates % interval == 0) {
                    self.checkpoint().save(p)?;
                }
            }
            last = Some(rec);
        }
        if let Some(f) = log.as_mut() {
            f.flush().map_err(io("writing metrics.jsonl".into()))?;
        }
        Ok(TrainOutcome {
            updates: self.updates,
            env_steps: self.env_steps,
            last,
            checkpoint: ckpt_path,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

fn summarize(episodes: &[crate::envs::EpisodeStats]) -> RolloutStats {
    if episodes.is_empty() {
        return RolloutStats::default();
    }
    let n = episodes.len() as f64;
    RolloutStats {
        episodes: episodes.len(),
        mean_episode_reward: Some(episodes.iter().map(|e| e.total_reward).sum::<f64>() / n),
        mean_final_error: Some(episodes.iter().map(|e| e.final_error).sum::<f64>() / n),
        success_rate: Some(episodes.iter().filter(|e| e.terminated).count() as f64 / n),
    }
}
