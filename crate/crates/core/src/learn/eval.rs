use ndarray::Axis;
use serde::Serialize;

use super::policy::Policy;
use super::LearnError;
use crate::envs::EnvBatch;
use crate::scalar::Scalar;

/// Pre-reset state of one row after one evaluation step.
#[derive(Debug, Clone)]
pub struct StepRecord<'a, T> {
    pub episode: usize,
    /// 1-based step within the episode.
    pub step: usize,
    pub observation: &'a [T],
    pub reward: T,
    pub error: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    /// Task error at the last step of each episode, averaged.
    pub mean_final_error: f64,
    pub std_final_error: f64,
    /// Task error at the first step, averaged.
    pub mean_initial_error: f64,
    pub mean_return: f64,
    /// Fraction of episodes ending within the success radius / threshold.
    pub success_rate: f64,
}

/// Runs `episodes` full-length episodes with the mean action.
///
/// The environment should be built with `terminate_on_success = false` so
/// that every episode lasts exactly `episode_len` steps. Rows are reset at
/// the start of each round of `n_envs` episodes.
pub fn evaluate<T: Scalar>(
    policy: &Policy<T>,
    env: &mut EnvBatch<T>,
    episodes: usize,
    success_threshold: f64,
    mut on_step: impl FnMut(&StepRecord<'_, T>),
) -> Result<EvalSummary, LearnError> {
    let n = env.n_envs();
    let len = env.config().episode_len;
    let mut finals = Vec::with_capacity(episodes);
    let mut initials = Vec::with_capacity(episodes);
    let mut returns = Vec::with_capacity(episodes);
    let mut done = 0;
    while done < episodes {
        let active = (episodes - done).min(n);
        env.reset_all()?;
        let mut ret = vec![0.0; active];
        for step in 1..=len {
            let actions = policy.act_deterministic(env.observations().view())?;
            let res = env.step(actions.view())?;
            for e in 0..active {
                let obs = match res.final_observations.iter().find(|(i, _)| *i == e) {
                    Some((_, o)) => o.as_slice(),
                    None => res.observations.index_axis(Axis(0), e).to_slice().unwrap(),
                };
                ret[e] += res.rewards[e].f64();
                on_step(&StepRecord {
                    episode: done + e,
                    step,
                    observation: obs,
                    reward: res.rewards[e],
                    error: res.errors[e],
                });
                if step == 1 {
                    initials.push(res.errors[e].f64());
                }
                if step == len {
                    finals.push(res.errors[e].f64());
                }
            }
        }
        returns.extend(ret);
        done += active;
    }
    env.drain_episodes();
    let k = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / k;
    Ok(EvalSummary {
        episodes,
        mean_final_error: mean,
        std_final_error: (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt(),
        mean_initial_error: initials.iter().sum::<f64>() / k,
        mean_return: returns.iter().sum::<f64>() / k,
        success_rate: finals.iter().filter(|v| **v < success_threshold).count() as f64 / k,
    })
}
