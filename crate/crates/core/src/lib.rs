//! Batched simulation of surgical robot arms with PPO training.
//!
//! Every numeric type is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below name the two concrete instantiations.

pub mod bench;
pub mod config;
pub mod dynamics;
pub mod envs;
pub mod geom;
pub mod learn;
pub mod render;
pub mod rng;
pub mod robot;
pub mod scalar;

pub use scalar::Scalar;

pub type RobotModel32 = robot::RobotModel<f32>;
pub type RobotModel64 = robot::RobotModel<f64>;
pub type SimBatch32 = dynamics::SimBatch<f32>;
pub type SimBatch64 = dynamics::SimBatch<f64>;
pub type EnvBatch32 = envs::EnvBatch<f32>;
pub type EnvBatch64 = envs::EnvBatch<f64>;
pub type Policy32 = learn::Policy<f32>;
pub type Policy64 = learn::Policy<f64>;
pub type Trainer32 = learn::Trainer<f32>;
pub type Trainer64 = learn::Trainer<f64>;
pub type Checkpoint32 = learn::Checkpoint<f32>;
pub type Checkpoint64 = learn::Checkpoint<f64>;
