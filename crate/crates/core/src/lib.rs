//! Target-driven visual navigation on procedural grid worlds.

pub mod baselines;
pub mod experiments;
pub mod gridworld;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod trainer;
mod util;

pub use gridworld::{Action, Heading, Pose, Scene};
pub use model::{ArchConfig, NavModel, ObservationStack};
pub use numerics::{ParamStore, UpdateMode};
pub use trainer::{evaluate, train, EvalOptions, EvalReport, MetricsRow, Task, TrainConfig};
