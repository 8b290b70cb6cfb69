//! Comparison methods run through the shared evaluation pipeline: a
//! uniform random walk, the shortest-path oracle, one-step Q, a
//! per-target actor-critic without goal input, and the single-branch
//! ablation of the target-driven model.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::gridworld::{Pose, Scene};
use crate::model::{ArchConfig, NavModel};
use crate::numerics::{OptimConfig, UpdateMode};
use crate::trainer::{
    evaluate_with, EvalOptions, EvalReport, OracleAgent, RandomAgent, Task, TrainError,
};

mod goalfree;
mod per_target;
mod qlearn;

pub use per_target::{
    frames_to_success, per_target_a3c_train, GoalFreeAgent, PerTargetActorCritic, PerTargetReport,
};
pub use qlearn::{
    epsilon_at, one_step_q_train, td_target, QGreedyAgent, QNetwork, QTrainReport, EPSILON_FINAL,
    TARGET_COPY_FRAMES,
};

/// Uniform-random policy over `episodes` episodes from random starts.
/// Reaching the goal at any step counts as success, so the cap only
/// bounds episode length.
pub fn random_walk_eval(
    scene: &Arc<Scene>,
    goal: Pose,
    episodes: u32,
    episode_cap: u32,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport, TrainError> {
    let task = Task::with_any_goal(scene.clone(), goal, 0)?;
    let opts = EvalOptions {
        episodes_per_task: episodes,
        episode_cap,
        success_cap: episode_cap.saturating_add(1),
        argmax: false,
        slip_prob: 0.0,
    };
    evaluate_with(|_| Ok(RandomAgent), std::slice::from_ref(&task), &opts, rng)
}

/// Replays BFS-optimal actions from random starts: every episode length
/// equals the shortest-path length, so the report upper-bounds what any
/// agent can score. Errors when some start cannot reach the goal.
pub fn shortest_path_eval(
    scene: &Arc<Scene>,
    goal: Pose,
    episodes: u32,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport, TrainError> {
    let task = Task::with_any_goal(scene.clone(), goal, 0)?;
    let opts = EvalOptions {
        episodes_per_task: episodes,
        episode_cap: u32::MAX,
        success_cap: u32::MAX,
        argmax: false,
        slip_prob: 0.0,
    };
    evaluate_with(|t| Ok(OracleAgent::new(t)), std::slice::from_ref(&task), &opts, rng)
}

/// The single-branch ablation: every scene key aliases one shared
/// branch, both while training (`TrainConfig::single_branch`) and for
/// zero-shot evaluation on scenes never trained on.
pub fn single_branch_model(
    arch: ArchConfig,
    mode: UpdateMode,
    optim: OptimConfig,
    init_seed: u64,
) -> Result<NavModel, TrainError> {
    Ok(NavModel::new(arch, mode, optim, init_seed, true)?)
}
