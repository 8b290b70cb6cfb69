//! Asynchronous actor-critic training: one worker per navigation task,
//! t_max-step rollouts, n-step returns, shared RMSProp updates.

mod agent;
mod eval;
mod run;
mod worker;

pub use agent::{argmax_action, sample_action, Agent, ModelAgent, OracleAgent, RandomAgent};
pub use eval::{evaluate, evaluate_with, EvalOptions, EvalReport, TaskEval};
pub use run::{train, MetricsSink, TrainOptions, TrainReport};
pub use worker::{EpisodeEnd, SegmentOutcome, TaskRunner};

use std::sync::Arc;

use thiserror::Error;

use crate::gridworld::{Pose, Scene, SceneError};
use crate::model::{ArchConfig, ModelError};
use crate::numerics::OptimConfig;
use crate::UpdateMode;

/// One navigation problem: a scene and a goal pose inside it. Training
/// tasks require the goal to be one of the scene's targets; probe tasks
/// (evaluation of unseen goals) accept any free pose.
#[derive(Debug, Clone)]
pub struct Task {
    scene: Arc<Scene>,
    goal: Pose,
    task_id: u32,
    probe: bool,
}

impl Task {
    /// A training task; the goal must be a scene target.
    pub fn new(scene: Arc<Scene>, goal: Pose, task_id: u32) -> Result<Task, TrainError> {
        if !scene.targets().contains(&goal) {
            return Err(TrainError::GoalNotTarget { task_id, goal });
        }
        Ok(Task { scene, goal, task_id, probe: false })
    }

    /// An evaluation-only task whose goal may be any free pose.
    pub fn with_any_goal(scene: Arc<Scene>, goal: Pose, task_id: u32) -> Result<Task, TrainError> {
        if !scene.is_free(goal.x as i32, goal.y as i32) {
            return Err(TrainError::GoalBlocked { task_id, goal });
        }
        Ok(Task { scene, goal, task_id, probe: true })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn goal(&self) -> Pose {
        self.goal
    }

    pub fn task_id(&self) -> u32 {
        self.task_id
    }

    /// True when the goal is not guaranteed to be a scene target.
    pub fn is_probe(&self) -> bool {
        self.probe
    }

    /// Scene-branch key shared by every task on the same scene.
    pub fn branch_key(&self) -> String {
        format!("s{}", self.scene.scene_id())
    }
}

/// Everything a training run needs beyond the task list.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total environment steps across all workers.
    pub frames_budget: u64,
    /// Worker count; tasks are dealt round-robin when tasks > workers.
    pub workers: usize,
    /// Rollout segment length.
    pub t_max: usize,
    pub gamma: f32,
    /// Entropy bonus weight.
    pub beta: f32,
    pub optim: OptimConfig,
    pub slip_prob: f64,
    /// Episode reset after this many steps without reaching the goal.
    pub episode_cap: u32,
    /// Checkpoint cadence in frames.
    pub eval_every: u64,
    pub seed: u64,
    pub mode: UpdateMode,
    pub arch: ArchConfig,
    /// Ablation: all scenes share one branch.
    pub single_branch: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            frames_budget: 2_000_000,
            workers: 4,
            t_max: 5,
            gamma: 0.99,
            beta: 0.01,
            optim: OptimConfig::default(),
            slip_prob: 0.0,
            episode_cap: 500,
            eval_every: 100_000,
            seed: 1,
            mode: UpdateMode::Serialized,
            arch: ArchConfig::default(),
            single_branch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.t_max == 0 {
            return bad("t_max must be >= 1".into());
        }
        if self.episode_cap == 0 {
            return bad("episode_cap must be >= 1".into());
        }
        if self.frames_budget < self.t_max as u64 {
            return bad(format!(
                "frames_budget {} is below one segment of t_max {}",
                self.frames_budget, self.t_max
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return bad(format!("beta {} must be finite and >= 0", self.beta));
        }
        if !(0.0..=0.5).contains(&self.slip_prob) {
            return bad(format!("slip_prob {} outside [0, 0.5]", self.slip_prob));
        }
        if !(self.optim.learning_rate > 0.0) {
            return bad(format!("lr {} must be > 0", self.optim.learning_rate));
        }
        if !(0.0..1.0).contains(&self.optim.alpha) {
            return bad(format!("rmsprop_alpha {} outside [0, 1)", self.optim.alpha));
        }
        if !(self.optim.epsilon > 0.0) {
            return bad(format!("rmsprop_eps {} must be > 0", self.optim.epsilon));
        }
        if self.optim.clip_norm < 0.0 {
            return bad(format!("clip_norm {} must be >= 0", self.optim.clip_norm));
        }
        self.arch.validate()?;
        Ok(())
    }
}

/// One finished episode, as written to the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Global frame counter when the episode's segment finished.
    pub frames: u64,
    pub task_id: u32,
    pub episode_len: u32,
    pub episode_return: f32,
    pub success: bool,
    /// Elapsed wall clock; always 0 in serialized mode so reruns are
    /// byte-identical.
    pub wall_ms: u64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "frames,task_id,episode_len,return,success,wall_ms";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.frames,
            self.task_id,
            self.episode_len,
            self.episode_return,
            u8::from(self.success),
            self.wall_ms
        )
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    BadConfig(String),
    #[error("no tasks given")]
    NoTasks,
    #[error("duplicate task id {0}")]
    DuplicateTaskId(u32),
    #[error("task {task_id}: goal {goal} is not one of the scene's targets")]
    GoalNotTarget { task_id: u32, goal: Pose },
    #[error("task {task_id}: goal {goal} is not a free pose")]
    GoalBlocked { task_id: u32, goal: Pose },
    #[error("task {task_id}: training goals must be scene targets")]
    ProbeTaskInTraining { task_id: u32 },
    #[error("task {task_id}: goal unreachable from {start}")]
    UnreachableGoal { task_id: u32, start: Pose },
    #[error("scene percept dim {got} does not match configured {expected}")]
    PerceptDimMismatch { expected: usize, got: usize },
    #[error("checkpoint architecture {got:?} does not match configured {expected:?}")]
    ArchMismatch { expected: ArchConfig, got: ArchConfig },
    #[error("task {task_id}: non-finite loss at frame {frames}")]
    NonFiniteLoss { task_id: u32, frames: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("metrics io: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use crate::gridworld::generate_scene;

    use super::*;

    #[test]
    fn task_goal_must_be_a_target() {
        let scene = Arc::new(generate_scene(5, 8, 8, 0.1, 2, 8, 0.5).unwrap());
        let goal = scene.targets()[0];
        let task = Task::new(scene.clone(), goal, 0).unwrap();
        assert!(!task.is_probe());
        assert_eq!(task.branch_key(), format!("s{}", scene.scene_id()));

        let free = scene
            .free_cells()
            .iter()
            .map(|&(x, y)| Pose::new(x, y, crate::Heading::North))
            .find(|p| !scene.targets().contains(p))
            .unwrap();
        assert!(matches!(
            Task::new(scene.clone(), free, 1),
            Err(TrainError::GoalNotTarget { .. })
        ));
        let probe = Task::with_any_goal(scene, free, 1).unwrap();
        assert!(probe.is_probe());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let good = TrainConfig::default();
        good.validate().unwrap();
        for mutate in [
            (|c: &mut TrainConfig| c.workers = 0) as fn(&mut TrainConfig),
            |c| c.t_max = 0,
            |c| c.episode_cap = 0,
            |c| c.frames_budget = 3,
            |c| c.eval_every = 0,
            |c| c.gamma = 0.0,
            |c| c.gamma = 1.5,
            |c| c.beta = -0.1,
            |c| c.slip_prob = 0.6,
            |c| c.optim.learning_rate = 0.0,
            |c| c.optim.alpha = 1.0,
            |c| c.optim.epsilon = 0.0,
            |c| c.optim.clip_norm = -1.0,
            |c| c.arch.percept_dim = 0,
        ] {
            let mut cfg = good.clone();
            mutate(&mut cfg);
            assert!(cfg.validate().is_err(), "mutation should fail validation");
        }
    }

    #[test]
    fn csv_line_matches_header_shape() {
        let row = MetricsRow {
            frames: 120,
            task_id: 3,
            episode_len: 17,
            episode_return: 9.83,
            success: true,
            wall_ms: 0,
        };
        assert_eq!(row.csv_line(), "120,3,17,9.83,1,0");
        assert_eq!(
            MetricsRow::CSV_HEADER.split(',').count(),
            row.csv_line().split(',').count()
        );
    }
}
