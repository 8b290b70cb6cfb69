//! Policy evaluation: random starts, sampled actions, success under a
//! step threshold, and shortest-path ratios against the BFS optimum.

use rand_chacha::ChaCha8Rng;

use crate::gridworld::{sample_start, shortest_path_length, step};
use crate::model::NavModel;

use super::{Agent, ModelAgent, Task, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub episodes_per_task: u32,
    /// Hard stop per episode; failures count this many steps.
    pub episode_cap: u32,
    /// An episode succeeds when the goal is reached in fewer steps.
    pub success_cap: u32,
    /// Diagnostics only: take the argmax instead of sampling from pi.
    pub argmax: bool,
    pub slip_prob: f64,
}

impl Default for EvalOptions {
    fn default() -> EvalOptions {
        EvalOptions {
            episodes_per_task: 10,
            episode_cap: 500,
            success_cap: 500,
            argmax: false,
            slip_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEval {
    pub task_id: u32,
    pub episodes: u32,
    pub mean_length: f64,
    pub success_rate: f64,
    pub mean_path_ratio: f64,
}

/// Aggregates are flat means over every episode of every task.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_task: Vec<TaskEval>,
    pub episodes: u32,
    pub mean_length: f64,
    pub success_rate: f64,
    pub mean_path_ratio: f64,
}

/// Evaluates the trained model on every task.
pub fn evaluate(
    model: &NavModel,
    tasks: &[Task],
    opts: &EvalOptions,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport, TrainError> {
    evaluate_with(|task| ModelAgent::new(model, task, opts.argmax), tasks, opts, rng)
}

/// Evaluation loop over an arbitrary agent factory; test doubles and
/// baselines plug in here. Episodes run sequentially (tasks in order,
/// then episodes). The rng is split once at entry into a start stream
/// and an action stream, so two agents evaluated from equal rng states
/// see identical start poses no matter how many action draws each
/// consumes.
pub fn evaluate_with<A: Agent>(
    mut make_agent: impl FnMut(&Task) -> Result<A, TrainError>,
    tasks: &[Task],
    opts: &EvalOptions,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    if opts.episodes_per_task == 0 || opts.episode_cap == 0 {
        return Err(TrainError::BadConfig(
            "episodes_per_task and episode_cap must be >= 1".into(),
        ));
    }
    use rand::{Rng as _, SeedableRng as _};
    let mut start_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut act_rng = ChaCha8Rng::seed_from_u64(rng.random());

    let mut per_task = Vec::with_capacity(tasks.len());
    let mut sum_len = 0.0f64;
    let mut sum_ratio = 0.0f64;
    let mut successes = 0u32;
    for task in tasks {
        let mut agent = make_agent(task)?;
        let scene = task.scene().clone();
        let goal = task.goal();
        let mut task_len = 0.0f64;
        let mut task_ratio = 0.0f64;
        let mut task_successes = 0u32;
        for _ in 0..opts.episodes_per_task {
            let start = sample_start(&scene, goal, &mut start_rng)?;
            let optimum = shortest_path_length(&scene, start, goal).ok_or(
                TrainError::UnreachableGoal {
                    task_id: task.task_id(),
                    start,
                },
            )?;
            agent.begin_episode(start)?;

            let mut pose = start;
            let mut len = 0u32;
            let mut reached = false;
            while len < opts.episode_cap {
                let action = agent.act(&mut act_rng)?;
                let outcome = step(&scene, pose, action, goal, opts.slip_prob, &mut act_rng);
                pose = outcome.next_pose;
                len += 1;
                agent.after_step(pose)?;
                if outcome.done {
                    reached = true;
                    break;
                }
            }
            let effective = if reached { len } else { opts.episode_cap };
            let success = reached && effective < opts.success_cap;
            task_len += effective as f64;
            task_ratio += effective as f64 / optimum as f64;
            task_successes += u32::from(success);
        }
        let n = opts.episodes_per_task as f64;
        per_task.push(TaskEval {
            task_id: task.task_id(),
            episodes: opts.episodes_per_task,
            mean_length: task_len / n,
            success_rate: task_successes as f64 / n,
            mean_path_ratio: task_ratio / n,
        });
        sum_len += task_len;
        sum_ratio += task_ratio;
        successes += task_successes;
    }
    let total = (tasks.len() as u32 * opts.episodes_per_task) as f64;
    Ok(EvalReport {
        per_task,
        episodes: total as u32,
        mean_length: sum_len / total,
        success_rate: successes as f64 / total,
        mean_path_ratio: sum_ratio / total,
    })
}
