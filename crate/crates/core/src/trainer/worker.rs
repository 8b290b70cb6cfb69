//! One task's rollout state: episode bookkeeping, segment collection,
//! loss, backward, and the shared-store update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{sample_start, step, Pose};
use crate::model::{
    embed_stack, heads_backward, heads_forward, make_goal_stack, ModelGrads, NavModel,
    ObservationStack, SceneBranch, SiameseCore, StepCache, StreamEmbed,
};
use crate::numerics::{a3c_loss_and_grads, n_step_returns, NumericsError};
use crate::util::{fnv1a64, splitmix64};

use super::{sample_action, Task, TrainConfig, TrainError};

/// What one segment did: steps consumed and, when an episode finished
/// inside the segment, its summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    pub steps: u32,
    pub episode: Option<EpisodeEnd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEnd {
    pub length: u32,
    pub episode_return: f32,
    pub success: bool,
}

/// Worker-local state for one task. Everything here is private to the
/// worker; the only shared state train() touches is the parameter store,
/// the frame counter, and the metrics sink.
pub struct TaskRunner {
    task: Task,
    rng: ChaCha8Rng,
    core: SiameseCore,
    branch: SceneBranch,
    goal_stack: ObservationStack,
    stack: ObservationStack,
    grads: ModelGrads,
    pose: Pose,
    episode_len: u32,
    episode_return: f32,
    in_episode: bool,
    /// Total env steps this runner has taken.
    pub frames: u64,
}

impl TaskRunner {
    /// Creates the task's branch (idempotent) and seeds the worker rng
    /// from the run seed and the task id.
    pub fn new(model: &NavModel, task: Task, run_seed: u64) -> Result<TaskRunner, TrainError> {
        let core = model.core();
        let branch = model.branch_for(&task.branch_key(), true)?;
        let goal_stack = make_goal_stack(task.scene(), task.goal());
        let stack = goal_stack.clone();
        let grads = ModelGrads::zeros_like(&core, &branch);
        let rng = ChaCha8Rng::seed_from_u64(splitmix64(
            run_seed ^ fnv1a64(&task.task_id().to_le_bytes()),
        ));
        let pose = task.goal();
        Ok(TaskRunner {
            task,
            rng,
            core,
            branch,
            goal_stack,
            stack,
            grads,
            pose,
            episode_len: 0,
            episode_return: 0.0,
            in_episode: false,
            frames: 0,
        })
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    /// Runs one rollout segment: refresh parameters, step up to t_max
    /// frames (fewer at episode end), compute n-step returns, backward,
    /// and apply one shared update. `frames_before` is the global
    /// counter value, used only for error diagnostics.
    pub fn run_segment(
        &mut self,
        model: &NavModel,
        config: &TrainConfig,
        frames_before: u64,
    ) -> Result<SegmentOutcome, TrainError> {
        model.refresh_core(&mut self.core);
        model.refresh_branch(&mut self.branch)?;
        let goal_embed = embed_stack(&self.core, &self.goal_stack)?;

        let scene = self.task.scene().clone();
        let goal = self.task.goal();
        if !self.in_episode {
            self.pose = sample_start(&scene, goal, &mut self.rng)?;
            self.stack.reset_in_place(scene.percept(self.pose))?;
            self.episode_len = 0;
            self.episode_return = 0.0;
            self.in_episode = true;
        }

        let mut probs: Vec<Vec<f32>> = Vec::with_capacity(config.t_max);
        let mut values: Vec<f32> = Vec::with_capacity(config.t_max);
        let mut actions: Vec<usize> = Vec::with_capacity(config.t_max);
        let mut rewards: Vec<f32> = Vec::with_capacity(config.t_max);
        let mut caches: Vec<(StreamEmbed, StepCache)> = Vec::with_capacity(config.t_max);
        let mut done = false;

        for _ in 0..config.t_max {
            let state_embed = embed_stack(&self.core, &self.stack)?;
            let (out, step_cache) =
                heads_forward(&self.core, &self.branch, &state_embed, &goal_embed)?;
            let action = sample_action(&out.probs, &mut self.rng);
            let outcome = step(&scene, self.pose, action, goal, config.slip_prob, &mut self.rng);

            probs.push(out.probs);
            values.push(out.value);
            actions.push(action.index());
            rewards.push(outcome.reward);
            caches.push((state_embed, step_cache));

            self.pose = outcome.next_pose;
            self.episode_len += 1;
            self.episode_return += outcome.reward;
            self.stack.push_values(scene.percept(self.pose))?;

            if outcome.done {
                done = true;
                break;
            }
            if self.episode_len >= config.episode_cap {
                break;
            }
        }
        let steps = rewards.len() as u32;

        // Bootstrap with V(s_{t+max}) unless the goal terminated the
        // episode; a cap truncation is a time limit, not a terminal.
        let bootstrap = if done {
            0.0
        } else {
            let state_embed = embed_stack(&self.core, &self.stack)?;
            let (out, _) = heads_forward(&self.core, &self.branch, &state_embed, &goal_embed)?;
            out.value
        };
        let returns = n_step_returns(&rewards, bootstrap, done, config.gamma);
        let head_grads = match a3c_loss_and_grads(&probs, &values, &actions, &returns, config.beta)
        {
            Ok(g) => g,
            Err(NumericsError::ZeroProbability { .. }) => {
                return Err(TrainError::NonFiniteLoss {
                    task_id: self.task.task_id(),
                    frames: frames_before + steps as u64,
                })
            }
            Err(e) => return Err(TrainError::Model(e.into())),
        };
        if !head_grads.loss.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                task_id: self.task.task_id(),
                frames: frames_before + steps as u64,
            });
        }

        self.grads.zero();
        for (t, (state_embed, step_cache)) in caches.iter().enumerate() {
            heads_backward(
                &self.core,
                &self.branch,
                step_cache,
                state_embed,
                &goal_embed,
                &head_grads.dlogits[t],
                head_grads.dvalue[t],
                &mut self.grads,
            )?;
        }
        model.apply_gradients(&mut self.grads)?;

        self.frames += steps as u64;
        let episode = if done || self.episode_len >= config.episode_cap {
            self.in_episode = false;
            Some(EpisodeEnd {
                length: self.episode_len,
                episode_return: self.episode_return,
                success: done,
            })
        } else {
            None
        };
        Ok(SegmentOutcome { steps, episode })
    }
}
