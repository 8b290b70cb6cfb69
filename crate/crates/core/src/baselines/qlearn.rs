//! One-step Q baseline: a state-only action-value network trained from
//! single-transition TD targets against a periodically copied target
//! network, with epsilon-greedy behavior.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{sample_start, step, Action, Scene};
use crate::model::{ArchConfig, ModelError, ObservationStack};
use crate::numerics::{
    affine_relu_backward, affine_relu_forward, init_param_block, save_checkpoint, AffineCache,
    GradBlock, InitKind, OptimConfig, ParamBlock, ParamStore, UpdateMode,
};
use crate::trainer::{argmax_action, Agent, MetricsRow, Task, TrainConfig, TrainError};

use super::goalfree::{init_trunk, trunk_backward, trunk_forward, Trunk, TrunkCache};

/// Live parameters are copied into the frozen TD-target network once per
/// this many frames.
pub const TARGET_COPY_FRAMES: u64 = 2_000;

/// Behavior epsilon anneals linearly from 1.0 down to this floor across
/// the first half of the frame budget, then holds.
pub const EPSILON_FINAL: f64 = 0.1;

const EMBED: &str = "q/embed";
const FC: &str = "q/fc";
const HEAD: &str = "q/head";

/// Exploration rate after `frames` of a `budget`-frame run.
pub fn epsilon_at(frames: u64, budget: u64) -> f64 {
    let half = (budget / 2).max(1);
    let t = (frames as f64 / half as f64).min(1.0);
    (1.0 - (1.0 - EPSILON_FINAL) * t).max(EPSILON_FINAL)
}

/// One-step TD target: the terminal reward alone, or reward plus the
/// discounted best next-state value from the target network.
pub fn td_target(reward: f32, done: bool, max_next_q: f32, gamma: f32) -> f32 {
    if done {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

/// State-only action-value network: trunk plus a 4-way linear head. One
/// network serves exactly one task.
pub struct QNetwork {
    store: ParamStore,
    arch: ArchConfig,
}

impl QNetwork {
    pub fn new(arch: ArchConfig, optim: OptimConfig, init_seed: u64) -> Result<QNetwork, TrainError> {
        arch.validate()?;
        let store = ParamStore::new(UpdateMode::Serialized, optim);
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let trunk = init_trunk(EMBED, FC, &arch, &mut rng);
        store.insert(trunk.embed).map_err(ModelError::from)?;
        store.insert(trunk.fc).map_err(ModelError::from)?;
        store
            .insert(init_param_block(HEAD, Action::COUNT, arch.fuse_dim, InitKind::Zero, &mut rng))
            .map_err(ModelError::from)?;
        Ok(QNetwork { store, arch })
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        save_checkpoint(&self.store, &[], path).map_err(ModelError::from)?;
        Ok(())
    }

    /// Greedy evaluation agent over a parameter snapshot.
    pub fn agent(&self, scene: &Arc<Scene>) -> Result<QGreedyAgent, TrainError> {
        Ok(QGreedyAgent {
            scene: scene.clone(),
            trunk: Trunk {
                embed: self.store.read(EMBED).map_err(ModelError::from)?,
                fc: self.store.read(FC).map_err(ModelError::from)?,
            },
            head: self.store.read(HEAD).map_err(ModelError::from)?,
            stack: ObservationStack::reset_from_values(&vec![0.0; scene.percept_dim()]),
        })
    }
}

/// Acts by the argmax of the Q values; evaluation runs with epsilon 0.
pub struct QGreedyAgent {
    scene: Arc<Scene>,
    trunk: Trunk,
    head: ParamBlock,
    stack: ObservationStack,
}

impl Agent for QGreedyAgent {
    fn begin_episode(&mut self, start: crate::gridworld::Pose) -> Result<(), TrainError> {
        self.stack.reset_in_place(self.scene.percept(start))?;
        Ok(())
    }

    fn act(&mut self, _rng: &mut ChaCha8Rng) -> Result<Action, TrainError> {
        let (q, _) = q_forward(&self.trunk, &self.head, &self.stack)?;
        Ok(argmax_action(&q))
    }

    fn after_step(&mut self, pose: crate::gridworld::Pose) -> Result<(), TrainError> {
        self.stack.push_values(self.scene.percept(pose))?;
        Ok(())
    }
}

pub struct QTrainReport {
    pub net: QNetwork,
    pub metrics: Vec<MetricsRow>,
    pub frames: u64,
}

fn q_forward(
    trunk: &Trunk,
    head: &ParamBlock,
    stack: &ObservationStack,
) -> Result<(Vec<f32>, (TrunkCache, AffineCache)), TrainError> {
    let (hidden, trunk_cache) = trunk_forward(trunk, stack)?;
    let (q, head_cache) = affine_relu_forward(head, &hidden, true).map_err(ModelError::from)?;
    Ok((q, (trunk_cache, head_cache)))
}

struct QGrads {
    embed: GradBlock,
    fc: GradBlock,
    head: GradBlock,
}

impl QGrads {
    fn pairs(&mut self) -> [(&str, &mut GradBlock); 3] {
        [(EMBED, &mut self.embed), (FC, &mut self.fc), (HEAD, &mut self.head)]
    }
}

/// Trains one Q network on one task with per-transition updates. Runs on
/// the calling thread; `config.frames_budget` bounds the step count
/// exactly, and episodes cut off mid-flight by the budget are dropped
/// from the metrics like everywhere else.
pub fn one_step_q_train(
    config: &TrainConfig,
    task: &Task,
    rng: &mut ChaCha8Rng,
) -> Result<QTrainReport, TrainError> {
    config.validate()?;
    if task.scene().percept_dim() != config.arch.percept_dim {
        return Err(TrainError::PerceptDimMismatch {
            expected: config.arch.percept_dim,
            got: task.scene().percept_dim(),
        });
    }

    let net = QNetwork::new(config.arch, config.optim, rng.random())?;
    let read_trunk = |net: &QNetwork| -> Result<Trunk, ModelError> {
        Ok(Trunk {
            embed: net.store.read(EMBED)?,
            fc: net.store.read(FC)?,
        })
    };
    let mut live = read_trunk(&net)?;
    let mut live_head = net.store.read(HEAD).map_err(ModelError::from)?;
    let mut target = live.clone();
    let mut target_head = live_head.clone();
    let mut grads = QGrads {
        embed: GradBlock::zeros_like(&live.embed),
        fc: GradBlock::zeros_like(&live.fc),
        head: GradBlock::zeros_like(&live_head),
    };

    let scene = task.scene().clone();
    let goal = task.goal();
    let budget = config.frames_budget;
    let mut frames: u64 = 0;
    let mut metrics = Vec::new();

    while frames < budget {
        let mut pose = sample_start(&scene, goal, rng)?;
        let mut stack = ObservationStack::reset_from_values(scene.percept(pose));
        let mut episode_len = 0u32;
        let mut episode_return = 0.0f32;
        let mut done = false;

        while episode_len < config.episode_cap {
            let eps = epsilon_at(frames, budget);
            let (q, (trunk_cache, head_cache)) = q_forward(&live, &live_head, &stack)?;
            let action = if rng.random::<f64>() < eps {
                Action::from_index(rng.random_range(0..Action::COUNT))
            } else {
                argmax_action(&q)
            };
            let outcome = step(&scene, pose, action, goal, config.slip_prob, rng);

            let mut next_stack = stack.clone();
            next_stack.push_values(scene.percept(outcome.next_pose))?;
            let max_next = if outcome.done {
                0.0
            } else {
                let (tq, _) = q_forward(&target, &target_head, &next_stack)?;
                tq.iter().copied().fold(f32::NEG_INFINITY, f32::max)
            };
            let y = td_target(outcome.reward, outcome.done, max_next, config.gamma);
            let td_error = q[action.index()] - y;
            if !td_error.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    task_id: task.task_id(),
                    frames,
                });
            }

            // Squared TD error: dL/dq_a = 2 (q_a - y), zero elsewhere.
            let mut dq = vec![0.0f32; q.len()];
            dq[action.index()] = 2.0 * td_error;
            let dhidden =
                affine_relu_backward(&live_head, &head_cache, &dq, true, &mut grads.head)
                    .map_err(ModelError::from)?;
            trunk_backward(&live, &trunk_cache, &dhidden, &mut grads.embed, &mut grads.fc)?;
            net.store.apply_gradients(grads.pairs()).map_err(ModelError::from)?;
            live = read_trunk(&net)?;
            net.store.read_into(HEAD, &mut live_head).map_err(ModelError::from)?;

            frames += 1;
            pose = outcome.next_pose;
            stack = next_stack;
            episode_len += 1;
            episode_return += outcome.reward;

            if frames % TARGET_COPY_FRAMES == 0 {
                target = live.clone();
                target_head = live_head.clone();
            }
            if outcome.done {
                done = true;
                break;
            }
            if frames >= budget {
                break;
            }
        }

        if done || episode_len >= config.episode_cap {
            metrics.push(MetricsRow {
                frames,
                task_id: task.task_id(),
                episode_len,
                episode_return,
                success: done,
                wall_ms: 0,
            });
        }
    }

    Ok(QTrainReport {
        net,
        metrics,
        frames,
    })
}
