//! Per-target actor-critic: the trainer's rollout and loss machinery on
//! a goal-free network, one independent parameter set per task, with a
//! configurable number of workers all on that single task.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{sample_start, step, Action, Pose, Scene};
use crate::model::{ArchConfig, ModelError, ObservationStack};
use crate::numerics::{
    a3c_loss_and_grads, affine_relu_backward, affine_relu_forward, init_param_block,
    n_step_returns, save_checkpoint, softmax, AffineCache, GradBlock, InitKind, NumericsError,
    OptimConfig, ParamBlock, ParamStore, UpdateMode,
};
use crate::trainer::{
    argmax_action, sample_action, Agent, EpisodeEnd, MetricsRow, MetricsSink, SegmentOutcome,
    Task, TrainConfig, TrainError,
};

use super::goalfree::{init_trunk, trunk_backward, trunk_forward, Trunk, TrunkCache};

const EMBED: &str = "pt/embed";
const FC: &str = "pt/fc";
const POLICY: &str = "pt/policy";
const VALUE: &str = "pt/value";

/// Goal-free actor-critic parameters for exactly one task: trunk plus
/// zero-initialized policy and value heads. Nothing is shared across
/// targets.
pub struct PerTargetActorCritic {
    store: ParamStore,
    arch: ArchConfig,
}

impl PerTargetActorCritic {
    pub fn new(
        arch: ArchConfig,
        mode: UpdateMode,
        optim: OptimConfig,
        init_seed: u64,
    ) -> Result<PerTargetActorCritic, TrainError> {
        arch.validate()?;
        let store = ParamStore::new(mode, optim);
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let trunk = init_trunk(EMBED, FC, &arch, &mut rng);
        store.insert(trunk.embed).map_err(ModelError::from)?;
        store.insert(trunk.fc).map_err(ModelError::from)?;
        store
            .insert(init_param_block(POLICY, Action::COUNT, arch.fuse_dim, InitKind::Zero, &mut rng))
            .map_err(ModelError::from)?;
        store
            .insert(init_param_block(VALUE, 1, arch.fuse_dim, InitKind::Zero, &mut rng))
            .map_err(ModelError::from)?;
        Ok(PerTargetActorCritic { store, arch })
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    /// Block shapes, for structural assertions: (name, out_dim, in_dim).
    pub fn block_shapes(&self) -> Vec<(String, usize, usize)> {
        self.store
            .snapshot_all()
            .into_iter()
            .map(|b| (b.name, b.out_dim, b.in_dim))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        save_checkpoint(&self.store, &[], path).map_err(ModelError::from)?;
        Ok(())
    }

    /// Evaluation agent over a parameter snapshot; samples from pi
    /// unless `argmax`.
    pub fn agent(&self, scene: &Arc<Scene>, argmax: bool) -> Result<GoalFreeAgent, TrainError> {
        Ok(GoalFreeAgent {
            scene: scene.clone(),
            trunk: Trunk {
                embed: self.store.read(EMBED).map_err(ModelError::from)?,
                fc: self.store.read(FC).map_err(ModelError::from)?,
            },
            policy: self.store.read(POLICY).map_err(ModelError::from)?,
            stack: ObservationStack::reset_from_values(&vec![0.0; scene.percept_dim()]),
            argmax,
        })
    }
}

/// Runs the goal-free policy.
pub struct GoalFreeAgent {
    scene: Arc<Scene>,
    trunk: Trunk,
    policy: ParamBlock,
    stack: ObservationStack,
    argmax: bool,
}

impl Agent for GoalFreeAgent {
    fn begin_episode(&mut self, start: Pose) -> Result<(), TrainError> {
        self.stack.reset_in_place(self.scene.percept(start))?;
        Ok(())
    }

    fn act(&mut self, rng: &mut ChaCha8Rng) -> Result<Action, TrainError> {
        let (hidden, _) = trunk_forward(&self.trunk, &self.stack)?;
        let (logits, _) = affine_relu_forward(&self.policy, &hidden, true).map_err(ModelError::from)?;
        let probs = softmax(&logits);
        Ok(if self.argmax {
            argmax_action(&probs)
        } else {
            sample_action(&probs, rng)
        })
    }

    fn after_step(&mut self, pose: Pose) -> Result<(), TrainError> {
        self.stack.push_values(self.scene.percept(pose))?;
        Ok(())
    }
}

pub struct PerTargetReport {
    pub net: PerTargetActorCritic,
    pub metrics: Vec<MetricsRow>,
    pub frames: u64,
}

struct PtGrads {
    embed: GradBlock,
    fc: GradBlock,
    policy: GradBlock,
    value: GradBlock,
}

impl PtGrads {
    fn zero(&mut self) {
        self.embed.zero();
        self.fc.zero();
        self.policy.zero();
        self.value.zero();
    }

    fn pairs(&mut self) -> [(&str, &mut GradBlock); 4] {
        [
            (EMBED, &mut self.embed),
            (FC, &mut self.fc),
            (POLICY, &mut self.policy),
            (VALUE, &mut self.value),
        ]
    }
}

/// One worker's rollout state; all workers share the task.
struct PtRunner {
    scene: Arc<Scene>,
    goal: Pose,
    task_id: u32,
    rng: ChaCha8Rng,
    trunk: Trunk,
    policy: ParamBlock,
    value: ParamBlock,
    grads: PtGrads,
    stack: ObservationStack,
    pose: Pose,
    episode_len: u32,
    episode_return: f32,
    in_episode: bool,
}

impl PtRunner {
    fn new(net: &PerTargetActorCritic, task: &Task, seed: u64) -> Result<PtRunner, TrainError> {
        let trunk = Trunk {
            embed: net.store.read(EMBED).map_err(ModelError::from)?,
            fc: net.store.read(FC).map_err(ModelError::from)?,
        };
        let policy = net.store.read(POLICY).map_err(ModelError::from)?;
        let value = net.store.read(VALUE).map_err(ModelError::from)?;
        let grads = PtGrads {
            embed: GradBlock::zeros_like(&trunk.embed),
            fc: GradBlock::zeros_like(&trunk.fc),
            policy: GradBlock::zeros_like(&policy),
            value: GradBlock::zeros_like(&value),
        };
        let scene = task.scene().clone();
        let stack = ObservationStack::reset_from_values(&vec![0.0; scene.percept_dim()]);
        Ok(PtRunner {
            scene,
            goal: task.goal(),
            task_id: task.task_id(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            trunk,
            policy,
            value,
            grads,
            stack,
            pose: task.goal(),
            episode_len: 0,
            episode_return: 0.0,
            in_episode: false,
        })
    }

    fn forward(&self) -> Result<(Vec<f32>, f32, (TrunkCache, AffineCache, AffineCache)), TrainError> {
        let (hidden, trunk_cache) = trunk_forward(&self.trunk, &self.stack)?;
        let (logits, policy_cache) =
            affine_relu_forward(&self.policy, &hidden, true).map_err(ModelError::from)?;
        let (value_out, value_cache) =
            affine_relu_forward(&self.value, &hidden, true).map_err(ModelError::from)?;
        Ok((
            softmax(&logits),
            value_out[0],
            (trunk_cache, policy_cache, value_cache),
        ))
    }

    fn run_segment(
        &mut self,
        net: &PerTargetActorCritic,
        config: &TrainConfig,
        frames_before: u64,
    ) -> Result<SegmentOutcome, TrainError> {
        net.store.read_into(EMBED, &mut self.trunk.embed).map_err(ModelError::from)?;
        net.store.read_into(FC, &mut self.trunk.fc).map_err(ModelError::from)?;
        net.store.read_into(POLICY, &mut self.policy).map_err(ModelError::from)?;
        net.store.read_into(VALUE, &mut self.value).map_err(ModelError::from)?;

        if !self.in_episode {
            self.pose = sample_start(&self.scene, self.goal, &mut self.rng)?;
            self.stack.reset_in_place(self.scene.percept(self.pose))?;
            self.episode_len = 0;
            self.episode_return = 0.0;
            self.in_episode = true;
        }

        let mut probs: Vec<Vec<f32>> = Vec::with_capacity(config.t_max);
        let mut values: Vec<f32> = Vec::with_capacity(config.t_max);
        let mut actions: Vec<usize> = Vec::with_capacity(config.t_max);
        let mut rewards: Vec<f32> = Vec::with_capacity(config.t_max);
        let mut caches = Vec::with_capacity(config.t_max);
        let mut done = false;

        for _ in 0..config.t_max {
            let (pi, v, cache) = self.forward()?;
            let action = sample_action(&pi, &mut self.rng);
            let outcome = step(
                &self.scene,
                self.pose,
                action,
                self.goal,
                config.slip_prob,
                &mut self.rng,
            );

            probs.push(pi);
            values.push(v);
            actions.push(action.index());
            rewards.push(outcome.reward);
            caches.push(cache);

            self.pose = outcome.next_pose;
            self.episode_len += 1;
            self.episode_return += outcome.reward;
            self.stack.push_values(self.scene.percept(self.pose))?;

            if outcome.done {
                done = true;
                break;
            }
            if self.episode_len >= config.episode_cap {
                break;
            }
        }
        let steps = rewards.len() as u32;

        let bootstrap = if done { 0.0 } else { self.forward()?.1 };
        let returns = n_step_returns(&rewards, bootstrap, done, config.gamma);
        let head_grads = match a3c_loss_and_grads(&probs, &values, &actions, &returns, config.beta)
        {
            Ok(g) => g,
            Err(NumericsError::ZeroProbability { .. }) => {
                return Err(TrainError::NonFiniteLoss {
                    task_id: self.task_id,
                    frames: frames_before + steps as u64,
                })
            }
            Err(e) => return Err(TrainError::Model(e.into())),
        };
        if !head_grads.loss.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                task_id: self.task_id,
                frames: frames_before + steps as u64,
            });
        }

        self.grads.zero();
        for (t, (trunk_cache, policy_cache, value_cache)) in caches.iter().enumerate() {
            let dh_policy = affine_relu_backward(
                &self.policy,
                policy_cache,
                &head_grads.dlogits[t],
                true,
                &mut self.grads.policy,
            )
            .map_err(ModelError::from)?;
            let dh_value = affine_relu_backward(
                &self.value,
                value_cache,
                &[head_grads.dvalue[t]],
                true,
                &mut self.grads.value,
            )
            .map_err(ModelError::from)?;
            let dhidden: Vec<f32> = dh_policy.iter().zip(&dh_value).map(|(a, b)| a + b).collect();
            trunk_backward(&self.trunk, trunk_cache, &dhidden, &mut self.grads.embed, &mut self.grads.fc)?;
        }
        net.store.apply_gradients(self.grads.pairs()).map_err(ModelError::from)?;

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

/// Trains one goal-free network on one task with `threads_per_target`
/// workers: interleaved on the calling thread under
/// `UpdateMode::Serialized`, OS threads under `UpdateMode::Hogwild`.
/// Initialization and worker seeds are drawn from `rng`.
pub fn per_target_a3c_train(
    config: &TrainConfig,
    task: &Task,
    threads_per_target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PerTargetReport, TrainError> {
    config.validate()?;
    if threads_per_target == 0 {
        return Err(TrainError::BadConfig("threads_per_target must be >= 1".into()));
    }
    if task.scene().percept_dim() != config.arch.percept_dim {
        return Err(TrainError::PerceptDimMismatch {
            expected: config.arch.percept_dim,
            got: task.scene().percept_dim(),
        });
    }

    let net = PerTargetActorCritic::new(config.arch, config.mode, config.optim, rng.random())?;
    let mut runners: Vec<PtRunner> = (0..threads_per_target)
        .map(|_| PtRunner::new(&net, task, rng.random()))
        .collect::<Result<_, _>>()?;

    let sink = MetricsSink::new(None)?;
    let counter = AtomicU64::new(0);
    let started = Instant::now();

    let drive = |runner: &mut PtRunner| -> Result<bool, TrainError> {
        let before = counter.load(Ordering::SeqCst);
        if before >= config.frames_budget {
            return Ok(false);
        }
        let outcome = runner.run_segment(&net, config, before)?;
        let now = counter.fetch_add(outcome.steps as u64, Ordering::SeqCst) + outcome.steps as u64;
        if let Some(end) = outcome.episode {
            let wall_ms = match config.mode {
                UpdateMode::Serialized => 0,
                UpdateMode::Hogwild => started.elapsed().as_millis() as u64,
            };
            sink.push(MetricsRow {
                frames: now,
                task_id: runner.task_id,
                episode_len: end.length,
                episode_return: end.episode_return,
                success: end.success,
                wall_ms,
            })?;
        }
        Ok(true)
    };

    match config.mode {
        UpdateMode::Serialized => {
            let mut progressed = true;
            while progressed {
                progressed = false;
                for runner in runners.iter_mut() {
                    if drive(runner)? {
                        progressed = true;
                    }
                }
            }
        }
        UpdateMode::Hogwild => {
            let first_err: Mutex<Option<TrainError>> = Mutex::new(None);
            std::thread::scope(|scope| {
                for runner in runners.iter_mut() {
                    let drive = &drive;
                    let first_err = &first_err;
                    scope.spawn(move || {
                        while match drive(runner) {
                            Ok(p) => p,
                            Err(e) => {
                                first_err.lock().expect("error slot poisoned").get_or_insert(e);
                                false
                            }
                        } {}
                    });
                }
            });
            if let Some(e) = first_err.into_inner().expect("error slot poisoned") {
                return Err(e);
            }
        }
    }

    Ok(PerTargetReport {
        net,
        metrics: sink.into_rows(),
        frames: counter.load(Ordering::SeqCst),
    })
}

/// First `frames` value at which the success rate over the trailing
/// `window` completed episodes reaches `min_rate`; None when it never
/// does.
pub fn frames_to_success(metrics: &[MetricsRow], window: usize, min_rate: f64) -> Option<u64> {
    assert!(window > 0, "window must be >= 1");
    assert!((0.0..=1.0).contains(&min_rate), "min_rate {min_rate} outside [0, 1]");
    let mut recent = std::collections::VecDeque::with_capacity(window + 1);
    let mut hits = 0usize;
    for row in metrics {
        recent.push_back(row.success);
        hits += usize::from(row.success);
        if recent.len() > window && recent.pop_front() == Some(true) {
            hits -= 1;
        }
        if recent.len() == window && hits as f64 >= min_rate * window as f64 {
            return Some(row.frames);
        }
    }
    None
}
