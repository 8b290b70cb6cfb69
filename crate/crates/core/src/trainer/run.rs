//! The training driver: budget accounting, worker scheduling in both
//! update modes, metrics streaming, and checkpoint cadence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::model::NavModel;
use crate::numerics::Checkpoint;
use crate::UpdateMode;

use super::{MetricsRow, Task, TaskRunner, TrainConfig, TrainError};

/// Run-level switches that are not hyperparameters.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Suppress updates to the shared embed/fusion blocks.
    pub freeze_core: bool,
    /// Resume from a checkpoint instead of fresh initialization.
    pub init: Option<&'a Checkpoint>,
    /// When set, stream metrics.csv, periodic checkpoints, and the final
    /// checkpoint into this directory.
    pub out_dir: Option<&'a Path>,
}

pub struct TrainReport {
    pub model: NavModel,
    pub metrics: Vec<MetricsRow>,
    /// Global frame counter at termination.
    pub frames: u64,
    /// Env steps per task, same order as the task list.
    pub frames_by_task: Vec<(u32, u64)>,
    /// Updates the store rejected for non-finite gradients.
    pub rejected_updates: u64,
    /// Paths of periodic checkpoints, in write order.
    pub checkpoints: Vec<PathBuf>,
}

impl std::fmt::Debug for TrainReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainReport")
            .field("frames", &self.frames)
            .field("episodes", &self.metrics.len())
            .field("rejected_updates", &self.rejected_updates)
            .field("checkpoints", &self.checkpoints.len())
            .finish_non_exhaustive()
    }
}

/// Append-only episode sink: always collects rows in memory, optionally
/// streams them line-by-line (one flush per row) to a CSV file.
pub struct MetricsSink {
    inner: Mutex<SinkInner>,
}

struct SinkInner {
    rows: Vec<MetricsRow>,
    file: Option<BufWriter<File>>,
}

impl MetricsSink {
    pub fn new(path: Option<&Path>) -> Result<MetricsSink, TrainError> {
        let file = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "{}", MetricsRow::CSV_HEADER)?;
                w.flush()?;
                Some(w)
            }
            None => None,
        };
        Ok(MetricsSink {
            inner: Mutex::new(SinkInner { rows: Vec::new(), file }),
        })
    }

    pub fn push(&self, row: MetricsRow) -> Result<(), TrainError> {
        let mut inner = self.inner.lock().expect("metrics sink poisoned");
        if let Some(file) = inner.file.as_mut() {
            writeln!(file, "{}", row.csv_line())?;
            file.flush()?;
        }
        inner.rows.push(row);
        Ok(())
    }

    pub fn into_rows(self) -> Vec<MetricsRow> {
        self.inner.into_inner().expect("metrics sink poisoned").rows
    }
}

/// Trains every task against one shared model. Workers each own a fixed
/// task subset (dealt round-robin) and stop once the global counter
/// reaches the budget, so the counter overshoots by at most
/// `workers * t_max` frames.
pub fn train(
    config: &TrainConfig,
    tasks: &[Task],
    opts: &TrainOptions,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    let mut seen = std::collections::BTreeSet::new();
    for task in tasks {
        if task.is_probe() {
            return Err(TrainError::ProbeTaskInTraining { task_id: task.task_id() });
        }
        if task.scene().percept_dim() != config.arch.percept_dim {
            return Err(TrainError::PerceptDimMismatch {
                expected: config.arch.percept_dim,
                got: task.scene().percept_dim(),
            });
        }
        if !seen.insert(task.task_id()) {
            return Err(TrainError::DuplicateTaskId(task.task_id()));
        }
    }

    let model = match opts.init {
        Some(ckpt) => {
            let m = NavModel::from_checkpoint(
                ckpt,
                config.mode,
                config.optim,
                config.seed,
                config.single_branch,
                config.arch.goal_first,
            )?;
            if m.arch() != config.arch {
                return Err(TrainError::ArchMismatch {
                    expected: config.arch,
                    got: m.arch(),
                });
            }
            m
        }
        None => NavModel::new(
            config.arch,
            config.mode,
            config.optim,
            config.seed,
            config.single_branch,
        )?,
    };
    model.set_core_frozen(opts.freeze_core);

    // Branches are created here, in task order, so worker scheduling can
    // never affect initialization.
    let mut runners: Vec<TaskRunner> = tasks
        .iter()
        .map(|t| TaskRunner::new(&model, t.clone(), config.seed))
        .collect::<Result<_, _>>()?;

    let sink = MetricsSink::new(opts.out_dir.map(|d| d.join("metrics.csv")).as_deref())?;
    let counter = AtomicU64::new(0);
    let next_ckpt = AtomicU64::new(config.eval_every);
    let ckpt_paths: Mutex<Vec<PathBuf>> = Mutex::new(Vec::new());
    let started = Instant::now();

    let drive = |runner: &mut TaskRunner| -> Result<bool, TrainError> {
        let before = counter.load(Ordering::SeqCst);
        if before >= config.frames_budget {
            return Ok(false);
        }
        let outcome = runner.run_segment(&model, config, before)?;
        let now = counter.fetch_add(outcome.steps as u64, Ordering::SeqCst) + outcome.steps as u64;
        if let Some(end) = outcome.episode {
            let wall_ms = match config.mode {
                UpdateMode::Serialized => 0,
                UpdateMode::Hogwild => started.elapsed().as_millis() as u64,
            };
            sink.push(MetricsRow {
                frames: now,
                task_id: runner.task().task_id(),
                episode_len: end.length,
                episode_return: end.episode_return,
                success: end.success,
                wall_ms,
            })?;
        }
        // Claim checkpoint boundaries one at a time; exactly one worker
        // wins each boundary.
        if let Some(dir) = opts.out_dir {
            loop {
                let boundary = next_ckpt.load(Ordering::SeqCst);
                if now < boundary {
                    break;
                }
                if next_ckpt
                    .compare_exchange(
                        boundary,
                        boundary + config.eval_every,
                        Ordering::SeqCst,
                        Ordering::SeqCst,
                    )
                    .is_ok()
                {
                    let path = dir.join(format!("ckpt_{boundary:010}.tdnav"));
                    model.save(&path)?;
                    ckpt_paths.lock().expect("ckpt list poisoned").push(path);
                }
            }
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
            let workers = config.workers.min(runners.len());
            let mut shards: Vec<Vec<&mut TaskRunner>> = Vec::new();
            for _ in 0..workers {
                shards.push(Vec::new());
            }
            for (i, runner) in runners.iter_mut().enumerate() {
                shards[i % workers].push(runner);
            }
            let first_err: Mutex<Option<TrainError>> = Mutex::new(None);
            std::thread::scope(|scope| {
                for shard in shards {
                    let drive = &drive;
                    let first_err = &first_err;
                    scope.spawn(move || {
                        let mut shard = shard;
                        let mut progressed = true;
                        while progressed {
                            progressed = false;
                            for runner in shard.iter_mut() {
                                match drive(runner) {
                                    Ok(true) => progressed = true,
                                    Ok(false) => {}
                                    Err(e) => {
                                        first_err
                                            .lock()
                                            .expect("error slot poisoned")
                                            .get_or_insert(e);
                                        return;
                                    }
                                }
                            }
                        }
                    });
                }
            });
            if let Some(e) = first_err.into_inner().expect("error slot poisoned") {
                return Err(e);
            }
        }
    }

    let frames = counter.load(Ordering::SeqCst);
    let frames_by_task = runners
        .iter()
        .map(|r| (r.task().task_id(), r.frames))
        .collect();
    if let Some(dir) = opts.out_dir {
        model.save(&dir.join("final.tdnav"))?;
    }
    model.set_core_frozen(false);
    Ok(TrainReport {
        rejected_updates: model.store().rejected_updates(),
        model,
        metrics: sink.into_rows(),
        frames,
        frames_by_task,
        checkpoints: ckpt_paths.into_inner().expect("ckpt list poisoned"),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::gridworld::{generate_scene, shortest_path_length, Pose, Scene};
    use crate::model::ArchConfig;
    use crate::trainer::{evaluate, EvalOptions};
    use crate::Heading;

    use super::*;

    fn corridor_scene() -> Arc<Scene> {
        // 3x3 grid whose free region is the bottom row: a 1x3 corridor.
        let blocked = vec![
            false, false, false, // y = 0
            true, true, true, // y = 1
            true, true, true, // y = 2
        ];
        Arc::new(
            Scene::from_parts(
                900,
                3,
                3,
                blocked,
                0.5,
                8,
                900,
                2.0 / 3.0,
                vec![Pose::new(2, 0, Heading::East)],
            )
            .unwrap(),
        )
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            arch: ArchConfig {
                percept_dim: 8,
                embed_dim: 8,
                fuse_dim: 8,
                goal_first: false,
            },
            episode_cap: 40,
            frames_budget: 2_000,
            eval_every: 1_000,
            workers: 1,
            ..TrainConfig::default()
        }
    }

    fn corridor_task() -> Vec<Task> {
        let scene = corridor_scene();
        let goal = scene.targets()[0];
        vec![Task::new(scene, goal, 0).unwrap()]
    }

    #[test]
    fn budget_is_consumed_exactly_and_accounted() {
        let config = small_config();
        let report = train(&config, &corridor_task(), &TrainOptions::default()).unwrap();
        assert!(report.frames >= config.frames_budget);
        assert!(
            report.frames < config.frames_budget + (config.workers * config.t_max) as u64,
            "overshoot {} exceeds workers*t_max",
            report.frames - config.frames_budget
        );
        let by_task: u64 = report.frames_by_task.iter().map(|(_, f)| f).sum();
        assert_eq!(by_task, report.frames, "per-worker counts must sum to the counter");
    }

    #[test]
    fn serialized_runs_are_bit_identical() {
        let config = small_config();
        let a = train(&config, &corridor_task(), &TrainOptions::default()).unwrap();
        let b = train(&config, &corridor_task(), &TrainOptions::default()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.model.core(), b.model.core());
        assert!(a.metrics.iter().all(|r| r.wall_ms == 0));
    }

    #[test]
    fn metrics_are_monotone_per_task_and_capped() {
        let config = small_config();
        let report = train(&config, &corridor_task(), &TrainOptions::default()).unwrap();
        assert!(!report.metrics.is_empty());
        let mut last = 0u64;
        for row in &report.metrics {
            assert!(row.frames >= last);
            last = row.frames;
            assert!(row.episode_len <= config.episode_cap);
            if row.success {
                assert!(row.episode_return > 0.0, "success implies the goal reward landed");
            }
        }
    }

    #[test]
    fn freeze_core_pins_shared_blocks() {
        let config = small_config();
        let tasks = corridor_task();
        let probe = crate::model::NavModel::new(
            config.arch,
            config.mode,
            config.optim,
            config.seed,
            false,
        )
        .unwrap();
        let core_before = probe.core();
        let branch_before = probe.branch_for(&tasks[0].branch_key(), true).unwrap();

        let report = train(
            &config,
            &tasks,
            &TrainOptions { freeze_core: true, ..TrainOptions::default() },
        )
        .unwrap();
        assert_eq!(report.model.core(), core_before, "frozen core must not move");
        let branch_after = report
            .model
            .branch_for(&tasks[0].branch_key(), false)
            .unwrap();
        assert_ne!(branch_after, branch_before, "branch must still learn");
    }

    #[test]
    fn two_scenes_learn_separate_branches_and_share_the_core() {
        let s1 = Arc::new(generate_scene(31, 5, 5, 0.0, 1, 8, 0.5).unwrap());
        let s2 = Arc::new(generate_scene(32, 5, 5, 0.0, 1, 8, 0.5).unwrap());
        let tasks = vec![
            Task::new(s1.clone(), s1.targets()[0], 0).unwrap(),
            Task::new(s2.clone(), s2.targets()[0], 1).unwrap(),
        ];
        let config = small_config();
        let fresh = crate::model::NavModel::new(
            config.arch,
            config.mode,
            config.optim,
            config.seed,
            false,
        )
        .unwrap();
        let core_before = fresh.core();
        let b1_before = fresh.branch_for(&tasks[0].branch_key(), true).unwrap();
        let b2_before = fresh.branch_for(&tasks[1].branch_key(), true).unwrap();

        let report = train(&config, &tasks, &TrainOptions::default()).unwrap();
        assert_ne!(report.model.core(), core_before);
        assert_ne!(
            report.model.branch_for(&tasks[0].branch_key(), false).unwrap(),
            b1_before
        );
        assert_ne!(
            report.model.branch_for(&tasks[1].branch_key(), false).unwrap(),
            b2_before
        );
    }

    #[test]
    fn metrics_csv_and_checkpoints_land_in_out_dir() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config();
        let report = train(
            &config,
            &corridor_task(),
            &TrainOptions { out_dir: Some(dir.path()), ..TrainOptions::default() },
        )
        .unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(MetricsRow::CSV_HEADER));
        assert_eq!(lines.count(), report.metrics.len());
        assert!(dir.path().join("final.tdnav").exists());
        // 2000-frame budget with a 1000-frame cadence crosses 1000 and
        // 2000 exactly once each.
        assert_eq!(report.checkpoints.len(), 2);
        for p in &report.checkpoints {
            assert!(p.exists());
        }
    }

    #[test]
    fn hogwild_completes_with_exact_accounting() {
        let s1 = Arc::new(generate_scene(41, 5, 5, 0.0, 1, 8, 0.5).unwrap());
        let s2 = Arc::new(generate_scene(42, 5, 5, 0.0, 1, 8, 0.5).unwrap());
        let tasks = vec![
            Task::new(s1.clone(), s1.targets()[0], 0).unwrap(),
            Task::new(s2.clone(), s2.targets()[0], 1).unwrap(),
        ];
        let config = TrainConfig {
            mode: UpdateMode::Hogwild,
            workers: 2,
            frames_budget: 4_000,
            ..small_config()
        };
        let report = train(&config, &tasks, &TrainOptions::default()).unwrap();
        assert!(report.frames >= config.frames_budget);
        assert!(report.frames < config.frames_budget + (config.workers * config.t_max) as u64);
        let by_task: u64 = report.frames_by_task.iter().map(|(_, f)| f).sum();
        assert_eq!(by_task, report.frames);
        for task_id in [0u32, 1] {
            let mut last = 0u64;
            for row in report.metrics.iter().filter(|r| r.task_id == task_id) {
                assert!(row.frames >= last, "per-task metrics must be monotone");
                last = row.frames;
            }
        }
    }

    #[test]
    fn resume_rejects_mismatched_architecture() {
        let config = small_config();
        let report = train(&config, &corridor_task(), &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tdnav");
        report.model.save(&path).unwrap();
        let ckpt = crate::numerics::load_checkpoint(&path).unwrap();

        let mut bigger = config.clone();
        bigger.arch.embed_dim = 16;
        let err = train(
            &bigger,
            &corridor_task(),
            &TrainOptions { init: Some(&ckpt), ..TrainOptions::default() },
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::ArchMismatch { .. }), "got {err}");
    }

    #[test]
    fn resume_continues_from_checkpoint_parameters() {
        let config = small_config();
        let first = train(&config, &corridor_task(), &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tdnav");
        first.model.save(&path).unwrap();
        let ckpt = crate::numerics::load_checkpoint(&path).unwrap();

        let resumed = train(
            &config,
            &corridor_task(),
            &TrainOptions { init: Some(&ckpt), ..TrainOptions::default() },
        )
        .unwrap();
        assert_ne!(resumed.model.core(), first.model.core(), "training moved on");
    }

    /// Convergence on the 1x3 corridor: after 50k frames the policy's
    /// episode lengths must sit within one step of the BFS optimum,
    /// averaged over the last 20 episodes.
    #[test]
    fn corridor_training_reaches_the_bfs_optimum() {
        let tasks = corridor_task();
        let scene = tasks[0].scene().clone();
        let goal = tasks[0].goal();
        // Wider fusion and a doubled learning rate: the task is tiny, and
        // the default settings only escape the uniform-policy plateau after
        // the 50k budget is spent.
        let mut config = TrainConfig {
            frames_budget: 50_000,
            episode_cap: 40,
            ..small_config()
        };
        config.arch.embed_dim = 16;
        config.arch.fuse_dim = 16;
        config.optim.learning_rate = 1.4e-3;
        let report = train(&config, &tasks, &TrainOptions::default()).unwrap();

        let tail: Vec<&MetricsRow> = report.metrics.iter().rev().take(20).collect();
        assert_eq!(tail.len(), 20);
        let mean_len: f64 = tail.iter().map(|r| r.episode_len as f64).sum::<f64>() / 20.0;

        // Exact mean optimum over the uniform start distribution.
        let mut sum = 0.0f64;
        let mut n = 0.0f64;
        for rank in 0..scene.free_pose_count() {
            let pose = scene.free_pose(rank);
            if pose == goal {
                continue;
            }
            sum += shortest_path_length(&scene, pose, goal).unwrap() as f64;
            n += 1.0;
        }
        let mean_optimum = sum / n;
        assert!(
            (mean_len - mean_optimum).abs() <= 1.0,
            "mean over last 20 episodes {mean_len} vs optimum {mean_optimum}"
        );
        // A converged policy also passes a fresh evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eval = evaluate(
            &report.model,
            &tasks,
            &EvalOptions { episodes_per_task: 20, episode_cap: 40, success_cap: 40, ..EvalOptions::default() },
            &mut rng,
        )
        .unwrap();
        assert!(eval.success_rate >= 0.95, "success {}", eval.success_rate);
    }
}
