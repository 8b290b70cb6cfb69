//! Scene generalization: pre-train the shared core on a pool of scenes,
//! then measure how fast a frozen-core model adapts to an unseen scene
//! compared with training from scratch.
//!
//! Adaptation progress is read off the trainer's periodic checkpoints:
//! every checkpoint is re-loaded and evaluated on the same fixed episode
//! set, giving a success-versus-frames curve whose first crossing of
//! [`THRESHOLD_SUCCESS`] is the frames-to-threshold. A single-branch
//! model evaluated zero-shot on the unseen scene, with a random-walk
//! control on identical episodes, completes the picture.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{save_scene, Scene};
use crate::manifest::Manifest;
use crate::model::NavModel;
use crate::numerics::load_checkpoint;
use crate::trainer::{
    evaluate, evaluate_with, train, EvalOptions, RandomAgent, Task, TrainConfig, TrainOptions,
};
use crate::UpdateMode;

use super::stats::median;
use super::ExperimentError;

/// Pool sizes swept during pre-training.
pub const PRETRAIN_COUNTS: [usize; 4] = [1, 2, 4, 8];

/// Success rate a checkpoint must reach to count as converged.
pub const THRESHOLD_SUCCESS: f64 = 0.8;

/// Evaluation episodes behind each threshold measurement.
pub const THRESHOLD_EPISODES: u32 = 50;

#[derive(Debug, Clone)]
pub struct SceneGenSpec {
    /// Pre-training scenes; the first N form each pool subset.
    pub pool: Vec<Arc<Scene>>,
    /// Adaptation scene; must not appear in the pool.
    pub unseen: Arc<Scene>,
    /// Training tasks per scene, drawn from the head of its target list.
    pub targets_per_scene: usize,
    pub seeds: Vec<u64>,
    /// Configuration for pre-training runs; `seed` is overwritten.
    pub pretrain_config: TrainConfig,
    /// Configuration for adaptation runs; `eval_every` sets the
    /// checkpoint cadence and therefore the threshold resolution.
    pub adapt_config: TrainConfig,
    /// Episode and success cap for threshold evaluations.
    pub eval_cap: u32,
    /// Episodes per task for the zero-shot comparison.
    pub zero_shot_episodes: u32,
    /// Episode cap for the zero-shot comparison; success only requires
    /// reaching the goal within the cap.
    pub zero_shot_cap: u32,
}

/// Zero-shot success of the single-branch model against a random walk
/// on identical episodes, one row per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotRow {
    pub seed: u64,
    pub model_success: f64,
    pub random_success: f64,
}

#[derive(Debug, Clone)]
pub struct SceneGenReport {
    /// Per setting (scratch first, then transfer-N in pool order): one
    /// frames-to-threshold per seed, `None` when the budget ran out
    /// below threshold.
    pub frames_to_threshold: Vec<(String, Vec<Option<u64>>)>,
    /// Lower median over seeds; `None` when the median seed never
    /// crossed the threshold.
    pub median_frames: Vec<(String, Option<u64>)>,
    /// Median success-versus-frames curve per setting.
    pub curves: Vec<(String, Vec<(u64, f64)>)>,
    pub zero_shot: Vec<ZeroShotRow>,
    pub seeds: usize,
}

/// First frames value whose success rate reaches [`THRESHOLD_SUCCESS`].
/// `evals` must be ordered by frames.
pub fn frames_to_eval_threshold(evals: &[(u64, f64)]) -> Option<u64> {
    evals
        .iter()
        .find(|(_, success)| *success >= THRESHOLD_SUCCESS)
        .map(|(frames, _)| *frames)
}

/// Lower median with unreached thresholds treated as beyond any budget.
fn lower_median_frames(per_seed: &[Option<u64>]) -> Option<u64> {
    let mut v: Vec<u64> = per_seed.iter().map(|o| o.unwrap_or(u64::MAX)).collect();
    v.sort_unstable();
    let m = v[(v.len() - 1) / 2];
    (m != u64::MAX).then_some(m)
}

fn checkpoint_frames(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.strip_prefix("ckpt_")?.parse().ok()
}

/// Tasks over the head of each scene's target list, ids globally unique
/// across the batch.
fn scene_tasks(scenes: &[Arc<Scene>], per_scene: usize) -> Result<Vec<Task>, ExperimentError> {
    let mut tasks = Vec::new();
    for scene in scenes {
        for &goal in &scene.targets()[..per_scene] {
            tasks.push(Task::new(scene.clone(), goal, tasks.len() as u32)?);
        }
    }
    Ok(tasks)
}

/// Runs the sweep and writes `frames_to_threshold.csv`,
/// `adaptation_curves.csv`, `zero_shot.csv`, and a manifest into `out`.
pub fn run_scene_generalization(
    spec: &SceneGenSpec,
    out: &Path,
) -> Result<SceneGenReport, ExperimentError> {
    validate(spec)?;
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::begin(
        &format!("navlab-core {}", env!("CARGO_PKG_VERSION")),
        "scene-generalization",
        spec.seeds.clone(),
    );
    manifest.config_sha256 = Some(crate::manifest::sha256_hex(format!("{spec:?}").as_bytes()));
    let scene_dir = out.join("scenes");
    std::fs::create_dir_all(&scene_dir)?;
    for scene in spec.pool.iter().chain(std::iter::once(&spec.unseen)) {
        let path = scene_dir.join(format!("scene_{}.navscn", scene.scene_id()));
        save_scene(scene, &path)?;
        manifest.add_input(&path)?;
    }
    manifest.write(out)?;

    match run_all(spec, out, &mut manifest) {
        Ok(report) => {
            manifest.finish_ok();
            manifest.write(out)?;
            Ok(report)
        }
        Err(e) => {
            manifest.finish_failed(&e.to_string());
            manifest.write(out)?;
            Err(e)
        }
    }
}

fn validate(spec: &SceneGenSpec) -> Result<(), ExperimentError> {
    if spec.seeds.is_empty() {
        return Err(ExperimentError::TooFewSeeds {
            context: "scene generalization",
            need: 1,
            got: 0,
        });
    }
    let need = *PRETRAIN_COUNTS.iter().max().unwrap();
    if spec.pool.len() < need {
        return Err(ExperimentError::TooFewScenes { need, got: spec.pool.len() });
    }
    for (i, scene) in spec.pool.iter().enumerate() {
        if spec.pool[..i].iter().any(|s| s.scene_id() == scene.scene_id()) {
            return Err(ExperimentError::SceneNotHeldOut { scene_id: scene.scene_id() });
        }
    }
    if spec.pool.iter().any(|s| s.scene_id() == spec.unseen.scene_id()) {
        return Err(ExperimentError::SceneNotHeldOut { scene_id: spec.unseen.scene_id() });
    }
    for scene in spec.pool.iter().chain(std::iter::once(&spec.unseen)) {
        if scene.targets().len() < spec.targets_per_scene {
            return Err(ExperimentError::TooFewTargets {
                scene_id: scene.scene_id(),
                got: scene.targets().len(),
                need: spec.targets_per_scene,
            });
        }
    }
    Ok(())
}

fn run_all(
    spec: &SceneGenSpec,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<SceneGenReport, ExperimentError> {
    let settings: Vec<String> = std::iter::once("scratch".to_string())
        .chain(PRETRAIN_COUNTS.iter().map(|c| format!("transfer-{c}")))
        .collect();
    let unseen_tasks = scene_tasks(std::slice::from_ref(&spec.unseen), spec.targets_per_scene)?;

    // per setting, per seed
    let mut thresholds: Vec<Vec<Option<u64>>> = vec![Vec::new(); settings.len()];
    let mut curves: Vec<Vec<Vec<(u64, f64)>>> = vec![Vec::new(); settings.len()];
    let mut zero_shot = Vec::new();

    for &seed in &spec.seeds {
        let pre_dir = out.join("pretrain").join(format!("seed-{seed}"));
        std::fs::create_dir_all(&pre_dir)?;

        // Pre-train one core per pool size and stash its checkpoint.
        let mut core_ckpts: Vec<PathBuf> = Vec::new();
        for &count in &PRETRAIN_COUNTS {
            let tasks = scene_tasks(&spec.pool[..count], spec.targets_per_scene)?;
            let mut config = spec.pretrain_config.clone();
            config.seed = crate::util::splitmix64(seed ^ ((count as u64) << 24));
            let report = train(&config, &tasks, &TrainOptions::default())?;
            let path = pre_dir.join(format!("core-{count}.tdnav"));
            report.model.save(&path)?;
            manifest.add_output(&path)?;
            core_ckpts.push(path);
        }

        // Adaptation runs: scratch, then one frozen-core run per pool
        // size, all trained on identical unseen-scene tasks.
        for (si, setting) in settings.iter().enumerate() {
            let run_dir = out.join("adapt").join(setting).join(format!("seed-{seed}"));
            std::fs::create_dir_all(&run_dir)?;
            let mut config = spec.adapt_config.clone();
            config.seed = crate::util::splitmix64(seed ^ ((si as u64) << 40) ^ 0xADA9);
            let report = if si == 0 {
                train(
                    &config,
                    &unseen_tasks,
                    &TrainOptions { out_dir: Some(&run_dir), ..TrainOptions::default() },
                )?
            } else {
                let ckpt = load_checkpoint(&core_ckpts[si - 1])?;
                train(
                    &config,
                    &unseen_tasks,
                    &TrainOptions {
                        out_dir: Some(&run_dir),
                        init: Some(&ckpt),
                        freeze_core: true,
                    },
                )?
            };
            let curve = success_curve(&report, &config, &unseen_tasks, spec.eval_cap, seed)?;
            thresholds[si].push(frames_to_eval_threshold(&curve));
            curves[si].push(curve);
        }

        // Zero-shot: a single-branch model pre-trained on the full pool,
        // dropped onto the unseen scene against a random walk.
        let mut config = spec.pretrain_config.clone();
        config.single_branch = true;
        config.seed = crate::util::splitmix64(seed ^ 0x515B);
        let pool_tasks = scene_tasks(&spec.pool, spec.targets_per_scene)?;
        let sb = train(&config, &pool_tasks, &TrainOptions::default())?;
        let sb_path = pre_dir.join("single-branch.tdnav");
        sb.model.save(&sb_path)?;
        manifest.add_output(&sb_path)?;
        let opts = EvalOptions {
            episodes_per_task: spec.zero_shot_episodes,
            episode_cap: spec.zero_shot_cap,
            success_cap: spec.zero_shot_cap.saturating_add(1),
            argmax: false,
            slip_prob: 0.0,
        };
        let zs_seed = crate::util::splitmix64(seed ^ 0x2E80_5107);
        let mut rng = ChaCha8Rng::seed_from_u64(zs_seed);
        let model_eval = evaluate(&sb.model, &unseen_tasks, &opts, &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(zs_seed);
        let random_eval = evaluate_with(|_| Ok(RandomAgent), &unseen_tasks, &opts, &mut rng)?;
        zero_shot.push(ZeroShotRow {
            seed,
            model_success: model_eval.success_rate,
            random_success: random_eval.success_rate,
        });
    }

    let frames_to_threshold: Vec<(String, Vec<Option<u64>>)> =
        settings.iter().cloned().zip(thresholds).collect();
    let median_frames: Vec<(String, Option<u64>)> = frames_to_threshold
        .iter()
        .map(|(s, v)| (s.clone(), lower_median_frames(v)))
        .collect();
    let median_curves: Vec<(String, Vec<(u64, f64)>)> = settings
        .iter()
        .cloned()
        .zip(curves.iter().map(|per_seed| median_curve(per_seed)))
        .collect();

    let report = SceneGenReport {
        frames_to_threshold,
        median_frames,
        curves: median_curves,
        zero_shot,
        seeds: spec.seeds.len(),
    };
    write_outputs(&report, out, manifest)?;
    Ok(report)
}

/// Success at each periodic checkpoint plus the final model, measured on
/// one fixed episode set: the rng is reseeded identically per point, so
/// the curve isolates parameter progress.
fn success_curve(
    report: &crate::trainer::TrainReport,
    config: &TrainConfig,
    tasks: &[Task],
    eval_cap: u32,
    seed: u64,
) -> Result<Vec<(u64, f64)>, ExperimentError> {
    let opts = EvalOptions {
        episodes_per_task: THRESHOLD_EPISODES.div_ceil(tasks.len() as u32),
        episode_cap: eval_cap,
        success_cap: eval_cap,
        argmax: false,
        slip_prob: 0.0,
    };
    let eval_seed = crate::util::splitmix64(seed ^ 0x7845_3A1F);
    let mut points = Vec::new();
    for path in &report.checkpoints {
        let Some(frames) = checkpoint_frames(path) else { continue };
        let model = NavModel::load(
            path,
            UpdateMode::Serialized,
            config.optim,
            config.seed,
            config.single_branch,
            config.arch.goal_first,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
        let eval = evaluate(&model, tasks, &opts, &mut rng)?;
        points.push((frames, eval.success_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let eval = evaluate(&report.model, tasks, &opts, &mut rng)?;
    points.push((report.frames, eval.success_rate));
    points.dedup_by_key(|(frames, _)| *frames);
    Ok(points)
}

/// Medians across seeds, aligned by checkpoint index. Periodic
/// checkpoints share exact frame counts across seeds; only the final
/// point varies, so its frames are medianed alongside the success.
fn median_curve(per_seed: &[Vec<(u64, f64)>]) -> Vec<(u64, f64)> {
    let len = per_seed.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let frames: Vec<Option<u64>> = per_seed.iter().map(|c| Some(c[i].0)).collect();
            let success: Vec<f64> = per_seed.iter().map(|c| c[i].1).collect();
            (lower_median_frames(&frames).unwrap(), median(&success))
        })
        .collect()
}

fn write_outputs(
    report: &SceneGenReport,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<(), ExperimentError> {
    let mut thresholds = String::from("setting,seed,frames_to_threshold\n");
    for (setting, per_seed) in &report.frames_to_threshold {
        for (i, frames) in per_seed.iter().enumerate() {
            let cell = frames.map(|f| f.to_string()).unwrap_or_default();
            thresholds.push_str(&format!("{setting},{i},{cell}\n"));
        }
    }
    let thresholds_path = out.join("frames_to_threshold.csv");
    std::fs::write(&thresholds_path, thresholds)?;
    manifest.add_output(&thresholds_path)?;

    let mut grid: std::collections::BTreeMap<u64, Vec<Option<f64>>> =
        std::collections::BTreeMap::new();
    for (si, (_, curve)) in report.curves.iter().enumerate() {
        for &(frames, success) in curve {
            grid.entry(frames).or_insert_with(|| vec![None; report.curves.len()])[si] =
                Some(success);
        }
    }
    let mut curves = String::from("frames");
    for (setting, _) in &report.curves {
        curves.push_str(&format!(",{setting}"));
    }
    curves.push('\n');
    for (frames, row) in &grid {
        curves.push_str(&frames.to_string());
        for cell in row {
            match cell {
                Some(s) => curves.push_str(&format!(",{s:.4}")),
                None => curves.push(','),
            }
        }
        curves.push('\n');
    }
    let curves_path = out.join("adaptation_curves.csv");
    std::fs::write(&curves_path, curves)?;
    manifest.add_output(&curves_path)?;

    let mut zs = String::from("seed,model_success,random_success\n");
    for row in &report.zero_shot {
        zs.push_str(&format!(
            "{},{:.4},{:.4}\n",
            row.seed, row.model_success, row.random_success
        ));
    }
    let zs_path = out.join("zero_shot.csv");
    std::fs::write(&zs_path, zs)?;
    manifest.add_output(&zs_path)?;
    Ok(())
}
