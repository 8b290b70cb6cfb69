//! The Table-I comparison: every method trained (where applicable) and
//! evaluated on one shared task list with one shared start-pose stream,
//! then summarized as per-method medians over seeds plus learning
//! curves on a common frame axis.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{one_step_q_train, per_target_a3c_train};
use crate::gridworld::{save_scene, Scene};
use crate::manifest::{sha256_hex, Manifest};
use crate::trainer::{
    evaluate, evaluate_with, train, EvalOptions, EvalReport, MetricsRow, OracleAgent,
    RandomAgent, Task, TrainConfig, TrainOptions,
};
use crate::util::splitmix64;

use super::stats::median;
use super::ExperimentError;

/// Table-I methods, worst to best expected mean length, with the
/// oracle last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    RandomWalk,
    OneStepQ,
    A3c1,
    A3c4,
    SingleBranch,
    Final,
    ShortestPath,
}

pub const METHODS: [Method; 7] = [
    Method::RandomWalk,
    Method::OneStepQ,
    Method::A3c1,
    Method::A3c4,
    Method::SingleBranch,
    Method::Final,
    Method::ShortestPath,
];

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::RandomWalk => "random-walk",
            Method::OneStepQ => "one-step-q",
            Method::A3c1 => "a3c-1",
            Method::A3c4 => "a3c-4",
            Method::SingleBranch => "single-branch",
            Method::Final => "final",
            Method::ShortestPath => "shortest-path",
        }
    }

    /// True for methods that consume the frame budget.
    pub fn is_trained(self) -> bool {
        !matches!(self, Method::RandomWalk | Method::ShortestPath)
    }

    /// CLI spelling used by `navlab baseline --method`.
    pub fn from_cli(name: &str) -> Option<Method> {
        match name {
            "random" => Some(Method::RandomWalk),
            "shortest" => Some(Method::ShortestPath),
            "q1" => Some(Method::OneStepQ),
            "a3c1" => Some(Method::A3c1),
            "a3c4" => Some(Method::A3c4),
            "single-branch" => Some(Method::SingleBranch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonSpec {
    pub scenes: Vec<Arc<Scene>>,
    /// Leading targets of each scene that become tasks.
    pub targets_per_scene: usize,
    pub seeds: Vec<u64>,
    /// Per-method frame budget, arch, optimizer, and training caps.
    /// Per-target methods split the budget evenly across tasks.
    pub config: TrainConfig,
    pub eval_episodes: u32,
    /// Episode cap and success cap of the shared evaluation.
    pub eval_cap: u32,
    /// Buckets per learning curve.
    pub curve_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: &'static str,
    /// Medians over seeds of the evaluation aggregates.
    pub mean_length: f64,
    pub success_rate: f64,
    pub path_ratio: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// One row per Table-I method, in `METHODS` order.
    pub rows: Vec<MethodRow>,
    /// Per trained method: (global frames, median mean episode length).
    pub curves: Vec<(&'static str, Vec<(f64, f64)>)>,
    pub tasks: usize,
}

fn build_tasks(spec: &ComparisonSpec) -> Result<Vec<Task>, ExperimentError> {
    let mut tasks = Vec::new();
    for scene in &spec.scenes {
        if scene.targets().len() < spec.targets_per_scene {
            return Err(ExperimentError::TooFewTargets {
                scene_id: scene.scene_id(),
                got: scene.targets().len(),
                need: spec.targets_per_scene,
            });
        }
        for &goal in &scene.targets()[..spec.targets_per_scene] {
            tasks.push(Task::new(scene.clone(), goal, tasks.len() as u32)?);
        }
    }
    Ok(tasks)
}

/// Curve points on a shared global-frame axis. Per-target methods log
/// task-local frames, which scale by the task count: in round-robin
/// training all tasks advance together, so one local frame costs
/// `tasks` global frames.
fn bucket_curve(
    rows: &[MetricsRow],
    frame_scale: f64,
    budget: u64,
    buckets: usize,
) -> Vec<(f64, f64)> {
    let mut sums = vec![0.0f64; buckets];
    let mut counts = vec![0usize; buckets];
    let width = budget as f64 / buckets as f64;
    for row in rows {
        let global = row.frames as f64 * frame_scale;
        let b = ((global / width) as usize).min(buckets - 1);
        sums[b] += row.episode_len as f64;
        counts[b] += 1;
    }
    (0..buckets)
        .filter(|&b| counts[b] > 0)
        .map(|b| (width * (b as f64 + 1.0), sums[b] / counts[b] as f64))
        .collect()
}

/// Medians across per-seed curves, bucket by bucket; buckets missing in
/// a seed are skipped for that seed.
fn median_curve(per_seed: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let mut xs: Vec<f64> = per_seed
        .iter()
        .flat_map(|c| c.iter().map(|&(x, _)| x))
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    xs.into_iter()
        .filter_map(|x| {
            let vals: Vec<f64> = per_seed
                .iter()
                .filter_map(|c| {
                    c.iter()
                        .find(|&&(cx, _)| cx == x)
                        .map(|&(_, y)| y)
                })
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some((x, median(&vals)))
            }
        })
        .collect()
}

struct SeedOutcome {
    eval: EvalReport,
    curve: Option<Vec<(f64, f64)>>,
}

fn run_method(
    method: Method,
    spec: &ComparisonSpec,
    tasks: &[Task],
    seed: u64,
) -> Result<SeedOutcome, ExperimentError> {
    let n_tasks = tasks.len() as u64;
    let eval_opts = EvalOptions {
        episodes_per_task: spec.eval_episodes,
        episode_cap: spec.eval_cap,
        success_cap: spec.eval_cap,
        argmax: false,
        slip_prob: 0.0,
    };
    // One eval seed per training seed, shared by every method: with the
    // evaluator's split rng this pins identical start poses per episode
    // across methods.
    let mut eval_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xE7A1_0F00_D5ED_5EED));
    let mut train_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));

    match method {
        Method::RandomWalk => {
            let eval = evaluate_with(|_| Ok(RandomAgent), tasks, &eval_opts, &mut eval_rng)?;
            Ok(SeedOutcome { eval, curve: None })
        }
        Method::ShortestPath => {
            let eval =
                evaluate_with(|t| Ok(OracleAgent::new(t)), tasks, &eval_opts, &mut eval_rng)?;
            Ok(SeedOutcome { eval, curve: None })
        }
        Method::Final | Method::SingleBranch => {
            let mut config = spec.config.clone();
            config.seed = seed;
            config.single_branch = method == Method::SingleBranch;
            let report = train(&config, tasks, &TrainOptions::default())?;
            let eval = evaluate(&report.model, tasks, &eval_opts, &mut eval_rng)?;
            let curve = bucket_curve(
                &report.metrics,
                1.0,
                config.frames_budget,
                spec.curve_points,
            );
            Ok(SeedOutcome {
                eval,
                curve: Some(curve),
            })
        }
        Method::A3c1 | Method::A3c4 => {
            let threads = if method == Method::A3c4 { 4 } else { 1 };
            let mut config = spec.config.clone();
            config.frames_budget = (spec.config.frames_budget / n_tasks).max(1);
            let mut nets = Vec::with_capacity(tasks.len());
            let mut all_rows = Vec::new();
            for task in tasks {
                let mut rng = ChaCha8Rng::seed_from_u64(train_rng.random());
                let report = per_target_a3c_train(&config, task, threads, &mut rng)?;
                all_rows.extend(report.metrics);
                nets.push(report.net);
            }
            let eval = evaluate_with(
                |t| nets[t.task_id() as usize].agent(t.scene(), false),
                tasks,
                &eval_opts,
                &mut eval_rng,
            )?;
            let curve = bucket_curve(
                &all_rows,
                n_tasks as f64,
                spec.config.frames_budget,
                spec.curve_points,
            );
            Ok(SeedOutcome {
                eval,
                curve: Some(curve),
            })
        }
        Method::OneStepQ => {
            let mut config = spec.config.clone();
            config.frames_budget = (spec.config.frames_budget / n_tasks).max(1);
            let mut nets = Vec::with_capacity(tasks.len());
            let mut all_rows = Vec::new();
            for task in tasks {
                let mut rng = ChaCha8Rng::seed_from_u64(train_rng.random());
                let report = one_step_q_train(&config, task, &mut rng)?;
                all_rows.extend(report.metrics);
                nets.push(report.net);
            }
            let eval = evaluate_with(
                |t| nets[t.task_id() as usize].agent(t.scene()),
                tasks,
                &eval_opts,
                &mut eval_rng,
            )?;
            let curve = bucket_curve(
                &all_rows,
                n_tasks as f64,
                spec.config.frames_budget,
                spec.curve_points,
            );
            Ok(SeedOutcome {
                eval,
                curve: Some(curve),
            })
        }
    }
}

/// Runs all seven methods over every seed and writes `table.csv`,
/// `curves.csv`, the scene files, and a manifest into `out`.
pub fn run_baseline_comparison(
    spec: &ComparisonSpec,
    out: &Path,
) -> Result<ComparisonReport, ExperimentError> {
    if spec.seeds.is_empty() {
        return Err(ExperimentError::TooFewSeeds {
            context: "baseline comparison",
            need: 1,
            got: 0,
        });
    }
    fs::create_dir_all(out)?;
    let tasks = build_tasks(spec)?;

    let mut manifest = Manifest::begin(
        concat!("navlab-core ", env!("CARGO_PKG_VERSION")),
        "baseline-comparison",
        spec.seeds.clone(),
    );
    manifest.config_sha256 = Some(sha256_hex(format!("{spec:?}").as_bytes()));
    let scene_dir = out.join("scenes");
    fs::create_dir_all(&scene_dir)?;
    for scene in &spec.scenes {
        let path = scene_dir.join(format!("scene_{}.navscn", scene.scene_id()));
        save_scene(scene, &path)?;
        manifest.add_input(&path)?;
    }
    manifest.write(out)?;

    let mut rows = Vec::with_capacity(METHODS.len());
    let mut curves = Vec::new();
    for method in METHODS {
        let mut lengths = Vec::new();
        let mut successes = Vec::new();
        let mut ratios = Vec::new();
        let mut seed_curves = Vec::new();
        for &seed in &spec.seeds {
            let outcome = run_method(method, spec, &tasks, seed)?;
            lengths.push(outcome.eval.mean_length);
            successes.push(outcome.eval.success_rate);
            ratios.push(outcome.eval.mean_path_ratio);
            if let Some(c) = outcome.curve {
                seed_curves.push(c);
            }
        }
        rows.push(MethodRow {
            method: method.label(),
            mean_length: median(&lengths),
            success_rate: median(&successes),
            path_ratio: median(&ratios),
            seeds: spec.seeds.len(),
        });
        if method.is_trained() {
            curves.push((method.label(), median_curve(&seed_curves)));
        }
    }

    let report = ComparisonReport {
        rows,
        curves,
        tasks: tasks.len(),
    };
    let table_path = out.join("table.csv");
    fs::write(&table_path, table_csv(&report))?;
    let curves_path = out.join("curves.csv");
    fs::write(&curves_path, curves_csv(&report))?;
    manifest.add_output(&table_path)?;
    manifest.add_output(&curves_path)?;
    manifest.finish_ok();
    manifest.write(out)?;
    Ok(report)
}

/// `method,mean_length,success_rate,path_ratio,seeds`, METHODS order.
pub fn table_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("method,mean_length,success_rate,path_ratio,seeds\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{}",
            row.method, row.mean_length, row.success_rate, row.path_ratio, row.seeds
        );
    }
    out
}

/// Wide CSV: `frames` plus one mean-length column per trained method.
pub fn curves_csv(report: &ComparisonReport) -> String {
    let mut xs: Vec<f64> = report
        .curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|&(x, _)| x))
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let mut out = String::from("frames");
    for (name, _) in &report.curves {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for x in xs {
        let _ = write!(out, "{x}");
        for (_, curve) in &report.curves {
            match curve.iter().find(|&&(cx, _)| cx == x) {
                Some(&(_, y)) => {
                    let _ = write!(out, ",{y:.4}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use crate::gridworld::generate_scene;
    use crate::model::ArchConfig;

    use super::*;

    fn tiny_spec(dir_budget: u64, seeds: Vec<u64>) -> ComparisonSpec {
        let scenes = vec![
            Arc::new(generate_scene(71, 5, 5, 0.3, 2, 8, 0.5).unwrap()),
            Arc::new(generate_scene(72, 5, 5, 0.3, 2, 8, 0.5).unwrap()),
        ];
        let mut config = TrainConfig {
            frames_budget: dir_budget,
            workers: 1,
            episode_cap: 60,
            eval_every: 1_000_000,
            ..TrainConfig::default()
        };
        config.arch = ArchConfig {
            percept_dim: 8,
            embed_dim: 16,
            fuse_dim: 16,
            ..ArchConfig::default()
        };
        config.optim.learning_rate = 1.4e-3;
        ComparisonSpec {
            scenes,
            targets_per_scene: 2,
            seeds,
            config,
            eval_episodes: 8,
            eval_cap: 60,
            curve_points: 10,
        }
    }

    #[test]
    fn emits_the_seven_table_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(4_000, vec![1, 2, 3]);
        let report = run_baseline_comparison(&spec, dir.path()).unwrap();

        let labels: Vec<&str> = report.rows.iter().map(|r| r.method).collect();
        assert_eq!(
            labels,
            vec![
                "random-walk",
                "one-step-q",
                "a3c-1",
                "a3c-4",
                "single-branch",
                "final",
                "shortest-path"
            ]
        );
        assert_eq!(report.tasks, 4);
        for row in &report.rows {
            assert!(row.success_rate >= 0.0 && row.success_rate <= 1.0);
            assert!(row.mean_length >= 1.0);
            assert_eq!(row.seeds, 3);
        }
        assert_eq!(report.curves.len(), 5, "one curve per trained method");
    }

    #[test]
    fn shortest_path_lower_bounds_every_method() {
        // Shared start streams make the oracle a per-episode lower
        // bound, so this holds at any budget, even an untrained one.
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(2_000, vec![5]);
        let report = run_baseline_comparison(&spec, dir.path()).unwrap();
        let oracle = report
            .rows
            .iter()
            .find(|r| r.method == "shortest-path")
            .unwrap();
        for row in &report.rows {
            assert!(
                oracle.mean_length <= row.mean_length + 1e-9,
                "{} beat the oracle: {} < {}",
                row.method,
                row.mean_length,
                oracle.mean_length
            );
            assert!(row.path_ratio >= 1.0 - 1e-9);
        }
        assert_eq!(oracle.path_ratio, 1.0);
        assert_eq!(oracle.success_rate, 1.0);
    }

    #[test]
    fn outputs_parse_back_and_reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(2_000, vec![4]);
        run_baseline_comparison(&spec, dir.path()).unwrap();
        let table1 = fs::read(dir.path().join("table.csv")).unwrap();
        let curves1 = fs::read(dir.path().join("curves.csv")).unwrap();

        let manifest = Manifest::read(dir.path()).unwrap();
        assert_eq!(manifest.status, "ok");
        assert_eq!(manifest.inputs.len(), 2, "two scene files hashed");
        assert!(manifest.config_sha256.is_some());
        assert_eq!(manifest.outputs.len(), 2);

        let parsed =
            super::super::read_wide_csv(&dir.path().join("curves.csv")).unwrap();
        assert_eq!(parsed.x_label, "frames");
        assert_eq!(parsed.series_names.len(), 5);

        let dir2 = tempfile::tempdir().unwrap();
        run_baseline_comparison(&spec, dir2.path()).unwrap();
        assert_eq!(table1, fs::read(dir2.path().join("table.csv")).unwrap());
        assert_eq!(curves1, fs::read(dir2.path().join("curves.csv")).unwrap());
    }

    #[test]
    fn scene_without_enough_targets_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec(1_000, vec![1]);
        spec.targets_per_scene = 9;
        let err = run_baseline_comparison(&spec, dir.path()).unwrap_err();
        assert!(matches!(err, ExperimentError::TooFewTargets { need: 9, .. }), "{err}");
    }

    #[test]
    fn cli_method_names_round_trip() {
        for (name, label) in [
            ("random", "random-walk"),
            ("shortest", "shortest-path"),
            ("q1", "one-step-q"),
            ("a3c1", "a3c-1"),
            ("a3c4", "a3c-4"),
            ("single-branch", "single-branch"),
        ] {
            assert_eq!(Method::from_cli(name).unwrap().label(), label);
        }
        assert!(Method::from_cli("dagger").is_none());
    }
}
