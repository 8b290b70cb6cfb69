//! The paper's three studies at desk scale: baseline comparison,
//! target generalization, and scene generalization, plus the
//! embedding-geometry analysis and deterministic SVG plot emission.
//!
//! Every experiment routes all methods through the one evaluation
//! pipeline with identical task lists, caps, and rng seeds, writes its
//! tables as CSV, and leaves a manifest describing inputs and seeds.

use thiserror::Error;

use crate::gridworld::SceneError;
use crate::model::ModelError;
use crate::trainer::TrainError;

mod comparison;
mod embedding;
mod plots;
mod scene_gen;
mod stats;
mod target_gen;

pub use comparison::{
    run_baseline_comparison, ComparisonReport, ComparisonSpec, Method, MethodRow, METHODS,
};
pub use embedding::{
    embedding_geometry, projection_csv, write_projection_csv, EmbeddingReport, ProjectionRow,
};
pub use plots::{bar_chart_svg, line_chart_svg, plot_csv, read_wide_csv, PlotKind, WideCsv};
pub use scene_gen::{
    frames_to_eval_threshold, run_scene_generalization, SceneGenReport, SceneGenSpec,
    ZeroShotRow, PRETRAIN_COUNTS, THRESHOLD_EPISODES, THRESHOLD_SUCCESS,
};
pub use stats::{median, pearson, spearman};
pub use target_gen::{
    bin_held_out, run_target_generalization, BinSample, TargetGenCell, TargetGenReport,
    TargetGenSpec, DISTANCE_BINS, TRAINED_COUNTS,
};

/// Errors from experiment orchestration and the analysis statistics.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("input lengths differ: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("need at least 3 points, got {got}")]
    TooFewPoints { got: usize },
    #[error("constant input: correlation undefined")]
    ConstantInput,
    #[error("{context} needs at least {need} seeds, got {got}")]
    TooFewSeeds {
        context: &'static str,
        need: usize,
        got: usize,
    },
    #[error("scene {scene_id} has {got} candidate targets, need {need}")]
    TooFewTargets {
        scene_id: u64,
        got: usize,
        need: usize,
    },
    #[error("scene pool has {got} scenes, need {need}")]
    TooFewScenes { need: usize, got: usize },
    #[error("scene {scene_id} appears in both the training pool and the held-out set")]
    SceneNotHeldOut { scene_id: u64 },
    #[error("{path} line {line}: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::numerics::NumericsError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
