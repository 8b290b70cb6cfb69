//! Embedding geometry: does the shared stream map nearby poses to
//! nearby embeddings? Measured as the Pearson correlation between
//! embedding distance and cell distance over sampled pose pairs, with
//! a 2-D PCA projection for plotting.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{Heading, Pose, Scene};
use crate::model::{embed_stack, NavModel, ObservationStack};

use super::stats::pearson;
use super::ExperimentError;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub x: u16,
    pub y: u16,
    pub heading: Heading,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingReport {
    pub r: f64,
    pub p_value: f64,
    /// Pose pairs actually correlated (all pairs, or `max_pairs` samples).
    pub pairs: usize,
    pub poses: usize,
    pub projection: Vec<ProjectionRow>,
}

/// Embeds `reset_history(percept(pose))` for every free pose and
/// correlates embedding Euclidean distance with cell Euclidean
/// distance. Constant embeddings are an explicit error, never r = 0.
pub fn embedding_geometry(
    model: &NavModel,
    scene: &Scene,
    max_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingReport, ExperimentError> {
    let core = model.core();
    let n = scene.free_pose_count();
    let mut poses = Vec::with_capacity(n);
    let mut embeds: Vec<Vec<f64>> = Vec::with_capacity(n);
    for rank in 0..n {
        let pose = scene.free_pose(rank);
        let stack = ObservationStack::reset_from_values(scene.percept(pose));
        let stream = embed_stack(&core, &stack)?;
        poses.push(pose);
        embeds.push(stream.output.iter().map(|&v| v as f64).collect());
    }
    if embeds.iter().all(|e| *e == embeds[0]) {
        return Err(ExperimentError::ConstantInput);
    }

    let all_pairs = n * (n - 1) / 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let push_pair = |i: usize, j: usize, xs: &mut Vec<f64>, ys: &mut Vec<f64>| {
        let d2: f64 = embeds[i]
            .iter()
            .zip(&embeds[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        xs.push(d2.sqrt());
        let dx = poses[i].x as f64 - poses[j].x as f64;
        let dy = poses[i].y as f64 - poses[j].y as f64;
        ys.push(dx.hypot(dy));
    };
    if all_pairs <= max_pairs {
        for i in 0..n {
            for j in (i + 1)..n {
                push_pair(i, j, &mut xs, &mut ys);
            }
        }
    } else {
        let mut seen = std::collections::BTreeSet::new();
        while seen.len() < max_pairs {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                push_pair(key.0, key.1, &mut xs, &mut ys);
            }
        }
    }
    let (r, p_value) = pearson(&xs, &ys)?;

    let projection = project_2d(&poses, &embeds);
    Ok(EmbeddingReport {
        r,
        p_value,
        pairs: xs.len(),
        poses: n,
        projection,
    })
}

/// PCA onto the top two principal components. Eigenvector signs are
/// pinned (largest-magnitude component positive) so output is stable.
fn project_2d(poses: &[Pose], embeds: &[Vec<f64>]) -> Vec<ProjectionRow> {
    let n = embeds.len();
    let d = embeds[0].len();
    let mut mean = vec![0.0f64; d];
    for e in embeds {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| embeds[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0).max(1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut axes = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
        let lead = axis
            .iter()
            .cloned()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            for v in &mut axis {
                *v = -*v;
            }
        }
        axes.push(axis);
    }
    poses
        .iter()
        .zip(centered.row_iter())
        .map(|(pose, row)| {
            let mut pc = [0.0f64; 2];
            for (k, axis) in axes.iter().enumerate() {
                pc[k] = row.iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            ProjectionRow {
                x: pose.x,
                y: pose.y,
                heading: pose.heading,
                pc1: pc[0],
                pc2: pc.get(1).copied().unwrap_or(0.0),
            }
        })
        .collect()
}

/// Projection CSV: `x,y,heading,pc1,pc2`, one row per free pose.
pub fn projection_csv(report: &EmbeddingReport) -> String {
    let mut out = String::from("x,y,heading,pc1,pc2\n");
    for row in &report.projection {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            row.x, row.y, row.heading, row.pc1, row.pc2
        );
    }
    out
}

pub fn write_projection_csv(report: &EmbeddingReport, path: &Path) -> Result<(), ExperimentError> {
    std::fs::write(path, projection_csv(report))?;
    Ok(())
}
