//! Synthetic perception: deterministic pseudo-random view features with
//! tunable spatial coherence, standing in for a frozen image encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scene::NEIGHBOR_DELTAS;
use super::{Pose, Scene};

/// One observation: a unit-norm feature vector for a (cell, heading) view.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptFrame {
    pub values: Vec<f32>,
}

/// Returns the percept for a pose. Pure and deterministic: the value
/// depends only on the scene's feature seed, smoothing, and the pose.
pub fn observe(scene: &Scene, pose: Pose) -> PerceptFrame {
    PerceptFrame {
        values: scene.percept(pose).to_vec(),
    }
}

/// splitmix64 finalizer; decorrelates per-view seeds derived from small
/// integer coordinates.
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn view_seed(feature_seed: u64, x: u64, y: u64, heading: u64) -> u64 {
    let mut z = feature_seed;
    for v in [x, y, heading] {
        z = splitmix(z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(v));
    }
    z
}

/// Builds the full percept table for a scene's free poses, laid out as
/// `(free_rank * 4 + heading) * dim`. Each view is the base vector of its
/// own cell plus `smoothing`-weighted base vectors of the in-bounds
/// 4-neighbor cells at the same heading, unit-normalized. All accumulation
/// runs in f64; only the final normalized values are cast to f32, keeping
/// the norm within 1e-6 of one.
pub(super) fn build_percept_table(
    blocked: &[bool],
    width: usize,
    height: usize,
    free_cells: &[(u16, u16)],
    feature_seed: u64,
    smoothing: f64,
    dim: usize,
) -> Vec<f32> {
    debug_assert_eq!(blocked.len(), width * height);

    // Base vectors for every cell and heading, blocked cells included:
    // a blocked neighbor still contributes to the views around it.
    let mut bases = vec![0.0f64; width * height * 4 * dim];
    for y in 0..height {
        for x in 0..width {
            for h in 0..4 {
                let seed = view_seed(feature_seed, x as u64, y as u64, h as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let offset = ((y * width + x) * 4 + h) * dim;
                for v in &mut bases[offset..offset + dim] {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
        }
    }

    let base_at = |x: i32, y: i32, h: usize| -> &[f64] {
        let offset = ((y as usize * width + x as usize) * 4 + h) * dim;
        &bases[offset..offset + dim]
    };

    let mut table = vec![0.0f32; free_cells.len() * 4 * dim];
    let mut acc = vec![0.0f64; dim];
    for (rank, &(x, y)) in free_cells.iter().enumerate() {
        for h in 0..4 {
            acc.copy_from_slice(base_at(x as i32, y as i32, h));
            for (dx, dy) in NEIGHBOR_DELTAS {
                let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                if nx < 0 || ny < 0 || nx >= width as i32 || ny >= height as i32 {
                    continue;
                }
                for (a, b) in acc.iter_mut().zip(base_at(nx, ny, h)) {
                    *a += smoothing * b;
                }
            }
            let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
            let out = ((rank * 4 + h) * dim..).take(dim);
            for (i, a) in out.zip(&acc) {
                table[i] = (a / norm) as f32;
            }
        }
    }
    table
}
