//! Scene construction: obstacle sampling, connectivity repair, target
//! placement, and the precomputed perception table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::percept::build_percept_table;
use super::{Heading, Pose, SceneError};

/// Fixed neighbor order (N, E, S, W) so every BFS visits cells in the
/// same sequence regardless of platform.
pub(super) const NEIGHBOR_DELTAS: [(i32, i32); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

/// Immutable navigation environment: a rectangular grid of free and
/// blocked cells, candidate target poses, and a deterministic synthetic
/// perception table derived from `feature_seed`.
///
/// Scenes never mutate after construction, so one instance can be shared
/// across any number of workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    scene_id: u64,
    width: u16,
    height: u16,
    blocked: Vec<bool>,
    smoothing: f64,
    percept_dim: usize,
    feature_seed: u64,
    obstacle_density: f64,
    targets: Vec<Pose>,
    free_cells: Vec<(u16, u16)>,
    free_rank: Vec<u32>,
    percepts: Vec<f32>,
}

impl Scene {
    /// Builds a scene from explicit parts, validating every invariant:
    /// mask size, targets on free in-bounds cells, no duplicate targets,
    /// and all target cells in one 4-connected free component. The free
    /// space as a whole may be disconnected; only the targets' component
    /// must be shared.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        scene_id: u64,
        width: u16,
        height: u16,
        blocked: Vec<bool>,
        smoothing: f64,
        percept_dim: usize,
        feature_seed: u64,
        obstacle_density: f64,
        targets: Vec<Pose>,
    ) -> Result<Scene, SceneError> {
        if width < 3 || height < 3 {
            return Err(SceneError::TooSmall(width, height));
        }
        check_range("smoothing", smoothing, 0.0, 1.0)?;
        check_range("obstacle_density", obstacle_density, 0.0, 1.0)?;
        if percept_dim == 0 {
            return Err(SceneError::OutOfRange {
                name: "percept_dim",
                value: 0.0,
                lo: 1.0,
                hi: f64::MAX,
            });
        }
        let n_cells = width as usize * height as usize;
        if blocked.len() != n_cells {
            return Err(SceneError::MaskSize {
                got: blocked.len(),
                expected: n_cells,
            });
        }

        for (i, t) in targets.iter().enumerate() {
            let in_bounds = t.x < width && t.y < height;
            if !in_bounds || blocked[t.y as usize * width as usize + t.x as usize] {
                return Err(SceneError::TargetBlocked(t.x, t.y, t.heading));
            }
            if targets[..i].contains(t) {
                return Err(SceneError::DuplicateTarget(t.x, t.y, t.heading));
            }
        }

        let mut free_cells = Vec::new();
        let mut free_rank = vec![u32::MAX; n_cells];
        for y in 0..height {
            for x in 0..width {
                let idx = y as usize * width as usize + x as usize;
                if !blocked[idx] {
                    free_rank[idx] = free_cells.len() as u32;
                    free_cells.push((x, y));
                }
            }
        }
        if free_cells.is_empty() {
            return Err(SceneError::NoFreeCells);
        }

        if let Some(first) = targets.first() {
            let component = flood_fill(
                &blocked,
                width as usize,
                height as usize,
                first.y as usize * width as usize + first.x as usize,
            );
            for t in &targets {
                if !component[t.y as usize * width as usize + t.x as usize] {
                    return Err(SceneError::TargetsDisconnected);
                }
            }
        }

        let percepts = build_percept_table(
            &blocked,
            width as usize,
            height as usize,
            &free_cells,
            feature_seed,
            smoothing,
            percept_dim,
        );

        Ok(Scene {
            scene_id,
            width,
            height,
            blocked,
            smoothing,
            percept_dim,
            feature_seed,
            obstacle_density,
            targets,
            free_cells,
            free_rank,
            percepts,
        })
    }

    pub fn scene_id(&self) -> u64 {
        self.scene_id
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn percept_dim(&self) -> usize {
        self.percept_dim
    }

    pub fn feature_seed(&self) -> u64 {
        self.feature_seed
    }

    pub fn obstacle_density(&self) -> f64 {
        self.obstacle_density
    }

    pub fn targets(&self) -> &[Pose] {
        &self.targets
    }

    pub fn obstacle_mask(&self) -> &[bool] {
        &self.blocked
    }

    pub fn is_blocked(&self, x: u16, y: u16) -> bool {
        self.blocked[y as usize * self.width as usize + x as usize]
    }

    /// Bounds-checked free test over signed coordinates, so dynamics can
    /// probe one step past the boundary without wrapping.
    pub fn is_free(&self, x: i32, y: i32) -> bool {
        x >= 0
            && y >= 0
            && (x as u16) < self.width
            && (y as u16) < self.height
            && !self.blocked[y as usize * self.width as usize + x as usize]
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> &[(u16, u16)] {
        &self.free_cells
    }

    /// Number of valid poses: four headings per free cell.
    pub fn free_pose_count(&self) -> usize {
        self.free_cells.len() * 4
    }

    /// The `rank`-th free pose in (row-major cell, heading) order.
    pub fn free_pose(&self, rank: usize) -> Pose {
        let (x, y) = self.free_cells[rank / 4];
        Pose::new(x, y, Heading::from_index(rank % 4))
    }

    /// Inverse of [`Scene::free_pose`]. Panics on a blocked or
    /// out-of-bounds pose.
    pub fn pose_rank(&self, pose: Pose) -> usize {
        assert!(
            self.is_free(pose.x as i32, pose.y as i32),
            "pose {pose} is not free"
        );
        let cell = pose.y as usize * self.width as usize + pose.x as usize;
        self.free_rank[cell] as usize * 4 + pose.heading.index()
    }

    /// Borrowed percept vector for a pose; the allocation-free path used
    /// by observation assembly.
    pub fn percept(&self, pose: Pose) -> &[f32] {
        let rank = self.pose_rank(pose);
        &self.percepts[rank * self.percept_dim..(rank + 1) * self.percept_dim]
    }
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), SceneError> {
    if value.is_nan() || value < lo || value > hi {
        return Err(SceneError::OutOfRange {
            name,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

/// 4-connected reachability over free cells from `start`.
fn flood_fill(blocked: &[bool], width: usize, height: usize, start: usize) -> Vec<bool> {
    let mut seen = vec![false; blocked.len()];
    if blocked[start] {
        return seen;
    }
    let mut queue = std::collections::VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    while let Some(idx) = queue.pop_front() {
        let (x, y) = ((idx % width) as i32, (idx / width) as i32);
        for (dx, dy) in NEIGHBOR_DELTAS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width as i32 || ny >= height as i32 {
                continue;
            }
            let nidx = ny as usize * width + nx as usize;
            if !blocked[nidx] && !seen[nidx] {
                seen[nidx] = true;
                queue.push_back(nidx);
            }
        }
    }
    seen
}

/// Generates a scene deterministically from its arguments: obstacles are
/// sampled cell-by-cell at `obstacle_density`, the free space is repaired
/// to a single connected component, and `n_targets` distinct target poses
/// are drawn uniformly from the free poses.
pub fn generate_scene(
    seed: u64,
    width: u16,
    height: u16,
    obstacle_density: f64,
    n_targets: usize,
    percept_dim: usize,
    smoothing: f64,
) -> Result<Scene, SceneError> {
    if width < 3 || height < 3 {
        return Err(SceneError::TooSmall(width, height));
    }
    check_range("obstacle_density", obstacle_density, 0.0, 0.4)?;
    check_range("smoothing", smoothing, 0.0, 1.0)?;
    if n_targets == 0 {
        return Err(SceneError::OutOfRange {
            name: "n_targets",
            value: 0.0,
            lo: 1.0,
            hi: f64::MAX,
        });
    }

    let n_cells = width as usize * height as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocked: Vec<bool> = (0..n_cells)
        .map(|_| rng.random::<f64>() < obstacle_density)
        .collect();

    repair_connectivity(&mut blocked, width as usize, height as usize)?;

    let free_pose_count = blocked.iter().filter(|b| !**b).count() * 4;
    if n_targets > free_pose_count {
        return Err(SceneError::TooManyTargets {
            requested: n_targets,
            free: free_pose_count,
        });
    }

    // Rank -> pose mapping matches Scene::free_pose: row-major free cell
    // order, four headings per cell.
    let free_cells: Vec<(u16, u16)> = (0..n_cells)
        .filter(|&i| !blocked[i])
        .map(|i| ((i % width as usize) as u16, (i / width as usize) as u16))
        .collect();
    let targets: Vec<Pose> = rand::seq::index::sample(&mut rng, free_pose_count, n_targets)
        .iter()
        .map(|rank| {
            let (x, y) = free_cells[rank / 4];
            Pose::new(x, y, Heading::from_index(rank % 4))
        })
        .collect();

    Scene::from_parts(
        seed,
        width,
        height,
        blocked,
        smoothing,
        percept_dim,
        seed,
        obstacle_density,
        targets,
    )
}

/// Joins disconnected free regions by un-blocking cells. Each round runs
/// a BFS through the whole grid (blocked cells passable) from the current
/// main component and carves the parent chain to the nearest stranded
/// free cell, so every round merges at least one region.
fn repair_connectivity(
    blocked: &mut [bool],
    width: usize,
    height: usize,
) -> Result<(), SceneError> {
    let n_cells = width * height;
    let Some(first_free) = (0..n_cells).find(|&i| !blocked[i]) else {
        return Err(SceneError::NoFreeCells);
    };

    for _ in 0..n_cells {
        let component = flood_fill(blocked, width, height, first_free);
        let stranded_exists = (0..n_cells).any(|i| !blocked[i] && !component[i]);
        if !stranded_exists {
            return Ok(());
        }

        // Multi-source BFS from the component across all cells, tracking
        // parents; the first stranded free cell reached is the nearest.
        let mut parent = vec![usize::MAX; n_cells];
        let mut seen = component.clone();
        let mut queue: std::collections::VecDeque<usize> =
            (0..n_cells).filter(|&i| component[i]).collect();
        let mut reached = None;
        'search: while let Some(idx) = queue.pop_front() {
            let (x, y) = ((idx % width) as i32, (idx / width) as i32);
            for (dx, dy) in NEIGHBOR_DELTAS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as i32 || ny >= height as i32 {
                    continue;
                }
                let nidx = ny as usize * width + nx as usize;
                if seen[nidx] {
                    continue;
                }
                seen[nidx] = true;
                parent[nidx] = idx;
                if !blocked[nidx] {
                    reached = Some(nidx);
                    break 'search;
                }
                queue.push_back(nidx);
            }
        }

        let Some(mut idx) = reached else {
            // Free cells exist outside the component yet BFS over all
            // cells missed them: impossible on a rectangular grid.
            unreachable!("grid BFS must reach every cell");
        };
        while idx != usize::MAX {
            blocked[idx] = false;
            idx = parent[idx];
        }
    }
    Err(SceneError::RepairFailed(n_cells))
}

#[cfg(test)]
mod tests {
    use super::super::shortest_path_length;
    use super::*;

    #[test]
    fn zero_density_blocks_nothing() {
        let scene = generate_scene(7, 5, 5, 0.0, 2, 16, 0.5).unwrap();
        assert_eq!(scene.free_cells().len(), 25);
        assert_eq!(scene.targets().len(), 2);
        assert_ne!(scene.targets()[0], scene.targets()[1]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(7, 5, 5, 0.3, 2, 16, 0.5).unwrap();
        let b = generate_scene(7, 5, 5, 0.3, 2, 16, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_free_cell_reaches_every_target() {
        let scene = generate_scene(7, 10, 10, 0.2, 3, 16, 0.5).unwrap();
        for &(x, y) in scene.free_cells() {
            for &target in scene.targets() {
                let start = Pose::new(x, y, Heading::North);
                assert!(
                    shortest_path_length(&scene, start, target).is_some(),
                    "({x},{y}) cannot reach {target}"
                );
            }
        }
    }

    #[test]
    fn repair_connects_dense_scenes() {
        for seed in 0..50 {
            let scene = generate_scene(seed, 10, 10, 0.4, 1, 8, 0.5).unwrap();
            let first = scene.free_cells()[0];
            let start_idx = first.1 as usize * 10 + first.0 as usize;
            let component = flood_fill(scene.obstacle_mask(), 10, 10, start_idx);
            for &(x, y) in scene.free_cells() {
                assert!(component[y as usize * 10 + x as usize]);
            }
        }
    }

    #[test]
    fn rejects_undersized_grids() {
        assert!(matches!(
            generate_scene(1, 2, 5, 0.0, 1, 8, 0.5),
            Err(SceneError::TooSmall(2, 5))
        ));
    }

    #[test]
    fn rejects_out_of_range_density() {
        assert!(matches!(
            generate_scene(1, 5, 5, 0.5, 1, 8, 0.5),
            Err(SceneError::OutOfRange { name: "obstacle_density", .. })
        ));
    }

    #[test]
    fn rejects_too_many_targets() {
        // A fully open 3x3 grid has 9 free cells = 36 free poses.
        assert!(matches!(
            generate_scene(1, 3, 3, 0.0, 37, 8, 0.5),
            Err(SceneError::TooManyTargets { requested: 37, free: 36 })
        ));
    }

    #[test]
    fn from_parts_rejects_mask_size_mismatch() {
        let r = Scene::from_parts(0, 3, 3, vec![false; 8], 0.5, 8, 0, 0.0, vec![]);
        assert!(matches!(r, Err(SceneError::MaskSize { got: 8, expected: 9 })));
    }

    #[test]
    fn from_parts_rejects_blocked_target() {
        let mut blocked = vec![false; 9];
        blocked[4] = true;
        let t = Pose::new(1, 1, Heading::North);
        let r = Scene::from_parts(0, 3, 3, blocked, 0.5, 8, 0, 0.0, vec![t]);
        assert!(matches!(r, Err(SceneError::TargetBlocked(1, 1, Heading::North))));
    }

    #[test]
    fn from_parts_rejects_duplicate_targets() {
        let t = Pose::new(1, 1, Heading::East);
        let r = Scene::from_parts(0, 3, 3, vec![false; 9], 0.5, 8, 0, 0.0, vec![t, t]);
        assert!(matches!(r, Err(SceneError::DuplicateTarget(1, 1, Heading::East))));
    }

    #[test]
    fn from_parts_rejects_targets_in_separate_components() {
        // Column x=1 blocked: x=0 and x=2 are disconnected strips.
        let mut blocked = vec![false; 9];
        for y in 0..3 {
            blocked[y * 3 + 1] = true;
        }
        let targets = vec![Pose::new(0, 0, Heading::North), Pose::new(2, 0, Heading::North)];
        let r = Scene::from_parts(0, 3, 3, blocked, 0.5, 8, 0, 0.0, targets);
        assert!(matches!(r, Err(SceneError::TargetsDisconnected)));
    }

    #[test]
    fn from_parts_allows_stranded_nontarget_cells() {
        // (2,2) is free but walled off; targets live in the main region.
        let mut blocked = vec![false; 16];
        blocked[1 * 4 + 2] = true; // (2,1)
        blocked[2 * 4 + 1] = true; // (1,2)
        blocked[2 * 4 + 3] = true; // (3,2)
        blocked[3 * 4 + 2] = true; // (2,3)
        let targets = vec![Pose::new(0, 0, Heading::North)];
        let scene = Scene::from_parts(0, 4, 4, blocked, 0.5, 8, 0, 0.0, targets).unwrap();
        assert!(scene.is_free(2, 2));
    }

    #[test]
    fn pose_rank_round_trips() {
        let scene = generate_scene(3, 6, 6, 0.3, 1, 8, 0.5).unwrap();
        for rank in 0..scene.free_pose_count() {
            assert_eq!(scene.pose_rank(scene.free_pose(rank)), rank);
        }
    }
}
