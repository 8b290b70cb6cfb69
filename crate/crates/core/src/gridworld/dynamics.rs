//! Pose dynamics: action application, slip noise, rewards, and start
//! sampling.

use rand::Rng;

use super::{Action, Pose, Scene, SceneError};

/// Reward for reaching the goal pose exactly.
pub const GOAL_REWARD: f32 = 10.0;
/// Per-step time penalty on every non-terminal transition.
pub const STEP_PENALTY: f32 = -0.01;

/// Result of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_pose: Pose,
    pub reward: f32,
    pub done: bool,
    pub collided: bool,
}

/// Noiseless effect of one action: turns rotate in place and never
/// collide; moves translate along or against the heading, staying put
/// with `collided = true` when the destination is blocked or outside the
/// grid. Shared by the environment step and the shortest-path oracle so
/// both walk the identical pose graph.
pub(super) fn apply_action(scene: &Scene, pose: Pose, action: Action) -> (Pose, bool) {
    match action {
        Action::TurnLeft => (Pose { heading: pose.heading.left(), ..pose }, false),
        Action::TurnRight => (Pose { heading: pose.heading.right(), ..pose }, false),
        Action::MoveForward | Action::MoveBackward => {
            let (dx, dy) = pose.heading.delta();
            let sign = if action == Action::MoveForward { 1 } else { -1 };
            let (nx, ny) = (pose.x as i32 + sign * dx, pose.y as i32 + sign * dy);
            if scene.is_free(nx, ny) {
                (Pose::new(nx as u16, ny as u16, pose.heading), false)
            } else {
                (pose, true)
            }
        }
    }
}

/// Executes one transition. With probability `slip_prob` the commanded
/// action is first replaced by a uniformly random *other* action; the rng
/// is untouched when `slip_prob` is zero, so noiseless runs stay aligned
/// across methods sharing an rng stream. The episode ends exactly when
/// the next pose equals `goal` in both cell and heading.
pub fn step(
    scene: &Scene,
    pose: Pose,
    action: Action,
    goal: Pose,
    slip_prob: f64,
    rng: &mut impl Rng,
) -> StepOutcome {
    assert!(
        (0.0..=0.5).contains(&slip_prob),
        "slip_prob {slip_prob} outside [0, 0.5]"
    );
    let mut action = action;
    if slip_prob > 0.0 && rng.random::<f64>() < slip_prob {
        let r = rng.random_range(0..Action::COUNT - 1);
        let idx = if r >= action.index() { r + 1 } else { r };
        action = Action::from_index(idx);
    }
    let (next_pose, collided) = apply_action(scene, pose, action);
    let done = next_pose == goal;
    StepOutcome {
        next_pose,
        reward: if done { GOAL_REWARD } else { STEP_PENALTY },
        done,
        collided,
    }
}

/// Draws a start pose uniformly from the free poses excluding `goal`
/// itself, by drawing from a range one short and shifting past the goal's
/// rank. Exactly one rng draw per call.
pub fn sample_start(scene: &Scene, goal: Pose, rng: &mut impl Rng) -> Result<Pose, SceneError> {
    let n = scene.free_pose_count();
    if n < 2 {
        return Err(SceneError::NoStartCandidates);
    }
    let goal_rank = scene.pose_rank(goal);
    let draw = rng.random_range(0..n - 1);
    let rank = if draw >= goal_rank { draw + 1 } else { draw };
    Ok(scene.free_pose(rank))
}
