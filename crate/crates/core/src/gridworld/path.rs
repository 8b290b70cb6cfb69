//! Shortest-path oracle over the directed pose graph whose edges are the
//! four noiseless actions.

use std::collections::VecDeque;

use super::dynamics::apply_action;
use super::{Action, Pose, Scene};

fn pose_id(scene: &Scene, pose: Pose) -> usize {
    (pose.y as usize * scene.width() as usize + pose.x as usize) * 4 + pose.heading.index()
}

/// Minimum number of actions from `start` to `goal`, or `None` when the
/// goal is unreachable. Breadth-first search; edge costs are all one.
pub fn shortest_path_length(scene: &Scene, start: Pose, goal: Pose) -> Option<u32> {
    bfs(scene, start, goal).map(|(len, _)| len)
}

/// One shortest action sequence from `start` to `goal`. Deterministic:
/// ties break by action index order. Replaying the actions through
/// noiseless dynamics visits exactly `len + 1` poses ending at `goal`.
pub fn shortest_path_actions(scene: &Scene, start: Pose, goal: Pose) -> Option<Vec<Action>> {
    bfs(scene, start, goal).map(|(_, actions)| actions)
}

fn bfs(scene: &Scene, start: Pose, goal: Pose) -> Option<(u32, Vec<Action>)> {
    if start == goal {
        return Some((0, Vec::new()));
    }
    let n_states = scene.width() as usize * scene.height() as usize * 4;
    // parent[s] = (predecessor id, action index), u32::MAX = unvisited.
    let mut parent = vec![(u32::MAX, 0u8); n_states];
    let start_id = pose_id(scene, start);
    let goal_id = pose_id(scene, goal);
    parent[start_id] = (start_id as u32, 0);
    let mut queue = VecDeque::new();
    queue.push_back((start, start_id));
    while let Some((pose, id)) = queue.pop_front() {
        for action in Action::ALL {
            let (next, _) = apply_action(scene, pose, action);
            if next == pose {
                continue;
            }
            let next_id = pose_id(scene, next);
            if parent[next_id].0 != u32::MAX {
                continue;
            }
            parent[next_id] = (id as u32, action.index() as u8);
            if next_id == goal_id {
                return Some(reconstruct(&parent, start_id, goal_id));
            }
            queue.push_back((next, next_id));
        }
    }
    None
}

fn reconstruct(parent: &[(u32, u8)], start_id: usize, goal_id: usize) -> (u32, Vec<Action>) {
    let mut actions = Vec::new();
    let mut id = goal_id;
    while id != start_id {
        let (prev, action) = parent[id];
        actions.push(Action::from_index(action as usize));
        id = prev as usize;
    }
    actions.reverse();
    (actions.len() as u32, actions)
}
