//! Policies an evaluation episode can run: the trained model, a uniform
//! random walker, and a BFS oracle used as a test double.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{shortest_path_actions, Action, Pose, Scene};
use crate::model::{
    embed_stack, heads_forward, make_goal_stack, NavModel, ObservationStack, SceneBranch,
    SiameseCore, StreamEmbed,
};

use super::{Task, TrainError};

/// One action at a time against a fixed scene and goal. `begin_episode`
/// is called before any `act`; `after_step` reports where the
/// environment actually put the agent (slip included).
pub trait Agent {
    fn begin_episode(&mut self, start: Pose) -> Result<(), TrainError>;
    fn act(&mut self, rng: &mut ChaCha8Rng) -> Result<Action, TrainError>;
    fn after_step(&mut self, pose: Pose) -> Result<(), TrainError>;
}

/// Samples an action from a softmax distribution with one rng draw.
pub fn sample_action(probs: &[f32], rng: &mut ChaCha8Rng) -> Action {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0f64;
    for (i, p) in probs.iter().enumerate() {
        acc += *p as f64;
        if u < acc {
            return Action::from_index(i);
        }
    }
    Action::from_index(probs.len() - 1)
}

/// Highest-probability action, ties broken toward the lower index.
pub fn argmax_action(probs: &[f32]) -> Action {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = i;
        }
    }
    Action::from_index(best)
}

/// Runs the trained policy: keeps the observation stack, embeds the
/// fixed goal once per episode, and samples from pi (or takes the
/// argmax when `argmax` is set).
pub struct ModelAgent {
    scene: Arc<Scene>,
    core: SiameseCore,
    branch: SceneBranch,
    goal_stack: ObservationStack,
    goal_embed: StreamEmbed,
    stack: ObservationStack,
    argmax: bool,
}

impl ModelAgent {
    /// Fails when the task's scene branch does not exist in the model.
    pub fn new(model: &NavModel, task: &Task, argmax: bool) -> Result<ModelAgent, TrainError> {
        let core = model.core();
        let branch = model.branch_for(&task.branch_key(), false)?;
        let goal_stack = make_goal_stack(task.scene(), task.goal());
        let goal_embed = embed_stack(&core, &goal_stack)?;
        let stack = goal_stack.clone();
        Ok(ModelAgent {
            scene: task.scene().clone(),
            core,
            branch,
            goal_stack,
            goal_embed,
            stack,
            argmax,
        })
    }
}

impl Agent for ModelAgent {
    fn begin_episode(&mut self, start: Pose) -> Result<(), TrainError> {
        self.goal_embed = embed_stack(&self.core, &self.goal_stack)?;
        self.stack.reset_in_place(self.scene.percept(start))?;
        Ok(())
    }

    fn act(&mut self, rng: &mut ChaCha8Rng) -> Result<Action, TrainError> {
        let state_embed = embed_stack(&self.core, &self.stack)?;
        let (out, _) = heads_forward(&self.core, &self.branch, &state_embed, &self.goal_embed)?;
        Ok(if self.argmax {
            argmax_action(&out.probs)
        } else {
            sample_action(&out.probs, rng)
        })
    }

    fn after_step(&mut self, pose: Pose) -> Result<(), TrainError> {
        self.stack.push_values(self.scene.percept(pose))?;
        Ok(())
    }
}

/// Uniform over the four actions; the random-walk baseline.
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn begin_episode(&mut self, _start: Pose) -> Result<(), TrainError> {
        Ok(())
    }

    fn act(&mut self, rng: &mut ChaCha8Rng) -> Result<Action, TrainError> {
        Ok(Action::from_index(rng.random_range(0..Action::COUNT)))
    }

    fn after_step(&mut self, _pose: Pose) -> Result<(), TrainError> {
        Ok(())
    }
}

/// Replans a BFS shortest path from the current pose at every step, so
/// it stays optimal under slip.
pub struct OracleAgent {
    scene: Arc<Scene>,
    goal: Pose,
    pose: Pose,
    task_id: u32,
}

impl OracleAgent {
    pub fn new(task: &Task) -> OracleAgent {
        OracleAgent {
            scene: task.scene().clone(),
            goal: task.goal(),
            pose: task.goal(),
            task_id: task.task_id(),
        }
    }
}

impl Agent for OracleAgent {
    fn begin_episode(&mut self, start: Pose) -> Result<(), TrainError> {
        self.pose = start;
        Ok(())
    }

    fn act(&mut self, _rng: &mut ChaCha8Rng) -> Result<Action, TrainError> {
        let plan = shortest_path_actions(&self.scene, self.pose, self.goal).ok_or(
            TrainError::UnreachableGoal {
                task_id: self.task_id,
                start: self.pose,
            },
        )?;
        plan.first().copied().ok_or(TrainError::UnreachableGoal {
            task_id: self.task_id,
            start: self.pose,
        })
    }

    fn after_step(&mut self, pose: Pose) -> Result<(), TrainError> {
        self.pose = pose;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn sampling_tracks_the_distribution() {
        let probs = [0.5f32, 0.3, 0.15, 0.05];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0u32; 4];
        let n = 40_000;
        for _ in 0..n {
            counts[sample_action(&probs, &mut rng).index()] += 1;
        }
        for (i, &p) in probs.iter().enumerate() {
            let expected = p as f64 * n as f64;
            let sigma = (n as f64 * p as f64 * (1.0 - p as f64)).sqrt();
            assert!(
                (counts[i] as f64 - expected).abs() < 3.0 * sigma,
                "action {i}: {} vs expected {expected}",
                counts[i]
            );
        }
    }

    #[test]
    fn sampling_consumes_one_draw() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        sample_action(&[0.25; 4], &mut a);
        let _: f64 = b.random();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_action(&[0.3, 0.3, 0.2, 0.2]), Action::from_index(0));
        assert_eq!(argmax_action(&[0.1, 0.2, 0.5, 0.2]), Action::from_index(2));
    }
}
