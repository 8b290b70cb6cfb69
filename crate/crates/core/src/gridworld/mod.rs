//! Procedural grid-world navigation environments.
//!
//! A [`Scene`] is an immutable rectangular grid of free and blocked cells
//! with a set of candidate target poses and a deterministic synthetic
//! perception function. Agents occupy a [`Pose`] (cell plus 90-degree
//! heading) and act through [`step`] with the four-action command set.
//! [`shortest_path_length`] is the exact oracle over the pose graph.

mod dynamics;
mod io;
mod path;
mod percept;
mod scene;

pub use dynamics::{sample_start, step, StepOutcome, GOAL_REWARD, STEP_PENALTY};
pub use io::{load_scene, load_scene_dir, save_scene, SCENE_MAGIC};
pub use path::{shortest_path_actions, shortest_path_length};
pub use percept::{observe, PerceptFrame};
pub use scene::{generate_scene, Scene};

use thiserror::Error;

/// Errors from scene construction, generation, and persistence.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene dimensions must be at least 3x3, got {0}x{1}")]
    TooSmall(u16, u16),
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("obstacle mask has {got} entries, expected {expected}")]
    MaskSize { got: usize, expected: usize },
    #[error("requested {requested} targets but the scene has only {free} free poses")]
    TooManyTargets { requested: usize, free: usize },
    #[error("target pose ({0}, {1}, {2}) lies on a blocked or out-of-bounds cell")]
    TargetBlocked(u16, u16, Heading),
    #[error("duplicate target pose ({0}, {1}, {2})")]
    DuplicateTarget(u16, u16, Heading),
    #[error("targets are split across disconnected free regions")]
    TargetsDisconnected,
    #[error("scene has no free cells")]
    NoFreeCells,
    #[error("connectivity repair did not converge within {0} attempts")]
    RepairFailed(usize),
    #[error("only the goal pose is free; cannot sample a start")]
    NoStartCandidates,
    #[error("scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene file {path}: {reason}")]
    Format { path: String, reason: String },
}

/// Agent heading. North is the +y direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Heading {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Unit (dx, dy) pointed along this heading.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (0, 1),
            Heading::East => (1, 0),
            Heading::South => (0, -1),
            Heading::West => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 4]
    }
}

impl std::fmt::Display for Heading {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = match self {
            Heading::North => 'N',
            Heading::East => 'E',
            Heading::South => 'S',
            Heading::West => 'W',
        };
        write!(f, "{c}")
    }
}

/// Discrete agent state: cell coordinates plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pose {
    pub x: u16,
    pub y: u16,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: u16, y: u16, heading: Heading) -> Pose {
        Pose { x, y, heading }
    }
}

impl std::fmt::Display for Pose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.x, self.y, self.heading)
    }
}

/// The four command-level actions. Index order is fixed; policy heads and
/// Q heads emit outputs in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    MoveForward = 0,
    MoveBackward = 1,
    TurnLeft = 2,
    TurnRight = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [
        Action::MoveForward,
        Action::MoveBackward,
        Action::TurnLeft,
        Action::TurnRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i % 4]
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Action::MoveForward => "forward",
            Action::MoveBackward => "backward",
            Action::TurnLeft => "left",
            Action::TurnRight => "right",
        };
        write!(f, "{s}")
    }
}
