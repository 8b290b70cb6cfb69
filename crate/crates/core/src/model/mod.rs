//! Goal-conditioned siamese actor-critic: one weight-shared embedding
//! block serves the observation and goal streams, a fusion layer joins
//! them, and per-scene branches map the joint representation to a 4-way
//! policy and a scalar value.

mod net;
mod registry;
mod stack;

pub use net::{
    embed_stack, heads_backward, heads_forward, model_backward, model_forward, ForwardCache,
    ModelGrads, PolicyValue, SceneBranch, SiameseCore, StepCache, StreamEmbed,
};
pub use registry::{make_goal_stack, NavModel};
pub use stack::ObservationStack;

use thiserror::Error;

use crate::numerics::NumericsError;

/// Number of stacked history frames in every observation input.
pub const HISTORY_LEN: usize = 4;

/// Network dimensions and the fusion concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Percept dimension d; each stream input is `HISTORY_LEN * d`.
    pub percept_dim: usize,
    /// Output width of the shared embedding block.
    pub embed_dim: usize,
    /// Width of the fusion output and the scene-specific hidden layer.
    pub fuse_dim: usize,
    /// Ablation flag: concatenate (goal, state) instead of (state, goal).
    pub goal_first: bool,
}

impl Default for ArchConfig {
    fn default() -> ArchConfig {
        ArchConfig {
            percept_dim: 64,
            embed_dim: 32,
            fuse_dim: 32,
            goal_first: false,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (what, v) in [
            ("percept_dim", self.percept_dim),
            ("embed_dim", self.embed_dim),
            ("fuse_dim", self.fuse_dim),
        ] {
            if v == 0 {
                return Err(ModelError::BadArch { what, got: v });
            }
        }
        Ok(())
    }

    /// Flattened input width of one stream.
    pub fn stack_dim(&self) -> usize {
        self.percept_dim * HISTORY_LEN
    }
}

/// Errors from model assembly, lookup, and shape validation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown scene branch {0}")]
    UnknownBranch(String),
    #[error("branch key {0:?} must be non-empty and must not contain '/'")]
    BadKey(String),
    #[error("{what} must be positive, got {got}")]
    BadArch { what: &'static str, got: usize },
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("block {name}: expected shape {expected_out}x{expected_in}, got {got_out}x{got_in}")]
    ShapeMismatch {
        name: String,
        expected_out: usize,
        expected_in: usize,
        got_out: usize,
        got_in: usize,
    },
    #[error("checkpoint is missing block {0}")]
    MissingBlock(String),
    #[error("checkpoint holds unexpected block {0}")]
    UnexpectedBlock(String),
    #[error("checkpoint embed input {0} is not divisible by the history length")]
    BadEmbedShape(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
