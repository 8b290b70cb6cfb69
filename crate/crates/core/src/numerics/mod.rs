//! Dense-network numerics: parameter blocks, affine+ReLU layers, softmax,
//! actor-critic losses, n-step returns, and shared RMSProp with serialized
//! and hogwild update modes. All training arithmetic is f32; tests check
//! gradients against f64 finite-difference oracles.

mod checkpoint;
mod linalg;
mod loss;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, store_from_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use linalg::{
    affine_relu_backward, affine_relu_forward, init_param_block, softmax, AffineCache, GradBlock,
    InitKind, ParamBlock,
};
pub use loss::{a3c_loss_and_grads, n_step_returns, HeadGrads, LossBreakdown};
pub use optim::{rmsprop_apply, OptimConfig, ParamStore, RmsPropState, UpdateMode, UpdateOutcome};

use thiserror::Error;

/// Errors from layer math, loss assembly, optimization, and checkpoints.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: expected length {expected}, got {got}")]
    DimMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("chosen action has zero probability at rollout step {step}")]
    ZeroProbability { step: usize },
    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: String },
    #[error("unknown parameter block {0}")]
    UnknownBlock(String),
    #[error("parameter block {0} already exists")]
    DuplicateBlock(String),
    #[error("checkpoint file: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint file {path}: {reason}")]
    Format { path: String, reason: String },
}
