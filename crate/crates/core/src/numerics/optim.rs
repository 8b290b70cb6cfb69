//! Shared RMSProp and the concurrent parameter store.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use super::{GradBlock, NumericsError, ParamBlock};

/// RMSProp hyperparameters plus the global-norm clip threshold (0
/// disables clipping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f32,
    pub alpha: f32,
    pub epsilon: f32,
    pub clip_norm: f32,
}

impl Default for OptimConfig {
    fn default() -> OptimConfig {
        OptimConfig {
            learning_rate: 7e-4,
            alpha: 0.99,
            epsilon: 0.1,
            clip_norm: 40.0,
        }
    }
}

/// Per-block second-moment accumulator for RMSProp.
#[derive(Debug, Clone)]
pub struct RmsPropState {
    pub v_weights: Vec<f32>,
    pub v_bias: Vec<f32>,
    pub alpha: f32,
    pub epsilon: f32,
    pub learning_rate: f32,
}

impl RmsPropState {
    pub fn zeros_like(block: &ParamBlock, optim: &OptimConfig) -> RmsPropState {
        RmsPropState {
            v_weights: vec![0.0; block.weights.len()],
            v_bias: vec![0.0; block.bias.len()],
            alpha: optim.alpha,
            epsilon: optim.epsilon,
            learning_rate: optim.learning_rate,
        }
    }
}

/// One RMSProp step on a single block:
/// `v <- alpha v + (1 - alpha) g^2`, `theta <- theta - lr g / sqrt(v + eps)`,
/// then the gradients are zeroed. A non-finite gradient rejects the whole
/// update, leaving `v` and the parameters untouched (gradients are still
/// zeroed so the caller can continue).
pub fn rmsprop_apply(
    state: &mut RmsPropState,
    params: &mut ParamBlock,
    grads: &mut GradBlock,
) -> Result<(), NumericsError> {
    assert_eq!(grads.weights.len(), params.weights.len(), "gradient shape mismatch");
    assert_eq!(grads.bias.len(), params.bias.len(), "gradient shape mismatch");
    if !grads.is_finite() {
        grads.zero();
        return Err(NumericsError::NonFiniteGradient {
            block: params.name.clone(),
        });
    }
    step_slice(&mut state.v_weights, &mut params.weights, &mut grads.weights, state.alpha, state.epsilon, state.learning_rate);
    step_slice(&mut state.v_bias, &mut params.bias, &mut grads.bias, state.alpha, state.epsilon, state.learning_rate);
    Ok(())
}

fn step_slice(v: &mut [f32], theta: &mut [f32], g: &mut [f32], alpha: f32, eps: f32, lr: f32) {
    for i in 0..v.len() {
        v[i] = alpha * v[i] + (1.0 - alpha) * g[i] * g[i];
        theta[i] -= lr * g[i] / (v[i] + eps).sqrt();
        g[i] = 0.0;
    }
}

/// Locking discipline for shared updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// One store-wide lock around each whole update; deterministic under
    /// round-robin single-threaded execution.
    Serialized,
    /// Per-block exclusive updates; reads may interleave between blocks,
    /// so a snapshot can mix parameter versions across blocks.
    Hogwild,
}

/// Whether a submitted gradient set was applied or rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Non-finite global norm; nothing was applied, count recorded.
    Rejected,
}

struct Slot {
    params: ParamBlock,
    rms: RmsPropState,
    frozen: bool,
}

/// Shared parameter store: named blocks, shared RMSProp statistics, and
/// global-norm clipping applied per submitted gradient set.
pub struct ParamStore {
    mode: UpdateMode,
    optim: OptimConfig,
    blocks: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
    serial: Mutex<()>,
    rejected: AtomicU64,
}

impl ParamStore {
    pub fn new(mode: UpdateMode, optim: OptimConfig) -> ParamStore {
        ParamStore {
            mode,
            optim,
            blocks: RwLock::new(BTreeMap::new()),
            serial: Mutex::new(()),
            rejected: AtomicU64::new(0),
        }
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn optim(&self) -> OptimConfig {
        self.optim
    }

    /// Adds a block; the name must be unused.
    pub fn insert(&self, block: ParamBlock) -> Result<(), NumericsError> {
        let mut map = self.blocks.write().unwrap();
        if map.contains_key(&block.name) {
            return Err(NumericsError::DuplicateBlock(block.name));
        }
        let rms = RmsPropState::zeros_like(&block, &self.optim);
        map.insert(
            block.name.clone(),
            Arc::new(Mutex::new(Slot { params: block, rms, frozen: false })),
        );
        Ok(())
    }

    /// Inserts the block built by `make` unless the name already exists.
    /// The write lock is held across the check and the insert, so exactly
    /// one racing creator wins and the rest see its block. Returns true
    /// when this call created the block.
    pub fn ensure_with(&self, name: &str, make: impl FnOnce() -> ParamBlock) -> bool {
        let mut map = self.blocks.write().unwrap();
        if map.contains_key(name) {
            return false;
        }
        let block = make();
        assert_eq!(block.name, name, "ensure_with: block name mismatch");
        let rms = RmsPropState::zeros_like(&block, &self.optim);
        map.insert(
            name.to_string(),
            Arc::new(Mutex::new(Slot { params: block, rms, frozen: false })),
        );
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.read().unwrap().contains_key(name)
    }

    /// Block names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.blocks.read().unwrap().keys().cloned().collect()
    }

    fn slot(&self, name: &str) -> Result<Arc<Mutex<Slot>>, NumericsError> {
        self.blocks
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| NumericsError::UnknownBlock(name.to_string()))
    }

    /// Copies a block out of the store. In hogwild mode the copy is
    /// internally consistent per block but may be stale relative to
    /// concurrent updates of other blocks.
    pub fn read(&self, name: &str) -> Result<ParamBlock, NumericsError> {
        Ok(self.slot(name)?.lock().unwrap().params.clone())
    }

    /// Overwrites `out` with the named block, reusing its buffers.
    pub fn read_into(&self, name: &str, out: &mut ParamBlock) -> Result<(), NumericsError> {
        let slot = self.slot(name)?;
        let slot = slot.lock().unwrap();
        out.name.clear();
        out.name.push_str(&slot.params.name);
        out.out_dim = slot.params.out_dim;
        out.in_dim = slot.params.in_dim;
        out.weights.clear();
        out.weights.extend_from_slice(&slot.params.weights);
        out.bias.clear();
        out.bias.extend_from_slice(&slot.params.bias);
        Ok(())
    }

    /// Marks a block frozen (updates to it are discarded) or thawed.
    pub fn set_frozen(&self, name: &str, frozen: bool) -> Result<(), NumericsError> {
        self.slot(name)?.lock().unwrap().frozen = frozen;
        Ok(())
    }

    /// Freezes or thaws every block whose name satisfies `pred`; returns
    /// how many blocks matched.
    pub fn set_frozen_matching(&self, pred: impl Fn(&str) -> bool, frozen: bool) -> usize {
        let map = self.blocks.read().unwrap();
        let mut n = 0;
        for (name, slot) in map.iter() {
            if pred(name) {
                slot.lock().unwrap().frozen = frozen;
                n += 1;
            }
        }
        n
    }

    /// Applies one gradient set: global-norm clip across all pairs, then
    /// a shared-RMSProp step per block. Gradients are zeroed afterwards
    /// whether applied or rejected. Unknown block names error; frozen
    /// blocks silently discard their share.
    pub fn apply_gradients<'a>(
        &self,
        grads: impl IntoIterator<Item = (&'a str, &'a mut GradBlock)>,
    ) -> Result<UpdateOutcome, NumericsError> {
        let mut grads: Vec<(&str, &mut GradBlock)> = grads.into_iter().collect();
        let sq_norm: f64 = grads.iter().map(|(_, g)| g.sq_norm()).sum();
        if !sq_norm.is_finite() {
            for (_, g) in grads.iter_mut() {
                g.zero();
            }
            self.rejected.fetch_add(1, Ordering::Relaxed);
            return Ok(UpdateOutcome::Rejected);
        }
        let norm = sq_norm.sqrt() as f32;
        let clip = self.optim.clip_norm;
        let factor = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };

        let _serial_guard = match self.mode {
            UpdateMode::Serialized => Some(self.serial.lock().unwrap()),
            UpdateMode::Hogwild => None,
        };
        for (name, grad) in grads {
            let slot = self.slot(name)?;
            let mut slot = slot.lock().unwrap();
            if slot.frozen {
                grad.zero();
                continue;
            }
            if factor != 1.0 {
                grad.scale(factor);
            }
            let Slot { params, rms, .. } = &mut *slot;
            // Finiteness was established by the norm; per-block apply
            // cannot fail here.
            rmsprop_apply(rms, params, grad).expect("finite gradients");
        }
        Ok(UpdateOutcome::Applied)
    }

    /// Number of gradient sets rejected for non-finite norms.
    pub fn rejected_updates(&self) -> u64 {
        self.rejected.load(Ordering::Relaxed)
    }

    /// Snapshot of every block, sorted by name.
    pub fn snapshot_all(&self) -> Vec<ParamBlock> {
        let map = self.blocks.read().unwrap();
        map.values().map(|s| s.lock().unwrap().params.clone()).collect()
    }
}
