//! Fixed-depth observation history.

use crate::gridworld::PerceptFrame;

use super::{ModelError, HISTORY_LEN};

/// Four stacked percept frames, oldest first, stored flat so the network
/// consumes them without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    dim: usize,
    values: Vec<f32>,
}

impl ObservationStack {
    /// Starts an episode's history: the first observation replicated
    /// `HISTORY_LEN` times.
    pub fn reset_history(first_frame: &PerceptFrame) -> ObservationStack {
        Self::reset_from_values(&first_frame.values)
    }

    /// As [`ObservationStack::reset_history`], from a borrowed slice.
    pub fn reset_from_values(frame: &[f32]) -> ObservationStack {
        let mut values = Vec::with_capacity(frame.len() * HISTORY_LEN);
        for _ in 0..HISTORY_LEN {
            values.extend_from_slice(frame);
        }
        ObservationStack {
            dim: frame.len(),
            values,
        }
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push_frame(&mut self, frame: &PerceptFrame) -> Result<(), ModelError> {
        self.push_values(&frame.values)
    }

    /// As [`ObservationStack::push_frame`], from a borrowed slice. The
    /// shift is in place; no allocation once the stack exists.
    pub fn push_values(&mut self, frame: &[f32]) -> Result<(), ModelError> {
        if frame.len() != self.dim {
            return Err(ModelError::DimMismatch {
                what: "push_frame",
                expected: self.dim,
                got: frame.len(),
            });
        }
        self.values.copy_within(self.dim.., 0);
        let start = self.dim * (HISTORY_LEN - 1);
        self.values[start..].copy_from_slice(frame);
        Ok(())
    }

    /// Overwrites this stack in place with a fresh episode history.
    pub fn reset_in_place(&mut self, frame: &[f32]) -> Result<(), ModelError> {
        if frame.len() != self.dim {
            return Err(ModelError::DimMismatch {
                what: "reset_in_place",
                expected: self.dim,
                got: frame.len(),
            });
        }
        for k in 0..HISTORY_LEN {
            self.values[k * self.dim..(k + 1) * self.dim].copy_from_slice(frame);
        }
        Ok(())
    }

    /// Per-frame percept dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flattened `HISTORY_LEN * d` view, oldest frame first.
    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    /// The i-th frame, oldest first.
    pub fn frame(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}
