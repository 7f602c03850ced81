//! Skip-connected deep GRU networks: forward pass, backpropagation through
//! time and a finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod network;

use thiserror::Error;

pub use gradcheck::{
    check_gradient_against, gradient_check, relative_error, BlockReport, GradCheckOptions,
    GradCheckReport, REL_FLOOR,
};
pub use matrix::Matrix;
pub use network::{
    backward_sequence, forward_sequence, gru_step, nll_and_gradient, sequence_nll, tape_nll,
    GruLayer, GruNetwork, LayerCache, NetworkDims, NetworkState, OutputLayer, StepCache, Tape,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GruError {
    #[error("non-finite {what}{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        step: Option<usize>,
        what: &'static str,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("{steps} steps but {targets} targets")]
    LengthMismatch { steps: usize, targets: usize },
    #[error("gradient check refuses hidden width {0} (limit 32)")]
    TooLargeForCheck(usize),
}

impl GruError {
    pub(crate) fn at_step(self, i: usize) -> Self {
        match self {
            GruError::NonFinite { what, .. } => GruError::NonFinite {
                step: Some(i),
                what,
            },
            other => other,
        }
    }
}
