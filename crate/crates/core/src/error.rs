use alloc::string::String;

use crate::perspectives::PerspectiveKey;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),

    #[error("cell (row {row}, col {col}) outside {n_y}x{n_x} grid")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n_y: usize,
        n_x: usize,
    },

    #[error("linear index {index} outside grid of {len} cells")]
    LinearIndexOutOfRange { index: usize, len: usize },

    #[error("occupancy indices must be strictly increasing (at position {position})")]
    UnsortedOccupancy { position: usize },

    #[error("cell {index} is not occupied")]
    Unoccupied { index: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{stage} produced a non-finite iterate at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    #[error("{stage} did not decrease its objective (returned {returned}, reference {reference})")]
    NotConverged {
        stage: &'static str,
        returned: f64,
        reference: f64,
    },

    #[error("step size {gamma} exceeds stability bound; use gamma <= {bound} (inverse Lipschitz estimate)")]
    UnstableStep { gamma: f64, bound: f64 },

    #[error("weight vector has no entry for perspective {0}")]
    MissingWeight(PerspectiveKey),

    #[error("unknown scene recipe `{0}`; expected one of: lanes, crosswalk, blank, checkerboard")]
    UnknownRecipe(String),

    #[error("degenerate data: {0}")]
    Degenerate(&'static str),

    #[error("maps share fewer than {required} occupied cells (found {found})")]
    InsufficientOverlap { required: usize, found: usize },

    #[error("search window yields no candidate poses")]
    NoCandidates,
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
