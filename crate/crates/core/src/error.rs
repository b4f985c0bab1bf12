use alloc::string::String;

use crate::semiring::SemiringKind;

/// Errors raised by the inference, constraint and training routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("semiring mismatch: {left:?} combined with {right:?}")]
    SemiringMismatch {
        left: SemiringKind,
        right: SemiringKind,
    },
    #[error("non-finite log-potential: {0}")]
    NonFinitePotential(f64),
    #[error("invalid potential table: {0}")]
    InvalidPotentials(String),
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("enumeration over {len} tokens exceeds the limit of {limit}")]
    EnumerationTooLarge { len: usize, limit: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty table")]
    EmptyTable,
    #[error("length mismatch: {tokens} tokens but {states} states")]
    LengthMismatch { tokens: usize, states: usize },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in objective term `{term}`")]
    NonFiniteLoss { term: &'static str },
    #[error("training diverged at epoch {epoch}: validation objective is {value}")]
    Diverged { epoch: usize, value: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
