use thiserror::Error;

use crate::fock::ModeLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode {mode} would hold {count} quanta, above the truncation bound {max}")]
    TruncationOverflow { mode: ModeLabel, count: u32, max: u32 },

    #[error("state occupies mode {0}, which the map neither transforms nor passes through")]
    UnknownMode(ModeLabel),

    #[error("cannot normalize the zero state")]
    ZeroState,

    #[error("mode {0} appears more than once")]
    DuplicateMode(ModeLabel),

    #[error("coefficient rows are not orthonormal: {0}")]
    NonUnitary(String),

    #[error("target mode {0} is already occupied")]
    OccupiedTarget(ModeLabel),

    #[error("state is not normalized (norm^2 = {0})")]
    Unnormalized(f64),

    #[error("no herald after {0} preparation attempts")]
    MaxAttemptsExceeded(u64),

    #[error("a rejected outcome has no Pauli correction")]
    RejectClass,

    #[error("mode {0} is not supported here")]
    UnsupportedMode(ModeLabel),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no records to aggregate")]
    EmptyInput,

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
