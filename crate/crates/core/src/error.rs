use thiserror::Error;

/// Errors produced by model construction, evaluation, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("block {block} must be zero under mode {mode}")]
    ModeViolation { block: String, mode: String },

    #[error("unknown block name: {0}")]
    UnknownBlock(String),

    #[error("mode Unrestricted has no substitution order; latent signals cannot be resolved")]
    UnsupportedMode,

    #[error("invalid structure request: {0}")]
    Construction(String),

    #[error("composition would close an algebraic loop: {0}")]
    CompositionCycle(String),

    #[error("initialization not possible: {0}")]
    Initialization(String),

    #[error("history length mismatch: expected {expected} samples, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("tape error at node {node}: {message}")]
    Tape { node: usize, message: String },

    #[error("unknown parameter slice: {0}")]
    UnknownParam(String),

    #[error("state diverged at step {step} (|x| = {magnitude:.3e})")]
    Divergence { step: usize, magnitude: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("regularizer undefined: reference value of parameter '{0}' is zero")]
    ZeroReference(String),

    #[error("subsection start {start} outside valid range [{lo}, {hi}]")]
    SubsectionRange { start: usize, lo: usize, hi: usize },

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("invalid signal spec: {0}")]
    SignalSpec(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
