use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("input contains non-finite values")]
    NonFinite,

    #[error(
        "SVD did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:.3e}, \
         sigma_max {sigma_max:.3e}, sigma_min {sigma_min:.3e})"
    )]
    SvdNoConvergence {
        sweeps: usize,
        off_diagonal: f64,
        sigma_max: f64,
        sigma_min: f64,
    },

    #[error("{path}: {message} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite loss at step {step} (cls {cls}, align {align}, k_reg {k_reg}, k {k})")]
    NonFiniteLoss {
        step: usize,
        cls: f64,
        align: f64,
        k_reg: f64,
        k: f64,
    },

    #[error("linear solver diverged with step size {step_size}: objective rose for {steps} consecutive steps")]
    Diverged { step_size: f64, steps: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
