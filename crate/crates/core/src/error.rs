use thiserror::Error;

/// Errors raised by the partition model and its tooling.
#[derive(Debug, Error)]
pub enum DrpmError {
    /// A parameter violates its documented invariant. `field` names the offender.
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// An input object (matrix, partition string, objective name, ...) is malformed.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A real-valued knob lies outside its domain (e.g. a non-positive temperature).
    #[error("`{name}` = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    /// An enumeration would exceed its desk-scale guard.
    #[error("{what} needs {required} items, above the guard of {bound}; {hint}")]
    Capacity {
        what: &'static str,
        required: u128,
        bound: u128,
        hint: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl DrpmError {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DrpmError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 1: I/O, 2: validation, 3: capacity. Check failures (4) are not errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            DrpmError::Io(_) => 1,
            DrpmError::Capacity { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, DrpmError>;

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(DrpmError::Domain {
            name: "tau",
            value: tau,
            expected: "tau > 0",
        })
    }
}
