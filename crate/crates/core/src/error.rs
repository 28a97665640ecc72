use alloc::string::String;

/// Errors raised by the pure algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    Dimension {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("value domain error: {0}")]
    Domain(String),
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("settling failed: {reason}")]
    Settling {
        reason: String,
        partial: alloc::vec::Vec<crate::ObjectPose>,
    },
    #[error("render failed: {0}")]
    Render(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CoreError {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        CoreError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: (usize, usize), got: (usize, usize)) -> Self {
        CoreError::Dimension {
            expected_w: expected.0,
            expected_h: expected.1,
            got_w: got.0,
            got_h: got.1,
        }
    }
}
