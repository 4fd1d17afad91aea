use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    Shape {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("dataset has {available} classes, episode needs {required}")]
    InsufficientClasses { available: usize, required: usize },

    #[error("class {class_id} has {available} samples, episode needs {required}")]
    Capacity {
        class_id: u32,
        available: usize,
        required: usize,
    },

    #[error("class {0} has no global prototype")]
    MissingClass(u32),

    #[error("non-finite {what} at epoch {epoch}, episode {episode}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        episode: usize,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }
}
