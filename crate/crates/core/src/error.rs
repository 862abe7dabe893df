use crate::state::MixedState;

/// Errors raised across the library. CLI exit codes map from the variant.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {msg}")]
    Numerical {
        msg: String,
        state: Option<Box<MixedState>>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>, state: Option<&MixedState>) -> Self {
        Error::Numerical {
            msg: msg.into(),
            state: state.map(|s| Box::new(s.clone())),
        }
    }

    /// Process exit code: 2 config, 3 numerical divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Contract(_)
            | Error::Checkpoint(_)
            | Error::Shape(_) => 2,
            Error::Numerical { .. } | Error::Diverged(_) => 3,
            Error::Parse { .. } | Error::Io(_) => 4,
        }
    }
}
