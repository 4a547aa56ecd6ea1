use std::path::PathBuf;

use serde::Serialize;
use undercrowd_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),

    /// Malformed file contents: missing columns, unparsable fields.
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("weather endpoint: {0}")]
    Network(String),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const SCHEMA: i32 = 3;
    pub const COVERAGE: i32 = 4;
    pub const DEGENERATE: i32 = 5;
    pub const NOT_CONVERGED: i32 = 6;
    pub const IO: i32 = 7;
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable name and exit code.
    pub fn classify(&self) -> (&'static str, i32) {
        match self {
            AppError::Core(e) => match e {
                CoreError::InvalidRecord(_)
                | CoreError::UnknownCode { .. }
                | CoreError::DuplicateDate(_)
                | CoreError::SegmentMismatch { .. }
                | CoreError::UnseenLevel(_)
                | CoreError::InvalidInput(_) => ("schema_mismatch", exit::SCHEMA),
                CoreError::MissingDates(_) | CoreError::UncoveredDate(..) => ("missing_coverage", exit::COVERAGE),
                CoreError::DegenerateResponse | CoreError::SingleClass => ("degenerate_response", exit::DEGENERATE),
                CoreError::NotConverged(_) => ("not_converged", exit::NOT_CONVERGED),
                CoreError::InvalidConfig(_) => ("invalid_config", exit::CONFIG),
            },
            AppError::Schema { .. } => ("schema_mismatch", exit::SCHEMA),
            AppError::Config(_) => ("invalid_config", exit::CONFIG),
            AppError::Io { .. } => ("io", exit::IO),
            AppError::Network(_) => ("network", exit::IO),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.classify().1
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            code: &'a str,
            exit: i32,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        let (code, exit) = self.classify();
        serde_json::to_string(&Wrapper {
            error: Body {
                code,
                exit,
                message: self.to_string(),
            },
        })
        .unwrap_or_else(|_| format!("{{\"error\":{{\"code\":\"{code}\",\"exit\":{exit}}}}}"))
    }
}
