use thiserror::Error;

/// Exit codes of the `daekit` binary.
pub mod code {
    pub const OK: i32 = 0;
    /// Validation failed or the solver gave up.
    pub const FAILURE: i32 = 1;
    pub const INDEX_TOO_HIGH: i32 = 2;
    /// Missing or malformed input file.
    pub const INPUT: i32 = 3;
    pub const ESCAPE: i32 = 4;
    pub const CONSTRAINT: i32 = 5;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Lib(#[from] daekit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use daekit::Error as E;
        match self {
            CliError::Usage(_) => code::USAGE,
            CliError::Io { .. } | CliError::Input(_) => code::INPUT,
            CliError::Lib(e) => match e {
                E::IndexTooHigh => code::INDEX_TOO_HIGH,
                E::Parse { .. }
                | E::Io(_)
                | E::Json(_)
                | E::DisconnectedGraph
                | E::MissingBoundaryData(_)
                | E::ShapeMismatch(_)
                | E::NonFinite(_) => code::INPUT,
                _ => code::FAILURE,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}
