use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("topology: {0}")]
    Topology(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("vertex {0} has no incident faces")]
    IsolatedVertex(usize),

    #[error("degenerate triangle {face}: cotangent is not finite")]
    DegenerateTriangle { face: usize },

    #[error(
        "linear solve failed at level {level}, channel {channel}: relative residual {residual:.3e}"
    )]
    Solver {
        level: usize,
        channel: usize,
        residual: f64,
    },

    #[error("vertex {vertex}: neighbor directions have rank {rank} (need at least 2)")]
    RankDeficient { vertex: usize, rank: usize },

    #[error("response field is not scale-normalized")]
    NotNormalized,

    #[error("response field is already scale-normalized")]
    AlreadyNormalized,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class name, printed by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::Topology(_) | Error::IsolatedVertex(_) | Error::DegenerateTriangle { .. } => {
                "topology"
            }
            Error::Argument(_) | Error::NotNormalized | Error::AlreadyNormalized => "usage",
            Error::Solver { .. } => "solver",
            Error::RankDeficient { .. } => "numeric",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 usage, 3 parse, 4 numeric/solver, 5 data-insufficiency.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::NotNormalized | Error::AlreadyNormalized => 2,
            Error::Parse { .. }
            | Error::Json(_)
            | Error::Topology(_)
            | Error::IsolatedVertex(_)
            | Error::Io { .. } => 3,
            Error::DegenerateTriangle { .. }
            | Error::Solver { .. }
            | Error::RankDeficient { .. } => 4,
            Error::InsufficientData(_) => 5,
        }
    }
}
