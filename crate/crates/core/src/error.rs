use std::path::PathBuf;

use crate::solver::RoundingStep;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidConfig(String),

    #[error("infeasible M: budget {m:.6e} FLOPs/token leaves {layers:.4} attention layers (needs > 0)")]
    InfeasibleM { m: f64, layers: f64 },

    #[error("infeasible shape: {0}")]
    InfeasibleShape(String),

    #[error("rounding rejected: max deviation {max_deviation:.4} exceeds {limit}")]
    RoundingReject {
        max_deviation: f64,
        limit: f64,
        trace: Vec<RoundingStep>,
    },

    #[error("infeasible width ratio {rho}: {reason}")]
    InfeasibleRatio { rho: f64, reason: String },

    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit failure ({family}): {reason}")]
    FitFailure { family: String, reason: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("law set: {0}")]
    LawSet(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("bad input: {0}")]
    BadInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleM { .. }
            | Error::InfeasibleShape(_)
            | Error::RoundingReject { .. }
            | Error::InfeasibleRatio { .. }
            | Error::InfeasibleTarget(_)
            | Error::Domain(_)
            | Error::UndefinedCorrelation(_)
            | Error::LawSet(_)
            | Error::Validation(_) => 2,
            Error::FitFailure { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            Error::InvalidConfig(_)
            | Error::BadInput(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 4,
        }
    }
}
