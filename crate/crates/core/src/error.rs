use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: {message}")]
    Schema { file: String, message: String },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unknown bus {0}")]
    UnknownBus(String),

    #[error("unknown line {0}")]
    UnknownLine(String),

    #[error("unknown prosumer {0}")]
    UnknownProsumer(String),

    #[error("missing profile {profile} referenced by prosumer {prosumer}")]
    MissingProfile { profile: String, prosumer: String },

    #[error("invalid {kind} {id}: {message}")]
    Invalid {
        kind: &'static str,
        id: String,
        message: String,
    },

    #[error("grid is disconnected: bus {0} is not reachable from the slack bus")]
    Disconnected(String),

    #[error("bus {0} does not belong to any feeder")]
    NotInFeeder(String),

    #[error("profile {profile} covers {available} < {required} steps")]
    ProfileTooShort {
        profile: String,
        available: usize,
        required: usize,
    },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    PowerFlowNotConverged { iterations: usize, mismatch: f64 },

    #[error("power flow diverged at iteration {iterations} (max mismatch {mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("singular power flow jacobian at iteration {0}")]
    SingularJacobian(usize),

    #[error("timestep {t}: {source}")]
    AtTimestep {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no truth value for {0}")]
    MissingTruth(String),

    #[error("no pv plant in grid to derive pseudo values for {0}")]
    NoPvReference(String),

    #[error(
        "not observable: {measurements} measurements < {required} required for {buses} buses (deficit {})",
        required - measurements
    )]
    Unobservable {
        measurements: usize,
        required: usize,
        buses: usize,
    },

    #[error("numerically unobservable: singular gain matrix")]
    NumericallyUnobservable,

    #[error("state estimation did not converge in {iterations} iterations (objective {objective:.6e})")]
    EstimationNotConverged { iterations: usize, objective: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot compare reports: {0}")]
    Incomparable(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(file: &str, message: impl Into<String>) -> Self {
        Error::Schema {
            file: file.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(kind: &'static str, id: &str, message: impl Into<String>) -> Self {
        Error::Invalid {
            kind,
            id: id.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn at(self, t: usize) -> Self {
        Error::AtTimestep {
            t,
            source: Box::new(self),
        }
    }
}
