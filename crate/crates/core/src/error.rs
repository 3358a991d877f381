use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {value} is outside the domain ({lo}, {hi}) of the {family} family")]
    ParameterOutOfDomain {
        family: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid parameter interval [{lo}, {hi}]: {reason}")]
    InvalidInterval { lo: f64, hi: f64, reason: String },

    #[error("kernel argument must be non-negative, got {0}")]
    NegativeKernelArgument(f64),

    #[error("invalid kernel specification `{0}`")]
    InvalidKernel(String),

    #[error("unknown family `{0}`")]
    UnknownFamily(String),

    #[error("empty bandwidth schedule: hmax = {hmax} is below the initial bandwidth {h0}")]
    EmptySchedule { h0: f64, hmax: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("{replicates} replicates requested, at least {min} are needed for quantiles")]
    TooFewReplicates { replicates: usize, min: usize },

    #[error("calibration infeasible: propagation check still fails at lambda = {lambda_hi}")]
    CalibrationInfeasible { lambda_hi: f64 },

    #[error(
        "variability bound violated: kl(theta[{i}], theta[{j}]) = {kl} exceeds phi0^2 = {bound}"
    )]
    VariabilityBoundViolated { i: usize, j: usize, kl: f64, bound: f64 },

    #[error("test function `{name}` is not defined for n = {n}: {reason}")]
    IncompatibleSampleSize {
        name: String,
        n: usize,
        reason: String,
    },

    #[error("weights snapshot missing from iteration state {0}")]
    MissingWeights(usize),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
