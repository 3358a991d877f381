//! Propagation-separation adaptive smoothing for one-parameter exponential
//! families on one-dimensional designs.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithm;
pub mod calibrate;
pub mod config;
pub mod design;
pub mod error;
pub mod family;
pub mod io;
pub mod kernels;
pub mod rng;
pub mod sim;
pub mod stepfunc;
pub mod weights;

pub use algorithm::{run, IterationState, RunOutput, Smoother};
pub use config::{bandwidth_schedule, PenaltyVariant, PsConfig};
pub use design::{Design, Observations};
pub use error::{Error, Result};
pub use family::{ExponentialFamily, Family, ParamInterval};
pub use kernels::Kernel;
pub use weights::WeightMatrix;
