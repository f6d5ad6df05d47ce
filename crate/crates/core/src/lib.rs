//! Trajectory predictive control: data-driven trajectory predictors, a
//! predictive controller built on them, and a closed-loop benchmark.

pub mod control;
pub mod decomp;
pub mod error;
pub mod hankel;
pub mod io;
pub mod predictors;
pub mod simbench;
pub mod statespace;
pub mod verify;

pub use error::{Result, TpcError};
pub use hankel::{build_hankel, DataLabel, Dims, HankelSet, PredictorKind, TrajectoryData};
pub use predictors::{fit_predictor, Predictor};
