//! Kriging with linear differential information.
//!
//! Observations and differential equations live on atoms `(x, m)` of the
//! extended design space: a location paired with a derivative multi-index.
//! Two predictors combine them: collocated co-Kriging, which treats
//! equation rows as secondary observations, and Lagrangian Kriging, which
//! imposes the equations on the predictions themselves.

pub mod calibration;
pub mod design;
pub mod flowlab;
pub mod error;
pub mod kernel;
mod linalg;
pub mod predictors;
pub mod uq;

pub use design::{
    cov, encode_average, encode_pointwise, gram, gram_symmetric, CovBlocks, EvalCounter, ExtendedPoint,
    ObservationSet, OperatorRow, OperatorSystem,
};
pub use error::{KrigingError, Result};
pub use kernel::{MultiIndex, SqExpKernel};
