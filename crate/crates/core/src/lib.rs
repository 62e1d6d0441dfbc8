//! Adam-family optimizers instrumented with preconditioned-Hessian probes,
//! loss-spike detection and five-stage segmentation, and numerical checkers
//! for the stability results these rest on.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grad;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod spectral;
pub mod spike;
pub mod theory;

pub use error::{Error, Result};
pub use grad::Objective;
pub use params::ParamVector;
