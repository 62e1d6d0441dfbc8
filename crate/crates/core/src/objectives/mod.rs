//! Loss surfaces: diagonal quadratics and two-layer tanh networks trained
//! full-batch with mean-squared error.

mod dataset;
mod fnn;
mod quadratic;

pub use dataset::Dataset;
pub use fnn::{FnnTask, FnnTaskSpec, Target};
pub use quadratic::{Quadratic, QuadraticSpec};
