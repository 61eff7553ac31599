//! Reductions of censored time-to-event tasks to standard regression and
//! classification problems, with the estimators, learners and evaluation
//! harness around them.

pub mod data;
pub mod estimators;
pub mod eval;
pub mod learners;
pub mod model;
pub mod partition;
pub mod reduce_dist;
pub mod reduce_point;
pub mod simulate;

mod error;
pub use error::ReductionError;
