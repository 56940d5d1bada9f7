//! Gauss-Newton optimization of implicit neural surfaces.

pub mod error;
pub mod field;
pub mod geomio;
pub mod metrics;
pub mod optim;
pub mod residuals;
pub mod runner;
pub mod sampling;

pub use error::{Result, ShapeError};
pub use nalgebra;
