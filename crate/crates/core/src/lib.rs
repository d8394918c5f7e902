//! Survival models trained by gradient-based minimization of
//! censoring-adapted scoring rules on a discrete time grid.

pub mod competing;
pub mod data;
pub mod dist;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod lab;
pub mod model;
pub mod score;
pub mod step;

pub use error::{Error, Result};
