//! Synthetic data generators and experiment drivers.

mod ablation;
mod benchmark;
mod dgp;
mod recovery;
mod report;
mod search;

pub use ablation::*;
pub use benchmark::*;
pub use dgp::*;
pub use recovery::*;
pub use report::*;
pub use search::*;
