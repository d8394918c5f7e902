//! Reverse-mode differentiation, parameter storage and the training loop.

mod check;
mod optim;
mod params;
mod scalar;
mod tape;

pub use check::{finite_diff_check, finite_diff_check_fn, GradCheck};
pub use optim::{
    all_rows, fit, objective_value, value_and_grad, EpochRecord, FitConfig, FitTrace, RowObjective,
    ValueGrad,
};
pub use params::{Init, ParamSlice, ParameterStore};
pub use scalar::{pairwise_sum, Scalar};
pub use tape::{OpKind, Tape, Var};
