//! Central finite-difference verification of reverse-mode gradients.

use serde::Serialize;

use super::optim::{objective_value, value_and_grad, RowObjective};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    /// `max_k |g_ad - g_fd| / max(1e-8, |g_fd|)`.
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    /// A clamp or floor was active at the evaluation point, so the result
    /// compares against a subgradient.
    pub nonsmooth: bool,
}

/// Compares `grad` against central differences of `f` at `params`.
pub fn finite_diff_check_fn(f: impl Fn(&[f64]) -> f64, grad: &[f64], params: &[f64], h: f64) -> GradCheck {
    let mut x = params.to_vec();
    let mut worst = (0.0, 0);
    for k in 0..params.len() {
        x[k] = params[k] + h;
        let up = f(&x);
        x[k] = params[k] - h;
        let down = f(&x);
        x[k] = params[k];
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / fd.abs().max(1e-8);
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, k);
        }
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
        nonsmooth: false,
    }
}

/// Checks the taped gradient of a row objective over `rows`.
pub fn finite_diff_check<O: RowObjective + ?Sized>(
    obj: &O,
    params: &[f64],
    rows: &[usize],
    h: f64,
) -> Result<GradCheck> {
    let vg = value_and_grad(obj, params, rows)?;
    let mut check = finite_diff_check_fn(|p| objective_value(obj, p, rows), &vg.grad, params, h);
    check.nonsmooth = vg.nonsmooth > 0;
    Ok(check)
}
