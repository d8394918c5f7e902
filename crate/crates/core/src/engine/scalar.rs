//! Numeric abstraction shared by plain evaluation (`f64`) and taped
//! evaluation ([`Var`]), so model and scoring code is written once.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn logistic(self) -> Self;
    fn clamp(self, lo: f64, hi: f64) -> Self;
    fn square(self) -> Self;
    /// `ln(max(self, floor))`.
    fn ln_floor(self, floor: f64) -> Self;
    /// Function of two inputs with known value and partials.
    fn lift2(a: Self, b: Self, value: f64, partials: [f64; 2], nonsmooth: bool) -> Self;
    fn sum(items: &[Self]) -> Option<Self>;
    fn dot_const(weights: &[Self], x: &[f64], bias: Self) -> Self;
    fn dot(weights: &[Self], x: &[Self], bias: Self) -> Self;
    /// Whether partial derivatives are tracked.
    fn is_tracked() -> bool;

    fn relu(self) -> Self {
        self.clamp(0.0, f64::INFINITY)
    }

    /// Records that a branch switch is active at this point.
    fn mark_nonsmooth(self) {}
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn logistic(self) -> Self {
        if self >= 0.0 {
            1.0 / (1.0 + (-self).exp())
        } else {
            let e = self.exp();
            e / (1.0 + e)
        }
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    fn square(self) -> Self {
        self * self
    }
    fn ln_floor(self, floor: f64) -> Self {
        self.max(floor).ln()
    }
    fn lift2(_: Self, _: Self, value: f64, _: [f64; 2], _: bool) -> Self {
        value
    }
    fn sum(items: &[Self]) -> Option<Self> {
        (!items.is_empty()).then(|| items.iter().sum())
    }
    fn dot_const(weights: &[Self], x: &[f64], bias: Self) -> Self {
        weights.iter().zip(x).fold(bias, |acc, (w, xi)| acc + w * xi)
    }
    fn dot(weights: &[Self], x: &[Self], bias: Self) -> Self {
        Self::dot_const(weights, x, bias)
    }
    fn is_tracked() -> bool {
        false
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        Var::value(&self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn logistic(self) -> Self {
        Var::logistic(self)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        Var::clamp(self, lo, hi)
    }
    fn square(self) -> Self {
        Var::square(self)
    }
    fn ln_floor(self, floor: f64) -> Self {
        Var::ln_floor(self, floor)
    }
    fn lift2(a: Self, b: Self, value: f64, partials: [f64; 2], nonsmooth: bool) -> Self {
        if nonsmooth {
            a.tape().mark_nonsmooth();
        }
        Var::custom(&[a, b], value, &partials)
    }
    fn sum(items: &[Self]) -> Option<Self> {
        Var::sum(items)
    }
    fn dot_const(weights: &[Self], x: &[f64], bias: Self) -> Self {
        Var::dot_const(weights, x, bias)
    }
    fn dot(weights: &[Self], x: &[Self], bias: Self) -> Self {
        Var::dot(weights, x, bias)
    }
    fn is_tracked() -> bool {
        true
    }
    fn mark_nonsmooth(self) {
        self.tape().mark_nonsmooth();
    }
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`, not on how the work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}
