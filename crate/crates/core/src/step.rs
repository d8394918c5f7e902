//! Right-continuous step functions.

use serde::{Deserialize, Serialize};

/// A right-continuous piecewise-constant function on `[0, ∞)`.
///
/// The value at `t` is the value attached to the largest knot `<= t`, or
/// `pre_value` before the first knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    pre_value: f64,
}

impl StepFunction {
    /// Panics if `knots` and `values` differ in length or knots are not strictly increasing.
    pub fn new(knots: Vec<f64>, values: Vec<f64>, pre_value: f64) -> Self {
        assert_eq!(knots.len(), values.len(), "knots and values must align");
        assert!(
            knots.windows(2).all(|w| w[0] < w[1]),
            "knots must be strictly increasing"
        );
        Self {
            knots,
            values,
            pre_value,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Vec::new(), Vec::new(), value)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pre_value(&self) -> f64 {
        self.pre_value
    }

    pub fn eval(&self, t: f64) -> f64 {
        // number of knots <= t
        let k = self.knots.partition_point(|&x| x <= t);
        if k == 0 {
            self.pre_value
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit `f(t⁻)`: value at the largest knot strictly below `t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x < t);
        if k == 0 {
            self.pre_value
        } else {
            self.values[k - 1]
        }
    }

    /// Pointwise `1 - f`.
    pub fn complement(&self) -> Self {
        Self {
            knots: self.knots.clone(),
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            pre_value: 1.0 - self.pre_value,
        }
    }
}
