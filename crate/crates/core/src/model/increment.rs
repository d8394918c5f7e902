use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::prediction::{Interpolation, SurvivalPrediction};
use super::trunk::{Activation, MlpTrunk};
use crate::dist::LOG_FLOOR;
use crate::engine::{Init, ParameterStore, Scalar};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::score::ScoringContext;

/// Map of raw outputs onto `[0, 1]` used for the per-interval decrements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squash {
    #[default]
    Logistic,
    TruncatedRelu,
}

impl Squash {
    pub fn apply<S: Scalar>(self, g: S) -> S {
        match self {
            Squash::Logistic => g.logistic(),
            Squash::TruncatedRelu => g.clamp(0.0, 1.0),
        }
    }

    /// Raw output for which the squashed value equals `v`.
    pub fn inverse(self, v: f64) -> f64 {
        match self {
            Squash::Logistic => (v / (1.0 - v)).ln(),
            Squash::TruncatedRelu => v,
        }
    }
}

/// Initial decrement per interval, so that an untrained curve falls to
/// one half at the end of the grid.
fn initial_decrement(intervals: usize) -> f64 {
    0.5 / intervals as f64
}

/// `S(τ_j) = clamp(1 + Σ_{l≤j} α_l, 0, 1)` for `j = 1..J`.
pub fn cumulative_survival<S: Scalar>(alphas: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(alphas.len());
    let mut acc: Option<S> = None;
    for &a in alphas {
        let next = match acc {
            None => a,
            Some(s) => s + a,
        };
        acc = Some(next);
        out.push((next + 1.0).clamp(0.0, 1.0));
    }
    out
}

/// Loss of record `i` for a curve known at the grid points `surv[j] = S(τ_{j+1})`.
///
/// For the log-likelihood the curve is linear between grid points, so the
/// density is `(S(τ_{j-1}) - S(τ_j)) / Δ` on `(τ_{j-1}, τ_j]`. Records
/// beyond the grid count as censored at `τ_J`.
pub fn grid_curve_loss<S: Scalar>(grid: &TimeGrid, surv: &[S], ctx: &ScoringContext, i: usize) -> Option<S> {
    ctx.record_loss(
        i,
        |j| (-surv[j] + 1.0, surv[j]),
        || {
            let t = ctx.time(i);
            let Some(j) = grid.interval_of(t) else {
                return Some(surv[surv.len() - 1].ln_floor(LOG_FLOOR));
            };
            let cur = surv[j - 1];
            let prev = (j > 1).then(|| surv[j - 2]);
            let width = grid.width();
            if ctx.status(i) != 0.0 {
                let drop = match prev {
                    Some(p) => p - cur,
                    None => -cur + 1.0,
                };
                Some((drop / width).ln_floor(LOG_FLOOR))
            } else {
                let lo = grid.cut_points()[j - 1];
                let frac = (t - lo) / width;
                let s = match prev {
                    Some(p) => p + (cur - p) * frac,
                    None => cur * frac + (1.0 - frac),
                };
                Some(s.ln_floor(LOG_FLOOR))
            }
        },
    )
}

fn check_features(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Validation(format!("expected {expected} features, got {}", x.len())));
    }
    Ok(())
}

fn grid_prediction(grid: &TimeGrid, values: Vec<f64>, interpolation: Interpolation) -> Result<SurvivalPrediction> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: 0 });
    }
    SurvivalPrediction::from_knots(grid.points().to_vec(), values, interpolation)
}

/// Distribution-free model: a shared trunk emits one decrement per grid
/// interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSurvivalModel {
    grid: TimeGrid,
    gamma1: Squash,
    trunk: MlpTrunk,
}

impl IncrementSurvivalModel {
    pub fn register(
        store: &mut ParameterStore,
        p: usize,
        hidden: &[usize],
        activation: Activation,
        grid: TimeGrid,
        gamma1: Squash,
    ) -> Result<Self> {
        let j = grid.intervals();
        let bias = gamma1.inverse(initial_decrement(j));
        let trunk = MlpTrunk::register(store, "", p, hidden, j, activation, Init::Constant(bias))?;
        Ok(Self { grid, gamma1, trunk })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn trunk(&self) -> &MlpTrunk {
        &self.trunk
    }

    /// Decrements `α_l = -γ_1(g_l(x)) ∈ [-1, 0]`.
    pub fn increments<S: Scalar>(&self, params: &[S], x: &[f64]) -> Vec<S> {
        self.trunk
            .forward(params, x)
            .into_iter()
            .map(|g| -self.gamma1.apply(g))
            .collect()
    }

    pub fn survival<S: Scalar>(&self, params: &[S], x: &[f64]) -> Vec<S> {
        cumulative_survival(&self.increments(params, x))
    }

    pub fn row_loss<S: Scalar>(&self, params: &[S], x: &[f64], ctx: &ScoringContext, i: usize) -> Option<S> {
        if !ctx.contributes(i) {
            return None;
        }
        grid_curve_loss(&self.grid, &self.survival(params, x), ctx, i)
    }

    pub fn predict(&self, params: &[f64], x: &[f64], interpolation: Interpolation) -> Result<SurvivalPrediction> {
        check_features(self.trunk.input(), x)?;
        grid_prediction(&self.grid, self.survival(params, x), interpolation)
    }
}

/// Proportional-hazards model trained by a scoring rule:
/// `S(τ_j|x) = S_0(τ_j)^{exp(x·β)}` with `S_0` built from trainable
/// decrements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxSrModel {
    grid: TimeGrid,
    p: usize,
    baseline: Range<usize>,
    beta: Range<usize>,
}

impl CoxSrModel {
    pub fn register(store: &mut ParameterStore, p: usize, grid: TimeGrid) -> Self {
        let j = grid.intervals();
        let bias = Squash::Logistic.inverse(initial_decrement(j));
        let baseline = store.add("baseline", j, Init::Constant(bias), false);
        let beta = store.add("beta", p, Init::Zeros, false);
        Self { grid, p, baseline, beta }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn beta<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.beta.clone()]
    }

    pub fn baseline_survival<S: Scalar>(&self, params: &[S]) -> Vec<S> {
        let alphas: Vec<S> = params[self.baseline.clone()].iter().map(|&g| -g.logistic()).collect();
        cumulative_survival(&alphas)
    }

    pub fn survival<S: Scalar>(&self, params: &[S], x: &[f64]) -> Vec<S> {
        let s0 = self.baseline_survival(params);
        if self.p == 0 {
            return s0;
        }
        let beta = &params[self.beta.clone()];
        let hazard_ratio = S::dot_const(&beta[1..], &x[1..], beta[0] * x[0]).exp();
        s0.into_iter()
            .map(|s| (s.ln_floor(LOG_FLOOR) * hazard_ratio).exp())
            .collect()
    }

    pub fn row_loss<S: Scalar>(&self, params: &[S], x: &[f64], ctx: &ScoringContext, i: usize) -> Option<S> {
        if !ctx.contributes(i) {
            return None;
        }
        grid_curve_loss(&self.grid, &self.survival(params, x), ctx, i)
    }

    pub fn predict(&self, params: &[f64], x: &[f64], interpolation: Interpolation) -> Result<SurvivalPrediction> {
        check_features(self.p, x)?;
        let mut values = self.survival(params, x);
        // exp(ln 1 · r) can round just above a smaller predecessor
        for j in 1..values.len() {
            values[j] = values[j].min(values[j - 1]);
        }
        grid_prediction(&self.grid, values, interpolation)
    }
}
