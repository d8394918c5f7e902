use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::prediction::SurvivalPrediction;
use super::trunk::{Activation, MlpTrunk};
use crate::dist::{Family, ParamVector, Quantity};
use crate::engine::{Init, ParameterStore, Scalar};
use crate::error::{Error, Result};
use crate::score::ScoringContext;

/// Whether `log σ` is an output of the trunk or a single free parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    #[default]
    Feature,
    Constant,
}

/// `quantity` of `family` at `t` as a function of taped `(μ, log σ)`.
pub fn dist_value<S: Scalar>(family: Family, quantity: Quantity, location: S, log_scale: S, t: f64) -> S {
    if S::is_tracked() {
        let e = family.value_grad(quantity, location.value(), log_scale.value(), t);
        S::lift2(location, log_scale, e.value, e.grad, e.clamped)
    } else {
        let v = family.value(quantity, location.value(), log_scale.value(), t);
        S::lift2(location, log_scale, v, [0.0; 2], false)
    }
}

/// AFT-type model whose trunk maps features to `θ(x) = (μ(x), log σ(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricSurvivalModel {
    pub family: Family,
    pub scale: ScaleMode,
    trunk: MlpTrunk,
    log_scale: Option<Range<usize>>,
}

impl ParametricSurvivalModel {
    /// Registers the model; the output biases start at `start = (μ, log σ)`.
    pub fn register(
        store: &mut ParameterStore,
        family: Family,
        p: usize,
        hidden: &[usize],
        activation: Activation,
        scale: ScaleMode,
        start: ParamVector,
    ) -> Result<Self> {
        let [mu0, ls0] = start.values;
        let (trunk, log_scale) = match scale {
            ScaleMode::Feature => (
                MlpTrunk::register(store, "", p, hidden, 2, activation, Init::Values(vec![mu0, ls0]))?,
                None,
            ),
            ScaleMode::Constant => {
                let trunk = MlpTrunk::register(store, "", p, hidden, 1, activation, Init::Constant(mu0))?;
                (trunk, Some(store.add("log_scale", 1, Init::Constant(ls0), false)))
            }
        };
        Ok(Self {
            family,
            scale,
            trunk,
            log_scale,
        })
    }

    pub fn trunk(&self) -> &MlpTrunk {
        &self.trunk
    }

    /// Unconstrained `(μ(x), log σ(x))`.
    pub fn theta<S: Scalar>(&self, params: &[S], x: &[f64]) -> (S, S) {
        let out = self.trunk.forward(params, x);
        match &self.log_scale {
            Some(r) => (out[0], params[r.start]),
            None => (out[0], out[1]),
        }
    }

    pub fn row_loss<S: Scalar>(&self, params: &[S], x: &[f64], ctx: &ScoringContext, i: usize) -> Option<S> {
        if !ctx.contributes(i) {
            return None;
        }
        let (mu, ls) = self.theta(params, x);
        let family = self.family;
        ctx.record_loss(
            i,
            |j| {
                let tau = ctx.points()[j];
                (
                    dist_value(family, Quantity::Cdf, mu, ls, tau),
                    dist_value(family, Quantity::Sf, mu, ls, tau),
                )
            },
            || {
                let q = if ctx.status(i) != 0.0 { Quantity::LogPdf } else { Quantity::LogSf };
                Some(dist_value(family, q, mu, ls, ctx.time(i)))
            },
        )
    }

    pub fn predict(&self, params: &[f64], x: &[f64], times: &[f64]) -> Result<SurvivalPrediction> {
        if x.len() != self.trunk.input() {
            return Err(Error::Validation(format!(
                "expected {} features, got {}",
                self.trunk.input(),
                x.len()
            )));
        }
        let (mu, ls) = self.theta(params, x);
        SurvivalPrediction::parametric(self.family, ParamVector::new(mu, ls), times)
    }

    /// `(intercept, slopes, σ)` of a linear, constant-scale model.
    pub fn coefficients(&self, params: &[f64]) -> Option<(f64, Vec<f64>, f64)> {
        let (b, w) = self.trunk.affine_coefficients(params, 0)?;
        let ls = params[self.log_scale.as_ref()?.start];
        Some((b, w.to_vec(), ls.exp()))
    }
}
