//! Censoring-adapted scoring rules, the grid-discretized training objective
//! and its competing-risks extension.
//!
//! All rules are evaluated through [`ScoringContext::record_loss`], which is
//! generic over [`Scalar`] so that evaluation (`f64`) and training (taped
//! values) share the same arithmetic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, SurvivalRecord};
use crate::dist::LOG_FLOOR;
use crate::engine::{pairwise_sum, Scalar};
use crate::error::{Error, Result};
use crate::estimators::{censoring_weight, kaplan_meier, Target, DEFAULT_G_FLOOR};
use crate::grid::{make_grid, TimeGrid};
use crate::step::StepFunction;

/// Number of cut points of evaluation grids.
pub const EVAL_INTERVALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringRule {
    Isbs,
    Scrps,
    Risbs,
    Risll,
    Rcll,
}

impl ScoringRule {
    pub const ALL: [ScoringRule; 5] = [
        ScoringRule::Isbs,
        ScoringRule::Scrps,
        ScoringRule::Risbs,
        ScoringRule::Risll,
        ScoringRule::Rcll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoringRule::Isbs => "isbs",
            ScoringRule::Scrps => "scrps",
            ScoringRule::Risbs => "risbs",
            ScoringRule::Risll => "risll",
            ScoringRule::Rcll => "rcll",
        }
    }

    /// Whether the rule needs a density at the observed time.
    pub fn needs_density(self) -> bool {
        self == ScoringRule::Rcll
    }
}

impl std::str::FromStr for ScoringRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScoringRule::ALL
            .into_iter()
            .find(|r| r.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown scoring rule `{s}`")))
    }
}

impl std::fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which log-probability RISLL uses on either side of the observed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RisllOrientation {
    /// `log F` before `t_i`, `log S` after.
    #[default]
    Reversed,
    /// `log S` before `t_i`, `log F` after (the usual survival log-loss).
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreKind {
    pub rule: ScoringRule,
    #[serde(default)]
    pub orientation: RisllOrientation,
}

impl ScoreKind {
    pub fn new(rule: ScoringRule) -> Self {
        Self {
            rule,
            orientation: RisllOrientation::Reversed,
        }
    }

    pub fn conventional(rule: ScoringRule) -> Self {
        Self {
            rule,
            orientation: RisllOrientation::Conventional,
        }
    }
}

impl Default for ScoreKind {
    fn default() -> Self {
        Self::new(ScoringRule::Risbs)
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.rule, self.orientation) {
            (ScoringRule::Risll, RisllOrientation::Conventional) => f.write_str("risll(conventional)"),
            (rule, _) => write!(f, "{rule}"),
        }
    }
}

impl From<ScoringRule> for ScoreKind {
    fn from(rule: ScoringRule) -> Self {
        Self::new(rule)
    }
}

/// Per-subject predictive distribution accessed at arbitrary times.
pub trait SurvivalCurve {
    fn sf(&self, t: f64) -> f64;

    fn cdf(&self, t: f64) -> f64 {
        1.0 - self.sf(t)
    }

    fn density(&self, _t: f64) -> Option<f64> {
        None
    }
}

/// Integrand of `kind` for a subject with status `d` and time `t_i` at
/// grid time `tau`. `g_tau` is `Ĝ(τ⁻)` and `g_event` is `Ĝ(t_i⁻)`, both
/// already floored. Returns `None` for a term that is exactly zero.
///
/// RCLL has no integrand; use [`ScoringContext::record_loss`].
#[allow(clippy::too_many_arguments)]
pub fn integrand<S: Scalar>(
    kind: ScoreKind,
    d: f64,
    t_i: f64,
    tau: f64,
    cdf: S,
    sf: S,
    g_tau: f64,
    g_event: f64,
) -> Option<S> {
    let before = tau < t_i;
    match kind.rule {
        ScoringRule::Isbs => {
            if before {
                Some(cdf.square() / g_tau)
            } else {
                (d != 0.0).then(|| sf.square() * (d / g_event))
            }
        }
        ScoringRule::Scrps => {
            if before {
                Some(cdf.square())
            } else {
                (d != 0.0).then(|| sf.square() * d)
            }
        }
        ScoringRule::Risbs => {
            (d != 0.0).then(|| if before { cdf } else { sf }.square() * (d / g_event))
        }
        ScoringRule::Risll => (d != 0.0).then(|| {
            let use_cdf = match kind.orientation {
                RisllOrientation::Reversed => before,
                RisllOrientation::Conventional => !before,
            };
            let p = if use_cdf { cdf } else { sf };
            p.ln_floor(LOG_FLOOR) * (-d / g_event)
        }),
        ScoringRule::Rcll => None,
    }
}

/// Quantities fixed before training or evaluation: the grid, the status
/// indicators and the floored censoring weights.
#[derive(Debug, Clone)]
pub struct ScoringContext {
    pub kind: ScoreKind,
    points: Vec<f64>,
    g_grid: Vec<f64>,
    times: Vec<f64>,
    status: Vec<f64>,
    g_event: Vec<f64>,
}

impl ScoringContext {
    /// Context with the usual status `d_i`.
    pub fn new(kind: ScoreKind, data: &SurvivalDataset, grid: &TimeGrid, g: &StepFunction, floor: f64) -> Self {
        Self::with_status(kind, data, grid, g, floor, |r| r.status())
    }

    /// Context with the cause-specific status `d_{i,k}`.
    pub fn for_cause(
        kind: ScoreKind,
        data: &SurvivalDataset,
        grid: &TimeGrid,
        g: &StepFunction,
        floor: f64,
        cause: usize,
    ) -> Self {
        Self::with_status(kind, data, grid, g, floor, |r| r.cause_status(cause))
    }

    fn with_status(
        kind: ScoreKind,
        data: &SurvivalDataset,
        grid: &TimeGrid,
        g: &StepFunction,
        floor: f64,
        status: impl Fn(&SurvivalRecord) -> f64,
    ) -> Self {
        let points = grid.points().to_vec();
        Self {
            kind,
            g_grid: points.iter().map(|&t| censoring_weight(g, t, floor)).collect(),
            points,
            times: data.records().iter().map(|r| r.time).collect(),
            status: data.records().iter().map(status).collect(),
            g_event: data
                .records()
                .iter()
                .map(|r| censoring_weight(g, r.time, floor))
                .collect(),
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn status(&self, i: usize) -> f64 {
        self.status[i]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// False when every term of record `i` is exactly zero.
    pub fn contributes(&self, i: usize) -> bool {
        match self.kind.rule {
            ScoringRule::Risbs | ScoringRule::Risll => self.status[i] != 0.0,
            _ => true,
        }
    }

    /// Loss of record `i`: the grid average of the integrand, or for RCLL
    /// `-log_lik` where `log_lik` is `log f(t_i)` for events and
    /// `log S(t_i)` otherwise.
    ///
    /// `at_grid(j)` returns `(F, S)` at the `j`-th grid point.
    pub fn record_loss<S: Scalar>(
        &self,
        i: usize,
        at_grid: impl Fn(usize) -> (S, S),
        log_lik: impl FnOnce() -> Option<S>,
    ) -> Option<S> {
        if self.kind.rule == ScoringRule::Rcll {
            return log_lik().map(|l| -l);
        }
        if !self.contributes(i) {
            return None;
        }
        let (d, t_i, g_event) = (self.status[i], self.times[i], self.g_event[i]);
        let terms: Vec<S> = self
            .points
            .iter()
            .enumerate()
            .filter_map(|(j, &tau)| {
                let (f, s) = at_grid(j);
                integrand(self.kind, d, t_i, tau, f, s, self.g_grid[j], g_event)
            })
            .collect();
        S::sum(&terms).map(|total| total / self.points.len() as f64)
    }

    /// Record loss evaluated on an arbitrary curve.
    pub fn curve_loss<P: SurvivalCurve + ?Sized>(&self, i: usize, pred: &P) -> Result<f64> {
        if self.kind.rule == ScoringRule::Rcll {
            let t = self.times[i];
            let d = self.status[i];
            let lik = if d != 0.0 {
                pred.density(t).ok_or_else(|| {
                    Error::Config("RCLL requires a density accessor".into())
                })?
            } else {
                pred.sf(t)
            };
            return Ok(-lik.max(LOG_FLOOR).ln());
        }
        Ok(self
            .record_loss(i, |j| {
                let tau = self.points[j];
                (pred.cdf(tau), pred.sf(tau))
            }, || None)
            .unwrap_or(0.0))
    }

    /// `(1/N) Σ_i loss_i` with deterministic pairwise reduction.
    pub fn objective<P: SurvivalCurve + Sync>(&self, preds: &[P]) -> Result<f64> {
        if preds.len() != self.n() {
            return Err(Error::Validation(format!(
                "{} predictions for {} records",
                preds.len(),
                self.n()
            )));
        }
        if self.n() == 0 {
            return Err(Error::Validation("objective of an empty dataset".into()));
        }
        let losses = (0..self.n())
            .into_par_iter()
            .map(|i| self.curve_loss(i, &preds[i]))
            .collect::<Result<Vec<f64>>>()?;
        Ok(pairwise_sum(&losses) / self.n() as f64)
    }
}

/// Single pointwise score of `rec` at `tau` (RCLL ignores `tau`).
pub fn pointwise<P: SurvivalCurve + ?Sized>(
    kind: ScoreKind,
    rec: &SurvivalRecord,
    tau: f64,
    pred: &P,
    g: &StepFunction,
    floor: f64,
) -> Result<f64> {
    if kind.rule == ScoringRule::Rcll {
        let lik = if rec.event {
            pred.density(rec.time)
                .ok_or_else(|| Error::Config("RCLL requires a density accessor".into()))?
        } else {
            pred.sf(rec.time)
        };
        return Ok(-lik.max(LOG_FLOOR).ln());
    }
    let v = integrand(
        kind,
        rec.status(),
        rec.time,
        tau,
        pred.cdf(tau),
        pred.sf(tau),
        censoring_weight(g, tau, floor),
        censoring_weight(g, rec.time, floor),
    );
    Ok(v.unwrap_or(0.0))
}

/// Grid-averaged objective `(1/N) Σ_i (1/J) Σ_j SR_i(τ_j)`.
pub fn objective<P: SurvivalCurve + Sync>(
    kind: ScoreKind,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    preds: &[P],
    g: &StepFunction,
    floor: f64,
) -> Result<f64> {
    ScoringContext::new(kind, data, grid, g, floor).objective(preds)
}

/// `Σ_k` of the objective with status replaced by `d_{i,k}`; `cif_preds[i][k]`
/// exposes `F = CIF_{k+1}` and `S = 1 - CIF_{k+1}`.
pub fn cr_objective<P: SurvivalCurve + Sync + Clone>(
    kind: ScoreKind,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    cif_preds: &[Vec<P>],
    g: &StepFunction,
    floor: f64,
) -> Result<f64> {
    if cif_preds.len() != data.n() {
        return Err(Error::Validation("one set of CIF predictions per record required".into()));
    }
    if cif_preds.iter().any(|p| p.len() != data.k()) {
        return Err(Error::Validation(format!("expected {} CIFs per record", data.k())));
    }
    let mut total = 0.0;
    for k in 1..=data.k() {
        let preds: Vec<P> = cif_preds.iter().map(|p| p[k - 1].clone()).collect();
        total += ScoringContext::for_cause(kind, data, grid, g, floor, k).objective(&preds)?;
    }
    Ok(total)
}

/// Grid and censoring estimate used to evaluate on `test` at follow-up
/// quantile `q`.
pub fn evaluation_setup(test: &SurvivalDataset, q: f64) -> Result<(TimeGrid, StepFunction)> {
    let grid = make_grid(test, EVAL_INTERVALS, q)?;
    if !test.records().iter().any(|r| r.event && r.time <= grid.tau_star()) {
        return Err(Error::Validation(format!(
            "no events up to the {q} quantile of the evaluation data"
        )));
    }
    let g = kaplan_meier(test, Target::Censoring)?;
    Ok((grid, g))
}

/// Objective on an evaluation grid ending at the `q`-quantile of observed
/// test times, with `Ĝ` estimated on the test data.
pub fn evaluate_at_quantile<P: SurvivalCurve + Sync>(
    kind: ScoreKind,
    test: &SurvivalDataset,
    preds: &[P],
    q: f64,
) -> Result<f64> {
    let (grid, g) = evaluation_setup(test, q)?;
    objective(kind, test, &grid, preds, &g, DEFAULT_G_FLOOR)
}

/// Cause-`k` score with `d_{i,k}`; `cif_preds` expose `F = CIF_k`.
pub fn evaluate_cause_at_quantile<P: SurvivalCurve + Sync>(
    kind: ScoreKind,
    test: &SurvivalDataset,
    cif_preds: &[P],
    cause: usize,
    q: f64,
) -> Result<f64> {
    let (grid, g) = evaluation_setup(test, q)?;
    ScoringContext::for_cause(kind, test, &grid, &g, DEFAULT_G_FLOOR, cause).objective(cif_preds)
}
