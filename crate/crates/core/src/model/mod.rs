//! Survival model families, their scoring-rule training and the classical
//! likelihood baselines.

mod increment;
mod mle;
mod parametric;
mod prediction;
mod trunk;

pub use increment::{cumulative_survival, grid_curve_loss, CoxSrModel, IncrementSurvivalModel, Squash};
pub use mle::{fit_aft_mle, fit_cox_mle, km_predictor, CoxModel, KmPredictor};
pub use parametric::{dist_value, ParametricSurvivalModel, ScaleMode};
pub use prediction::{read_prediction_matrix, write_prediction_matrix, Interpolation, SurvivalPrediction};
pub use trunk::{Activation, MlpTrunk};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_indices, SurvivalDataset};
use crate::dist::{Family, ParamVector};
use crate::engine::{self, FitConfig, FitTrace, ParameterStore, RowObjective, Scalar};
use crate::error::{Error, Result};
use crate::estimators::{kaplan_meier, Target, DEFAULT_G_FLOOR};
use crate::grid::{make_grid, TimeGrid};
use crate::score::{ScoreKind, ScoringContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    Parametric,
    Increment,
    CoxSr,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(Self::Parametric),
            "increment" => Ok(Self::Increment),
            "cox_sr" => Ok(Self::CoxSr),
            _ => Err(Error::Config(format!("unknown model family `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub distribution: Family,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub scale: ScaleMode,
    /// Number of grid intervals `J`.
    pub intervals: usize,
    /// Quantile of observed times that ends the grid.
    pub cutoff: f64,
    pub gamma1: Squash,
    pub interpolation: Interpolation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Parametric,
            distribution: Family::LogNormal,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            scale: ScaleMode::Feature,
            intervals: 30,
            cutoff: 0.9,
            gamma1: Squash::Logistic,
            interpolation: Interpolation::Step,
        }
    }
}

impl ModelConfig {
    /// Linear location, constant scale: the AFT regression model.
    pub fn linear_aft(distribution: Family) -> Self {
        Self {
            distribution,
            hidden: vec![],
            scale: ScaleMode::Constant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 {
            return Err(Error::Config("the grid needs at least one interval".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff <= 1.0) {
            return Err(Error::Config(format!("cutoff quantile must lie in (0, 1], got {}", self.cutoff)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub score: ScoreKind,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurvivalModel {
    Parametric(ParametricSurvivalModel),
    Increment(IncrementSurvivalModel),
    CoxSr(CoxSrModel),
}

impl SurvivalModel {
    pub fn row_loss<S: Scalar>(&self, params: &[S], x: &[f64], ctx: &ScoringContext, i: usize) -> Option<S> {
        match self {
            SurvivalModel::Parametric(m) => m.row_loss(params, x, ctx, i),
            SurvivalModel::Increment(m) => m.row_loss(params, x, ctx, i),
            SurvivalModel::CoxSr(m) => m.row_loss(params, x, ctx, i),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            SurvivalModel::Parametric(_) => ModelFamily::Parametric,
            SurvivalModel::Increment(_) => ModelFamily::Increment,
            SurvivalModel::CoxSr(_) => ModelFamily::CoxSr,
        }
    }
}

/// Median and log standard deviation of the observed log times.
pub fn log_time_start(data: &SurvivalDataset) -> ParamVector {
    let mut logs: Vec<f64> = data.records().iter().map(|r| r.time.ln()).collect();
    if logs.is_empty() {
        return ParamVector::new(0.0, 0.0);
    }
    logs.sort_by(f64::total_cmp);
    let n = logs.len();
    let median = if n % 2 == 1 { logs[n / 2] } else { 0.5 * (logs[n / 2 - 1] + logs[n / 2]) };
    let mean = logs.iter().sum::<f64>() / n as f64;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64;
    let log_sd = if var > 0.0 { 0.5 * var.ln() } else { 0.0 };
    ParamVector::new(median, log_sd)
}

/// Builds an untrained model and its parameter store (initialized with
/// `seed`) on a grid derived from `data`.
pub fn build_model(cfg: &ModelConfig, data: &SurvivalDataset, seed: u64) -> Result<(SurvivalModel, TimeGrid, ParameterStore)> {
    cfg.validate()?;
    let grid = make_grid(data, cfg.intervals, cfg.cutoff)?;
    let mut store = ParameterStore::new();
    let p = data.p();
    let model = match cfg.family {
        ModelFamily::Parametric => SurvivalModel::Parametric(ParametricSurvivalModel::register(
            &mut store,
            cfg.distribution,
            p,
            &cfg.hidden,
            cfg.activation,
            cfg.scale,
            log_time_start(data),
        )?),
        ModelFamily::Increment => SurvivalModel::Increment(IncrementSurvivalModel::register(
            &mut store,
            p,
            &cfg.hidden,
            cfg.activation,
            grid.clone(),
            cfg.gamma1,
        )?),
        ModelFamily::CoxSr => SurvivalModel::CoxSr(CoxSrModel::register(&mut store, p, grid.clone())),
    };
    store.initialize(seed);
    Ok((model, grid, store))
}

/// Scoring context on `grid` with `Ĝ` estimated from `data`.
pub fn scoring_context(score: ScoreKind, data: &SurvivalDataset, grid: &TimeGrid) -> Result<ScoringContext> {
    let g = kaplan_meier(data, Target::Censoring)?;
    Ok(ScoringContext::new(score, data, grid, &g, DEFAULT_G_FLOOR))
}

/// Training objective restricted to a subset of the rows of `data`.
pub struct ScoringObjective<'a> {
    model: &'a SurvivalModel,
    ctx: &'a ScoringContext,
    data: &'a SurvivalDataset,
    rows: Vec<usize>,
}

impl<'a> ScoringObjective<'a> {
    pub fn new(model: &'a SurvivalModel, ctx: &'a ScoringContext, data: &'a SurvivalDataset, rows: Vec<usize>) -> Self {
        Self { model, ctx, data, rows }
    }
}

impl RowObjective for ScoringObjective<'_> {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn row_loss<S: Scalar>(&self, params: &[S], row: usize) -> Option<S> {
        let i = self.rows[row];
        self.model.row_loss(params, &self.data.records()[i].features, self.ctx, i)
    }
}

/// Model with trained parameters; serializes to the JSON model envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub model: SurvivalModel,
    pub grid: TimeGrid,
    pub score: ScoreKind,
    pub interpolation: Interpolation,
    pub params: ParameterStore,
}

impl FittedModel {
    pub fn predict(&self, x: &[f64]) -> Result<SurvivalPrediction> {
        let params = self.params.values();
        match &self.model {
            SurvivalModel::Parametric(m) => m.predict(params, x, self.grid.points()),
            SurvivalModel::Increment(m) => m.predict(params, x, self.interpolation),
            SurvivalModel::CoxSr(m) => m.predict(params, x, self.interpolation),
        }
    }

    /// `(intercept, slopes, σ)` for a linear constant-scale parametric model.
    pub fn aft_coefficients(&self) -> Option<(f64, Vec<f64>, f64)> {
        match &self.model {
            SurvivalModel::Parametric(m) => m.coefficients(self.params.values()),
            _ => None,
        }
    }

    pub fn cox_coefficients(&self) -> Option<Vec<f64>> {
        match &self.model {
            SurvivalModel::CoxSr(m) => Some(m.beta(self.params.values()).to_vec()),
            _ => None,
        }
    }

    /// Training objective of these parameters on `data` (grid and `Ĝ`
    /// from `data`'s own censoring).
    pub fn objective_on(&self, data: &SurvivalDataset) -> Result<f64> {
        let ctx = scoring_context(self.score, data, &self.grid)?;
        let obj = ScoringObjective::new(&self.model, &ctx, data, (0..data.n()).collect());
        Ok(engine::objective_value(&obj, self.params.values(), &engine::all_rows(&obj)))
    }
}

/// Minimizes the grid-discretized scoring objective for the configured model.
pub fn fit_scoring(data: &SurvivalDataset, cfg: &TrainConfig) -> Result<(FittedModel, FitTrace)> {
    cfg.fit.validate()?;
    if data.n_events() == 0 {
        return Err(Error::Validation("training data contain no events".into()));
    }
    let (model, grid, mut store) = build_model(&cfg.model, data, cfg.fit.seed)?;
    let ctx = scoring_context(cfg.score, data, &grid)?;
    let (train_rows, val_rows) = if cfg.fit.validation_fraction > 0.0 {
        let (t, v) = split_indices(data, 1.0 - cfg.fit.validation_fraction, cfg.fit.seed ^ 0x5eed)?;
        (t, Some(v))
    } else {
        ((0..data.n()).collect(), None)
    };
    let train = ScoringObjective::new(&model, &ctx, data, train_rows);
    let val = val_rows.map(|rows| ScoringObjective::new(&model, &ctx, data, rows));
    let trace = engine::fit(&mut store, &train, val.as_ref(), &cfg.fit)?;
    Ok((
        FittedModel {
            model,
            grid,
            score: cfg.score,
            interpolation: cfg.model.interpolation,
            params: store,
        },
        trace,
    ))
}

/// Any fitted survival predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Scoring(FittedModel),
    Cox(CoxModel),
    Km(KmPredictor),
}

impl Predictor {
    pub fn predict(&self, x: &[f64]) -> Result<SurvivalPrediction> {
        match self {
            Predictor::Scoring(m) => m.predict(x),
            Predictor::Cox(m) => m.predict(x),
            Predictor::Km(m) => m.predict(x),
        }
    }

    pub fn predict_all(&self, data: &SurvivalDataset) -> Result<Vec<SurvivalPrediction>> {
        data.records().par_iter().map(|r| self.predict(&r.features)).collect()
    }
}

/// Compares the taped gradient of the training objective at the initial
/// parameters of `cfg` against central differences with step `h`.
pub fn check_gradients(data: &SurvivalDataset, cfg: &TrainConfig, h: f64) -> Result<engine::GradCheck> {
    let (model, grid, store) = build_model(&cfg.model, data, cfg.fit.seed)?;
    let ctx = scoring_context(cfg.score, data, &grid)?;
    let obj = ScoringObjective::new(&model, &ctx, data, (0..data.n()).collect());
    engine::finite_diff_check(&obj, store.values(), &engine::all_rows(&obj), h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;
    use crate::engine::finite_diff_check;
    use crate::score::ScoringRule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, p: usize, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t = (1.0 + x.first().copied().unwrap_or(0.0) * 0.5 + rng.random_range(-0.8..0.8f64)).exp();
                SurvivalRecord::new(t, rng.random_bool(0.7), x)
            })
            .collect();
        SurvivalDataset::new(recs, p, 1).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = toy(40, 2, 1);
        for family in [ModelFamily::Parametric, ModelFamily::Increment, ModelFamily::CoxSr] {
            for rule in ScoringRule::ALL {
                let cfg = ModelConfig {
                    family,
                    hidden: vec![4],
                    intervals: 6,
                    ..ModelConfig::default()
                };
                let (model, grid, store) = build_model(&cfg, &data, 3).unwrap();
                let ctx = scoring_context(ScoreKind::new(rule), &data, &grid).unwrap();
                let obj = ScoringObjective::new(&model, &ctx, &data, (0..data.n()).collect());
                let c = finite_diff_check(&obj, store.values(), &engine::all_rows(&obj), 1e-5).unwrap();
                if !c.nonsmooth {
                    assert!(c.max_rel_error < 1e-4, "{family:?} {rule:?}: {c:?}");
                }
            }
        }
    }

    #[test]
    fn fit_reduces_objective_and_round_trips() {
        let data = toy(200, 1, 2);
        let cfg = TrainConfig {
            model: ModelConfig {
                family: ModelFamily::Increment,
                hidden: vec![8],
                intervals: 10,
                ..ModelConfig::default()
            },
            fit: FitConfig {
                max_epochs: 30,
                ..FitConfig::default()
            },
            ..TrainConfig::default()
        };
        let (fitted, trace) = fit_scoring(&data, &cfg).unwrap();
        let first = trace.epochs[0].val_objective.unwrap();
        let best = trace.epochs[trace.best_epoch].val_objective.unwrap();
        assert!(best <= first);
        let json = serde_json::to_string(&Predictor::Scoring(fitted.clone())).unwrap();
        let back: Predictor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Predictor::Scoring(fitted.clone()));
        let x = &data.records()[0].features;
        assert_eq!(back.predict(x).unwrap(), fitted.predict(x).unwrap());
    }

    #[test]
    fn every_family_round_trips_through_json() {
        let data = toy(60, 2, 5);
        for family in [ModelFamily::Parametric, ModelFamily::Increment, ModelFamily::CoxSr] {
            let cfg = TrainConfig {
                model: ModelConfig { family, hidden: vec![3], intervals: 5, ..ModelConfig::default() },
                fit: FitConfig { max_epochs: 2, ..FitConfig::default() },
                ..TrainConfig::default()
            };
            let p = Predictor::Scoring(fit_scoring(&data, &cfg).unwrap().0);
            let back: Predictor = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
            assert_eq!(back, p, "{family:?}");
        }
        for p in [Predictor::Cox(fit_cox_mle(&data).unwrap()), Predictor::Km(km_predictor(&data).unwrap())] {
            let back: Predictor = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn feature_free_increment_model_tracks_kaplan_meier() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let recs: Vec<_> = (0..1500)
            .map(|_| {
                let y = -(rng.random::<f64>().max(1e-300)).ln() * 2.0;
                let c = rng.random_range(0.0..8.0);
                SurvivalRecord::new(y.min(c), y <= c, vec![])
            })
            .collect();
        let data = SurvivalDataset::new(recs, 0, 1).unwrap();
        let cfg = TrainConfig {
            model: ModelConfig {
                family: ModelFamily::Increment,
                hidden: vec![],
                intervals: 20,
                ..ModelConfig::default()
            },
            score: ScoreKind::new(ScoringRule::Risbs),
            fit: FitConfig {
                learning_rate: 0.05,
                batch_size: 1500,
                max_epochs: 400,
                validation_fraction: 0.0,
                ..FitConfig::default()
            },
        };
        let (fitted, _) = fit_scoring(&data, &cfg).unwrap();
        let km = kaplan_meier(&data, Target::Event).unwrap();
        let pred = fitted.predict(&[]).unwrap();
        let sup = fitted
            .grid
            .points()
            .iter()
            .map(|&t| (pred.at(t) - km.eval(t)).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 0.05, "sup distance {sup}");
    }
}
