//! Random hyperparameter search on a single inner validation split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, SurvivalDataset};
use crate::error::{Error, Result};
use crate::model::{fit_scoring, Predictor, TrainConfig};
use crate::score::{evaluate_at_quantile, ScoringRule};

const INNER_TRAIN_FRACTION: f64 = 0.8;
const SELECTION_QUANTILE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Bounds of the log-uniform learning rate.
    pub learning_rate: [f64; 2],
    /// Width choices, applied to every hidden layer of the base model.
    pub widths: Vec<usize>,
    /// Bounds of the uniform L2 strength.
    pub l2: [f64; 2],
    /// Choices for the number of training grid intervals.
    pub intervals: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: [1e-3, 3e-2],
            widths: vec![16, 32, 64],
            l2: [0.0, 1e-3],
            intervals: vec![10, 20, 30, 50],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let [lr_lo, lr_hi] = self.learning_rate;
        if !(lr_lo > 0.0 && lr_lo <= lr_hi) {
            return Err(Error::Config(format!("bad learning-rate range {lr_lo}..{lr_hi}")));
        }
        let [l2_lo, l2_hi] = self.l2;
        if !(l2_lo >= 0.0 && l2_lo <= l2_hi) {
            return Err(Error::Config(format!("bad L2 range {l2_lo}..{l2_hi}")));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("width choices must be nonempty and positive".into()));
        }
        if self.intervals.is_empty() || self.intervals.contains(&0) {
            return Err(Error::Config("interval choices must be nonempty and positive".into()));
        }
        Ok(())
    }

    /// Every range and choice list is a single value.
    pub fn is_degenerate(&self) -> bool {
        self.learning_rate[0] == self.learning_rate[1]
            && self.l2[0] == self.l2[1]
            && self.widths.len() == 1
            && self.intervals.len() == 1
    }

    fn sample(&self, base: &TrainConfig, rng: &mut ChaCha8Rng) -> TrainConfig {
        let mut cfg = base.clone();
        let [lo, hi] = self.learning_rate;
        cfg.fit.learning_rate = if lo == hi { lo } else { rng.random_range(lo.ln()..hi.ln()).exp() };
        let [lo, hi] = self.l2;
        cfg.fit.l2 = if lo == hi { lo } else { rng.random_range(lo..hi) };
        let width = self.widths[rng.random_range(0..self.widths.len())];
        cfg.model.hidden = vec![width; base.model.hidden.len()];
        cfg.model.intervals = self.intervals[rng.random_range(0..self.intervals.len())];
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            budget: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: TrainConfig,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

fn validation_score(train: &SurvivalDataset, val: &SurvivalDataset, cfg: &TrainConfig) -> Result<f64> {
    let (model, _) = fit_scoring(train, cfg)?;
    let preds = Predictor::Scoring(model).predict_all(val)?;
    evaluate_at_quantile(ScoringRule::Risbs.into(), val, &preds, SELECTION_QUANTILE)
}

/// Samples `budget` configurations around `base` and keeps the one with the
/// lowest validation RISBS at the median time.
pub fn random_search(data: &SurvivalDataset, base: &TrainConfig, search: &SearchConfig, seed: u64) -> Result<SearchResult> {
    search.space.validate()?;
    if search.budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let budget = if search.space.is_degenerate() { 1 } else { search.budget };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrainConfig> = (0..budget).map(|_| search.space.sample(base, &mut rng)).collect();
    let (train, val) = split(data, INNER_TRAIN_FRACTION, seed)?;
    let trials: Vec<Trial> = configs
        .into_par_iter()
        .map(|config| match validation_score(&train, &val, &config) {
            Ok(s) => Trial { config, score: Some(s), error: None },
            Err(e) => Trial { config, score: None, error: Some(e.to_string()) },
        })
        .collect();
    let (best, best_score) = trials
        .iter()
        .filter_map(|t| t.score.filter(|s| s.is_finite()).map(|s| (t, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(t, s)| (t.config.clone(), s))
        .ok_or_else(|| Error::Estimation("every search configuration failed".into()))?;
    Ok(SearchResult { best, best_score, trials })
}
