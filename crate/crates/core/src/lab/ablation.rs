//! Cross-rule ablation: train under each rule, evaluate under each rule.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::benchmark::DatasetSpec;
use super::dgp::DgpKind;
use super::report::{format_cell, job_seed, render_table, write_rows};
use crate::data::split;
use crate::engine::FitConfig;
use crate::error::{Error, Result};
use crate::model::{fit_scoring, ModelConfig, Predictor, TrainConfig};
use crate::score::{evaluate_at_quantile, ScoreKind, ScoringRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub dataset: DatasetSpec,
    pub train: Vec<ScoreKind>,
    pub evaluation: Vec<ScoreKind>,
    pub repetitions: usize,
    pub quantile: f64,
    pub train_fraction: f64,
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub seed: u64,
}

/// RISBS, RISLL (conventional orientation), RCLL and ISBS.
pub fn ablation_rules() -> Vec<ScoreKind> {
    vec![
        ScoreKind::new(ScoringRule::Risbs),
        ScoreKind::conventional(ScoringRule::Risll),
        ScoreKind::new(ScoringRule::Rcll),
        ScoreKind::new(ScoringRule::Isbs),
    ]
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::simulated("synthetic", DgpKind::Complex, 1500, 0),
            train: ablation_rules(),
            evaluation: ablation_rules(),
            repetitions: 5,
            quantile: 0.5,
            train_fraction: 0.8,
            model: ModelConfig::default(),
            fit: FitConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub train: String,
    pub evaluation: String,
    pub repetition: usize,
    /// Raw score; RCLL is the mean negative log-likelihood.
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub entries: Vec<AblationEntry>,
    pub config: AblationConfig,
}

fn label(kind: &ScoreKind) -> String {
    kind.to_string().to_ascii_uppercase()
}

impl AblationReport {
    pub fn scores(&self, train: &ScoreKind, evaluation: &ScoreKind) -> Vec<f64> {
        let (t, e) = (label(train), label(evaluation));
        self.entries
            .iter()
            .filter(|x| x.train == t && x.evaluation == e)
            .filter_map(|x| x.score)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.entries, writer)
    }

    /// Training rules down, evaluation rules across, `mean (sd)` ×100.
    pub fn render(&self) -> String {
        let mut header = vec!["train \\ eval".to_string()];
        header.extend(self.config.evaluation.iter().map(label));
        let rows: Vec<Vec<String>> = self
            .config
            .train
            .iter()
            .map(|t| {
                let mut row = vec![label(t)];
                row.extend(self.config.evaluation.iter().map(|e| format_cell(&self.scores(t, e))));
                row
            })
            .collect();
        let mut out = render_table(&header, &rows);
        for x in self.entries.iter().filter(|x| x.error.is_some()) {
            out.push_str(&format!(
                "missing: train {} eval {} rep {}: {}\n",
                x.train,
                x.evaluation,
                x.repetition,
                x.error.as_deref().unwrap_or_default()
            ));
        }
        out
    }
}

/// Fits the model once per (repetition, training rule) and scores each fit
/// under every evaluation rule on the same test split.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.train.is_empty() || cfg.evaluation.is_empty() {
        return Err(Error::Config("training and evaluation rules must be nonempty".into()));
    }
    if cfg.repetitions == 0 {
        return Err(Error::Config("at least one repetition is needed".into()));
    }
    cfg.model.validate()?;
    cfg.fit.validate()?;
    let data = cfg.dataset.source.load()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|r| (0..cfg.train.len()).map(move |t| (r, t)))
        .collect();
    let entries: Vec<Vec<AblationEntry>> = jobs
        .par_iter()
        .map(|&(r, t)| {
            let split_seed = job_seed(cfg.seed, r as u64);
            let train_rule = cfg.train[t];
            let fitted = split(&data, cfg.train_fraction, split_seed).and_then(|(train, test)| {
                let tc = TrainConfig {
                    model: cfg.model.clone(),
                    score: train_rule,
                    fit: FitConfig {
                        seed: job_seed(split_seed, t as u64),
                        ..cfg.fit.clone()
                    },
                };
                let preds = Predictor::Scoring(fit_scoring(&train, &tc)?.0).predict_all(&test)?;
                Ok((preds, test))
            });
            cfg.evaluation
                .iter()
                .map(|e| {
                    let result = fitted
                        .as_ref()
                        .map_err(|err| err.to_string())
                        .and_then(|(p, test)| evaluate_at_quantile(*e, test, p, cfg.quantile).map_err(|err| err.to_string()));
                    AblationEntry {
                        train: label(&train_rule),
                        evaluation: label(e),
                        repetition: r,
                        score: result.as_ref().ok().copied(),
                        error: result.err(),
                    }
                })
                .collect()
        })
        .collect();
    Ok(AblationReport {
        entries: entries.into_iter().flatten().collect(),
        config: cfg.clone(),
    })
}
