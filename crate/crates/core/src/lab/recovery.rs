//! Coefficient recovery on simple AFT data: estimated minus true parameters
//! for likelihood and scoring-rule fits, plus their test scores.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{simulate, Censoring, DgpConfig, DgpKind};
use super::report::{format_cell, job_seed, render_table, write_rows};
use crate::data::{split, SurvivalDataset};
use crate::dist::Family;
use crate::engine::FitConfig;
use crate::error::{Error, Result};
use crate::model::{fit_aft_mle, fit_cox_mle, fit_scoring, ModelConfig, ModelFamily, Predictor, TrainConfig};
use crate::score::{evaluate_at_quantile, ScoreKind, ScoringRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arm", rename_all = "snake_case")]
pub enum Arm {
    AftMle,
    CoxMle,
    AftSr { score: ScoreKind },
    CoxSr { score: ScoreKind },
    NpSr { score: ScoreKind },
}

impl Arm {
    pub fn label(&self) -> String {
        let rule = |s: &ScoreKind| s.to_string().to_ascii_uppercase();
        match self {
            Arm::AftMle => "AFT_MLE".into(),
            Arm::CoxMle => "Cox_MLE".into(),
            Arm::AftSr { score } => format!("AFT_SR({})", rule(score)),
            Arm::CoxSr { score } => format!("Cox_SR({})", rule(score)),
            Arm::NpSr { score } => format!("NP_SR({})", rule(score)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub family: Family,
    pub n: usize,
    /// Intercept and three slopes.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub censoring: Censoring,
    pub repetitions: usize,
    pub arms: Vec<Arm>,
    pub train_fraction: f64,
    /// Quantile of the test times ending the evaluation grid.
    pub quantile: f64,
    /// Optimizer settings of the linear scoring-rule arms.
    pub fit: FitConfig,
    /// Model and optimizer of the distribution-free arms.
    pub np_model: ModelConfig,
    pub np_fit: FitConfig,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        let risll = ScoreKind::conventional(ScoringRule::Risll);
        Self {
            family: Family::LogNormal,
            n: 1500,
            beta: vec![2.0, 0.5, 0.2, 0.0],
            sigma: 0.4,
            censoring: Censoring::default(),
            repetitions: 10,
            arms: vec![
                Arm::AftMle,
                Arm::CoxMle,
                Arm::AftSr { score: ScoreKind::default() },
                Arm::CoxSr { score: ScoreKind::default() },
                Arm::NpSr { score: ScoreKind::default() },
                Arm::NpSr { score: risll },
            ],
            train_fraction: 0.8,
            quantile: 0.5,
            fit: FitConfig {
                learning_rate: 3e-2,
                batch_size: usize::MAX,
                max_epochs: 500,
                l2: 0.0,
                validation_fraction: 0.0,
                ..FitConfig::default()
            },
            np_model: ModelConfig {
                family: ModelFamily::Increment,
                ..ModelConfig::default()
            },
            np_fit: FitConfig::default(),
            seed: 0,
        }
    }
}

/// Test-score rules reported for every arm.
pub fn recovery_scores() -> [ScoreKind; 3] {
    [
        ScoreKind::new(ScoringRule::Risbs),
        ScoreKind::conventional(ScoringRule::Risll),
        ScoreKind::new(ScoringRule::Isbs),
    ]
}

/// One long-format row. Coefficient rows carry estimate, truth and their
/// difference; score rows only the estimate; failed fits only the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub repetition: usize,
    pub arm: String,
    pub metric: String,
    pub estimate: Option<f64>,
    pub truth: Option<f64>,
    pub difference: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    pub config: RecoveryConfig,
}

impl RecoveryReport {
    /// Differences of one arm and metric, in repetition order.
    pub fn differences(&self, arm: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.arm == arm && r.metric == metric)
            .filter_map(|r| r.difference)
            .collect()
    }

    pub fn estimates(&self, arm: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.arm == arm && r.metric == metric)
            .filter_map(|r| r.estimate)
            .collect()
    }

    pub fn mean_abs_difference(&self, arm: &str, metric: &str) -> Option<f64> {
        let d = self.differences(arm, metric);
        (!d.is_empty()).then(|| d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.rows, writer)
    }

    /// Mean absolute difference per coefficient and mean score ×100 per arm.
    pub fn render(&self) -> String {
        let coefs = coefficient_names();
        let scores: Vec<String> = recovery_scores().iter().map(|s| s.to_string().to_ascii_uppercase()).collect();
        let mut header = vec!["arm".to_string()];
        header.extend(coefs.iter().map(|c| format!("|d {c}|")));
        header.extend(scores.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .config
            .arms
            .iter()
            .map(|a| {
                let label = a.label();
                let mut row = vec![label.clone()];
                row.extend(coefs.iter().map(|c| match self.mean_abs_difference(&label, c) {
                    Some(v) => format!("{v:.4}"),
                    None => "-".into(),
                }));
                row.extend(scores.iter().map(|s| format_cell(&self.estimates(&label, s))));
                row
            })
            .collect();
        let mut out = render_table(&header, &rows);
        for r in self.rows.iter().filter(|r| r.error.is_some()) {
            out.push_str(&format!(
                "failed: {} rep {}: {}\n",
                r.arm,
                r.repetition,
                r.error.as_deref().unwrap_or_default()
            ));
        }
        out
    }
}

fn coefficient_names() -> [&'static str; 5] {
    ["beta0", "beta1", "beta2", "beta3", "sigma"]
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != 4 {
            return Err(Error::Config("beta needs an intercept and three slopes".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("select at least one arm".into()));
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(Error::Config(format!("quantile must lie in (0, 1], got {}", self.quantile)));
        }
        self.fit.validate()?;
        self.np_fit.validate()?;
        self.np_model.validate()
    }

    /// Proportional-hazards coefficients implied by the AFT truth, which
    /// exist only for Weibull errors.
    fn cox_truth(&self) -> Option<Vec<f64>> {
        (self.family == Family::Weibull).then(|| self.beta[1..].iter().map(|b| -b / self.sigma).collect())
    }
}

struct ArmFit {
    predictor: Predictor,
    /// `(metric, estimate, truth)`.
    coefficients: Vec<(String, f64, Option<f64>)>,
}

fn fit_arm(cfg: &RecoveryConfig, arm: Arm, train: &SurvivalDataset, seed: u64) -> Result<ArmFit> {
    let names = coefficient_names();
    let aft = |intercept: f64, slopes: &[f64], sigma: f64| {
        let mut c = vec![(names[0].to_string(), intercept, Some(cfg.beta[0]))];
        c.extend(slopes.iter().enumerate().map(|(j, &b)| (names[j + 1].to_string(), b, Some(cfg.beta[j + 1]))));
        c.push((names[4].to_string(), sigma, Some(cfg.sigma)));
        c
    };
    let cox = |beta: &[f64]| {
        let truth = cfg.cox_truth();
        beta.iter()
            .enumerate()
            .map(|(j, &b)| (names[j + 1].to_string(), b, truth.as_ref().map(|t| t[j])))
            .collect()
    };
    let scoring = |model: ModelConfig, score: ScoreKind, fit: &FitConfig| {
        fit_scoring(train, &TrainConfig { model, score, fit: FitConfig { seed, ..fit.clone() } })
            .map(|(m, _)| m)
    };
    Ok(match arm {
        Arm::AftMle => {
            let m = fit_aft_mle(train, cfg.family)?;
            let (b0, b, s) = m.aft_coefficients().expect("linear model");
            ArmFit { coefficients: aft(b0, &b, s), predictor: Predictor::Scoring(m) }
        }
        Arm::CoxMle => {
            let m = fit_cox_mle(train)?;
            ArmFit { coefficients: cox(&m.beta), predictor: Predictor::Cox(m) }
        }
        Arm::AftSr { score } => {
            let m = scoring(ModelConfig::linear_aft(cfg.family), score, &cfg.fit)?;
            let (b0, b, s) = m.aft_coefficients().expect("linear model");
            ArmFit { coefficients: aft(b0, &b, s), predictor: Predictor::Scoring(m) }
        }
        Arm::CoxSr { score } => {
            let model = ModelConfig { family: ModelFamily::CoxSr, ..ModelConfig::default() };
            let m = scoring(model, score, &cfg.fit)?;
            let beta = m.cox_coefficients().expect("cox model");
            ArmFit { coefficients: cox(&beta), predictor: Predictor::Scoring(m) }
        }
        Arm::NpSr { score } => {
            let model = ModelConfig { family: ModelFamily::Increment, ..cfg.np_model.clone() };
            let m = scoring(model, score, &cfg.np_fit)?;
            ArmFit { coefficients: Vec::new(), predictor: Predictor::Scoring(m) }
        }
    })
}

fn arm_rows(cfg: &RecoveryConfig, arm: Arm, rep: usize, train: &SurvivalDataset, test: &SurvivalDataset, seed: u64) -> Vec<RecoveryRow> {
    let row = |metric: &str, estimate: Option<f64>, truth: Option<f64>, error: Option<String>| RecoveryRow {
        repetition: rep,
        arm: arm.label(),
        metric: metric.into(),
        estimate,
        truth,
        difference: estimate.zip(truth).map(|(e, t)| e - t),
        error,
    };
    let fitted = fit_arm(cfg, arm, train, seed).and_then(|f| {
        let preds = f.predictor.predict_all(test)?;
        Ok((f.coefficients, preds))
    });
    let (coefficients, preds) = match fitted {
        Ok(v) => v,
        Err(e) => return vec![row("fit", None, None, Some(e.to_string()))],
    };
    let mut rows: Vec<RecoveryRow> = coefficients.into_iter().map(|(m, e, t)| row(&m, Some(e), t, None)).collect();
    for kind in recovery_scores() {
        let metric = kind.to_string().to_ascii_uppercase();
        rows.push(match evaluate_at_quantile(kind, test, &preds, cfg.quantile) {
            Ok(s) => row(&metric, Some(s), None, None),
            Err(e) => row(&metric, None, None, Some(e.to_string())),
        });
    }
    rows
}

/// Simulates a fresh dataset per repetition, splits it and fits every arm
/// on the training part.
pub fn run_recovery(cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    cfg.validate()?;
    let reps: Vec<Vec<RecoveryRow>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<Vec<RecoveryRow>> {
            let seed = job_seed(cfg.seed, rep as u64);
            let data = simulate(&DgpConfig {
                kind: DgpKind::AftSimple,
                family: cfg.family,
                n: cfg.n,
                beta: cfg.beta.clone(),
                sigma: cfg.sigma,
                censoring: cfg.censoring,
                seed,
            })?;
            let (train, test) = split(&data, cfg.train_fraction, seed)?;
            Ok(cfg
                .arms
                .par_iter()
                .enumerate()
                .flat_map_iter(|(a, &arm)| arm_rows(cfg, arm, rep, &train, &test, job_seed(seed, a as u64)))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(RecoveryReport {
        rows: reps.into_iter().flatten().collect(),
        config: cfg.clone(),
    })
}
