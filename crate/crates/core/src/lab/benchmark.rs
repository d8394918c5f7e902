//! Repeated-subsampling benchmarks for single-event and competing risks.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{simulate, DgpConfig, DgpKind};
use super::report::{format_cell, job_seed, mean_sd, render_table, write_rows};
use super::search::{random_search, SearchConfig};
use crate::competing::{fit_cr, AjPredictor, CifCurve, CrTrainConfig};
use crate::data::{load_csv, split, CsvSchema, SurvivalDataset};
use crate::engine::FitConfig;
use crate::error::{Error, Result};
use crate::model::{
    fit_aft_mle, fit_cox_mle, fit_scoring, km_predictor, ModelConfig, ModelFamily, Predictor, TrainConfig,
};
use crate::score::{evaluate_at_quantile, evaluate_cause_at_quantile, evaluation_setup, ScoreKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Simulated(DgpConfig),
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<SurvivalDataset> {
        match self {
            DataSource::Simulated(cfg) => simulate(cfg),
            DataSource::Csv { path, schema } => load_csv(path, schema),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub source: DataSource,
}

impl DatasetSpec {
    pub fn simulated(name: &str, kind: DgpKind, n: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            source: DataSource::Simulated(DgpConfig {
                kind,
                n,
                seed,
                ..DgpConfig::default()
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Km,
    CoxMle,
    AftMle,
    AftSr,
    NpSr,
    CoxSr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Km,
        Method::CoxMle,
        Method::AftMle,
        Method::AftSr,
        Method::NpSr,
        Method::CoxSr,
    ];

    fn sr_family(self) -> Option<ModelFamily> {
        match self {
            Method::AftSr => Some(ModelFamily::Parametric),
            Method::NpSr => Some(ModelFamily::Increment),
            Method::CoxSr => Some(ModelFamily::CoxSr),
            _ => None,
        }
    }

    /// Report label; scoring-rule methods carry their training rule.
    pub fn label(self, score: ScoreKind) -> String {
        let base = match self {
            Method::Km => "KM",
            Method::CoxMle => "Cox_MLE",
            Method::AftMle => "AFT_MLE",
            Method::AftSr => "AFT_SR",
            Method::NpSr => "NP_SR",
            Method::CoxSr => "Cox_SR",
        };
        match self.sr_family() {
            Some(_) => format!("{base}({})", score.to_string().to_ascii_uppercase()),
            None => base.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub quantiles: Vec<f64>,
    pub train_fraction: f64,
    /// Training rule of the scoring-rule methods.
    pub score: ScoreKind,
    /// Evaluation rule.
    pub evaluation: ScoreKind,
    /// Base model of the scoring-rule methods; the family is set per method.
    pub model: ModelConfig,
    pub fit: FitConfig,
    /// Per-repetition random search for the scoring-rule methods.
    pub tuning: Option<SearchConfig>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            datasets: vec![DatasetSpec::simulated("synthetic", DgpKind::Complex, 1500, 0)],
            methods: vec![Method::Km, Method::CoxMle, Method::AftSr],
            repetitions: 5,
            quantiles: vec![0.25, 0.5, 0.75],
            train_fraction: 0.8,
            score: ScoreKind::default(),
            evaluation: ScoreKind::default(),
            model: ModelConfig::default(),
            fit: FitConfig::default(),
            tuning: None,
            seed: 0,
        }
    }
}

/// One score of one method on one test split. Failed fits carry the reason
/// instead of a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub dataset: String,
    pub method: String,
    /// Cause of a competing-risks score.
    pub cause: Option<usize>,
    pub quantile: f64,
    pub repetition: usize,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub method: String,
    pub cause: Option<usize>,
    pub quantile: f64,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetadata {
    pub seed: u64,
    /// Split seed of each repetition.
    pub split_seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub entries: Vec<BenchmarkEntry>,
    pub aggregates: Vec<Aggregate>,
    pub metadata: BenchmarkMetadata,
}

type CellKey = (String, String, Option<usize>, u64);

/// Mean and sample sd of the successful scores per (dataset, method, cause,
/// quantile), in order of first appearance.
pub fn aggregate(entries: &[BenchmarkEntry]) -> Vec<Aggregate> {
    let mut order: Vec<CellKey> = Vec::new();
    let mut cells: BTreeMap<CellKey, (f64, Vec<f64>, usize)> = BTreeMap::new();
    for e in entries {
        let key = (e.dataset.clone(), e.method.clone(), e.cause, e.quantile.to_bits());
        let cell = cells.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (e.quantile, Vec::new(), 0)
        });
        match e.score {
            Some(s) => cell.1.push(s),
            None => cell.2 += 1,
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (quantile, scores, failures) = &cells[&key];
            let (mean, sd) = mean_sd(scores);
            Aggregate {
                dataset: key.0,
                method: key.1,
                cause: key.2,
                quantile: *quantile,
                mean,
                sd,
                count: scores.len(),
                failures: *failures,
            }
        })
        .collect()
}

impl BenchmarkReport {
    fn new(entries: Vec<BenchmarkEntry>, metadata: BenchmarkMetadata) -> Self {
        Self {
            aggregates: aggregate(&entries),
            entries,
            metadata,
        }
    }

    /// Scores of one cell, in repetition order.
    pub fn scores(&self, dataset: &str, method: &str, cause: Option<usize>, quantile: f64) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.dataset == dataset && e.method == method && e.cause == cause && e.quantile == quantile)
            .filter_map(|e| e.score)
            .collect()
    }

    pub fn write_entries_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.entries, writer)
    }

    pub fn write_aggregates_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.aggregates, writer)
    }

    /// One row per (dataset, method, cause), one `mean (sd)` column per
    /// quantile, scores ×100.
    pub fn render(&self) -> String {
        let mut quantiles: Vec<f64> = Vec::new();
        for e in &self.entries {
            if !quantiles.contains(&e.quantile) {
                quantiles.push(e.quantile);
            }
        }
        let mut header = vec!["dataset / method".to_string()];
        header.extend(quantiles.iter().map(|q| format!("Q{:.0}", q * 100.0)));
        let mut keys: Vec<(String, String, Option<usize>)> = Vec::new();
        for e in &self.entries {
            let key = (e.dataset.clone(), e.method.clone(), e.cause);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let rows: Vec<Vec<String>> = keys
            .iter()
            .map(|(d, m, c)| {
                let mut name = format!("{d} / {m}");
                if let Some(c) = c {
                    name.push_str(&format!(" / cause {c}"));
                }
                let mut row = vec![name];
                row.extend(quantiles.iter().map(|&q| format_cell(&self.scores(d, m, *c, q))));
                row
            })
            .collect();
        let mut out = render_table(&header, &rows);
        let failed: Vec<&BenchmarkEntry> = self.entries.iter().filter(|e| e.error.is_some()).collect();
        for e in failed {
            out.push_str(&format!(
                "missing: {} / {} rep {} Q{:.0}: {}\n",
                e.dataset,
                e.method,
                e.repetition,
                e.quantile * 100.0,
                e.error.as_deref().unwrap_or_default()
            ));
        }
        for note in &self.metadata.notes {
            out.push_str(note);
            out.push('\n');
        }
        out
    }
}

fn validate_common(repetitions: usize, quantiles: &[f64], train_fraction: f64) -> Result<()> {
    if repetitions == 0 {
        return Err(Error::Config("at least one repetition is needed".into()));
    }
    if quantiles.is_empty() || quantiles.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
        return Err(Error::Config("quantiles must be nonempty and lie in (0, 1]".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    Ok(())
}

fn fit_method(cfg: &BenchmarkConfig, method: Method, train: &SurvivalDataset, seed: u64) -> Result<Predictor> {
    Ok(match method {
        Method::Km => Predictor::Km(km_predictor(train)?),
        Method::CoxMle => Predictor::Cox(fit_cox_mle(train)?),
        Method::AftMle => Predictor::Scoring(fit_aft_mle(train, cfg.model.distribution)?),
        Method::AftSr | Method::NpSr | Method::CoxSr => {
            let mut tc = TrainConfig {
                model: ModelConfig {
                    family: method.sr_family().expect("scoring-rule method"),
                    ..cfg.model.clone()
                },
                score: cfg.score,
                fit: FitConfig { seed, ..cfg.fit.clone() },
            };
            if let Some(search) = &cfg.tuning {
                tc = random_search(train, &tc, search, seed)?.best;
            }
            Predictor::Scoring(fit_scoring(train, &tc)?.0)
        }
    })
}

fn failed(e: &Error) -> (Option<f64>, Option<String>) {
    (None, Some(e.to_string()))
}

/// Fits every method on `repetitions` random 80/20 splits of every dataset
/// and scores it on the held-out part at each quantile.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    validate_common(cfg.repetitions, &cfg.quantiles, cfg.train_fraction)?;
    cfg.model.validate()?;
    cfg.fit.validate()?;
    let start = Instant::now();
    let data: Vec<SurvivalDataset> = cfg.datasets.iter().map(|d| d.source.load()).collect::<Result<_>>()?;
    let split_seeds: Vec<u64> = (0..cfg.repetitions).map(|r| job_seed(cfg.seed, r as u64)).collect();
    let jobs: Vec<(usize, usize, usize)> = (0..data.len())
        .flat_map(|d| (0..cfg.repetitions).flat_map(move |r| (0..cfg.methods.len()).map(move |m| (d, r, m))))
        .collect();
    let entries: Vec<Vec<BenchmarkEntry>> = jobs
        .par_iter()
        .map(|&(d, r, m)| {
            let method = cfg.methods[m];
            let fit_seed = job_seed(split_seeds[r], m as u64);
            let preds = split(&data[d], cfg.train_fraction, split_seeds[r]).and_then(|(train, test)| {
                let p = fit_method(cfg, method, &train, fit_seed)?.predict_all(&test)?;
                Ok((p, test))
            });
            cfg.quantiles
                .iter()
                .map(|&q| {
                    let (score, error) = match &preds {
                        Ok((p, test)) => match evaluate_at_quantile(cfg.evaluation, test, p, q) {
                            Ok(s) => (Some(s), None),
                            Err(e) => failed(&e),
                        },
                        Err(e) => failed(e),
                    };
                    BenchmarkEntry {
                        dataset: cfg.datasets[d].name.clone(),
                        method: method.label(cfg.score),
                        cause: None,
                        quantile: q,
                        repetition: r,
                        score,
                        error,
                    }
                })
                .collect()
        })
        .collect();
    let mut notes = vec![format!("scores: {} x {}", cfg.evaluation.to_string().to_ascii_uppercase(), 100)];
    if cfg.tuning.is_some() {
        notes.push("tuning: random search on a single inner 80/20 validation split".into());
    }
    Ok(BenchmarkReport::new(
        entries.into_iter().flatten().collect(),
        BenchmarkMetadata {
            seed: cfg.seed,
            split_seeds,
            config: serde_json::to_value(cfg)?,
            notes,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrBenchmarkConfig {
    pub dataset: DatasetSpec,
    pub repetitions: usize,
    pub quantiles: Vec<f64>,
    pub train_fraction: f64,
    /// Evaluation rule, applied per cause.
    pub evaluation: ScoreKind,
    pub model: CrTrainConfig,
    pub seed: u64,
}

impl Default for CrBenchmarkConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::simulated("synthetic-cr", DgpKind::Competing, 1500, 0),
            repetitions: 5,
            quantiles: vec![0.25, 0.5, 0.75],
            train_fraction: 0.8,
            evaluation: ScoreKind::new(crate::score::ScoringRule::Isbs),
            model: CrTrainConfig::default(),
            seed: 0,
        }
    }
}

pub const AJ_LABEL: &str = "AJ";

pub fn cr_label(cfg: &CrBenchmarkConfig) -> String {
    format!("CR_SR({})", cfg.model.score.to_string().to_ascii_uppercase())
}

/// Aalen-Johansen against the fitted competing-risks model, scored per cause.
pub fn run_cr_benchmark(cfg: &CrBenchmarkConfig) -> Result<BenchmarkReport> {
    validate_common(cfg.repetitions, &cfg.quantiles, cfg.train_fraction)?;
    let start = Instant::now();
    let data = cfg.dataset.source.load()?;
    let k = data.k();
    let split_seeds: Vec<u64> = (0..cfg.repetitions).map(|r| job_seed(cfg.seed, r as u64)).collect();
    let label = cr_label(cfg);
    let jobs: Vec<(usize, bool)> = (0..cfg.repetitions).flat_map(|r| [(r, false), (r, true)]).collect();
    let entries: Vec<Vec<BenchmarkEntry>> = jobs
        .par_iter()
        .map(|&(r, model)| {
            let method = if model { label.clone() } else { AJ_LABEL.to_string() };
            let fitted = split(&data, cfg.train_fraction, split_seeds[r]).and_then(|(train, test)| {
                let predict: Box<dyn Fn(&[f64], &[f64]) -> Result<Vec<CifCurve>> + Sync> = if model {
                    let tc = CrTrainConfig {
                        fit: FitConfig {
                            seed: job_seed(split_seeds[r], 1),
                            ..cfg.model.fit.clone()
                        },
                        ..cfg.model.clone()
                    };
                    let (m, _) = fit_cr(&train, &tc)?;
                    Box::new(move |x, times| m.predict_cif(x, times))
                } else {
                    let aj = AjPredictor::fit(&train)?;
                    Box::new(move |_, times| Ok(aj.predict_cif(times)))
                };
                Ok((predict, test))
            });
            let mut out = Vec::new();
            for &q in &cfg.quantiles {
                let scores: Result<Vec<f64>> = fitted.as_ref().map_err(|e| Error::Estimation(e.to_string())).and_then(
                    |(predict, test)| {
                        let (grid, _) = evaluation_setup(test, q)?;
                        let cifs: Vec<Vec<_>> = test
                            .records()
                            .par_iter()
                            .map(|rec| predict(&rec.features, grid.points()))
                            .collect::<Result<_>>()?;
                        (1..=k)
                            .map(|c| {
                                let cause: Vec<_> = cifs.iter().map(|v| v[c - 1].clone()).collect();
                                evaluate_cause_at_quantile(cfg.evaluation, test, &cause, c, q)
                            })
                            .collect()
                    },
                );
                for c in 1..=k {
                    let (score, error) = match &scores {
                        Ok(s) => (Some(s[c - 1]), None),
                        Err(e) => failed(e),
                    };
                    out.push(BenchmarkEntry {
                        dataset: cfg.dataset.name.clone(),
                        method: method.clone(),
                        cause: Some(c),
                        quantile: q,
                        repetition: r,
                        score,
                        error,
                    });
                }
            }
            out
        })
        .collect();
    Ok(BenchmarkReport::new(
        entries.into_iter().flatten().collect(),
        BenchmarkMetadata {
            seed: cfg.seed,
            split_seeds,
            config: serde_json::to_value(cfg)?,
            notes: vec![format!("scores: {} x 100, per cause", cfg.evaluation.to_string().to_ascii_uppercase())],
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}
