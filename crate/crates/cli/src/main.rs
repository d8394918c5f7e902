use std::error::Error;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use scoresurv::competing::{fit_cr, read_cif_csv, write_cif_csv, CrTrainConfig, FittedCrModel};
use scoresurv::data::{load_csv, write_csv, CsvSchema, SurvivalDataset};
use scoresurv::lab::{
    run_ablation, run_benchmark, run_cr_benchmark, run_recovery, simulate, AblationConfig, BenchmarkConfig,
    BenchmarkReport, CrBenchmarkConfig, DgpConfig, DgpKind, Method, RecoveryConfig,
};
use scoresurv::model::{
    check_gradients, fit_aft_mle, fit_cox_mle, fit_scoring, km_predictor, read_prediction_matrix,
    write_prediction_matrix, Interpolation, ModelFamily, Predictor, TrainConfig,
};
use scoresurv::score::{
    evaluate_at_quantile, evaluate_cause_at_quantile, RisllOrientation, ScoreKind, ScoringRule,
};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "scoresurv", version, about = "Survival models trained by censoring-adapted scoring rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    Simulate {
        /// JSON data-generator config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// aft_simple, complex or competing.
        #[arg(long, value_parser = parse_enum::<DgpKind>)]
        kind: Option<DgpKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a CSV dataset and save it as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config (competing-risks config with --competing).
        #[arg(long)]
        config: Option<PathBuf>,
        /// km, cox_mle, aft_mle, aft_sr, np_sr or cox_sr; defaults to the
        /// model family of the config.
        #[arg(long, value_parser = parse_enum::<Method>)]
        method: Option<Method>,
        #[arg(long)]
        competing: bool,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch training trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write predicted survival (or cumulative incidence) curves for a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated evaluation times.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// Number of equidistant times up to the largest observed time, used
        /// when neither --times nor a model grid applies.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions written by `predict` against a dataset.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated scoring rules.
        #[arg(long, value_delimiter = ',', default_value = "risbs")]
        rules: Vec<ScoringRule>,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
        quantiles: Vec<f64>,
        /// Use the conventional RISLL orientation.
        #[arg(long)]
        conventional: bool,
        #[arg(long)]
        competing: bool,
        /// JSON output; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated-subsampling benchmark.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        competing: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Coefficient-recovery experiment.
    Recover {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train-rule by evaluation-rule ablation.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check taped gradients of a training objective against finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV dataset; a small simulated one if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SavedModel {
    Survival { predictor: Predictor },
    Competing { model: FittedCrModel },
}

#[derive(Serialize)]
struct ScoreRow {
    rule: String,
    quantile: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cause: Option<usize>,
    score: f64,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        Some(p) => Ok(serde_json::from_reader(BufReader::new(File::open(p)?))?),
        None => Ok(T::default()),
    }
}

fn load_data(path: &Path) -> CliResult<SurvivalDataset> {
    Ok(load_csv(path, &CsvSchema::default())?)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn equidistant(data: &SurvivalDataset, points: usize) -> CliResult<Vec<f64>> {
    if points == 0 {
        return Err("--points must be positive".into());
    }
    let max = data.times().into_iter().fold(0.0, f64::max);
    Ok((1..=points).map(|j| max * j as f64 / points as f64).collect())
}

fn fit(data: &Path, config: Option<&Path>, method: Option<Method>, competing: bool) -> CliResult<(SavedModel, Option<scoresurv::engine::FitTrace>)> {
    let data = load_data(data)?;
    if competing {
        let cfg: CrTrainConfig = load_config(config)?;
        let (model, trace) = fit_cr(&data, &cfg)?;
        return Ok((SavedModel::Competing { model }, Some(trace)));
    }
    let mut cfg: TrainConfig = load_config(config)?;
    let family = match method {
        Some(Method::Km) => return Ok((SavedModel::Survival { predictor: Predictor::Km(km_predictor(&data)?) }, None)),
        Some(Method::CoxMle) => return Ok((SavedModel::Survival { predictor: Predictor::Cox(fit_cox_mle(&data)?) }, None)),
        Some(Method::AftMle) => {
            let m = fit_aft_mle(&data, cfg.model.distribution)?;
            return Ok((SavedModel::Survival { predictor: Predictor::Scoring(m) }, None));
        }
        Some(Method::AftSr) => ModelFamily::Parametric,
        Some(Method::NpSr) => ModelFamily::Increment,
        Some(Method::CoxSr) => ModelFamily::CoxSr,
        None => cfg.model.family,
    };
    cfg.model.family = family;
    let (m, trace) = fit_scoring(&data, &cfg)?;
    Ok((SavedModel::Survival { predictor: Predictor::Scoring(m) }, Some(trace)))
}

fn write_bench(report: &BenchmarkReport, out_dir: &Path) -> CliResult<()> {
    fs::create_dir_all(out_dir)?;
    report.write_entries_csv(create(&out_dir.join("entries.csv"))?)?;
    report.write_aggregates_csv(create(&out_dir.join("summary.csv"))?)?;
    serde_json::to_writer_pretty(create(&out_dir.join("metadata.json"))?, &report.metadata)?;
    let table = report.render();
    write_text(&out_dir.join("table.txt"), &table)?;
    print!("{table}");
    eprintln!("wall time: {:.1}s", report.metadata.wall_time_secs);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, kind, n, seed, out } => {
            let mut cfg: DgpConfig = load_config(config.as_deref())?;
            if let Some(k) = kind {
                cfg.kind = k;
            }
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let data = simulate(&cfg)?;
            write_csv(&data, create(&out)?)?;
            eprintln!("{} records, {} events", data.n(), data.n_events());
        }
        Command::Fit { data, config, method, competing, out, trace } => {
            let (model, fit_trace) = fit(&data, config.as_deref(), method, competing)?;
            serde_json::to_writer(create(&out)?, &model)?;
            if let Some(path) = trace {
                match fit_trace {
                    Some(t) => t.write_csv(create(&path)?)?,
                    None => return Err("this method has no training trace".into()),
                }
            }
        }
        Command::Predict { model, data, times, points, out } => {
            let model: SavedModel = serde_json::from_reader(BufReader::new(File::open(model)?))?;
            let data = load_data(&data)?;
            match model {
                SavedModel::Survival { predictor } => {
                    let times = match (times, &predictor) {
                        (Some(t), _) => t,
                        (None, Predictor::Scoring(m)) => m.grid.points().to_vec(),
                        (None, _) => equidistant(&data, points)?,
                    };
                    let preds = predictor.predict_all(&data)?;
                    write_prediction_matrix(&preds, &times, create(&out)?)?;
                }
                SavedModel::Competing { model } => {
                    let times = times.unwrap_or_else(|| model.model.grid().points().to_vec());
                    let cifs = data
                        .records()
                        .iter()
                        .map(|r| model.predict_cif(&r.features, &times))
                        .collect::<Result<Vec<_>, _>>()?;
                    write_cif_csv(&cifs, create(&out)?)?;
                }
            }
        }
        Command::Evaluate { predictions, data, rules, quantiles, conventional, competing, out } => {
            let data = load_data(&data)?;
            let orientation = if conventional { RisllOrientation::Conventional } else { RisllOrientation::Reversed };
            let file = BufReader::new(File::open(predictions)?);
            let mut rows = Vec::new();
            if competing {
                let cifs = read_cif_csv(file)?;
                if cifs.len() != data.n() {
                    return Err(format!("{} predicted subjects for {} records", cifs.len(), data.n()).into());
                }
                for &rule in &rules {
                    let kind = ScoreKind { rule, orientation };
                    for &q in &quantiles {
                        for cause in 1..=data.k() {
                            let preds: Vec<_> = cifs.iter().map(|c| c[cause - 1].clone()).collect();
                            let score = evaluate_cause_at_quantile(kind, &data, &preds, cause, q)?;
                            rows.push(ScoreRow { rule: kind.to_string(), quantile: q, cause: Some(cause), score });
                        }
                    }
                }
            } else {
                let preds = read_prediction_matrix(file, Interpolation::Linear)?;
                if preds.len() != data.n() {
                    return Err(format!("{} predicted subjects for {} records", preds.len(), data.n()).into());
                }
                for &rule in &rules {
                    let kind = ScoreKind { rule, orientation };
                    for &q in &quantiles {
                        let score = evaluate_at_quantile(kind, &data, &preds, q)?;
                        rows.push(ScoreRow { rule: kind.to_string(), quantile: q, cause: None, score });
                    }
                }
            }
            match out {
                Some(path) => serde_json::to_writer_pretty(create(&path)?, &rows)?,
                None => {
                    serde_json::to_writer_pretty(io::stdout().lock(), &rows)?;
                    println!();
                }
            }
        }
        Command::Bench { config, competing, out_dir } => {
            let report = if competing {
                run_cr_benchmark(&load_config::<CrBenchmarkConfig>(config.as_deref())?)?
            } else {
                run_benchmark(&load_config::<BenchmarkConfig>(config.as_deref())?)?
            };
            write_bench(&report, &out_dir)?;
        }
        Command::Recover { config, out_dir } => {
            let report = run_recovery(&load_config::<RecoveryConfig>(config.as_deref())?)?;
            fs::create_dir_all(&out_dir)?;
            report.write_csv(create(&out_dir.join("recovery.csv"))?)?;
            let table = report.render();
            write_text(&out_dir.join("table.txt"), &table)?;
            print!("{table}");
        }
        Command::Ablate { config, out_dir } => {
            let report = run_ablation(&load_config::<AblationConfig>(config.as_deref())?)?;
            fs::create_dir_all(&out_dir)?;
            report.write_csv(create(&out_dir.join("ablation.csv"))?)?;
            let table = report.render();
            write_text(&out_dir.join("table.txt"), &table)?;
            print!("{table}");
        }
        Command::Gradcheck { config, data, step, tolerance } => {
            let cfg: TrainConfig = load_config(config.as_deref())?;
            let data = match data {
                Some(p) => load_data(&p)?,
                None => simulate(&DgpConfig { n: 200, ..DgpConfig::default() })?,
            };
            let check = check_gradients(&data, &cfg, step)?;
            println!("{}", serde_json::to_string(&check)?);
            if check.max_rel_error > tolerance && !check.nonsmooth {
                return Err(format!("relative gradient error {:.3e} exceeds {tolerance:.1e}", check.max_rel_error).into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
