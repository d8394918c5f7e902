//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints its PASS/FAIL line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scoresurv::competing::{build_cr_model, CrConfig, CrFamily};
use scoresurv::data::{SurvivalDataset, SurvivalRecord};
use scoresurv::dist::Family;
use scoresurv::engine::FitConfig;
use scoresurv::estimators::{aalen_johansen, kaplan_meier, Target, DEFAULT_G_FLOOR};
use scoresurv::grid::TimeGrid;
use scoresurv::lab::{
    run_ablation, run_benchmark, run_cr_benchmark, run_recovery, simulate, simulate_aft, AblationConfig, Arm,
    BenchmarkConfig, CrBenchmarkConfig, DgpConfig, DgpKind, Method, RecoveryConfig, AJ_LABEL,
};
use scoresurv::lab::{cr_label, mean_sd};
use scoresurv::model::{
    build_model, check_gradients, fit_aft_mle, fit_scoring, Activation, FittedModel, Interpolation, ModelConfig,
    ModelFamily, ScaleMode, SurvivalModel, SurvivalPrediction, TrainConfig,
};
use scoresurv::score::{cr_objective, objective, ScoreKind, ScoringContext, ScoringRule, RisllOrientation};
use scoresurv::step::StepFunction;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- gradients

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    let families = [ModelFamily::Parametric, ModelFamily::Increment, ModelFamily::CoxSr];
    let (mut smooth, mut worst, mut failures) = (0, 0.0f64, Vec::new());
    for case in 0..50 {
        let family = families[case % 3];
        let rule = ScoringRule::ALL[(case / 3) % 5];
        let orientation = if rng.random_bool(0.5) { RisllOrientation::Reversed } else { RisllOrientation::Conventional };
        let depth = rng.random_range(0..3);
        let width = rng.random_range(2..6);
        let kind = [DgpKind::AftSimple, DgpKind::Complex][rng.random_range(0..2)];
        let data = simulate(&DgpConfig {
            kind,
            family: Family::ALL[rng.random_range(0..3)],
            n: rng.random_range(20..60),
            seed: rng.random(),
            ..DgpConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            model: ModelConfig {
                family,
                distribution: Family::ALL[rng.random_range(0..3)],
                hidden: vec![width; depth],
                activation: if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu },
                scale: if rng.random_bool(0.5) { ScaleMode::Feature } else { ScaleMode::Constant },
                intervals: rng.random_range(3..15),
                ..ModelConfig::default()
            },
            score: ScoreKind { rule, orientation },
            fit: FitConfig { seed: rng.random(), ..FitConfig::default() },
        };
        let check = check_gradients(&data, &cfg, 1e-5).unwrap();
        if check.nonsmooth {
            continue;
        }
        smooth += 1;
        worst = worst.max(check.max_rel_error);
        if !(check.max_rel_error <= 1e-4) {
            failures.push(format!("{family:?}/{rule:?}: {:.2e}", check.max_rel_error));
        }
    }
    outcome(
        failures.is_empty() && smooth >= 25,
        format!("50 configurations, {smooth} without active clamps, max relative error {worst:.2e} {failures:?}"),
    )
}

// --------------------------------------------------------------- estimators

type Toy = &'static [(f64, bool, usize)];

const TOYS: [Toy; 10] = [
    &[(1.0, true, 1), (2.0, true, 1), (3.0, false, 1), (4.0, true, 1), (5.0, false, 1)],
    &[(2.0, true, 1), (2.0, true, 1), (2.0, false, 1), (3.0, true, 1)],
    &[(1.0, false, 1), (1.0, true, 1), (2.0, false, 1), (2.0, false, 1), (3.0, true, 1), (3.0, true, 1)],
    &[(4.0, true, 1)],
    &[(1.0, false, 1), (2.0, false, 1), (3.0, false, 1)],
    &[(0.5, true, 1), (1.5, true, 1), (2.5, true, 1), (3.5, true, 1), (4.5, true, 1), (5.5, true, 1)],
    &[(1.0, true, 1), (2.0, true, 2), (2.0, false, 1), (3.0, true, 1), (4.0, true, 2)],
    &[(1.0, true, 2), (1.0, true, 1), (1.0, false, 1), (2.0, true, 2), (5.0, false, 1)],
    &[(3.0, false, 1), (1.0, true, 2), (2.0, true, 2), (2.0, true, 1), (4.0, true, 1), (6.0, true, 2)],
    &[(1.0, false, 1), (2.0, true, 1), (2.0, true, 2), (3.0, false, 1)],
];

fn toy_dataset(toy: Toy) -> SurvivalDataset {
    let k = toy.iter().map(|r| r.2).max().unwrap();
    let recs = toy.iter().map(|&(t, d, c)| SurvivalRecord::new(t, d, vec![]).with_cause(c)).collect();
    SurvivalDataset::new(recs, 0, k).unwrap()
}

/// Product-limit value at `t` straight from the definition: a product over
/// distinct times `u <= t` of `1 - d(u) / n(u)`. For the censoring curve
/// the roles flip and events at `u` leave the risk set before censorings.
fn km_oracle(toy: Toy, t: f64, censoring: bool) -> f64 {
    let mut times: Vec<f64> = toy.iter().map(|r| r.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    for &u in times.iter().filter(|&&u| u <= t) {
        let events = toy.iter().filter(|r| r.0 == u && r.1 != censoring).count();
        let mut at_risk = toy.iter().filter(|r| r.0 >= u).count();
        if censoring {
            at_risk -= toy.iter().filter(|r| r.0 == u && r.1).count();
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
        }
    }
    s
}

/// `Σ_{u <= t} S(u⁻) d_k(u) / n(u)`.
fn aj_oracle(toy: Toy, t: f64, cause: usize) -> f64 {
    let mut times: Vec<f64> = toy.iter().map(|r| r.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut s, mut cif) = (1.0, 0.0);
    for &u in times.iter().filter(|&&u| u <= t) {
        let n = toy.iter().filter(|r| r.0 >= u).count() as f64;
        let dk = toy.iter().filter(|r| r.0 == u && r.1 && r.2 == cause).count() as f64;
        let d = toy.iter().filter(|r| r.0 == u && r.1).count();
        if d > 0 {
            cif += s * dk / n;
            s *= 1.0 - d as f64 / n;
        }
    }
    cif
}

fn estimator_oracles() -> Outcome {
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for (i, toy) in TOYS.iter().enumerate() {
        let data = toy_dataset(toy);
        let km = kaplan_meier(&data, Target::Event).unwrap();
        let g = kaplan_meier(&data, Target::Censoring).unwrap();
        let aj = aalen_johansen(&data).unwrap();
        let mut probes: Vec<f64> = toy.iter().flat_map(|r| [r.0, r.0 - 0.25, r.0 + 0.25]).collect();
        probes.extend([0.0, 100.0]);
        for &t in &probes {
            checked += 1;
            if km.eval(t) != km_oracle(toy, t, false) {
                mismatches.push(format!("toy {i} KM at {t}"));
            }
            if g.eval(t) != km_oracle(toy, t, true) {
                mismatches.push(format!("toy {i} censoring KM at {t}"));
            }
            for (c, curve) in aj.iter().enumerate() {
                let expected = if data.k() == 1 { 1.0 - km_oracle(toy, t, false) } else { aj_oracle(toy, t, c + 1) };
                if curve.eval(t) != expected {
                    mismatches.push(format!("toy {i} AJ cause {} at {t}", c + 1));
                }
            }
        }
    }
    // a few values written out by hand
    let first = kaplan_meier(&toy_dataset(TOYS[0]), Target::Event).unwrap();
    let hand = [(1.0, 0.8), (2.0, 0.6), (4.5, 0.3)];
    for (t, v) in hand {
        if (first.eval(t) - v).abs() > 1e-15 {
            mismatches.push(format!("hand KM at {t}"));
        }
    }
    let cr = aalen_johansen(&toy_dataset(TOYS[6])).unwrap();
    if (cr[0].eval(3.0) - 0.5).abs() > 1e-15 || (cr[1].eval(2.0) - 0.2).abs() > 1e-15 || (cr[1].eval(4.0) - 0.5).abs() > 1e-15 {
        mismatches.push("hand AJ".into());
    }
    outcome(
        mismatches.is_empty(),
        format!("10 toy datasets, {checked} probe times, mismatches {mismatches:?}"),
    )
}

// -------------------------------------------------------------- likelihood

fn mle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let data = simulate_aft(Family::LogNormal, 1500, seed).unwrap();
        let (b0, b, s) = fit_aft_mle(&data, Family::LogNormal).unwrap().aft_coefficients().unwrap();
        let cfg = TrainConfig {
            model: ModelConfig::linear_aft(Family::LogNormal),
            score: ScoringRule::Rcll.into(),
            fit: FitConfig { seed, ..RecoveryConfig::default().fit },
        };
        let (fit, _) = fit_scoring(&data, &cfg).unwrap();
        let (c0, c, cs) = fit.aft_coefficients().unwrap();
        worst = worst.max((b0 - c0).abs()).max((s - cs).abs());
        for (x, y) in b.iter().zip(&c) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(worst <= 2e-2, format!("5 seeds, max coefficient difference {worst:.2e} (limit 2e-2)"))
}

fn parameter_recovery() -> Outcome {
    let arm = Arm::AftSr { score: ScoringRule::Risbs.into() };
    let mut pass = true;
    let mut parts = Vec::new();
    for family in Family::ALL {
        let report = run_recovery(&RecoveryConfig {
            family,
            repetitions: 10,
            arms: vec![arm],
            seed: 17,
            ..RecoveryConfig::default()
        })
        .unwrap();
        let label = arm.label();
        let betas: Vec<f64> = ["beta0", "beta1", "beta2", "beta3"]
            .iter()
            .map(|c| report.mean_abs_difference(&label, c).unwrap_or(f64::INFINITY))
            .collect();
        let sigma = report.mean_abs_difference(&label, "sigma").unwrap_or(f64::INFINITY);
        pass &= betas.iter().all(|&d| d <= 0.1) && sigma <= 0.05;
        let max_beta = betas.iter().cloned().fold(0.0, f64::max);
        parts.push(format!("{family:?}: max mean |d beta| {max_beta:.3}, mean |d sigma| {sigma:.3}"));
    }
    outcome(pass, parts.join("; "))
}

// --------------------------------------------------------------- benchmarks

fn benchmark_magnitudes() -> Outcome {
    let cfg = BenchmarkConfig {
        methods: vec![Method::Km, Method::AftSr],
        repetitions: 5,
        quantiles: vec![0.5],
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark(&cfg).unwrap();
    let name = &cfg.datasets[0].name;
    let km = report.scores(name, &Method::Km.label(cfg.score), None, 0.5);
    let aft = report.scores(name, &Method::AftSr.label(cfg.score), None, 0.5);
    let (km_m, km_s) = mean_sd(&km);
    let (aft_m, aft_s) = mean_sd(&aft);
    let (km100, aft100) = (km_m * 100.0, aft_m * 100.0);
    let pass = km.len() == 5
        && aft.len() == 5
        && (12.4..=15.4).contains(&km100)
        && (5.4..=7.4).contains(&aft100)
        && aft_m <= 0.6 * km_m;
    outcome(
        pass,
        format!(
            "RISBS x100 at Q50: KM {km100:.2} ({:.2}), AFT {aft100:.2} ({:.2}), ratio {:.2}",
            km_s * 100.0,
            aft_s * 100.0,
            aft_m / km_m
        ),
    )
}

fn competing_risks_ordering() -> Outcome {
    let cfg = CrBenchmarkConfig {
        repetitions: 5,
        quantiles: vec![0.5],
        ..CrBenchmarkConfig::default()
    };
    let report = run_cr_benchmark(&cfg).unwrap();
    let name = &cfg.dataset.name;
    let aj = report.scores(name, AJ_LABEL, Some(1), 0.5);
    let model = report.scores(name, &cr_label(&cfg), Some(1), 0.5);
    let (aj_m, model_m) = (mean_sd(&aj).0, mean_sd(&model).0);
    outcome(
        aj.len() == 5 && model.len() == 5 && model_m <= 0.7 * aj_m,
        format!(
            "cause-1 ISBS x100 at Q50: model {:.2}, Aalen-Johansen {:.2}, ratio {:.2} (limit 0.70)",
            model_m * 100.0,
            aj_m * 100.0,
            model_m / aj_m
        ),
    )
}

// -------------------------------------------------------------- constraints

fn fuzz_point(rng: &mut ChaCha8Rng, values: &mut [f64], p: usize) -> Vec<f64> {
    let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
    for v in values.iter_mut() {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
    let xs = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)];
    (0..p).map(|_| xs * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn probe_times(rng: &mut ChaCha8Rng, grid: &TimeGrid) -> Vec<f64> {
    let mut t: Vec<f64> = grid.points().to_vec();
    t.extend((0..20).map(|_| rng.random_range(0.0..2.0 * grid.tau_star())));
    t.push(0.0);
    t.sort_by(f64::total_cmp);
    t
}

fn survival_ok(values: &[f64]) -> bool {
    values.iter().all(|&s| (0.0..=1.0).contains(&s)) && values.windows(2).all(|w| w[1] <= w[0])
}

fn constraint_suite() -> Outcome {
    let data = simulate(&DgpConfig { kind: DgpKind::Complex, n: 300, seed: 5, ..DgpConfig::default() }).unwrap();
    let cr_data = simulate(&DgpConfig { kind: DgpKind::Competing, n: 300, seed: 6, ..DgpConfig::default() }).unwrap();
    let mut violations = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for family in [ModelFamily::Parametric, ModelFamily::Increment, ModelFamily::CoxSr] {
        let cfg = ModelConfig { family, hidden: vec![8, 8], intervals: 20, ..ModelConfig::default() };
        let (model, grid, mut store) = build_model(&cfg, &data, 0).unwrap();
        let mut bad = 0;
        for case in 0..1000u64 {
            store.initialize(case);
            let x = fuzz_point(&mut rng, store.values_mut(), data.p());
            if let SurvivalModel::Increment(m) = &model {
                let alphas = m.increments(store.values(), &x);
                let s = m.survival(store.values(), &x);
                if !alphas.iter().all(|&a| (-1.0..=0.0).contains(&a)) || !survival_ok(&s) {
                    bad += 1;
                    continue;
                }
            }
            let fitted = FittedModel {
                model: model.clone(),
                grid: grid.clone(),
                score: ScoreKind::default(),
                interpolation: Interpolation::Linear,
                params: store.clone(),
            };
            let times = probe_times(&mut rng, &grid);
            let pred = fitted.predict(&x).unwrap();
            let values: Vec<f64> = times.iter().map(|&t| pred.at(t)).collect();
            if !survival_ok(&values) || pred.at(0.0) != 1.0 {
                bad += 1;
            }
        }
        if bad > 0 {
            violations.push(format!("{family:?}: {bad}"));
        }
    }
    for family in [CrFamily::Parametric, CrFamily::Increment] {
        let cfg = CrConfig { family, hidden: vec![8, 8], intervals: 20, ..CrConfig::default() };
        let (model, mut store) = build_cr_model(&cfg, &cr_data, 0).unwrap();
        let mut bad = 0;
        for case in 0..1000u64 {
            store.initialize(case);
            let x = fuzz_point(&mut rng, store.values_mut(), cr_data.p());
            let times = probe_times(&mut rng, model.grid());
            let cifs = model.predict_cif(store.values(), &x, &times).unwrap();
            let monotone = cifs.iter().all(|c| {
                c.values().iter().all(|&v| (0.0..=1.0).contains(&v)) && c.values().windows(2).all(|w| w[0] <= w[1])
            });
            let sums_ok = (0..times.len()).all(|j| cifs.iter().map(|c| c.values()[j]).sum::<f64>() <= 1.0);
            if !monotone || !sums_ok {
                bad += 1;
            }
        }
        if bad > 0 {
            violations.push(format!("CR {family:?}: {bad}"));
        }
    }
    outcome(
        violations.is_empty(),
        format!("1000 fuzzed cases for each of 5 model families, violations {violations:?}"),
    )
}

// ---------------------------------------------------------- scoring identities

fn random_dataset(rng: &mut ChaCha8Rng) -> SurvivalDataset {
    let n = rng.random_range(5..40);
    let recs = (0..n)
        .map(|_| SurvivalRecord::new(rng.random_range(0.05..5.0), rng.random_bool(0.6), vec![]))
        .collect();
    SurvivalDataset::new(recs, 0, 1).unwrap()
}

fn random_prediction(rng: &mut ChaCha8Rng) -> SurvivalPrediction {
    let m = rng.random_range(2..12);
    let mut times: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..6.0)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut values: Vec<f64> = (0..times.len()).map(|_| rng.random::<f64>()).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    SurvivalPrediction::from_knots(times, values, Interpolation::Linear).unwrap()
}

fn scoring_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut broken = Vec::new();
    let trials = 200;
    for trial in 0..trials {
        let data = random_dataset(&mut rng);
        let grid = TimeGrid::equidistant(rng.random_range(0.5..5.0), rng.random_range(1..40)).unwrap();
        let preds: Vec<SurvivalPrediction> = (0..data.n()).map(|_| random_prediction(&mut rng)).collect();
        let one = StepFunction::constant(1.0);
        let g = kaplan_meier(&data, Target::Censoring).unwrap();
        let floor = DEFAULT_G_FLOOR;
        let isbs = objective(ScoringRule::Isbs.into(), &data, &grid, &preds, &one, floor).unwrap();
        let scrps = objective(ScoringRule::Scrps.into(), &data, &grid, &preds, &one, floor).unwrap();
        if isbs != scrps {
            broken.push(format!("trial {trial}: SCRPS {scrps} vs ISBS {isbs}"));
        }
        for kind in [
            ScoreKind::new(ScoringRule::Risbs),
            ScoreKind::new(ScoringRule::Risll),
            ScoreKind::conventional(ScoringRule::Risll),
        ] {
            let ctx = ScoringContext::new(kind, &data, &grid, &g, floor);
            for (i, r) in data.records().iter().enumerate() {
                if !r.event && ctx.curve_loss(i, &preds[i]).unwrap() != 0.0 {
                    broken.push(format!("trial {trial}: censored {kind} contribution"));
                }
            }
        }
        let cifs: Vec<Vec<SurvivalPrediction>> = preds.iter().map(|p| vec![p.clone()]).collect();
        for rule in ScoringRule::ALL {
            let single = objective(rule.into(), &data, &grid, &preds, &g, floor).unwrap();
            let cr = cr_objective(rule.into(), &data, &grid, &cifs, &g, floor).unwrap();
            if single != cr {
                broken.push(format!("trial {trial}: {rule} single {single} vs K=1 {cr}"));
            }
        }
    }
    outcome(broken.is_empty(), format!("{trials} randomized inputs, violations {broken:?}"))
}

// ------------------------------------------------------------------ ablation

fn ablation_stability() -> Outcome {
    let risbs = ScoreKind::new(ScoringRule::Risbs);
    let cfg = AblationConfig {
        train: vec![
            risbs,
            ScoreKind::conventional(ScoringRule::Risll),
            ScoreKind::new(ScoringRule::Rcll),
        ],
        evaluation: vec![risbs],
        repetitions: 5,
        ..AblationConfig::default()
    };
    let report = run_ablation(&cfg).unwrap();
    let reference = mean_sd(&report.scores(&risbs, &risbs)).0;
    let mut pass = true;
    let mut parts = Vec::new();
    for t in &cfg.train {
        let scores = report.scores(t, &risbs);
        let m = mean_sd(&scores).0;
        let rel = (m - reference).abs() / reference;
        pass &= scores.len() == 5 && rel <= 0.15;
        parts.push(format!("{}: {:.2} ({:+.1}%)", t.to_string().to_ascii_uppercase(), m * 100.0, (m / reference - 1.0) * 100.0));
    }
    outcome(pass, format!("RISBS x100 at Q50 by training rule: {}", parts.join(", ")))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("estimator oracles", estimator_oracles),
        ("likelihood equivalence", mle_equivalence),
        ("parameter recovery", parameter_recovery),
        ("benchmark magnitudes", benchmark_magnitudes),
        ("competing-risks ordering", competing_risks_ordering),
        ("constraint suite", constraint_suite),
        ("scoring identities", scoring_identities),
        ("ablation stability", ablation_stability),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} of 9 acceptance checks failed");
        std::process::exit(1);
    }
}
