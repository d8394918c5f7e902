//! Competing-risks models of the cumulative incidence functions, their
//! normalization and cause-specific training.

use serde::{Deserialize, Serialize};

use crate::data::{split_indices, SurvivalDataset, SurvivalRecord};
use crate::dist::{Family, Quantity};
use crate::engine::{self, FitConfig, FitTrace, Init, ParameterStore, RowObjective, Scalar};
use crate::error::{Error, Result};
use crate::estimators::{aalen_johansen, kaplan_meier, Target, DEFAULT_G_FLOOR};
use crate::grid::{make_grid, TimeGrid};
use crate::model::{dist_value, log_time_start, Activation, MlpTrunk, ScaleMode, Squash};
use crate::score::{ScoreKind, ScoringContext, ScoringRule, SurvivalCurve};
use crate::step::StepFunction;

/// `d_{i,k} = d_i · 1(e_i = k)`.
pub fn cause_indicator(rec: &SurvivalRecord, k: usize) -> f64 {
    rec.cause_status(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrFamily {
    #[default]
    Parametric,
    Increment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One trunk emitting every cause's parameters.
    #[default]
    Joint,
    /// One trunk per cause.
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Rescale,
    None,
}

/// Makes grid CIFs `cifs[k][j]` jointly valid: each point whose sum exceeds
/// one is rescaled by `1/Σ`, then the curves are made nondecreasing by a
/// running maximum whose increments share the probability mass still
/// available, so the sum stays at most one.
pub fn normalize_cifs<S: Scalar>(cifs: &mut [Vec<S>]) {
    let k = cifs.len();
    if k == 0 {
        return;
    }
    let n = cifs[0].len();
    for j in 0..n {
        let col: Vec<S> = cifs.iter().map(|c| c[j]).collect();
        let total = S::sum(&col).expect("at least one cause");
        if total.value() > 1.0 {
            total.mark_nonsmooth();
            for c in cifs.iter_mut() {
                c[j] = c[j] / total;
            }
        }
    }
    for j in 1..n {
        let prev: Vec<S> = cifs.iter().map(|c| c[j - 1]).collect();
        let rises: Vec<Option<S>> = cifs
            .iter()
            .zip(&prev)
            .map(|(c, &p)| {
                let d = c[j] - p;
                if d.value() > 0.0 {
                    Some(d)
                } else {
                    if d.value() < 0.0 {
                        d.mark_nonsmooth();
                    }
                    None
                }
            })
            .collect();
        let positive: Vec<S> = rises.iter().flatten().copied().collect();
        let budget = S::sum(&prev).map(|s| -s + 1.0);
        // None: rises fit; Some(None): no room left; Some(Some(f)): shrink by f
        let share = match (S::sum(&positive), budget) {
            (Some(total), Some(room)) if total.value() > room.value() => {
                total.mark_nonsmooth();
                Some((room.value() > 0.0).then(|| room / total))
            }
            _ => None,
        };
        for ((c, &p), rise) in cifs.iter_mut().zip(&prev).zip(&rises) {
            c[j] = match (rise, share) {
                (None, _) | (Some(_), Some(None)) => p,
                (Some(_), None) => c[j],
                (Some(d), Some(Some(f))) => p + *d * f,
            };
        }
    }
}

/// Removes rounding excess so that left-to-right sums over causes never
/// exceed one, without breaking monotonicity.
fn repair_rounding(cifs: &mut [Vec<f64>]) {
    let n = cifs.first().map_or(0, Vec::len);
    for j in 0..n {
        loop {
            let total: f64 = cifs.iter().map(|c| c[j]).sum();
            if total <= 1.0 {
                break;
            }
            let excess = total - 1.0;
            let floor = |c: &Vec<f64>| if j == 0 { 0.0 } else { c[j - 1] };
            let k = (0..cifs.len())
                .max_by(|&a, &b| (cifs[a][j] - floor(&cifs[a])).total_cmp(&(cifs[b][j] - floor(&cifs[b]))))
                .expect("at least one cause");
            let lo = floor(&cifs[k]);
            let reduced = (cifs[k][j] - excess.max(f64::EPSILON)).max(lo);
            if reduced == cifs[k][j] {
                break;
            }
            cifs[k][j] = reduced;
        }
    }
}

/// Cumulative incidence curve of one cause, evaluated as a step function
/// through its knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl CifCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        debug_assert_eq!(times.len(), values.len());
        Self { times, values }
    }

    pub fn from_step(step: &StepFunction, times: &[f64]) -> Self {
        Self::new(times.to_vec(), times.iter().map(|&t| step.eval(t)).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&k| k <= t) {
            0 => 0.0,
            k => self.values[k - 1],
        }
    }
}

impl SurvivalCurve for CifCurve {
    fn sf(&self, t: f64) -> f64 {
        1.0 - self.at(t)
    }

    fn cdf(&self, t: f64) -> f64 {
        self.at(t)
    }
}

/// Writes `(subject, cause, time, cif)` rows.
pub fn write_cif_csv<W: std::io::Write>(cifs: &[Vec<CifCurve>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject", "cause", "time", "cif"])?;
    for (i, subject) in cifs.iter().enumerate() {
        for (k, curve) in subject.iter().enumerate() {
            for (t, v) in curve.times().iter().zip(curve.values()) {
                w.write_record([i.to_string(), (k + 1).to_string(), t.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the long format of [`write_cif_csv`]. Subjects and causes are
/// numbered from 0 and 1 without gaps; rows of one curve must be in time
/// order.
pub fn read_cif_csv<R: std::io::Read>(reader: R) -> Result<Vec<Vec<CifCurve>>> {
    #[derive(Deserialize)]
    struct Row {
        subject: usize,
        cause: usize,
        time: f64,
        cif: f64,
    }
    let mut out: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::new();
    let mut r = csv::Reader::from_reader(reader);
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        let bad = |message: String| Error::Parse { row: i + 1, message };
        if row.subject > out.len() {
            return Err(bad(format!("subject {} skips an index", row.subject)));
        }
        if row.subject == out.len() {
            out.push(Vec::new());
        }
        let subject = &mut out[row.subject];
        if row.cause == 0 || row.cause > subject.len() + 1 {
            return Err(bad(format!("cause {} out of sequence", row.cause)));
        }
        if row.cause == subject.len() + 1 {
            subject.push((Vec::new(), Vec::new()));
        }
        let (times, values) = &mut subject[row.cause - 1];
        if times.last().is_some_and(|&t| !(t < row.time)) {
            return Err(bad("times must increase within a curve".into()));
        }
        times.push(row.time);
        values.push(row.cif);
    }
    Ok(out
        .into_iter()
        .map(|s| s.into_iter().map(|(t, v)| CifCurve::new(t, v)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrConfig {
    pub family: CrFamily,
    pub distribution: Family,
    pub heads: HeadMode,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub scale: ScaleMode,
    pub intervals: usize,
    pub cutoff: f64,
    pub gamma1: Squash,
    pub normalization: Normalization,
}

impl Default for CrConfig {
    fn default() -> Self {
        Self {
            family: CrFamily::Parametric,
            distribution: Family::LogNormal,
            heads: HeadMode::Joint,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            scale: ScaleMode::Feature,
            intervals: 30,
            cutoff: 0.9,
            gamma1: Squash::Logistic,
            normalization: Normalization::Rescale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CauseHead {
    trunk: usize,
    /// Output offset of this cause's location within the trunk output.
    offset: usize,
    log_scale: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum CrVariant {
    Parametric {
        distribution: Family,
        trunks: Vec<MlpTrunk>,
        heads: Vec<CauseHead>,
    },
    Increment { gamma1: Squash, trunk: MlpTrunk },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetingRisksModel {
    k: usize,
    p: usize,
    grid: TimeGrid,
    normalization: Normalization,
    variant: CrVariant,
}

impl CompetingRisksModel {
    pub fn register(store: &mut ParameterStore, cfg: &CrConfig, data: &SurvivalDataset, grid: TimeGrid) -> Result<Self> {
        let (k, p, j) = (data.k(), data.p(), grid.intervals());
        let variant = match cfg.family {
            CrFamily::Parametric => {
                let [mu0, ls0] = log_time_start(data).values;
                let outputs = |causes: usize| match cfg.scale {
                    ScaleMode::Feature => 2 * causes,
                    ScaleMode::Constant => causes,
                };
                let bias = |causes: usize| match cfg.scale {
                    ScaleMode::Feature => Init::Values((0..causes).flat_map(|_| [mu0, ls0]).collect()),
                    ScaleMode::Constant => Init::Constant(mu0),
                };
                let (trunks, heads) = match cfg.heads {
                    HeadMode::Joint => {
                        let trunk =
                            MlpTrunk::register(store, "", p, &cfg.hidden, outputs(k), cfg.activation, bias(k))?;
                        let ls = (cfg.scale == ScaleMode::Constant)
                            .then(|| store.add("log_scale", k, Init::Constant(ls0), false).start);
                        let heads = (0..k)
                            .map(|c| CauseHead {
                                trunk: 0,
                                offset: match cfg.scale {
                                    ScaleMode::Feature => 2 * c,
                                    ScaleMode::Constant => c,
                                },
                                log_scale: ls.map(|s| s + c),
                            })
                            .collect();
                        (vec![trunk], heads)
                    }
                    HeadMode::Separate => {
                        let mut trunks = Vec::with_capacity(k);
                        let mut heads = Vec::with_capacity(k);
                        for c in 0..k {
                            let prefix = format!("cause{}.", c + 1);
                            let trunk =
                                MlpTrunk::register(store, &prefix, p, &cfg.hidden, outputs(1), cfg.activation, bias(1))?;
                            let log_scale = (cfg.scale == ScaleMode::Constant)
                                .then(|| store.add(format!("{prefix}log_scale"), 1, Init::Constant(ls0), false).start);
                            trunks.push(trunk);
                            heads.push(CauseHead {
                                trunk: c,
                                offset: 0,
                                log_scale,
                            });
                        }
                        (trunks, heads)
                    }
                };
                CrVariant::Parametric {
                    distribution: cfg.distribution,
                    trunks,
                    heads,
                }
            }
            CrFamily::Increment => {
                let bias = cfg.gamma1.inverse(0.5 / (j * k) as f64);
                let trunk = MlpTrunk::register(store, "", p, &cfg.hidden, j * k, cfg.activation, Init::Constant(bias))?;
                CrVariant::Increment {
                    gamma1: cfg.gamma1,
                    trunk,
                }
            }
        };
        Ok(Self {
            k,
            p,
            grid,
            normalization: cfg.normalization,
            variant,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Unnormalized CIFs at `times` (parametric) or at the model grid
    /// (increment), indexed `[cause][time]`.
    pub fn raw_cifs<S: Scalar>(&self, params: &[S], x: &[f64], times: &[f64]) -> Vec<Vec<S>> {
        match &self.variant {
            CrVariant::Parametric {
                distribution,
                trunks,
                heads,
            } => {
                let outs: Vec<Vec<S>> = trunks.iter().map(|t| t.forward(params, x)).collect();
                heads
                    .iter()
                    .map(|h| {
                        let out = &outs[h.trunk];
                        let mu = out[h.offset];
                        let ls = match h.log_scale {
                            Some(i) => params[i],
                            None => out[h.offset + 1],
                        };
                        times
                            .iter()
                            .map(|&t| dist_value(*distribution, Quantity::Cdf, mu, ls, t))
                            .collect()
                    })
                    .collect()
            }
            CrVariant::Increment { gamma1, trunk } => {
                let out = trunk.forward(params, x);
                let j = self.grid.intervals();
                (0..self.k)
                    .map(|c| {
                        let mut acc: Option<S> = None;
                        out[c * j..(c + 1) * j]
                            .iter()
                            .map(|&g| {
                                let a = gamma1.apply(g);
                                let next = match acc {
                                    None => a,
                                    Some(s) => s + a,
                                };
                                acc = Some(next);
                                next.clamp(0.0, 1.0)
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }

    /// Normalized CIFs at the model grid points.
    pub fn grid_cifs<S: Scalar>(&self, params: &[S], x: &[f64]) -> Vec<Vec<S>> {
        let mut cifs = self.raw_cifs(params, x, self.grid.points());
        if self.normalization == Normalization::Rescale {
            normalize_cifs(&mut cifs);
        }
        cifs
    }

    /// Sum over causes of the cause-specific losses of record `i`.
    pub fn row_loss<S: Scalar>(&self, params: &[S], x: &[f64], ctxs: &[ScoringContext], i: usize) -> Option<S> {
        if !ctxs.iter().any(|c| c.contributes(i)) {
            return None;
        }
        let cifs = self.grid_cifs(params, x);
        let losses: Vec<S> = ctxs
            .iter()
            .zip(&cifs)
            .filter_map(|(ctx, cif)| ctx.record_loss(i, |j| (cif[j], -cif[j] + 1.0), || None))
            .collect();
        S::sum(&losses)
    }

    /// Normalized CIF curves of all causes, evaluated at `times`.
    pub fn predict_cif(&self, params: &[f64], x: &[f64], times: &[f64]) -> Result<Vec<CifCurve>> {
        if x.len() != self.p {
            return Err(Error::Validation(format!("expected {} features, got {}", self.p, x.len())));
        }
        let mut cifs = match self.variant {
            CrVariant::Parametric { .. } => self.raw_cifs(params, x, times),
            CrVariant::Increment { .. } => self.raw_cifs(params, x, self.grid.points()),
        };
        if cifs.iter().flatten().any(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFinite { node: 0 });
        }
        if self.normalization == Normalization::Rescale {
            normalize_cifs(&mut cifs);
            repair_rounding(&mut cifs);
        }
        Ok(match self.variant {
            CrVariant::Parametric { .. } => cifs.into_iter().map(|v| CifCurve::new(times.to_vec(), v)).collect(),
            CrVariant::Increment { .. } => cifs
                .into_iter()
                .map(|v| {
                    let grid = CifCurve::new(self.grid.points().to_vec(), v);
                    CifCurve::new(times.to_vec(), times.iter().map(|&t| grid.at(t)).collect())
                })
                .collect(),
        })
    }
}

/// Training objective of a competing-risks model over a subset of rows.
pub struct CrObjective<'a> {
    model: &'a CompetingRisksModel,
    ctxs: &'a [ScoringContext],
    data: &'a SurvivalDataset,
    rows: Vec<usize>,
}

impl<'a> CrObjective<'a> {
    pub fn new(model: &'a CompetingRisksModel, ctxs: &'a [ScoringContext], data: &'a SurvivalDataset, rows: Vec<usize>) -> Self {
        Self { model, ctxs, data, rows }
    }
}

impl RowObjective for CrObjective<'_> {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn row_loss<S: Scalar>(&self, params: &[S], row: usize) -> Option<S> {
        let i = self.rows[row];
        self.model.row_loss(params, &self.data.records()[i].features, self.ctxs, i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrTrainConfig {
    pub model: CrConfig,
    pub score: ScoreKind,
    pub fit: FitConfig,
}

impl Default for CrTrainConfig {
    fn default() -> Self {
        Self {
            model: CrConfig::default(),
            score: ScoreKind::new(ScoringRule::Isbs),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCrModel {
    pub model: CompetingRisksModel,
    pub score: ScoreKind,
    pub params: ParameterStore,
}

impl FittedCrModel {
    pub fn predict_cif(&self, x: &[f64], times: &[f64]) -> Result<Vec<CifCurve>> {
        self.model.predict_cif(self.params.values(), x, times)
    }
}

/// Cause-specific contexts on `grid` with `Ĝ` estimated from `data`.
pub fn cause_contexts(score: ScoreKind, data: &SurvivalDataset, grid: &TimeGrid) -> Result<Vec<ScoringContext>> {
    let g = kaplan_meier(data, Target::Censoring)?;
    Ok((1..=data.k())
        .map(|k| ScoringContext::for_cause(score, data, grid, &g, DEFAULT_G_FLOOR, k))
        .collect())
}

/// Builds an untrained competing-risks model initialized with `seed`.
pub fn build_cr_model(cfg: &CrConfig, data: &SurvivalDataset, seed: u64) -> Result<(CompetingRisksModel, ParameterStore)> {
    if cfg.intervals == 0 || !(cfg.cutoff > 0.0 && cfg.cutoff <= 1.0) {
        return Err(Error::Config("invalid grid settings".into()));
    }
    let grid = make_grid(data, cfg.intervals, cfg.cutoff)?;
    let mut store = ParameterStore::new();
    let model = CompetingRisksModel::register(&mut store, cfg, data, grid)?;
    store.initialize(seed);
    Ok((model, store))
}

/// Minimizes the sum over causes of the cause-specific objectives.
pub fn fit_cr(data: &SurvivalDataset, cfg: &CrTrainConfig) -> Result<(FittedCrModel, FitTrace)> {
    cfg.fit.validate()?;
    if cfg.score.rule.needs_density() {
        return Err(Error::Config("competing-risks training needs a grid-based rule".into()));
    }
    if let Some(k) = (1..=data.k()).find(|&k| data.n_cause_events(k) == 0) {
        return Err(Error::Validation(format!("cause {k} has no observed events")));
    }
    let (model, mut store) = build_cr_model(&cfg.model, data, cfg.fit.seed)?;
    let ctxs = cause_contexts(cfg.score, data, model.grid())?;
    let (train_rows, val_rows) = if cfg.fit.validation_fraction > 0.0 {
        let (t, v) = split_indices(data, 1.0 - cfg.fit.validation_fraction, cfg.fit.seed ^ 0x5eed)?;
        (t, Some(v))
    } else {
        ((0..data.n()).collect(), None)
    };
    let train = CrObjective::new(&model, &ctxs, data, train_rows);
    let val = val_rows.map(|rows| CrObjective::new(&model, &ctxs, data, rows));
    let trace = engine::fit(&mut store, &train, val.as_ref(), &cfg.fit)?;
    Ok((
        FittedCrModel {
            model,
            score: cfg.score,
            params: store,
        },
        trace,
    ))
}

/// Feature-blind Aalen-Johansen CIF predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AjPredictor {
    pub curves: Vec<StepFunction>,
}

impl AjPredictor {
    pub fn fit(data: &SurvivalDataset) -> Result<Self> {
        Ok(Self {
            curves: aalen_johansen(data)?,
        })
    }

    pub fn predict_cif(&self, times: &[f64]) -> Vec<CifCurve> {
        self.curves.iter().map(|c| CifCurve::from_step(c, times)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{all_rows, finite_diff_check, Tape};
    use crate::score::cr_objective;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(t: f64, d: bool, cause: usize, x: Vec<f64>) -> SurvivalRecord {
        SurvivalRecord::new(t, d, x).with_cause(cause)
    }

    fn cr_data(n: usize, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                let x = vec![rng.random_range(-1.0..1.0)];
                let t1 = (1.0 + 0.5 * x[0] + rng.random_range(-0.7..0.7)).exp();
                let t2 = (1.3 - 0.3 * x[0] + rng.random_range(-0.7..0.7f64)).exp();
                let c = rng.random_range(0.0..9.0);
                let y = t1.min(t2);
                rec(y.min(c), y <= c, if t1 <= t2 { 1 } else { 2 }, x)
            })
            .collect();
        SurvivalDataset::new(recs, 1, 2).unwrap()
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(cause_indicator(&rec(1.0, true, 2, vec![]), 2), 1.0);
        assert_eq!(cause_indicator(&rec(1.0, false, 1, vec![]), 1), 0.0);
        assert_eq!(cause_indicator(&rec(1.0, true, 1, vec![]), 2), 0.0);
    }

    #[test]
    fn rescale_example() {
        let mut c = vec![vec![0.6], vec![0.6]];
        normalize_cifs(&mut c);
        assert_eq!(c, vec![vec![0.5], vec![0.5]]);
        let mut ok = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        normalize_cifs(&mut ok);
        assert_eq!(ok, vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
    }

    #[test]
    fn budget_keeps_sum_and_monotonicity() {
        // after rescaling the second point the first cause would drop
        let mut c = vec![vec![0.5, 0.5], vec![0.1, 1.0]];
        normalize_cifs(&mut c);
        assert_eq!(c[0], vec![0.5, 0.5]);
        assert!((c[1][1] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn normalized_curves_are_valid(raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 12), 1..4)) {
            let mut cifs: Vec<Vec<f64>> = raw
                .into_iter()
                .map(|v| {
                    let mut acc = 0.0f64;
                    v.into_iter().map(|a| { acc = (acc + a * 0.3).min(1.0); acc }).collect()
                })
                .collect();
            normalize_cifs(&mut cifs);
            repair_rounding(&mut cifs);
            for j in 0..12 {
                let total: f64 = cifs.iter().map(|c| c[j]).sum();
                prop_assert!(total <= 1.0);
                for c in &cifs {
                    prop_assert!(c[j] >= 0.0);
                    if j > 0 {
                        prop_assert!(c[j] >= c[j - 1]);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = cr_data(30, 1);
        for family in [CrFamily::Parametric, CrFamily::Increment] {
            for heads in [HeadMode::Joint, HeadMode::Separate] {
                let cfg = CrConfig {
                    family,
                    heads,
                    hidden: vec![3],
                    intervals: 5,
                    ..CrConfig::default()
                };
                let (model, store) = build_cr_model(&cfg, &data, 2).unwrap();
                let ctxs = cause_contexts(ScoreKind::new(ScoringRule::Isbs), &data, model.grid()).unwrap();
                let obj = CrObjective::new(&model, &ctxs, &data, (0..data.n()).collect());
                let c = finite_diff_check(&obj, store.values(), &all_rows(&obj), 1e-5).unwrap();
                if !c.nonsmooth {
                    assert!(c.max_rel_error < 1e-4, "{family:?} {heads:?} {c:?}");
                }
            }
        }
    }

    #[test]
    fn tape_and_plain_cifs_agree() {
        let data = cr_data(10, 3);
        let (model, store) = build_cr_model(&CrConfig::default(), &data, 4).unwrap();
        let x = &data.records()[0].features;
        let plain = model.grid_cifs(store.values(), x);
        let tape = Tape::new();
        let vars = tape.vars(store.values());
        let taped: Vec<Vec<f64>> = model
            .grid_cifs(&vars, x)
            .iter()
            .map(|c| c.iter().map(|v| v.value()).collect())
            .collect();
        assert_eq!(plain, taped);
    }

    #[test]
    fn training_objective_matches_cr_objective() {
        let data = cr_data(25, 5);
        let cfg = CrConfig {
            family: CrFamily::Increment,
            hidden: vec![],
            intervals: 6,
            ..CrConfig::default()
        };
        let (model, store) = build_cr_model(&cfg, &data, 6).unwrap();
        let score = ScoreKind::new(ScoringRule::Isbs);
        let ctxs = cause_contexts(score, &data, model.grid()).unwrap();
        let obj = CrObjective::new(&model, &ctxs, &data, (0..data.n()).collect());
        let trained = engine::objective_value(&obj, store.values(), &all_rows(&obj));
        let preds: Vec<Vec<CifCurve>> = data
            .records()
            .iter()
            .map(|r| model.predict_cif(store.values(), &r.features, model.grid().points()).unwrap())
            .collect();
        let g = kaplan_meier(&data, Target::Censoring).unwrap();
        let direct = cr_objective(score, &data, model.grid(), &preds, &g, DEFAULT_G_FLOOR).unwrap();
        assert!((trained - direct).abs() < 1e-12, "{trained} vs {direct}");
    }

    #[test]
    fn two_record_toy_objective() {
        // one event per cause; CIFs constant at 0.2 and 0.3 on a one-point grid at τ = 2
        let data = SurvivalDataset::new(vec![rec(1.0, true, 1, vec![]), rec(3.0, true, 2, vec![])], 0, 2).unwrap();
        let grid = TimeGrid::equidistant(2.0, 1).unwrap();
        let c = |v: f64| CifCurve::new(vec![0.5], vec![v]);
        let preds = vec![vec![c(0.2), c(0.3)], vec![c(0.2), c(0.3)]];
        let score = ScoreKind::new(ScoringRule::Isbs);
        let v = cr_objective(score, &data, &grid, &preds, &StepFunction::constant(1.0), 1e-3).unwrap();
        // cause 1: rec 1 after its event S² = 0.64, rec 2 before F² = 0.04
        // cause 2: rec 1 after, not its cause → 0; rec 2 before F² = 0.09
        let expected = (0.64 + 0.04) / 2.0 + (0.0 + 0.09) / 2.0;
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_event_cause_is_named() {
        let data = SurvivalDataset::new(
            vec![rec(1.0, true, 1, vec![]), rec(2.0, false, 1, vec![]), rec(3.0, true, 1, vec![])],
            0,
            2,
        )
        .unwrap();
        let err = fit_cr(&data, &CrTrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("cause 2"), "{err}");
    }

    #[test]
    fn fit_decreases_training_objective() {
        let data = cr_data(200, 7);
        let cfg = CrTrainConfig {
            model: CrConfig {
                hidden: vec![8],
                intervals: 10,
                ..CrConfig::default()
            },
            fit: FitConfig {
                max_epochs: 20,
                validation_fraction: 0.0,
                ..FitConfig::default()
            },
            ..CrTrainConfig::default()
        };
        let (fitted, trace) = fit_cr(&data, &cfg).unwrap();
        let last = trace.epochs.last().unwrap().train_objective;
        assert!(last < trace.epochs[0].train_objective);
        let x = &data.records()[0].features;
        let cifs = fitted.predict_cif(x, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(cifs.len(), 2);
        let mut buf = Vec::new();
        write_cif_csv(&[cifs.clone()], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1 + 8);
        assert_eq!(read_cif_csv(buf.as_slice()).unwrap(), vec![cifs]);
        let gap = "subject,cause,time,cif\n0,2,1.0,0.1\n";
        assert!(read_cif_csv(gap.as_bytes()).is_err());
    }
}
