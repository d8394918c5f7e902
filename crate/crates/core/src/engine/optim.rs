//! Mini-batch adaptive-moment training with L2 penalty and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::scalar::{pairwise_sum, Scalar};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// A loss that decomposes over rows: `O(ω) = mean_{i ∈ rows} loss_i(ω)`.
pub trait RowObjective: Sync {
    fn n_rows(&self) -> usize;

    /// Loss of one row, or `None` when it is identically zero.
    fn row_loss<S: Scalar>(&self, params: &[S], row: usize) -> Option<S>;
}

/// Rows per tape when differentiating; fixed so results do not depend on
/// the thread count.
const CHUNK: usize = 16;

/// Mean loss over `rows`.
pub fn objective_value<O: RowObjective + ?Sized>(obj: &O, params: &[f64], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let losses: Vec<f64> = rows
        .par_iter()
        .map(|&r| obj.row_loss(params, r).unwrap_or(0.0))
        .collect();
    pairwise_sum(&losses) / rows.len() as f64
}

pub fn all_rows<O: RowObjective + ?Sized>(obj: &O) -> Vec<usize> {
    (0..obj.n_rows()).collect()
}

#[derive(Debug, Clone)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Number of clamp/floor sites active at this point.
    pub nonsmooth: usize,
}

/// Mean loss over `rows` and its exact reverse-mode gradient.
pub fn value_and_grad<O: RowObjective + ?Sized>(obj: &O, params: &[f64], rows: &[usize]) -> Result<ValueGrad> {
    let np = params.len();
    let parts: Vec<Result<(f64, Vec<f64>, usize)>> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let tape = Tape::with_capacity(np + chunk.len() * 256);
            let vars = tape.vars(params);
            let losses: Vec<Var<'_>> = chunk.iter().filter_map(|&r| obj.row_loss(&vars, r)).collect();
            match Var::sum(&losses) {
                Some(total) => {
                    let g = tape.gradient(total, &vars)?;
                    Ok((total.value(), g, tape.nonsmooth_count()))
                }
                None => Ok((0.0, vec![0.0; np], tape.nonsmooth_count())),
            }
        })
        .collect();
    let n = rows.len().max(1) as f64;
    let mut values = Vec::with_capacity(parts.len());
    let mut grad = vec![0.0; np];
    let mut nonsmooth = 0;
    for part in parts {
        let (v, g, ns) = part?;
        values.push(v);
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
        nonsmooth += ns;
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok(ValueGrad {
        value: pairwise_sum(&values) / n,
        grad,
        nonsmooth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// L2 strength on final-layer weights.
    pub l2: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the training data held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 128,
            max_epochs: 200,
            l2: 1e-4,
            patience: 10,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "learning rate, batch size and patience must be positive".into(),
            ));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config("L2 strength must be nonnegative".into()));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub val_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub reseeds: usize,
}

impl FitTrace {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_objective", "val_objective"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_objective.to_string(),
                e.val_objective.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

const MAX_RESEEDS: usize = 3;

/// Minimizes `train` over `store`, leaving the best-validation parameters in
/// `store` (the final ones when `val` is `None`).
pub fn fit<O: RowObjective + ?Sized>(
    store: &mut ParameterStore,
    train: &O,
    val: Option<&O>,
    cfg: &FitConfig,
) -> Result<FitTrace> {
    cfg.validate()?;
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::Validation("empty training set".into()));
    }
    let rows = all_rows(train);
    let val_rows = val.map(all_rows);
    let eval_val = |p: &[f64]| val.zip(val_rows.as_ref()).map(|(o, r)| objective_value(o, p, r));

    let mut init_value = objective_value(train, store.values(), &rows);
    let mut reseeds = 0;
    while !init_value.is_finite() {
        if reseeds == MAX_RESEEDS {
            return Err(Error::Estimation(format!(
                "objective not finite at initialization after {MAX_RESEEDS} re-seeds"
            )));
        }
        reseeds += 1;
        store.initialize(cfg.seed.wrapping_add(reseeds as u64));
        init_value = objective_value(train, store.values(), &rows);
    }

    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_objective: init_value,
        val_objective: eval_val(store.values()),
    }];
    let mut best = store.values().to_vec();
    let mut best_val = epochs[0].val_objective.unwrap_or(f64::INFINITY);
    let mut best_epoch = 0;
    let mut stale = 0;

    let mut params = store.values().to_vec();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = rows.clone();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut diverged = false;
        for batch in order.chunks(cfg.batch_size) {
            let vg = match value_and_grad(train, &params, batch) {
                Ok(vg) if vg.value.is_finite() && vg.grad.iter().all(|g| g.is_finite()) => vg,
                _ => {
                    diverged = true;
                    break;
                }
            };
            weighted += vg.value * batch.len() as f64;
            let mut grad = vg.grad;
            if cfg.l2 > 0.0 {
                for (g, p) in grad.iter_mut().zip(store.l2_gradient(&params, cfg.l2)) {
                    *g += p;
                }
            }
            adam.step(&mut params, &grad, cfg.learning_rate);
        }
        if diverged {
            break;
        }
        let val_objective = eval_val(&params);
        epochs.push(EpochRecord {
            epoch,
            train_objective: weighted / n as f64,
            val_objective,
        });
        match val_objective {
            Some(v) if v < best_val => {
                best_val = v;
                best.copy_from_slice(&params);
                best_epoch = epoch;
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            None => {
                best.copy_from_slice(&params);
                best_epoch = epoch;
            }
        }
    }
    store.set_values(&best)?;
    Ok(FitTrace {
        epochs,
        best_epoch,
        reseeds,
    })
}
