use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::parametric::{ParametricSurvivalModel, ScaleMode};
use super::prediction::{Interpolation, SurvivalPrediction};
use super::trunk::Activation;
use super::{FittedModel, ScoringObjective, SurvivalModel};
use crate::data::SurvivalDataset;
use crate::dist::{Family, ParamVector};
use crate::engine::{all_rows, objective_value, value_and_grad, ParameterStore};
use crate::error::{Error, Result};
use crate::estimators::{kaplan_meier, Target, DEFAULT_G_FLOOR};
use crate::grid::make_grid;
use crate::score::{ScoreKind, ScoringContext, ScoringRule};
use crate::step::StepFunction;

const NEWTON_MAX_ITER: usize = 200;
const SEPARATION_NORM: f64 = 50.0;

/// Least squares of `y` on `[1, x]`.
fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Result<DVector<f64>> {
    let p = x.first().map_or(0, Vec::len);
    let design = DMatrix::from_fn(y.len(), p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * DVector::from_column_slice(y);
    xtx.cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::Estimation("singular design matrix".into()))
}

/// Damped Newton minimization with a finite-difference Hessian of the exact
/// gradient.
fn newton_minimize(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Result<Vec<f64>>,
    start: Vec<f64>,
) -> Result<Vec<f64>> {
    let n = start.len();
    let mut x = start;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::Estimation("objective not finite at the starting point".into()));
    }
    for _ in 0..NEWTON_MAX_ITER {
        let g = grad(&x)?;
        if g.iter().all(|v| v.abs() < 1e-10) {
            return Ok(x);
        }
        let mut hess = DMatrix::zeros(n, n);
        for k in 0..n {
            let h = 1e-5 * x[k].abs().max(1.0);
            let mut xp = x.clone();
            xp[k] += h;
            let gp = grad(&xp)?;
            xp[k] = x[k] - h;
            let gm = grad(&xp)?;
            for r in 0..n {
                hess[(r, k)] = (gp[r] - gm[r]) / (2.0 * h);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let gv = DVector::from_vec(g.clone());
        let mut ridge = 0.0;
        let dir = loop {
            let m = &hess + DMatrix::identity(n, n) * ridge;
            if let Some(c) = m.cholesky() {
                break -c.solve(&gv);
            }
            ridge = if ridge == 0.0 { 1e-8 } else { ridge * 10.0 };
            if ridge > 1e8 {
                return Err(Error::Estimation("Hessian could not be regularized".into()));
            }
        };
        let slope = gv.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let done = (fx - fc).abs() <= 1e-15 * fx.abs().max(1.0);
                x = cand;
                fx = fc;
                if done {
                    return Ok(x);
                }
            }
            // no decrease possible along the Newton direction: at the optimum
            // up to rounding
            None => return Ok(x),
        }
    }
    Ok(x)
}

/// Maximum-likelihood AFT regression: `μ` linear in `x`, constant `σ`.
/// The result is a [`FittedModel`] scored by RCLL, the objective it optimizes.
pub fn fit_aft_mle(data: &SurvivalDataset, family: Family) -> Result<FittedModel> {
    let (n, p) = (data.n(), data.p());
    if n <= p + 2 {
        return Err(Error::Validation(format!("need more than {} records, got {n}", p + 2)));
    }
    if data.n_events() == 0 {
        return Err(Error::Estimation("no events: the likelihood has no maximum".into()));
    }
    let grid = make_grid(data, 30, 0.9)?;
    let mut store = ParameterStore::new();
    let model = ParametricSurvivalModel::register(
        &mut store,
        family,
        p,
        &[],
        Activation::Tanh,
        ScaleMode::Constant,
        ParamVector::new(0.0, 0.0),
    )?;
    let features: Vec<Vec<f64>> = data.records().iter().map(|r| r.features.clone()).collect();
    let logs: Vec<f64> = data.records().iter().map(|r| r.time.ln()).collect();
    let ols = least_squares(&features, &logs)?;
    let resid_var = features
        .iter()
        .zip(&logs)
        .map(|(x, y)| {
            let fit = ols[0] + x.iter().zip(ols.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>();
            (y - fit).powi(2)
        })
        .sum::<f64>()
        / n as f64;
    store.get_mut("layer0.weight").unwrap().copy_from_slice(&ols.as_slice()[1..]);
    store.get_mut("layer0.bias").unwrap()[0] = ols[0];
    store.get_mut("log_scale").unwrap()[0] = 0.5 * resid_var.max(1e-12).ln();

    let model = SurvivalModel::Parametric(model);
    let score = ScoreKind::new(ScoringRule::Rcll);
    let ctx = ScoringContext::new(score, data, &grid, &StepFunction::constant(1.0), DEFAULT_G_FLOOR);
    let obj = ScoringObjective::new(&model, &ctx, data, (0..n).collect());
    let rows = all_rows(&obj);
    let optimum = newton_minimize(
        |w| objective_value(&obj, w, &rows),
        |w| Ok(value_and_grad(&obj, w, &rows)?.grad),
        store.values().to_vec(),
    )?;
    store.set_values(&optimum)?;
    Ok(FittedModel {
        model,
        grid,
        score,
        interpolation: Interpolation::Linear,
        params: store,
    })
}

/// Proportional-hazards regression with a Breslow baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    pub baseline: StepFunction,
}

impl CoxModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    pub fn predict(&self, x: &[f64]) -> Result<SurvivalPrediction> {
        if x.len() != self.beta.len() {
            return Err(Error::Validation(format!(
                "expected {} features, got {}",
                self.beta.len(),
                x.len()
            )));
        }
        let r = self.linear_predictor(x).exp();
        let values = self.baseline.values().iter().map(|s| s.powf(r)).collect();
        SurvivalPrediction::from_knots(self.baseline.knots().to_vec(), values, Interpolation::Step)
    }
}

/// Distinct event times with their tied events, walking the risk sets.
struct CoxTerms {
    log_lik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    /// `(time, events, Σ_{risk set} exp(xβ))` per distinct event time, ascending.
    event_sums: Vec<(f64, usize, f64)>,
}

fn cox_terms(data: &SurvivalDataset, beta: &[f64]) -> CoxTerms {
    let p = beta.len();
    let recs = data.records();
    let mut order: Vec<usize> = (0..recs.len()).collect();
    order.sort_by(|&a, &b| recs[b].time.total_cmp(&recs[a].time));
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut log_lik = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut event_sums = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let t = recs[order[k]].time;
        let mut end = k;
        while end < order.len() && recs[order[end]].time == t {
            end += 1;
        }
        let mut events = 0;
        let mut x_events = DVector::zeros(p);
        let mut eta_events = 0.0;
        for &i in &order[k..end] {
            let x = DVector::from_column_slice(&recs[i].features);
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let w = eta.exp();
            s0 += w;
            s1 += &x * w;
            s2 += &x * x.transpose() * w;
            if recs[i].event {
                events += 1;
                x_events += &x;
                eta_events += eta;
            }
        }
        if events > 0 {
            let d = events as f64;
            log_lik += eta_events - d * s0.ln();
            let mean = &s1 / s0;
            grad += x_events - &mean * d;
            hess -= (&s2 / s0 - &mean * mean.transpose()) * d;
            event_sums.push((t, events, s0));
        }
        k = end;
    }
    event_sums.reverse();
    CoxTerms {
        log_lik,
        grad,
        hess,
        event_sums,
    }
}

/// Newton-Raphson on the Breslow partial likelihood.
pub fn fit_cox_mle(data: &SurvivalDataset) -> Result<CoxModel> {
    if data.n_events() == 0 {
        return Err(Error::Estimation("no events: the partial likelihood is empty".into()));
    }
    let p = data.p();
    let mut beta = vec![0.0; p];
    let mut terms = cox_terms(data, &beta);
    let mut converged = p == 0;
    for iter in 0..NEWTON_MAX_ITER {
        if converged {
            break;
        }
        let info = -&terms.hess;
        let Some(chol) = info.cholesky() else {
            // at β = 0 a singular information matrix means degenerate
            // features; later it means the information vanished along a
            // diverging direction
            return Err(if iter == 0 {
                Error::Estimation("singular information matrix (collinear or constant features)".into())
            } else {
                Error::Separation {
                    norm: beta.iter().map(|b| b * b).sum::<f64>().sqrt(),
                }
            });
        };
        let delta = chol.solve(&terms.grad);
        let mut step = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            let norm = cand.iter().map(|b| b * b).sum::<f64>().sqrt();
            if norm > SEPARATION_NORM {
                return Err(Error::Separation { norm });
            }
            let next = cox_terms(data, &cand);
            if next.log_lik.is_finite() && next.log_lik >= terms.log_lik - 1e-12 {
                converged = (next.log_lik - terms.log_lik).abs() <= 1e-12 * terms.log_lik.abs().max(1.0)
                    && delta.amax() * step < 1e-8;
                beta = cand;
                terms = next;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::Estimation("Cox Newton iterations did not converge".into()));
    }
    let mut cum = 0.0;
    let (knots, values) = terms
        .event_sums
        .iter()
        .map(|&(t, d, s0)| {
            cum += d as f64 / s0;
            (t, (-cum).exp())
        })
        .unzip();
    Ok(CoxModel {
        beta,
        baseline: StepFunction::new(knots, values, 1.0),
    })
}

/// Feature-blind predictor returning the Kaplan-Meier curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmPredictor {
    pub curve: StepFunction,
}

impl KmPredictor {
    pub fn predict(&self, _x: &[f64]) -> Result<SurvivalPrediction> {
        SurvivalPrediction::from_knots(
            self.curve.knots().to_vec(),
            self.curve.values().to_vec(),
            Interpolation::Step,
        )
    }
}

pub fn km_predictor(data: &SurvivalDataset) -> Result<KmPredictor> {
    Ok(KmPredictor {
        curve: kaplan_meier(data, Target::Event)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(t: f64, d: bool, x: Vec<f64>) -> SurvivalRecord {
        SurvivalRecord::new(t, d, x)
    }

    fn aft_data(n: usize, censor: bool, seed: u64) -> SurvivalDataset {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
                let e: f64 = rng.sample(StandardNormal);
                let y = (1.0 + 0.5 * x[0] - 0.3 * x[1] + 0.4 * e).exp();
                let c = if censor { rng.random_range(0.0..8.0) } else { f64::INFINITY };
                rec(y.min(c), y <= c, x)
            })
            .collect();
        SurvivalDataset::new(recs, 2, 1).unwrap()
    }

    #[test]
    fn uncensored_lognormal_is_least_squares() {
        let data = aft_data(300, false, 4);
        let fitted = fit_aft_mle(&data, Family::LogNormal).unwrap();
        let (b, w, _) = fitted.aft_coefficients().unwrap();
        let x: Vec<Vec<f64>> = data.records().iter().map(|r| r.features.clone()).collect();
        let y: Vec<f64> = data.records().iter().map(|r| r.time.ln()).collect();
        let ols = least_squares(&x, &y).unwrap();
        assert!((b - ols[0]).abs() < 1e-3);
        for j in 0..2 {
            assert!((w[j] - ols[j + 1]).abs() < 1e-3);
        }
    }

    #[test]
    fn mle_is_stationary_point_of_rcll() {
        let data = aft_data(400, true, 5);
        for family in Family::ALL {
            let fitted = fit_aft_mle(&data, family).unwrap();
            let ctx = ScoringContext::new(
                ScoreKind::new(ScoringRule::Rcll),
                &data,
                &fitted.grid,
                &StepFunction::constant(1.0),
                DEFAULT_G_FLOOR,
            );
            let obj = ScoringObjective::new(&fitted.model, &ctx, &data, (0..data.n()).collect());
            let g = value_and_grad(&obj, fitted.params.values(), &all_rows(&obj)).unwrap().grad;
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1e-3, "{family:?}: {norm}");
        }
    }

    #[test]
    fn all_censored_is_an_error() {
        let recs = (1..=6).map(|i| rec(i as f64, false, vec![i as f64 * 0.1])).collect();
        let data = SurvivalDataset::new(recs, 1, 1).unwrap();
        assert!(fit_aft_mle(&data, Family::Weibull).is_err());
        assert!(fit_cox_mle(&data).is_err());
    }

    #[test]
    fn cox_matches_grid_search_on_partial_likelihood() {
        let xs = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let recs = xs.iter().enumerate().map(|(i, &x)| rec(i as f64 + 1.0, i != 4, vec![x])).collect();
        let data = SurvivalDataset::new(recs, 1, 1).unwrap();
        let fitted = fit_cox_mle(&data).unwrap();
        // brute-force maximizer of the partial likelihood
        let ll = |b: f64| cox_terms(&data, &[b]).log_lik;
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if ll(m1) < ll(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        assert!((fitted.beta[0] - 0.5 * (lo + hi)).abs() < 1e-6);
    }

    #[test]
    fn separated_covariate_is_detected() {
        let recs = (0..6).map(|i| rec(i as f64 + 1.0, true, vec![if i < 3 { 1.0 } else { 0.0 }])).collect();
        let data = SurvivalDataset::new(recs, 1, 1).unwrap();
        assert!(matches!(fit_cox_mle(&data), Err(Error::Separation { .. })));
    }

    #[test]
    fn duplicated_column_is_rejected() {
        let base = aft_data(50, true, 6);
        let recs = base
            .records()
            .iter()
            .map(|r| rec(r.time, r.event, vec![r.features[0], r.features[0]]))
            .collect();
        let data = SurvivalDataset::new(recs, 2, 1).unwrap();
        assert!(fit_cox_mle(&data).is_err());
    }

    #[test]
    fn cox_without_features_gives_decreasing_baseline() {
        let recs = [1.0, 2.0, 2.0, 3.0, 5.0].iter().map(|&t| rec(t, t != 3.0, vec![])).collect();
        let data = SurvivalDataset::new(recs, 0, 1).unwrap();
        let m = fit_cox_mle(&data).unwrap();
        let v = m.baseline.values();
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
        // Nelson-Aalen: 1/5 + 2/4 + 1/1
        assert!((v[2] - (-(0.2 + 0.5 + 1.0f64)).exp()).abs() < 1e-15);
    }

    #[test]
    fn km_predictor_is_feature_blind() {
        let recs = [1.0, 2.0, 3.0, 4.0].iter().map(|&t| rec(t, true, vec![t])).collect();
        let data = SurvivalDataset::new(recs, 1, 1).unwrap();
        let km = km_predictor(&data).unwrap();
        let a = km.predict(&[0.0]).unwrap();
        assert_eq!(a, km.predict(&[9.0]).unwrap());
        assert_eq!(a.values(), &[0.75, 0.5, 0.25, 0.0]);
    }
}
