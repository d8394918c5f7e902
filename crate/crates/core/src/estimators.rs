//! Nonparametric estimators: Kaplan-Meier (event or censoring survival) and
//! Aalen-Johansen cumulative incidence.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::step::StepFunction;

/// Default lower bound applied to censoring weights.
pub const DEFAULT_G_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Event,
    Censoring,
}

/// Distinct times with, per time, (events, censorings, at-risk count with
/// `t >= u`). Times are sorted ascending.
struct RiskTable {
    times: Vec<f64>,
    events: Vec<usize>,
    censored: Vec<usize>,
    at_risk: Vec<usize>,
}

impl RiskTable {
    fn build(data: &SurvivalDataset) -> Self {
        let mut obs: Vec<(f64, bool)> = data.records().iter().map(|r| (r.time, r.event)).collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = obs.len();
        let mut table = RiskTable {
            times: Vec::new(),
            events: Vec::new(),
            censored: Vec::new(),
            at_risk: Vec::new(),
        };
        let mut i = 0;
        while i < n {
            let t = obs[i].0;
            let mut j = i;
            let (mut e, mut c) = (0, 0);
            while j < n && obs[j].0 == t {
                if obs[j].1 {
                    e += 1;
                } else {
                    c += 1;
                }
                j += 1;
            }
            table.times.push(t);
            table.events.push(e);
            table.censored.push(c);
            table.at_risk.push(n - i);
            i = j;
        }
        table
    }
}

/// Product-limit estimate `∏_{t_j <= t} (1 - d_j / n_j)`.
///
/// For [`Target::Censoring`] the status is flipped. Within a tied time
/// events precede censorings, so subjects with an event at `u` leave the
/// censoring risk set at `u`.
pub fn kaplan_meier(data: &SurvivalDataset, target: Target) -> Result<StepFunction> {
    if data.is_empty() {
        return Err(Error::Validation("Kaplan-Meier of an empty dataset".into()));
    }
    let table = RiskTable::build(data);
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    for idx in 0..table.times.len() {
        let (d, n) = match target {
            Target::Event => (table.events[idx], table.at_risk[idx]),
            Target::Censoring => (
                table.censored[idx],
                table.at_risk[idx] - table.events[idx],
            ),
        };
        if d == 0 {
            continue;
        }
        s *= 1.0 - d as f64 / n as f64;
        knots.push(table.times[idx]);
        values.push(s);
    }
    Ok(StepFunction::new(knots, values, 1.0))
}

/// `max(G(t⁻), floor)`: probability of remaining uncensored just before `t`.
pub fn censoring_weight(g: &StepFunction, t: f64, floor: f64) -> f64 {
    g.left_limit(t).max(floor)
}

/// Aalen-Johansen cumulative incidence, one step function per cause `1..=K`.
///
/// `CIF_k(u) = CIF_k(u⁻) + S(u⁻) · d_k(u) / n(u)` with `S` the all-cause
/// Kaplan-Meier survival. With a single cause the estimate is `1 - S`.
pub fn aalen_johansen(data: &SurvivalDataset) -> Result<Vec<StepFunction>> {
    if data.is_empty() {
        return Err(Error::Validation("Aalen-Johansen of an empty dataset".into()));
    }
    let k = data.k();
    if k == 1 {
        return Ok(vec![kaplan_meier(data, Target::Event)?.complement()]);
    }
    let mut recs: Vec<(f64, Option<usize>)> = data
        .records()
        .iter()
        .map(|r| (r.time, r.event.then_some(r.cause)))
        .collect();
    recs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = recs.len();

    let mut knots = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut cif = vec![0.0; k];
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = recs[i].0;
        let mut by_cause = vec![0usize; k];
        let mut j = i;
        while j < n && recs[j].0 == t {
            if let Some(c) = recs[j].1 {
                by_cause[c - 1] += 1;
            }
            j += 1;
        }
        let d: usize = by_cause.iter().sum();
        if d > 0 {
            let at_risk = (n - i) as f64;
            for c in 0..k {
                cif[c] += s * by_cause[c] as f64 / at_risk;
                values[c].push(cif[c]);
            }
            s *= 1.0 - d as f64 / at_risk;
            knots.push(t);
        }
        i = j;
    }
    Ok(values
        .into_iter()
        .map(|v| StepFunction::new(knots.clone(), v, 0.0))
        .collect())
}
