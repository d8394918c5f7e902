use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Equidistant partition `0 = τ_0 < τ_1 < … < τ_J = τ*` of the follow-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    cut_points: Vec<f64>,
}

impl TimeGrid {
    pub fn equidistant(tau_star: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Config("grid needs at least one interval".into()));
        }
        if !(tau_star > 0.0 && tau_star.is_finite()) {
            return Err(Error::Config(format!("grid end must be positive, got {tau_star}")));
        }
        let step = tau_star / intervals as f64;
        let mut cut_points: Vec<f64> = (0..=intervals).map(|j| j as f64 * step).collect();
        cut_points[intervals] = tau_star;
        Ok(Self { cut_points })
    }

    /// All cut points including `τ_0 = 0`.
    pub fn cut_points(&self) -> &[f64] {
        &self.cut_points
    }

    /// The evaluation points `τ_1, …, τ_J`.
    pub fn points(&self) -> &[f64] {
        &self.cut_points[1..]
    }

    pub fn intervals(&self) -> usize {
        self.cut_points.len() - 1
    }

    pub fn tau_star(&self) -> f64 {
        self.cut_points[self.intervals()]
    }

    pub fn width(&self) -> f64 {
        self.tau_star() / self.intervals() as f64
    }

    /// Index `j` (1-based) of the interval `(τ_{j-1}, τ_j]` containing `t`,
    /// or `None` when `t` lies beyond `τ_J` (or at 0).
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if t <= 0.0 || t > self.tau_star() {
            return None;
        }
        Some(self.cut_points.partition_point(|&c| c < t).max(1))
    }
}

/// Nearest-rank empirical quantile: the `⌈q·n⌉`-th smallest value.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation("quantile of an empty sample".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("quantile must lie in (0, 1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Grid ending at the `cutoff_quantile` empirical quantile of observed times.
pub fn make_grid(data: &SurvivalDataset, intervals: usize, cutoff_quantile: f64) -> Result<TimeGrid> {
    if intervals == 0 {
        return Err(Error::Config("grid needs at least one interval".into()));
    }
    let tau_star = nearest_rank_quantile(&data.times(), cutoff_quantile)?;
    TimeGrid::equidistant(tau_star, intervals)
}
