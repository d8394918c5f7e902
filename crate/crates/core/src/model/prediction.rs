use serde::{Deserialize, Serialize};

use crate::dist::{Family, ParamVector, Quantity};
use crate::error::{Error, Result};
use crate::score::SurvivalCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Step,
    Linear,
}

/// Predicted survival curve of one subject.
///
/// Knot values are kept for export. Parametric predictions additionally carry
/// their distribution and are evaluated exactly between knots; other curves
/// start at `S(0) = 1`, interpolate between knots and stay constant after the
/// last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPrediction {
    times: Vec<f64>,
    values: Vec<f64>,
    interpolation: Interpolation,
    smooth: Option<(Family, ParamVector)>,
}

impl SurvivalPrediction {
    pub fn from_knots(times: Vec<f64>, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Validation("knot times and values differ in length".into()));
        }
        if times.first().is_some_and(|&t| !(t > 0.0)) || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("knot times must be positive and increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: 0 });
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) || values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Validation("survival values must be nonincreasing in [0, 1]".into()));
        }
        Ok(Self {
            times,
            values,
            interpolation,
            smooth: None,
        })
    }

    /// Curve of a parametric law, tabulated at `times`.
    pub fn parametric(family: Family, theta: ParamVector, times: &[f64]) -> Result<Self> {
        if !theta.values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { node: 0 });
        }
        let values = times
            .iter()
            .map(|&t| family.value(Quantity::Sf, theta.values[0], theta.values[1], t))
            .collect();
        Ok(Self {
            times: times.to_vec(),
            values,
            interpolation: Interpolation::Linear,
            smooth: Some((family, theta)),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn distribution(&self) -> Option<(Family, ParamVector)> {
        self.smooth
    }

    /// Index of the first knot `> t`.
    fn upper(&self, t: f64) -> usize {
        self.times.partition_point(|&k| k <= t)
    }

    /// Survival probability at `t`.
    pub fn at(&self, t: f64) -> f64 {
        if let Some((family, theta)) = self.smooth {
            return if t <= 0.0 {
                1.0
            } else {
                family.value(Quantity::Sf, theta.values[0], theta.values[1], t)
            };
        }
        let k = self.upper(t);
        if k == self.times.len() {
            return self.values.last().copied().unwrap_or(1.0);
        }
        match self.interpolation {
            Interpolation::Step => {
                if k == 0 {
                    1.0
                } else {
                    self.values[k - 1]
                }
            }
            Interpolation::Linear => {
                let (t0, s0) = if k == 0 { (0.0, 1.0) } else { (self.times[k - 1], self.values[k - 1]) };
                if t <= t0 {
                    return s0;
                }
                let (t1, s1) = (self.times[k], self.values[k]);
                s0 + (s1 - s0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Density at `t`: exact for parametric curves, the negative slope of the
    /// segment containing `t` for linear curves, unavailable for step curves.
    pub fn density_at(&self, t: f64) -> Option<f64> {
        if let Some((family, theta)) = self.smooth {
            return Some(if t <= 0.0 {
                0.0
            } else {
                family.value(Quantity::Pdf, theta.values[0], theta.values[1], t)
            });
        }
        if self.interpolation == Interpolation::Step {
            return None;
        }
        // segment (t_{k-1}, t_k] containing t
        let k = self.times.partition_point(|&x| x < t);
        if t <= 0.0 || k == self.times.len() {
            return Some(0.0);
        }
        let (t0, s0) = if k == 0 { (0.0, 1.0) } else { (self.times[k - 1], self.values[k - 1]) };
        Some((s0 - self.values[k]) / (self.times[k] - t0))
    }
}

impl SurvivalCurve for SurvivalPrediction {
    fn sf(&self, t: f64) -> f64 {
        self.at(t)
    }

    fn cdf(&self, t: f64) -> f64 {
        match self.smooth {
            Some((family, theta)) if t > 0.0 => {
                family.value(Quantity::Cdf, theta.values[0], theta.values[1], t)
            }
            _ => 1.0 - self.at(t),
        }
    }

    fn density(&self, t: f64) -> Option<f64> {
        self.density_at(t)
    }
}

/// Writes one row per subject and one column per time.
pub fn write_prediction_matrix<W: std::io::Write>(
    preds: &[SurvivalPrediction],
    times: &[f64],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject".to_string()];
    header.extend(times.iter().map(|t| format!("{t}")));
    w.write_record(&header)?;
    for (i, p) in preds.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(times.iter().map(|&t| format!("{}", p.at(t))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_prediction_matrix`]. Rows must be in
/// subject order.
pub fn read_prediction_matrix<R: std::io::Read>(
    reader: R,
    interpolation: Interpolation,
) -> Result<Vec<SurvivalPrediction>> {
    let mut r = csv::Reader::from_reader(reader);
    let parse = |s: &str, row: usize| {
        s.trim().parse::<f64>().map_err(|_| Error::Parse {
            row,
            message: format!("not a number: `{s}`"),
        })
    };
    let times: Vec<f64> = r.headers()?.iter().skip(1).map(|h| parse(h, 0)).collect::<Result<_>>()?;
    let mut preds = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let subject: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Parse {
            row: i + 1,
            message: "missing subject index".into(),
        })?;
        if subject != i {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("expected subject {i}, found {subject}"),
            });
        }
        let values: Vec<f64> = rec.iter().skip(1).map(|v| parse(v, i + 1)).collect::<Result<_>>()?;
        preds.push(SurvivalPrediction::from_knots(times.clone(), values, interpolation)?);
    }
    Ok(preds)
}
