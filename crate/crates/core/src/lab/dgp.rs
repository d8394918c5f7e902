//! Synthetic data generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, SurvivalRecord};
use crate::dist::Family;
use crate::error::{Error, Result};

pub const TARGET_CENSORING: f64 = 0.28;
const PILOT_SIZE: usize = 100_000;
const PILOT_SEED: u64 = 0x00c0_ffee;
const BISECTION_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    #[default]
    AftSimple,
    Complex,
    Competing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Censoring {
    /// Uniform on `(0, c)` with `c` calibrated to the target rate.
    Uniform { rate: f64 },
    None,
}

impl Default for Censoring {
    fn default() -> Self {
        Censoring::Uniform {
            rate: TARGET_CENSORING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub kind: DgpKind,
    /// Error law of the simple AFT generator.
    pub family: Family,
    pub n: usize,
    /// Intercept and three slopes of the simple AFT generator.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub censoring: Censoring,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            kind: DgpKind::AftSimple,
            family: Family::LogNormal,
            n: 1500,
            beta: vec![2.0, 0.5, 0.2, 0.0],
            sigma: 0.4,
            censoring: Censoring::default(),
            seed: 0,
        }
    }
}

/// Latent event time, cause and features of one subject.
type Draw = (f64, usize, Vec<f64>);

fn normals<R: Rng>(rng: &mut R, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.sample(StandardNormal)).collect()
}

/// Location of the nonlinear generator.
pub fn complex_location(x: &[f64]) -> f64 {
    2.0 + 0.5 * x[0] + (2.0 * x[1]).sin() + 0.3 * x[0] * x[2] + 0.4 * x[3] * x[3]
}

/// Location of the second cause in the competing-risks generator.
pub fn second_cause_location(x: &[f64]) -> f64 {
    2.2 + 0.4 * x[0]
}

pub const COMPLEX_SIGMA: f64 = 0.4;

fn draw(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> Draw {
    match cfg.kind {
        DgpKind::AftSimple => {
            let x = normals(rng, 3);
            let b = &cfg.beta;
            let eta = b[0] + b[1] * x[0] + b[2] * x[1] + b[3] * x[2];
            ((eta + cfg.sigma * cfg.family.sample_error(rng)).exp(), 1, x)
        }
        DgpKind::Complex => {
            let x = normals(rng, 4);
            let e: f64 = rng.sample(StandardNormal);
            ((complex_location(&x) + COMPLEX_SIGMA * e).exp(), 1, x)
        }
        DgpKind::Competing => {
            let x = normals(rng, 4);
            let (e1, e2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let y1 = (complex_location(&x) + COMPLEX_SIGMA * e1).exp();
            let y2 = (second_cause_location(&x) + COMPLEX_SIGMA * e2).exp();
            if y1 <= y2 {
                (y1, 1, x)
            } else {
                (y2, 2, x)
            }
        }
    }
}

/// Upper bound `c` of uniform censoring such that `P(C < Y) = rate`, by
/// log-scale bisection on a fixed pilot sample.
pub fn calibrate_censoring(cfg: &DgpConfig, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!("censoring rate must lie in (0, 1), got {rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PILOT_SEED);
    let pilot: Vec<f64> = (0..PILOT_SIZE).map(|_| draw(cfg, &mut rng).0).collect();
    // with C ~ U(0, c): P(C < Y) = E[min(Y, c)] / c, decreasing in c
    let censored = |c: f64| pilot.iter().map(|&y| y.min(c)).sum::<f64>() / (c * pilot.len() as f64);
    let max = pilot.iter().copied().fold(0.0, f64::max);
    let min = pilot.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = ((min * 1e-3).ln(), (max * 1e3).ln());
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if censored(mid.exp()) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Draws a dataset from `cfg`.
pub fn simulate(cfg: &DgpConfig) -> Result<SurvivalDataset> {
    if cfg.n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if cfg.kind == DgpKind::AftSimple {
        if !(cfg.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if cfg.beta.len() != 4 {
            return Err(Error::Config("beta needs an intercept and three slopes".into()));
        }
    }
    let bound = match cfg.censoring {
        Censoring::Uniform { rate } => Some(calibrate_censoring(cfg, rate)?),
        Censoring::None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let records = (0..cfg.n)
        .map(|_| {
            let (y, cause, x) = draw(cfg, &mut rng);
            match bound {
                Some(c) => {
                    let censor = rng.random_range(0.0..c);
                    SurvivalRecord::new(y.min(censor), y <= censor, x).with_cause(cause)
                }
                None => SurvivalRecord::new(y, true, x).with_cause(cause),
            }
        })
        .collect();
    let (p, k) = match cfg.kind {
        DgpKind::AftSimple => (3, 1),
        DgpKind::Complex => (4, 1),
        DgpKind::Competing => (4, 2),
    };
    SurvivalDataset::new(records, p, k)
}

/// Simple AFT data: `log T = β_0 + β·x + σ ε`.
pub fn simulate_aft(family: Family, n: usize, seed: u64) -> Result<SurvivalDataset> {
    simulate(&DgpConfig {
        family,
        n,
        seed,
        ..DgpConfig::default()
    })
}

pub fn simulate_complex(n: usize, seed: u64) -> Result<SurvivalDataset> {
    simulate(&DgpConfig {
        kind: DgpKind::Complex,
        n,
        seed,
        ..DgpConfig::default()
    })
}

pub fn simulate_cr(n: usize, seed: u64) -> Result<SurvivalDataset> {
    simulate(&DgpConfig {
        kind: DgpKind::Competing,
        n,
        seed,
        ..DgpConfig::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn censored_share(d: &SurvivalDataset) -> f64 {
        1.0 - d.n_events() as f64 / d.n() as f64
    }

    #[test]
    fn default_censoring_near_target() {
        for family in Family::ALL {
            let d = simulate_aft(family, 1500, 3).unwrap();
            let share = censored_share(&d);
            assert!((0.24..=0.32).contains(&share), "{family:?}: {share}");
        }
        for d in [simulate_complex(1500, 4).unwrap(), simulate_cr(1500, 5).unwrap()] {
            let share = censored_share(&d);
            assert!((0.24..=0.32).contains(&share), "{share}");
        }
    }

    #[test]
    fn degenerate_noise_recovers_linear_predictor() {
        let cfg = DgpConfig {
            sigma: 1e-9,
            censoring: Censoring::None,
            n: 50,
            ..DgpConfig::default()
        };
        let d = simulate(&cfg).unwrap();
        for r in d.records() {
            let x = &r.features;
            let eta = 2.0 + 0.5 * x[0] + 0.2 * x[1];
            assert!((r.time.ln() - eta).abs() < 1e-6);
            assert!(r.event);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        assert_eq!(simulate_cr(200, 9).unwrap(), simulate_cr(200, 9).unwrap());
        assert_ne!(simulate_complex(200, 9).unwrap(), simulate_complex(200, 10).unwrap());
    }

    #[test]
    fn complex_median_at_zero_features() {
        assert_eq!(complex_location(&[0.0; 4]).exp(), 2f64.exp());
    }

    #[test]
    fn competing_shares_partition() {
        let d = simulate_cr(2000, 1).unwrap();
        let n = d.n() as f64;
        let c1 = d.n_cause_events(1) as f64 / n;
        let c2 = d.n_cause_events(2) as f64 / n;
        assert!(c1 > 0.0 && c2 > 0.0);
        assert!((c1 + c2 + censored_share(&d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        assert!(simulate(&DgpConfig { n: 0, ..DgpConfig::default() }).is_err());
        assert!(simulate(&DgpConfig { sigma: 0.0, ..DgpConfig::default() }).is_err());
        assert!(simulate(&DgpConfig { beta: vec![1.0], ..DgpConfig::default() }).is_err());
    }
}
