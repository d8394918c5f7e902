//! Parametric event-time families in accelerated-failure-time form.
//!
//! Every family is written as `log T = μ + σ ε` where `ε` follows a standard
//! error law: logistic (log-logistic), normal (log-normal) or the minimum
//! extreme-value law (Weibull). Parameters live in the unconstrained space
//! `(μ, log σ)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Lower bound applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;
/// Standardized residuals of the Weibull family are clamped to this range.
pub const WEIBULL_Z_BOUND: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Weibull,
    #[serde(rename = "lognormal")]
    LogNormal,
    #[serde(rename = "loglogistic")]
    LogLogistic,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::LogNormal, Family::LogLogistic, Family::Weibull];

    pub fn name(self) -> &'static str {
        match self {
            Family::Weibull => "weibull",
            Family::LogNormal => "lognormal",
            Family::LogLogistic => "loglogistic",
        }
    }

    /// Draws one standard error `ε`.
    pub fn sample_error<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Family::LogNormal => rng.sample(StandardNormal),
            Family::LogLogistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
            Family::Weibull => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (-u.ln()).ln()
            }
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weibull" => Ok(Family::Weibull),
            "lognormal" => Ok(Family::LogNormal),
            "loglogistic" => Ok(Family::LogLogistic),
            other => Err(Error::Config(format!("unknown distribution family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub family: Family,
}

/// Unconstrained parameters `(μ, log σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: [f64; 2],
}

impl ParamVector {
    pub fn new(location: f64, log_scale: f64) -> Self {
        Self {
            values: [location, log_scale],
        }
    }

    pub fn from_constrained(location: f64, scale: f64) -> Self {
        Self::new(location, scale.ln())
    }

    pub fn location(&self) -> f64 {
        self.values[0]
    }

    /// `σ = exp(log σ) > 0`.
    pub fn scale(&self) -> f64 {
        self.values[1].exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Cdf,
    Sf,
    Pdf,
    LogCdf,
    LogSf,
    LogPdf,
}

/// Value of a quantity with its gradient w.r.t. `(μ, log σ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: [f64; 2],
    /// A clamp (residual bound or log floor) was active.
    pub clamped: bool,
}

// Standard error laws on the standardized residual z.

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

fn normal_log_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        // Mills-ratio asymptotics
        -0.5 * z * z - (-z).ln() - LN_SQRT_2PI + (-1.0 / (z * z)).ln_1p()
    }
}

/// `φ(z) / Φ(z)`, stable in the lower tail.
fn normal_inverse_mills(z: f64) -> f64 {
    if z > -30.0 {
        normal_pdf(z) / normal_cdf(z)
    } else {
        -z / (1.0 - 1.0 / (z * z))
    }
}

impl Family {
    fn z_bound(self) -> Option<f64> {
        matches!(self, Family::Weibull).then_some(WEIBULL_Z_BOUND)
    }

    fn std_cdf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => normal_cdf(z),
            Family::LogLogistic => logistic(z),
            Family::Weibull => -(-z.exp()).exp_m1(),
        }
    }

    fn std_sf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => normal_cdf(-z),
            Family::LogLogistic => logistic(-z),
            Family::Weibull => (-z.exp()).exp(),
        }
    }

    fn std_log_cdf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => normal_log_cdf(z),
            Family::LogLogistic => -softplus(-z),
            Family::Weibull => (-(-z.exp()).exp_m1()).ln(),
        }
    }

    fn std_log_sf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => normal_log_cdf(-z),
            Family::LogLogistic => -softplus(z),
            Family::Weibull => -z.exp(),
        }
    }

    fn std_log_pdf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => -0.5 * z * z - LN_SQRT_2PI,
            Family::LogLogistic => -softplus(-z) - softplus(z),
            Family::Weibull => z - z.exp(),
        }
    }

    fn std_pdf(self, z: f64) -> f64 {
        self.std_log_pdf(z).exp()
    }

    /// d/dz log F_ε(z).
    fn std_dlog_cdf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => normal_inverse_mills(z),
            Family::LogLogistic => logistic(-z),
            Family::Weibull => {
                let w = z.exp();
                w / w.exp_m1()
            }
        }
    }

    /// d/dz log S_ε(z), i.e. minus the hazard of ε.
    fn std_dlog_sf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => -normal_inverse_mills(-z),
            Family::LogLogistic => -logistic(z),
            Family::Weibull => -z.exp(),
        }
    }

    /// d/dz log f_ε(z).
    fn std_dlog_pdf(self, z: f64) -> f64 {
        match self {
            Family::LogNormal => -z,
            Family::LogLogistic => logistic(-z) - logistic(z),
            Family::Weibull => 1.0 - z.exp(),
        }
    }

    /// Value of `quantity` at `t > 0` for unconstrained `(μ, log σ)`; no
    /// domain check.
    pub fn value(self, quantity: Quantity, location: f64, log_scale: f64, t: f64) -> f64 {
        self.evaluate(quantity, location, log_scale, t, false).value
    }

    /// Value and gradient w.r.t. `(μ, log σ)`; no domain check.
    pub fn value_grad(self, quantity: Quantity, location: f64, log_scale: f64, t: f64) -> Evaluation {
        self.evaluate(quantity, location, log_scale, t, true)
    }

    fn evaluate(self, quantity: Quantity, location: f64, log_scale: f64, t: f64, with_grad: bool) -> Evaluation {
        let sigma = log_scale.exp();
        let log_t = t.ln();
        let raw_z = (log_t - location) / sigma;
        let (z, z_clamped) = match self.z_bound() {
            Some(b) if raw_z.abs() > b => (raw_z.clamp(-b, b), true),
            _ => (raw_z, false),
        };
        let log_floor = LOG_FLOOR.ln();
        // derivative of a scalar function of z w.r.t. (μ, log σ)
        let chain = |dz: f64| -> [f64; 2] {
            if z_clamped {
                [0.0, 0.0]
            } else {
                [-dz / sigma, -dz * z]
            }
        };
        let mut clamped = z_clamped;
        let (value, grad) = match quantity {
            Quantity::Cdf => {
                let v = self.std_cdf(z);
                (v, if with_grad { chain(self.std_pdf(z)) } else { [0.0; 2] })
            }
            Quantity::Sf => {
                let v = self.std_sf(z);
                (v, if with_grad { chain(-self.std_pdf(z)) } else { [0.0; 2] })
            }
            Quantity::LogCdf | Quantity::LogSf => {
                let (v, dv) = if quantity == Quantity::LogCdf {
                    (self.std_log_cdf(z), self.std_dlog_cdf(z))
                } else {
                    (self.std_log_sf(z), self.std_dlog_sf(z))
                };
                if v < log_floor {
                    clamped = true;
                    (log_floor, [0.0; 2])
                } else {
                    (v, if with_grad { chain(dv) } else { [0.0; 2] })
                }
            }
            Quantity::LogPdf | Quantity::Pdf => {
                let lp = self.std_log_pdf(z) - log_scale - log_t;
                let mut g = [0.0; 2];
                if with_grad {
                    g = chain(self.std_dlog_pdf(z));
                    g[1] -= 1.0;
                }
                if quantity == Quantity::LogPdf {
                    (lp, g)
                } else {
                    let p = lp.exp();
                    (p, [p * g[0], p * g[1]])
                }
            }
        };
        Evaluation {
            value,
            grad,
            clamped,
        }
    }
}

fn check_domain(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be positive and finite, got {t}")))
    }
}

impl DistributionSpec {
    pub fn new(family: Family) -> Self {
        Self { family }
    }

    /// Number of distribution parameters.
    pub fn m(&self) -> usize {
        2
    }

    fn get(&self, q: Quantity, theta: &ParamVector, t: f64) -> Result<f64> {
        check_domain(t)?;
        Ok(self.family.value(q, theta.values[0], theta.values[1], t))
    }

    pub fn cdf(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.get(Quantity::Cdf, theta, t)
    }

    pub fn sf(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.get(Quantity::Sf, theta, t)
    }

    pub fn pdf(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.get(Quantity::Pdf, theta, t)
    }

    pub fn log_cdf(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.get(Quantity::LogCdf, theta, t)
    }

    pub fn log_sf(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.get(Quantity::LogSf, theta, t)
    }

    pub fn log_pdf(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.get(Quantity::LogPdf, theta, t)
    }

    /// Exact gradient of `which` w.r.t. the unconstrained `(μ, log σ)`.
    pub fn grad_theta(&self, theta: &ParamVector, t: f64, which: Quantity) -> Result<[f64; 2]> {
        check_domain(t)?;
        Ok(self
            .family
            .value_grad(which, theta.values[0], theta.values[1], t)
            .grad)
    }

    /// Draws one event time.
    pub fn sample<R: Rng + ?Sized>(&self, theta: &ParamVector, rng: &mut R) -> f64 {
        (theta.location() + theta.scale() * self.family.sample_error(rng)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(f: Family) -> DistributionSpec {
        DistributionSpec::new(f)
    }

    #[test]
    fn medians_and_weibull_scale() {
        let th = ParamVector::new(0.0, 0.0);
        assert!((spec(Family::LogNormal).cdf(&th, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let a = 3.7f64;
        let th = ParamVector::new(a.ln(), 0.3);
        assert!((spec(Family::LogLogistic).cdf(&th, a).unwrap() - 0.5).abs() < 1e-14);
        for shape_log in [-1.0, 0.0, 0.8] {
            let th = ParamVector::new(a.ln(), shape_log);
            let f = spec(Family::Weibull).cdf(&th, a).unwrap();
            assert!((f - (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn lognormal_pdf_at_median() {
        let p = spec(Family::LogNormal).pdf(&ParamVector::new(0.0, 0.0), 1.0).unwrap();
        assert!((p - 0.398_942_280_401_432_7).abs() < 1e-14);
    }

    #[test]
    fn domain_errors() {
        let th = ParamVector::new(0.0, 0.0);
        for f in Family::ALL {
            assert!(spec(f).cdf(&th, 0.0).is_err());
            assert!(spec(f).log_pdf(&th, -1.0).is_err());
            assert!(spec(f).grad_theta(&th, 0.0, Quantity::Cdf).is_err());
        }
    }

    #[test]
    fn sf_is_one_minus_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..12 {
            let f = Family::ALL[i % 3];
            let th = ParamVector::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..0.7));
            let t = rng.random_range(0.05..20.0);
            let s = spec(f);
            let sum = s.cdf(&th, t).unwrap() + s.sf(&th, t).unwrap();
            assert!((sum - 1.0).abs() <= 1e-12, "{f} {sum}");
        }
    }

    #[test]
    fn pdf_matches_cdf_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for i in 0..30 {
            let f = Family::ALL[i % 3];
            let th = ParamVector::new(rng.random_range(-1.0..1.0), rng.random_range(-0.7..0.5));
            let t = (th.location() + th.scale() * rng.random_range(-1.5..1.5)).exp();
            let s = spec(f);
            let fd = (s.cdf(&th, t + h).unwrap() - s.cdf(&th, t - h).unwrap()) / (2.0 * h);
            let p = s.pdf(&th, t).unwrap();
            assert!((fd - p).abs() <= 1e-5 * p.abs(), "{f}: {fd} vs {p}");
        }
    }

    #[test]
    fn grad_of_cdf_at_median() {
        // dF/dμ = -f_ε(0)/σ at the median of a log-normal
        let sigma = 0.7f64;
        let th = ParamVector::new(1.2, sigma.ln());
        let g = spec(Family::LogNormal)
            .grad_theta(&th, 1.2f64.exp(), Quantity::Cdf)
            .unwrap();
        assert!((g[0] + normal_pdf(0.0) / sigma).abs() < 1e-14);
        assert!(g[1].abs() < 1e-14);
    }

    #[test]
    fn weibull_grad_vanishes_near_zero() {
        let th = ParamVector::new(1.0, -0.5);
        let g = spec(Family::Weibull).grad_theta(&th, 1e-30, Quantity::Cdf).unwrap();
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn log_forms_are_floored() {
        let th = ParamVector::new(3.0, -2.0);
        for f in Family::ALL {
            let v = spec(f).log_cdf(&th, 1e-6).unwrap();
            assert!(v >= LOG_FLOOR.ln() - 1e-12);
            assert_eq!(spec(f).grad_theta(&th, 1e-6, Quantity::LogCdf).unwrap(), [0.0, 0.0]);
        }
    }

    #[test]
    fn limits_and_monotonicity() {
        for f in Family::ALL {
            let th = ParamVector::new(0.5, -0.3);
            let s = spec(f);
            assert!(s.cdf(&th, 1e-8).unwrap() < 1e-6);
            assert!(s.cdf(&th, 1e8 * th.location().exp()).unwrap() > 1.0 - 1e-6);
            let mut prev = 0.0;
            for k in 1..400 {
                let t = 0.01 * k as f64;
                let v = s.cdf(&th, t).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        for f in Family::ALL {
            let th = ParamVector::new(0.3, -0.4);
            let s = spec(f);
            // trapezoid in log-time: ∫ f(t) dt = ∫ f(e^u) e^u du
            let (lo, hi, n) = (-30.0f64, 20.0f64, 200_000);
            let h = (hi - lo) / n as f64;
            let g = |u: f64| s.pdf(&th, u.exp()).unwrap() * u.exp();
            let mut acc = 0.5 * (g(lo) + g(hi));
            for k in 1..n {
                acc += g(lo + k as f64 * h);
            }
            assert!((acc * h - 1.0).abs() < 1e-3, "{f}: {}", acc * h);
        }
    }

    #[test]
    fn sampling_matches_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for f in Family::ALL {
            let s = spec(f);
            let th = ParamVector::new(1.0, 0.4f64.ln());
            let n = 100_000;
            let mut xs: Vec<f64> = (0..n).map(|_| s.sample(&th, &mut rng)).collect();
            xs.sort_by(f64::total_cmp);
            let mut ks: f64 = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                let c = s.cdf(&th, x).unwrap();
                ks = ks.max((c - i as f64 / n as f64).abs()).max((c - (i + 1) as f64 / n as f64).abs());
            }
            assert!(ks < 0.02, "{f}: KS {ks}");
        }
    }

    fn family_strategy() -> impl Strategy<Value = Family> {
        prop_oneof![Just(Family::LogNormal), Just(Family::LogLogistic), Just(Family::Weibull)]
    }

    fn quantity_strategy() -> impl Strategy<Value = Quantity> {
        prop_oneof![
            Just(Quantity::Cdf),
            Just(Quantity::Sf),
            Just(Quantity::Pdf),
            Just(Quantity::LogCdf),
            Just(Quantity::LogSf),
            Just(Quantity::LogPdf),
        ]
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            f in family_strategy(),
            q in quantity_strategy(),
            mu in -1.5f64..1.5,
            ls in -0.8f64..0.5,
            zq in -2.0f64..2.0,
        ) {
            let t = (mu + ls.exp() * zq).exp();
            let ev = f.value_grad(q, mu, ls, t);
            prop_assume!(!ev.clamped);
            let h = 1e-6;
            let fd = [
                (f.value(q, mu + h, ls, t) - f.value(q, mu - h, ls, t)) / (2.0 * h),
                (f.value(q, mu, ls + h, t) - f.value(q, mu, ls - h, t)) / (2.0 * h),
            ];
            for k in 0..2 {
                let scale = fd[k].abs().max(1e-3);
                prop_assert!((ev.grad[k] - fd[k]).abs() <= 1e-5 * scale,
                    "{:?} {:?} k={} ad={} fd={}", f, q, k, ev.grad[k], fd[k]);
            }
        }
    }
}
