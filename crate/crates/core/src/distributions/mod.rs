//! Stochastic primitives used by the sampler and the scenario generators.
//!
//! Conventions: `InvGamma(shape, rate)` has density proportional to
//! `x^(-shape-1) exp(-rate / x)`; `Gamma` is also parameterised by rate.

mod polya_gamma;
mod rng;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

pub use polya_gamma::{polya_gamma_mean, polya_gamma_var, sample_polya_gamma, PolyaGamma};
pub use rng::{split_seed, RngHandle};

use crate::error::{Error, Result};
use crate::linalg::CholFactor;

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(Error::Domain(format!(
            "Gamma(shape = {shape}, rate = {rate}) needs positive parameters"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Draw from `InvGamma(shape, rate)`.
pub fn sample_invgamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(Error::Domain(format!(
            "InvGamma(shape = {shape}, rate = {rate}) needs positive parameters"
        )));
    }
    Ok(1.0 / sample_gamma(rng, shape, rate)?)
}

pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sample(rng))
}

/// Draw from `N(mean, precision^-1)` via `x = mean + L'^-1 z`, where
/// `precision = L L'` and `z` is standard normal.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let factor = CholFactor::new(precision)?;
    Ok(sample_mvn_factor(rng, mean, &factor))
}

pub(crate) fn sample_mvn_factor<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    factor: &CholFactor,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| standard_normal(rng));
    mean + factor.solve_upper_transpose(&z)
}

/// Log density of `N(mean, precision^-1)` at `x`, given the Cholesky factor
/// of the precision.
pub(crate) fn mvn_precision_ln_pdf(x: &DVector<f64>, mean: &DVector<f64>, factor: &CholFactor) -> f64 {
    let diff = x - mean;
    0.5 * factor.log_det()
        - 0.5 * x.len() as f64 * (2.0 * PI).ln()
        - 0.5 * factor.quad_form(diff.as_slice())
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    std_normal_pdf((x - mean) / var.sqrt()) / var.sqrt()
}

/// Data-generating families of the simulation scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScenarioDist {
    /// `loc + scale * T_df`.
    StudentT { df: f64, loc: f64, scale: f64 },
    /// Azzalini skew normal with location `xi`, scale `omega`, shape `alpha`.
    SkewNormal { xi: f64, omega: f64, alpha: f64 },
    ChiSquared { df: f64 },
    /// Weights, means and variances.
    GaussianMixture { components: Vec<(f64, f64, f64)> },
}

impl ScenarioDist {
    /// Student t whose standard deviation (not scale) equals `sd`; requires
    /// `df > 2`.
    pub fn student_t_with_sd(df: f64, loc: f64, sd: f64) -> Result<Self> {
        if !(df > 2.0) {
            return Err(Error::Domain("a finite standard deviation needs df > 2".into()));
        }
        let d = ScenarioDist::StudentT {
            df,
            loc,
            scale: sd * ((df - 2.0) / df).sqrt(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ScenarioDist::StudentT { df, loc, scale } => *df > 0.0 && loc.is_finite() && *scale > 0.0,
            ScenarioDist::SkewNormal { xi, omega, alpha } => {
                xi.is_finite() && *omega > 0.0 && alpha.is_finite()
            }
            ScenarioDist::ChiSquared { df } => *df > 0.0,
            ScenarioDist::GaussianMixture { components } => {
                !components.is_empty()
                    && components
                        .iter()
                        .all(|&(w, m, v)| w >= 0.0 && m.is_finite() && v > 0.0)
                    && (components.iter().map(|c| c.0).sum::<f64>() - 1.0).abs() < 1e-9
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid scenario distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScenarioDist::StudentT { df, loc, scale } => {
                let t: f64 = StudentT::new(df).expect("validated").sample(rng);
                loc + scale * t
            }
            ScenarioDist::SkewNormal { xi, omega, alpha } => {
                let delta = alpha / (1.0 + alpha * alpha).sqrt();
                let z0: f64 = standard_normal(rng);
                let z1: f64 = standard_normal(rng);
                xi + omega * (delta * z0.abs() + (1.0 - delta * delta).sqrt() * z1)
            }
            ScenarioDist::ChiSquared { df } => ChiSquared::new(df).expect("validated").sample(rng),
            ScenarioDist::GaussianMixture { ref components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = components[components.len() - 1];
                for &c in components {
                    acc += c.0;
                    if u < acc {
                        chosen = c;
                        break;
                    }
                }
                chosen.1 + chosen.2.sqrt() * standard_normal(rng)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ScenarioDist::StudentT { df, loc, scale } => {
                let z = (x - loc) / scale;
                let ln_norm = ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - scale.ln();
                (ln_norm - 0.5 * (df + 1.0) * (1.0 + z * z / df).ln()).exp()
            }
            ScenarioDist::SkewNormal { xi, omega, alpha } => {
                let z = (x - xi) / omega;
                2.0 / omega * std_normal_pdf(z) * std_normal_cdf(alpha * z)
            }
            ScenarioDist::ChiSquared { df } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let k = 0.5 * df;
                    ((k - 1.0) * x.ln() - 0.5 * x - k * 2f64.ln() - ln_gamma(k)).exp()
                }
            }
            ScenarioDist::GaussianMixture { ref components } => components
                .iter()
                .map(|&(w, m, v)| w * normal_pdf(x, m, v))
                .sum(),
        }
    }

    /// Mean and variance, where finite.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            ScenarioDist::StudentT { df, loc, scale } => {
                let var = if df > 2.0 { scale * scale * df / (df - 2.0) } else { f64::INFINITY };
                (loc, var)
            }
            ScenarioDist::SkewNormal { xi, omega, alpha } => {
                let delta = alpha / (1.0 + alpha * alpha).sqrt();
                let mean = xi + omega * delta * (2.0 / PI).sqrt();
                (mean, omega * omega * (1.0 - 2.0 * delta * delta / PI))
            }
            ScenarioDist::ChiSquared { df } => (df, 2.0 * df),
            ScenarioDist::GaussianMixture { ref components } => {
                let mean: f64 = components.iter().map(|&(w, m, _)| w * m).sum();
                let second: f64 = components.iter().map(|&(w, m, v)| w * (v + m * m)).sum();
                (mean, second - mean * mean)
            }
        }
    }
}

/// `n` i.i.d. draws from a scenario family.
pub fn scenario_draws<R: Rng + ?Sized>(rng: &mut R, dist: &ScenarioDist, n: usize) -> Result<Vec<f64>> {
    dist.validate()?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}
