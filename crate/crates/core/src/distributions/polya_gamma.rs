//! Pólya-Gamma sampling.
//!
//! `PG(1, c)` uses Devroye's alternating-series rejection sampler with the
//! usual truncation point 0.64 (Polson, Scott & Windle); `PG(b, c)` for integer
//! `b` is the sum of `b` independent `PG(1, c)` draws. A moment-matched normal
//! can replace the sum for large `b` when explicitly enabled.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};

const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / 0.64;

/// Configured PG sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PolyaGamma {
    /// Use the normal approximation when `b` exceeds this value.
    pub normal_approx_above: Option<u32>,
}

impl PolyaGamma {
    pub fn exact() -> Self {
        PolyaGamma::default()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, b: u32, c: f64) -> Result<f64> {
        if b == 0 {
            return Err(Error::Domain("Polya-Gamma shape b must be at least 1".into()));
        }
        if !c.is_finite() {
            return Err(Error::Domain(format!("Polya-Gamma tilt {c} is not finite")));
        }
        if let Some(limit) = self.normal_approx_above {
            if b > limit {
                return Ok(normal_approx(rng, b, c));
            }
        }
        let z = 0.5 * c.abs();
        let consts = DevroyeConsts::new(z);
        Ok((0..b).map(|_| consts.draw(rng)).sum())
    }
}

/// Draw `PG(b, c)` with the exact sampler.
pub fn sample_polya_gamma<R: Rng + ?Sized>(rng: &mut R, b: u32, c: f64) -> Result<f64> {
    PolyaGamma::exact().sample(rng, b, c)
}

/// `E[PG(b, c)] = b / (2c) tanh(c / 2)`, `b / 4` at `c = 0`.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 0.05 {
        let c2 = c * c;
        b * (0.25 - c2 / 48.0 + c2 * c2 / 480.0 - 17.0 * c2 * c2 * c2 / 80640.0)
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// `Var[PG(b, c)] = b (sinh c - c) / (4 c^3 cosh^2(c / 2))`, `b / 24` at `c = 0`.
pub fn polya_gamma_var(b: f64, c: f64) -> f64 {
    if c.abs() < 0.05 {
        let c2 = c * c;
        b * (1.0 / 24.0 - c2 / 120.0 + 17.0 * c2 * c2 / 13440.0 - 31.0 * c2 * c2 * c2 / 181440.0)
    } else {
        b * (c.sinh() - c) / (4.0 * c.powi(3) * (0.5 * c).cosh().powi(2))
    }
}

fn normal_approx<R: Rng + ?Sized>(rng: &mut R, b: u32, c: f64) -> f64 {
    let mean = polya_gamma_mean(b as f64, c);
    let sd = polya_gamma_var(b as f64, c).sqrt();
    let z: f64 = StandardNormal.sample(rng);
    (mean + sd * z).max(1e-12 * mean)
}

/// Quantities of the `J*(1, z)` sampler that depend on the tilt only.
struct DevroyeConsts {
    z: f64,
    fz: f64,
    p_exp: f64,
}

impl DevroyeConsts {
    fn new(z: f64) -> Self {
        let fz = 0.125 * PI * PI + 0.5 * z * z;
        DevroyeConsts {
            z,
            fz,
            p_exp: mass_texpon(z, fz),
        }
    }

    /// One draw from `PG(1, 2z)`.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = if rng.random::<f64>() < self.p_exp {
                let e: f64 = Exp1.sample(rng);
                TRUNC + e / self.fz
            } else {
                rtigauss(rng, self.z)
            };
            let mut s = series_coef(0, x);
            let y = rng.random::<f64>() * s;
            let mut n = 0;
            loop {
                n += 1;
                if n % 2 == 1 {
                    s -= series_coef(n, x);
                    if y <= s {
                        return 0.25 * x;
                    }
                } else {
                    s += series_coef(n, x);
                    if y > s {
                        break;
                    }
                }
            }
        }
    }
}

/// Probability of drawing from the exponential tail piece.
fn mass_texpon(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Inverse Gaussian with mean `1/z`, truncated to `(0, TRUNC]`.
fn rtigauss<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    let t = TRUNC;
    let mut x = t + 1.0;
    if TRUNC_RECIP > z {
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let mut e1: f64 = Exp1.sample(rng);
            let mut e2: f64 = Exp1.sample(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let r = 1.0 + e1 * t;
            x = t / (r * r);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let n: f64 = StandardNormal.sample(rng);
            let mu_y = mu * n * n;
            let half_mu = 0.5 * mu;
            x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

/// Piecewise coefficients of the alternating series for `J*(1, 0)`.
fn series_coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let m = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * m * m / x).exp()
    } else {
        0.0
    }
}
