//! Scalar and multivariate distributions used by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standardised truncation bound beyond which the exponential-rejection tail
/// sampler replaces the inverse CDF.
const TAIL_THRESHOLD: f64 = 5.0;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(x)`, accurate for large positive `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // One Halley step against the accurate CDF.
    let pdf = (-0.5 * x * x - LN_SQRT_2PI).exp();
    if pdf <= 0.0 {
        return x;
    }
    let e = (normal_cdf(x) - p) / pdf;
    x - e / (1.0 + 0.5 * x * e)
}

pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

/// Log density of `N(0, var·I)` at `x`.
pub fn ln_isotropic_normal(x: &[f64], var: f64) -> f64 {
    let ss: f64 = x.iter().map(|v| v * v).sum();
    let k = x.len() as f64;
    -k * LN_SQRT_2PI - 0.5 * k * var.ln() - 0.5 * ss / var
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draw `Z ~ N(0,1)` conditioned on `Z > lower`.
pub fn std_normal_above<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower < TAIL_THRESHOLD {
        // -Z is N(0,1) restricted to (-inf, -lower); invert its CDF.
        let mass = normal_cdf(-lower);
        let z = -normal_quantile(uniform_open(rng) * mass);
        // Rounding in the quantile can land a hair below the bound.
        return z.max(lower);
    }
    // Robert (1995) translated-exponential rejection.
    let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = lower + e / rate;
        let log_accept = -0.5 * (z - rate) * (z - rate);
        if uniform_open(rng).ln() <= log_accept {
            return z;
        }
    }
}

/// Draw `v ~ N(mean, 1)` restricted to `(0, ∞)` when `positive`, else `(-∞, 0)`.
pub fn truncated_unit_normal<R: Rng + ?Sized>(mean: f64, positive: bool, rng: &mut R) -> f64 {
    if positive {
        let v = mean + std_normal_above(-mean, rng);
        if v > 0.0 {
            v
        } else {
            f64::MIN_POSITIVE
        }
    } else {
        let v = mean - std_normal_above(mean, rng);
        if v < 0.0 {
            v
        } else {
            -f64::MIN_POSITIVE
        }
    }
}

/// Multivariate Student-t with 5 degrees of freedom.
#[derive(Clone, Debug)]
pub struct MultivariateT {
    location: DVector<f64>,
    chol_lower: DMatrix<f64>,
    ln_norm: f64,
}

impl MultivariateT {
    pub const DOF: f64 = 5.0;

    /// Build from a location and a symmetric positive-definite scale matrix.
    pub fn new(location: DVector<f64>, scale: DMatrix<f64>) -> Result<Self> {
        let d = location.len();
        if scale.nrows() != d || scale.ncols() != d {
            return Err(Error::numerical(format!(
                "t scale is {}x{}, location has length {d}",
                scale.nrows(),
                scale.ncols()
            )));
        }
        let chol = Cholesky::<f64, Dyn>::new(scale).ok_or_else(|| {
            Error::numerical(format!("t scale matrix of dimension {d} is not positive definite"))
        })?;
        let chol_lower = chol.l();
        let ln_det_half: f64 = chol_lower.diagonal().iter().map(|v| v.ln()).sum();
        let nu = Self::DOF;
        let df = d as f64;
        let ln_norm = ln_gamma(0.5 * (nu + df))
            - ln_gamma(0.5 * nu)
            - 0.5 * df * (nu * std::f64::consts::PI).ln()
            - ln_det_half;
        Ok(MultivariateT {
            location,
            chol_lower,
            ln_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.location
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        if d == 0 {
            return 0.0;
        }
        let diff = DVector::from_iterator(d, x.iter().zip(self.location.iter()).map(|(a, b)| a - b));
        let solved = self
            .chol_lower
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        let q = solved.norm_squared();
        self.ln_norm - 0.5 * (Self::DOF + d as f64) * (1.0 + q / Self::DOF).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        if d == 0 {
            return Vec::new();
        }
        let z = DVector::from_fn(d, |_, _| standard_normal(rng));
        let chi: f64 = ChiSquared::new(Self::DOF)
            .expect("positive degrees of freedom")
            .sample(rng);
        let scale = (Self::DOF / chi).sqrt();
        let x = &self.location + (&self.chol_lower * z) * scale;
        x.iter().copied().collect()
    }
}

/// Univariate slice sampler with shrinkage on the bounded interval
/// `(lower, upper)`, repeated `steps` times from `x0`.
pub fn slice_sample<F, R>(x0: f64, mut ln_f: F, lower: f64, upper: f64, steps: usize, rng: &mut R) -> f64
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    let mut x = x0.clamp(lower, upper);
    let mut fx = ln_f(x);
    for _ in 0..steps {
        let level = fx + uniform_open(rng).ln();
        let (mut lo, mut hi) = (lower, upper);
        loop {
            let cand = lo + rng.random::<f64>() * (hi - lo);
            let fc = ln_f(cand);
            if fc > level {
                x = cand;
                fx = fc;
                break;
            }
            if cand < x {
                lo = cand;
            } else {
                hi = cand;
            }
            if hi - lo <= f64::EPSILON * (1.0 + x.abs()) {
                break;
            }
        }
    }
    x
}
