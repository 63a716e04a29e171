//! Benchmark regression functions and simulated datasets.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::Dataset;
use crate::dist::normal_cdf;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkFunction {
    /// `Φ(2 sin 4πx)`.
    #[serde(alias = "a")]
    ASin,
    /// Two exponential bumps under a probit link.
    #[serde(alias = "b")]
    BPeak,
    /// Two jumps at 0.25 and 0.75.
    #[serde(alias = "c")]
    CStep,
    /// 0.8 inside a disc of radius 0.16 around (0.5, 0.5), 0.2 outside.
    #[serde(alias = "d")]
    DCylinder,
}

impl BenchmarkFunction {
    pub const ALL: [BenchmarkFunction; 4] = [Self::ASin, Self::BPeak, Self::CStep, Self::DCylinder];

    pub fn label(self) -> &'static str {
        match self {
            Self::ASin => "a_sin",
            Self::BPeak => "b_peak",
            Self::CStep => "c_step",
            Self::DCylinder => "d_cylinder",
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            Self::DCylinder => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for BenchmarkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BenchmarkFunction {
    type Err = Error;

    /// Accepts the full label or its leading letter.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|f| f.label() == s || f.label()[..1] == s)
            .ok_or_else(|| Error::usage(format!("unknown function '{s}' (expected one of a, b, c, d)")))
    }
}

/// A benchmark function together with its variant flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub function: BenchmarkFunction,
    /// Use `exp(−·)` in the peak function, giving two Gaussian bumps instead of
    /// the literal growing exponentials.
    pub b_negated_exponents: bool,
}

impl Benchmark {
    pub fn new(function: BenchmarkFunction) -> Self {
        Benchmark {
            function,
            b_negated_exponents: false,
        }
    }

    pub fn negated(function: BenchmarkFunction) -> Self {
        Benchmark {
            function,
            b_negated_exponents: true,
        }
    }

    pub fn dimension(&self) -> usize {
        self.function.dimension()
    }

    /// `Pr(w = 1 | x)`.
    pub fn true_probability(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension() {
            return Err(Error::data(format!(
                "{} takes {} covariate(s), got {}",
                self.function,
                self.dimension(),
                x.len()
            )));
        }
        let v = x[0];
        let step = |t: f64| if v > t { 1.0 } else { 0.0 };
        Ok(match self.function {
            BenchmarkFunction::ASin => normal_cdf(2.0 * (4.0 * std::f64::consts::PI * v).sin()),
            BenchmarkFunction::BPeak => {
                let sign = if self.b_negated_exponents { -1.0 } else { 1.0 };
                let e1 = (sign * (v - 0.1).powi(2) / 0.18).exp();
                let e2 = (sign * (v - 0.6).powi(2) / 0.004).exp();
                normal_cdf(5.0 / 6.0 * e1 + e2 / 3.0 - 1.0)
            }
            BenchmarkFunction::CStep => normal_cdf(-1.036 + 2.073 * step(0.25) - 1.42712 * step(0.75)),
            BenchmarkFunction::DCylinder => {
                let d = (v - 0.5).powi(2) + (x[1] - 0.5).powi(2) - 0.16f64.powi(2);
                if d < 0.0 {
                    0.8
                } else {
                    0.2
                }
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// i.i.d. uniform on the unit interval or square.
    Uniform,
    /// Equally spaced including both ends; in two dimensions `n` must be a
    /// perfect square.
    Grid,
}

/// Covariates for `n` points of dimension `dim`.
pub fn design_points<R: Rng + ?Sized>(n: usize, dim: usize, design: Design, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::usage("n must be positive"));
    }
    match design {
        Design::Uniform => Ok(DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>())),
        Design::Grid => {
            let side = if dim == 1 {
                n
            } else {
                let k = (n as f64).sqrt().round() as usize;
                if k * k != n {
                    return Err(Error::usage(format!("a 2-D grid needs a square n, got {n}")));
                }
                k
            };
            let coord = |k: usize| if side == 1 { 0.5 } else { k as f64 / (side - 1) as f64 };
            Ok(DMatrix::from_fn(n, dim, |i, c| if c == 0 { coord(i % side) } else { coord(i / side) }))
        }
    }
}

/// A simulated dataset with its true probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub covariates: DMatrix<f64>,
    pub responses: Vec<bool>,
    pub truth: Vec<f64>,
}

impl Simulation {
    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::new(self.covariates, self.responses)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.covariates.clone(), self.responses.clone())
    }
}

/// Draw Bernoulli responses at fixed covariates.
pub fn simulate_at<R: Rng + ?Sized>(bench: &Benchmark, covariates: DMatrix<f64>, rng: &mut R) -> Result<Simulation> {
    let truth = (0..covariates.nrows())
        .map(|i| {
            let row: Vec<f64> = covariates.row(i).iter().copied().collect();
            bench.true_probability(&row)
        })
        .collect::<Result<Vec<_>>>()?;
    let responses = truth.iter().map(|&p| rng.random::<f64>() < p).collect();
    Ok(Simulation {
        covariates,
        responses,
        truth,
    })
}

/// Draw covariates from `design`, then responses.
pub fn generate<R: Rng + ?Sized>(bench: &Benchmark, n: usize, design: Design, rng: &mut R) -> Result<Simulation> {
    let x = design_points(n, bench.dimension(), design, rng)?;
    simulate_at(bench, x, rng)
}
