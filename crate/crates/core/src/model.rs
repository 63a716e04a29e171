//! The mixture of probit experts, its priors, and closed-form evaluations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{normalize_covariates, BasisExpansion, Dataset};
use crate::dist::{ln_isotropic_normal, normal_cdf};
use crate::error::{Error, Result};

/// Lower support bound used for smoothing parameters.
pub const TAU_FLOOR: f64 = 1e-8;

const PROB_LO: f64 = 1e-300;
const PROB_HI: f64 = 1.0 - 1e-16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Prior variance of every linear coefficient.
    pub c_alpha: f64,
    /// Upper bound of the largest smoothing parameter.
    pub c_tau: f64,
    /// Prior variance of the gating coefficients.
    pub c_delta: f64,
    /// `Pr(r)` for `r = 1..=R`.
    pub model_prior: Vec<f64>,
}

impl PriorConfig {
    /// Defaults for a dataset of `n` points with up to `max_components`.
    pub fn for_data(n: usize, max_components: usize) -> Self {
        let r = max_components.max(1);
        PriorConfig {
            c_alpha: 1e4,
            c_tau: 1e3,
            c_delta: n as f64,
            model_prior: vec![1.0 / r as f64; r],
        }
    }

    pub fn max_components(&self) -> usize {
        self.model_prior.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_alpha > 0.0 && self.c_tau > TAU_FLOOR && self.c_delta > 0.0) {
            return Err(Error::usage(format!(
                "prior scales must be positive (c_alpha={}, c_tau={}, c_delta={})",
                self.c_alpha, self.c_tau, self.c_delta
            )));
        }
        if self.model_prior.is_empty() || self.model_prior.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::usage("model prior must be a nonempty vector of positive weights"));
        }
        let total: f64 = self.model_prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("model prior sums to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn ln_model_prior(&self, r: usize) -> f64 {
        self.model_prior[r - 1].ln()
    }
}

/// One probit expert: `g(x) = α′z + β′b(x)` with smoothing parameter `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: f64,
}

impl ComponentParams {
    pub fn zeros(q: usize, l: usize, tau: f64) -> Self {
        ComponentParams {
            alpha: vec![0.0; q],
            beta: vec![0.0; l],
            tau,
        }
    }
}

/// Parameters of an `r`-component mixture. `delta` holds the gating rows of
/// components `2..=r`; the first component's row is fixed at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub components: Vec<ComponentParams>,
    pub delta: Vec<Vec<f64>>,
}

impl MixtureParams {
    pub fn r(&self) -> usize {
        self.components.len()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.tau).collect()
    }

    /// Smoothing parameters strictly decreasing, positive and below `c_tau`.
    pub fn tau_ordered(&self, c_tau: f64) -> bool {
        let t = self.taus();
        t.first().is_some_and(|&t0| t0 < c_tau)
            && t.last().is_some_and(|&tl| tl > 0.0)
            && t.windows(2).all(|w| w[0] > w[1])
    }

    /// Permute components so that `new[k] = old[perm[k]]`, re-basing the
    /// gating rows against the new first component so every gating weight is
    /// unchanged.
    pub fn permuted(&self, perm: &[usize]) -> MixtureParams {
        let r = self.r();
        assert_eq!(perm.len(), r);
        let q = self.components[0].alpha.len();
        let full_row = |k: usize| -> Vec<f64> {
            if k == 0 {
                vec![0.0; q]
            } else {
                self.delta[k - 1].clone()
            }
        };
        let base = full_row(perm[0]);
        let delta = perm[1..]
            .iter()
            .map(|&k| full_row(k).iter().zip(&base).map(|(a, b)| a - b).collect())
            .collect();
        MixtureParams {
            components: perm.iter().map(|&k| self.components[k].clone()).collect(),
            delta,
        }
    }

    /// `n × r` matrix of component surfaces `g_j(x_i)`.
    pub fn surfaces(&self, data: &FitData) -> DMatrix<f64> {
        let r = self.r();
        let alpha = DMatrix::from_fn(data.q(), r, |a, j| self.components[j].alpha[a]);
        let mut g = &data.z * alpha;
        if data.l() > 0 {
            let beta = DMatrix::from_fn(data.l(), r, |b, j| self.components[j].beta[b]);
            g += &data.x * beta;
        }
        g
    }

    /// `n × r` matrix of gating weights `π_j(x_i)`.
    pub fn gates(&self, data: &FitData) -> DMatrix<f64> {
        let n = data.n();
        let r = self.r();
        let mut out = DMatrix::zeros(n, r);
        if r == 1 {
            out.fill(1.0);
            return out;
        }
        let dm = DMatrix::from_fn(data.q(), r - 1, |a, k| self.delta[k][a]);
        let scores = &data.z * dm;
        let mut buf = vec![0.0; r];
        for i in 0..n {
            buf[0] = 0.0;
            for k in 1..r {
                buf[k] = scores[(i, k - 1)];
            }
            softmax_in_place(&mut buf);
            for j in 0..r {
                out[(i, j)] = buf[j];
            }
        }
        out
    }
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Softmax over `{0, δ_2′z, …, δ_r′z}`.
pub fn gating_weights(delta: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let mut scores = Vec::with_capacity(delta.len() + 1);
    scores.push(0.0);
    scores.extend(delta.iter().map(|row| dot(row, z)));
    softmax_in_place(&mut scores);
    scores
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `α′z + b′β`.
pub fn component_surface(comp: &ComponentParams, z: &[f64], basis_row: &[f64]) -> f64 {
    dot(&comp.alpha, z) + dot(&comp.beta, basis_row)
}

/// `Σ_j π_j(z) Φ(g_j)`.
pub fn mixture_probability(params: &MixtureParams, z: &[f64], basis_row: &[f64]) -> f64 {
    let w = gating_weights(&params.delta, z);
    params
        .components
        .iter()
        .zip(&w)
        .map(|(c, pi)| pi * normal_cdf(component_surface(c, z, basis_row)))
        .sum()
}

/// Probability of `w = 1` and of `w = 0` at every training point, each
/// computed directly so that neither suffers from cancellation.
pub fn point_probabilities(params: &MixtureParams, data: &FitData) -> (Vec<f64>, Vec<f64>) {
    let g = params.surfaces(data);
    let pi = params.gates(data);
    let n = data.n();
    let mut p1 = vec![0.0; n];
    let mut p0 = vec![0.0; n];
    for j in 0..params.r() {
        for i in 0..n {
            p1[i] += pi[(i, j)] * normal_cdf(g[(i, j)]);
            p0[i] += pi[(i, j)] * normal_cdf(-g[(i, j)]);
        }
    }
    (p1, p0)
}

/// Observed-data log likelihood with the latent labels and utilities
/// integrated out.
pub fn observed_loglik(params: &MixtureParams, data: &FitData) -> f64 {
    let (p1, p0) = point_probabilities(params, data);
    data.w
        .iter()
        .zip(p1.iter().zip(&p0))
        .map(|(&w, (&a, &b))| {
            if w {
                a.clamp(PROB_LO, PROB_HI).ln()
            } else {
                b.clamp(1.0 - PROB_HI, 1.0 - PROB_LO).ln()
            }
        })
        .sum()
}

/// Log prior split into its independent blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogPriorTerms {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub tau: f64,
}

impl LogPriorTerms {
    pub fn total(&self) -> f64 {
        self.alpha + self.beta + self.delta + self.tau
    }
}

/// Nested-uniform smoothing prior: `τ_1 ~ U(0, c_τ)`, `τ_j ~ U(0, τ_{j−1})`.
pub fn ln_tau_prior(taus: &[f64], c_tau: f64) -> f64 {
    let ordered = taus.first().is_some_and(|&t| t < c_tau)
        && taus.last().is_some_and(|&t| t > 0.0)
        && taus.windows(2).all(|w| w[0] > w[1]);
    if !ordered {
        return f64::NEG_INFINITY;
    }
    -c_tau.ln() - taus[..taus.len() - 1].iter().map(|t| t.ln()).sum::<f64>()
}

pub fn log_prior_terms(params: &MixtureParams, prior: &PriorConfig) -> LogPriorTerms {
    let alpha = params
        .components
        .iter()
        .map(|c| ln_isotropic_normal(&c.alpha, prior.c_alpha))
        .sum();
    let beta = params
        .components
        .iter()
        .map(|c| {
            if c.tau > 0.0 {
                ln_isotropic_normal(&c.beta, c.tau)
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum();
    let delta = params
        .delta
        .iter()
        .map(|row| ln_isotropic_normal(row, prior.c_delta))
        .sum();
    LogPriorTerms {
        alpha,
        beta,
        delta,
        tau: ln_tau_prior(&params.taus(), prior.c_tau),
    }
}

pub fn log_prior(params: &MixtureParams, prior: &PriorConfig) -> f64 {
    log_prior_terms(params, prior).total()
}

/// Everything the samplers need about one dataset: the linear design `Z`
/// (rows `(1, x*)`), the orthogonal spline design `X` and the responses.
#[derive(Clone, Debug)]
pub struct FitData {
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub w: Vec<bool>,
    /// Squared column norms of `X`, i.e. the diagonal of `X′X`.
    pub lambda_sq: Vec<f64>,
    pub ztz: DMatrix<f64>,
    pub ztx: DMatrix<f64>,
}

impl FitData {
    pub fn new(data: &Dataset, expansion: &BasisExpansion) -> Result<Self> {
        let z = linear_design(data);
        Self::from_parts(z, expansion.design.clone(), data.responses().to_vec())
    }

    /// Linear probit only: the spline design has no columns.
    pub fn linear_only(data: &Dataset) -> Self {
        let z = linear_design(data);
        Self::from_parts(z, DMatrix::zeros(data.n(), 0), data.responses().to_vec())
            .expect("empty spline design is trivially orthogonal")
    }

    pub fn from_parts(z: DMatrix<f64>, x: DMatrix<f64>, w: Vec<bool>) -> Result<Self> {
        let n = z.nrows();
        if x.nrows() != n || w.len() != n {
            return Err(Error::data(format!(
                "design rows disagree: Z has {n}, X has {}, {} responses",
                x.nrows(),
                w.len()
            )));
        }
        let xtx = x.transpose() * &x;
        let lambda_sq: Vec<f64> = xtx.diagonal().iter().copied().collect();
        for a in 0..x.ncols() {
            for b in 0..a {
                let bound = 1e-8 * (lambda_sq[a] * lambda_sq[b]).sqrt();
                if xtx[(a, b)].abs() > bound.max(1e-300) {
                    return Err(Error::numerical(format!(
                        "spline design columns {b} and {a} are not orthogonal (inner product {:.3e})",
                        xtx[(a, b)]
                    )));
                }
            }
        }
        let ztz = z.transpose() * &z;
        let ztx = z.transpose() * &x;
        Ok(FitData {
            z,
            x,
            w,
            lambda_sq,
            ztz,
            ztx,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    /// Columns of `Z` (intercept plus covariates).
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// Columns of `X`.
    pub fn l(&self) -> usize {
        self.x.ncols()
    }

    pub fn set_responses(&mut self, w: Vec<bool>) {
        assert_eq!(w.len(), self.n());
        self.w = w;
    }

    pub fn z_row(&self, i: usize) -> Vec<f64> {
        self.z.row(i).iter().copied().collect()
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

/// `(1, x*)` rows with normalized covariates.
pub fn linear_design(data: &Dataset) -> DMatrix<f64> {
    let normalized = normalize_covariates(data);
    linear_rows(&normalized)
}

pub fn linear_rows(normalized: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = normalized.shape();
    DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { 1.0 } else { normalized[(i, k - 1)] })
}

/// `(1, x*)` for a single normalized point.
pub fn linear_row(normalized: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(normalized.iter().copied()).collect()
}
