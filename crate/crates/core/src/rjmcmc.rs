//! Reversible-jump sampling over the number of mixture components.
//!
//! For every candidate `r` a fixed-dimension pilot chain is run first. The
//! sample moments of its iterates define two multivariate-t(5) independence
//! proposals, one for the stacked component coefficients `(α, β)` and one for
//! the gating rows `δ`. A jump to `r'` draws a complete parameter vector from
//! the `r'` proposals and is accepted by a Metropolis-Hastings test.
//!
//! Smoothing parameters are not proposed. Each model keeps the `τ` it had when
//! last left (initially the pilot's final value), and a jump exchanges the
//! current `τ` with the stored one. Treating the stored values as auxiliary
//! variables whose reference density is their prior makes the `τ` prior cancel
//! from the acceptance ratio.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_quantile, standard_normal, MultivariateT};
use crate::error::{Error, Result};
use crate::model::{log_prior_terms, observed_loglik, ComponentParams, FitData, MixtureParams, PriorConfig};
use crate::rng::RngStream;
use crate::sampler::{within_sweep, ChainState, SamplerSettings};

/// Ridge added to pilot covariances before they are used as t scales.
pub const PROPOSAL_RIDGE: f64 = 1e-8;

/// Chain lengths for pilots and the main run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub pilot_burnin: usize,
    pub pilot_length: usize,
    pub warmup: usize,
    pub sampling: usize,
    pub thin: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            pilot_burnin: 1000,
            pilot_length: 2000,
            warmup: 5000,
            sampling: 5000,
            thin: 1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pilot_length < 2 {
            return Err(Error::usage("pilot_length must be at least 2"));
        }
        if self.sampling == 0 || self.thin == 0 {
            return Err(Error::usage("sampling and thin must be positive"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.sampling.div_ceil(self.thin)
    }
}

/// Length of the flattened `Θ_r = (α, β, δ)` vector.
pub fn theta_dim(r: usize, q: usize, l: usize) -> usize {
    r * (q + l) + r.saturating_sub(1) * q
}

/// Stack `α_1..α_r, β_1..β_r, δ_2..δ_r` into one vector.
pub fn flatten(params: &MixtureParams) -> Vec<f64> {
    let mut out = Vec::new();
    for c in &params.components {
        out.extend_from_slice(&c.alpha);
    }
    for c in &params.components {
        out.extend_from_slice(&c.beta);
    }
    for d in &params.delta {
        out.extend_from_slice(d);
    }
    out
}

/// Inverse of [`flatten`], attaching the given smoothing parameters.
pub fn unflatten(theta: &[f64], q: usize, l: usize, taus: &[f64]) -> MixtureParams {
    let r = taus.len();
    debug_assert_eq!(theta.len(), theta_dim(r, q, l));
    let beta_start = r * q;
    let delta_start = r * (q + l);
    let components = (0..r)
        .map(|j| ComponentParams {
            alpha: theta[j * q..(j + 1) * q].to_vec(),
            beta: theta[beta_start + j * l..beta_start + (j + 1) * l].to_vec(),
            tau: taus[j],
        })
        .collect();
    let delta = theta[delta_start..].chunks(q.max(1)).map(|c| c.to_vec()).take(r - 1).collect();
    MixtureParams { components, delta }
}

/// Moments of one pilot chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPilot {
    pub r: usize,
    pub mean_theta: Vec<f64>,
    /// Row-major `dim × dim` sample covariance.
    pub cov_theta: Vec<f64>,
    pub last_tau: Vec<f64>,
    pub pilot_draw_count: usize,
    /// `None` for `r = 1`.
    pub delta_acceptance: Option<f64>,
}

impl ModelPilot {
    pub fn dim(&self) -> usize {
        self.mean_theta.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.cov_theta)
    }

    /// Parameters at the pilot mean with the pilot's final `τ`.
    pub fn mean_params(&self, q: usize, l: usize) -> MixtureParams {
        unflatten(&self.mean_theta, q, l, &self.last_tau)
    }
}

/// Pilot summaries for `r = 1..=R`, plus the shape they were built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotSummary {
    pub q: usize,
    pub l: usize,
    pub models: Vec<ModelPilot>,
}

impl PilotSummary {
    /// Build directly from supplied moments, bypassing the pilot chains.
    pub fn from_moments(q: usize, l: usize, moments: Vec<(Vec<f64>, DMatrix<f64>, Vec<f64>)>) -> Result<Self> {
        let models = moments
            .into_iter()
            .enumerate()
            .map(|(i, (mean, cov, tau))| {
                let r = i + 1;
                let d = theta_dim(r, q, l);
                if mean.len() != d || cov.nrows() != d || cov.ncols() != d || tau.len() != r {
                    return Err(Error::usage(format!("pilot moments for r={r} have the wrong shape")));
                }
                Ok(ModelPilot {
                    r,
                    mean_theta: mean,
                    cov_theta: cov.transpose().as_slice().to_vec(),
                    last_tau: tau,
                    pilot_draw_count: 0,
                    delta_acceptance: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PilotSummary { q, l, models })
    }

    pub fn max_components(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, r: usize) -> &ModelPilot {
        &self.models[r - 1]
    }

    /// Construct the independence proposals.
    pub fn proposals(&self) -> Result<Vec<ModelProposal>> {
        self.models.iter().map(|m| ModelProposal::new(m, self.q, self.l)).collect()
    }
}

/// The two t(5) proposal blocks for one model.
#[derive(Clone, Debug)]
pub struct ModelProposal {
    pub r: usize,
    coef: MultivariateT,
    delta: MultivariateT,
    split: usize,
}

impl ModelProposal {
    pub fn new(pilot: &ModelPilot, q: usize, l: usize) -> Result<Self> {
        let r = pilot.r;
        let split = r * (q + l);
        let d = pilot.dim();
        let mut cov = pilot.cov_matrix();
        cov = 0.5 * (&cov + cov.transpose());
        for i in 0..d {
            cov[(i, i)] += PROPOSAL_RIDGE;
        }
        let mean = DVector::from_column_slice(&pilot.mean_theta);
        let coef = MultivariateT::new(
            mean.rows(0, split).into_owned(),
            cov.view((0, 0), (split, split)).into_owned(),
        )
        .map_err(|e| Error::numerical(format!("coefficient proposal for r={r}: {e}")))?;
        let delta = MultivariateT::new(
            mean.rows(split, d - split).into_owned(),
            cov.view((split, split), (d - split, d - split)).into_owned(),
        )
        .map_err(|e| Error::numerical(format!("gating proposal for r={r}: {e}")))?;
        Ok(ModelProposal { r, coef, delta, split })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = self.coef.sample(rng);
        theta.extend(self.delta.sample(rng));
        theta
    }

    pub fn ln_pdf(&self, theta: &[f64]) -> f64 {
        self.coef.ln_pdf(&theta[..self.split]) + self.delta.ln_pdf(&theta[self.split..])
    }
}

/// Dispersed starting point for a pilot. Linear coefficients start at unit
/// scale around the probit of `base_rate`, spline coefficients near zero,
/// gating rows at 0.1 times prior draws, and smoothing parameters on a
/// halving ladder below `c_τ`. Starting `α` at its (very wide) prior scale
/// saturates `Φ` and leaves the label sampler stuck with deterministic
/// components.
pub fn dispersed_start<R: Rng + ?Sized>(
    r: usize,
    q: usize,
    l: usize,
    base_rate: f64,
    prior: &PriorConfig,
    rng: &mut R,
) -> MixtureParams {
    let intercept = normal_quantile(base_rate.clamp(0.01, 0.99));
    let taus: Vec<f64> = (0..r).map(|j| prior.c_tau * 0.5f64.powi(j as i32 + 1)).collect();
    let components = taus
        .iter()
        .map(|&tau| ComponentParams {
            alpha: (0..q)
                .map(|a| if a == 0 { intercept } else { 0.0 } + standard_normal(rng))
                .collect(),
            beta: (0..l).map(|_| 0.1 * standard_normal(rng)).collect(),
            tau,
        })
        .collect();
    let delta = (1..r)
        .map(|_| (0..q).map(|_| 0.1 * prior.c_delta.sqrt() * standard_normal(rng)).collect())
        .collect();
    MixtureParams { components, delta }
}

/// Run one fixed-`r` pilot chain and summarise it.
pub fn run_pilot(
    r: usize,
    data: &FitData,
    prior: &PriorConfig,
    settings: &SamplerSettings,
    config: &ChainConfig,
    rng: &mut RngStream,
) -> Result<ModelPilot> {
    let (q, l) = (data.q(), data.l());
    let d = theta_dim(r, q, l);
    let base_rate = data.w.iter().filter(|&&w| w).count() as f64 / data.n() as f64;
    let mut state = ChainState::new(dispersed_start(r, q, l, base_rate, prior, rng), data.n());
    let mut accepted = 0usize;
    let total = config.pilot_burnin + config.pilot_length;
    let mut sum = DVector::<f64>::zeros(d);
    let mut outer = DMatrix::<f64>::zeros(d, d);
    for it in 0..total {
        let report = within_sweep(&mut state, data, prior, settings, rng)?;
        if report.delta_accepted == Some(true) {
            accepted += 1;
        }
        if it >= config.pilot_burnin {
            let theta = DVector::from_vec(flatten(&state.params));
            outer.ger(1.0, &theta, &theta, 1.0);
            sum += theta;
        }
    }
    if r > 1 && accepted == 0 {
        return Err(Error::numerical(format!(
            "pilot chain for r={r} never accepted a gating update in {total} sweeps"
        )));
    }
    let m = config.pilot_length as f64;
    let mean = &sum / m;
    let cov = (outer - &mean * mean.transpose() * m) / (m - 1.0);
    let delta_acceptance = (r > 1).then(|| accepted as f64 / total as f64);
    debug!("pilot r={r}: gating acceptance {delta_acceptance:?}");
    Ok(ModelPilot {
        r,
        mean_theta: mean.iter().copied().collect(),
        cov_theta: cov.transpose().as_slice().to_vec(),
        last_tau: state.params.taus(),
        pilot_draw_count: config.pilot_length,
        delta_acceptance,
    })
}

/// Run pilots for every `r = 1..=R`, each on its own substream of `seed`.
pub fn run_pilots(
    data: &FitData,
    prior: &PriorConfig,
    settings: &SamplerSettings,
    config: &ChainConfig,
    seed: u64,
) -> Result<PilotSummary> {
    config.validate()?;
    let rs: Vec<usize> = (1..=prior.max_components()).collect();
    let one = |r: &usize| {
        let mut rng = RngStream::substream(seed, *r as u64);
        run_pilot(*r, data, prior, settings, config, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let models = {
        use rayon::prelude::*;
        rs.par_iter().map(one).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let models = rs.iter().map(one).collect::<Result<Vec<_>>>()?;
    Ok(PilotSummary {
        q: data.q(),
        l: data.l(),
        models,
    })
}

/// Propose a new component count. Returns `(r', ln q(r'→r) − ln q(r→r'))`, or
/// `None` when only one model exists.
pub fn propose_r<R: Rng + ?Sized>(r: usize, max_r: usize, rng: &mut R) -> Option<(usize, f64)> {
    if max_r < 2 {
        return None;
    }
    let proposed = if r == 1 {
        2
    } else if r == max_r {
        max_r - 1
    } else if rng.random::<bool>() {
        r + 1
    } else {
        r - 1
    };
    let q = |from: usize| if from == 1 || from == max_r { 1.0 } else { 0.5 };
    Some((proposed, f64::ln(q(proposed)) - f64::ln(q(r))))
}

/// Log posterior kernel used in the jump acceptance ratio: likelihood plus
/// priors on `α`, `β | τ`, `δ` and `r`.
pub fn jump_target(params: &MixtureParams, data: &FitData, prior: &PriorConfig) -> f64 {
    let terms = log_prior_terms(params, prior);
    observed_loglik(params, data) + terms.alpha + terms.beta + terms.delta + prior.ln_model_prior(params.r())
}

/// One side of a jump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpSide {
    /// [`jump_target`] at this state.
    pub ln_target: f64,
    /// Independence-proposal log density of this state's `Θ`.
    pub ln_proposal: f64,
}

/// `ln A` for moving from `current` to `proposed`, where `ln_q_r_ratio` is
/// `ln q(r_p→r_c) − ln q(r_c→r_p)`.
pub fn log_acceptance_ratio(current: JumpSide, proposed: JumpSide, ln_q_r_ratio: f64) -> f64 {
    (proposed.ln_target - current.ln_target) + ln_q_r_ratio + (current.ln_proposal - proposed.ln_proposal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub iteration: usize,
    pub from: usize,
    /// `None` when only one model is available.
    pub proposed: Option<usize>,
    pub accepted: bool,
    pub log_ratio: f64,
}

/// Full state of the trans-dimensional chain, including its generator, so a
/// serialized chain resumes exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub state: ChainState,
    /// Last-used smoothing parameters for each `r` (index `r − 1`).
    pub stored_tau: Vec<Vec<f64>>,
    pub iteration: usize,
    pub rng: RngStream,
    pub jumps_proposed: usize,
    pub jumps_accepted: usize,
    pub delta_steps: usize,
    pub delta_accepted: usize,
}

impl Chain {
    /// Start at `r ~ model prior`, `Θ_r` at its pilot mean.
    pub fn new(pilots: &PilotSummary, prior: &PriorConfig, n: usize, mut rng: RngStream) -> Self {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut r = prior.max_components();
        for (i, p) in prior.model_prior.iter().enumerate() {
            acc += p;
            if u < acc {
                r = i + 1;
                break;
            }
        }
        let params = pilots.model(r).mean_params(pilots.q, pilots.l);
        Self::from_state(params, pilots.models.iter().map(|m| m.last_tau.clone()).collect(), n, rng)
    }

    pub fn from_state(params: MixtureParams, stored_tau: Vec<Vec<f64>>, n: usize, rng: RngStream) -> Self {
        Chain {
            state: ChainState::new(params, n),
            stored_tau,
            iteration: 0,
            rng,
            jumps_proposed: 0,
            jumps_accepted: 0,
            delta_steps: 0,
            delta_accepted: 0,
        }
    }

    pub fn r(&self) -> usize {
        self.state.r()
    }

    /// Attempt one reversible jump.
    pub fn rj_move(&mut self, data: &FitData, proposals: &[ModelProposal], prior: &PriorConfig) -> MoveRecord {
        let r_c = self.r();
        let Some((r_p, ln_q_r)) = propose_r(r_c, proposals.len(), &mut self.rng) else {
            return MoveRecord {
                iteration: self.iteration,
                from: r_c,
                proposed: None,
                accepted: false,
                log_ratio: 0.0,
            };
        };
        self.jumps_proposed += 1;
        let (q, l) = (data.q(), data.l());
        let theta_p = proposals[r_p - 1].sample(&mut self.rng);
        let params_p = unflatten(&theta_p, q, l, &self.stored_tau[r_p - 1]);
        let current = JumpSide {
            ln_target: jump_target(&self.state.params, data, prior),
            ln_proposal: proposals[r_c - 1].ln_pdf(&flatten(&self.state.params)),
        };
        let proposed = JumpSide {
            ln_target: jump_target(&params_p, data, prior),
            ln_proposal: proposals[r_p - 1].ln_pdf(&theta_p),
        };
        let mut log_ratio = log_acceptance_ratio(current, proposed, ln_q_r);
        if !params_p.tau_ordered(prior.c_tau) {
            log::warn!("stored smoothing parameters for r={r_p} are not ordered; rejecting jump");
            log_ratio = f64::NEG_INFINITY;
        }
        let accepted = log_ratio.is_finite() && self.rng.uniform_open().ln() < log_ratio;
        if accepted {
            self.stored_tau[r_c - 1] = self.state.params.taus();
            self.state = ChainState::new(params_p, data.n());
            self.jumps_accepted += 1;
        }
        MoveRecord {
            iteration: self.iteration,
            from: r_c,
            proposed: Some(r_p),
            accepted,
            log_ratio,
        }
    }

    /// One jump followed by one within-model sweep.
    pub fn step(
        &mut self,
        data: &FitData,
        proposals: &[ModelProposal],
        prior: &PriorConfig,
        settings: &SamplerSettings,
    ) -> Result<MoveRecord> {
        let record = self.rj_move(data, proposals, prior);
        let report = within_sweep(&mut self.state, data, prior, settings, &mut self.rng)?;
        if let Some(acc) = report.delta_accepted {
            self.delta_steps += 1;
            self.delta_accepted += usize::from(acc);
        }
        self.iteration += 1;
        Ok(record)
    }

    pub fn jump_acceptance(&self) -> f64 {
        if self.jumps_proposed == 0 {
            0.0
        } else {
            self.jumps_accepted as f64 / self.jumps_proposed as f64
        }
    }

    pub fn delta_acceptance(&self) -> f64 {
        if self.delta_steps == 0 {
            0.0
        } else {
            self.delta_accepted as f64 / self.delta_steps as f64
        }
    }
}

/// One retained draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDraw {
    pub iteration: usize,
    pub r: usize,
    pub params: MixtureParams,
    pub loglik: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub draws: Vec<TraceDraw>,
    pub move_log: Vec<MoveRecord>,
    pub jump_acceptance: f64,
    pub delta_acceptance: f64,
}

impl ChainTrace {
    /// Visit frequencies of `r = 1..=max_r` among retained draws.
    pub fn model_frequencies(&self, max_r: usize) -> Vec<f64> {
        let mut counts = vec![0.0; max_r];
        for d in &self.draws {
            counts[d.r - 1] += 1.0;
        }
        let total = self.draws.len().max(1) as f64;
        counts.iter().map(|c| c / total).collect()
    }
}

/// Run warmup then sampling from a fresh chain, recording thinned draws.
pub fn run_chain(
    data: &FitData,
    pilots: &PilotSummary,
    prior: &PriorConfig,
    settings: &SamplerSettings,
    config: &ChainConfig,
    rng: RngStream,
) -> Result<ChainTrace> {
    let mut chain = Chain::new(pilots, prior, data.n(), rng);
    continue_chain(&mut chain, data, pilots, prior, settings, config, |_| Ok(()))
}

/// Drive `chain` until `warmup + sampling` iterations have been performed,
/// calling `on_draw` for each retained draw.
pub fn continue_chain<F>(
    chain: &mut Chain,
    data: &FitData,
    pilots: &PilotSummary,
    prior: &PriorConfig,
    settings: &SamplerSettings,
    config: &ChainConfig,
    mut on_draw: F,
) -> Result<ChainTrace>
where
    F: FnMut(&TraceDraw) -> Result<()>,
{
    config.validate()?;
    let proposals = pilots.proposals()?;
    let total = config.warmup + config.sampling;
    let mut trace = ChainTrace::default();
    while chain.iteration < total {
        let record = chain.step(data, &proposals, prior, settings)?;
        trace.move_log.push(record);
        let done = chain.iteration;
        if done > config.warmup && (done - config.warmup - 1) % config.thin == 0 {
            let draw = TraceDraw {
                iteration: done,
                r: chain.r(),
                params: chain.state.params.clone(),
                loglik: observed_loglik(&chain.state.params, data),
            };
            on_draw(&draw)?;
            trace.draws.push(draw);
        }
    }
    trace.jump_acceptance = chain.jump_acceptance();
    trace.delta_acceptance = chain.delta_acceptance();
    info!(
        "chain finished: jump acceptance {:.3}, gating acceptance {:.3}",
        trace.jump_acceptance, trace.delta_acceptance
    );
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::log_prior;

    fn toy_data(n: usize, l: usize) -> FitData {
        let mut rng = RngStream::new(99);
        let z = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { i as f64 / n as f64 });
        let raw = DMatrix::from_fn(n, l.max(1), |_, _| rng.random::<f64>() - 0.5);
        let qr = raw.qr().q();
        let x = DMatrix::from_fn(n, l, |i, k| qr[(i, k)] * (2.0 + k as f64));
        let w = (0..n).map(|i| ((i as f64 / n as f64) * 12.0).sin() > 0.0).collect();
        FitData::from_parts(z, x, w).unwrap()
    }

    fn short() -> ChainConfig {
        ChainConfig {
            pilot_burnin: 20,
            pilot_length: 40,
            warmup: 20,
            sampling: 30,
            thin: 1,
        }
    }

    #[test]
    fn proposal_boundaries() {
        let mut rng = RngStream::new(1);
        let (p, q) = propose_r(1, 3, &mut rng).unwrap();
        assert_eq!(p, 2);
        assert!((q - 0.5f64.ln()).abs() < 1e-15);
        let (p, q) = propose_r(3, 3, &mut rng).unwrap();
        assert_eq!(p, 2);
        assert!((q - 0.5f64.ln()).abs() < 1e-15);
        assert!(propose_r(1, 1, &mut rng).is_none());
        for _ in 0..100 {
            let (p, q) = propose_r(2, 3, &mut rng).unwrap();
            assert!((q - 2f64.ln()).abs() < 1e-15);
            assert!(p == 1 || p == 3);
        }
        let (p, q) = propose_r(2, 4, &mut rng).unwrap();
        assert!(p == 1 || p == 3);
        assert!((q - if p == 1 { 2f64.ln() } else { 0.0 }).abs() < 1e-15);
    }

    #[test]
    fn interior_proposals_are_balanced() {
        let mut rng = RngStream::new(2);
        let n = 10_000;
        let up = (0..n).filter(|_| propose_r(2, 3, &mut rng).unwrap().0 == 3).count();
        assert!((up as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn acceptance_ratio_is_antisymmetric() {
        let mut rng = RngStream::new(3);
        for _ in 0..100 {
            let a = JumpSide {
                ln_target: 50.0 * standard_normal(&mut rng),
                ln_proposal: 10.0 * standard_normal(&mut rng),
            };
            let b = JumpSide {
                ln_target: 50.0 * standard_normal(&mut rng),
                ln_proposal: 10.0 * standard_normal(&mut rng),
            };
            let q = standard_normal(&mut rng);
            assert!((log_acceptance_ratio(a, b, q) + log_acceptance_ratio(b, a, -q)).abs() < 1e-10);
            assert_eq!(log_acceptance_ratio(a, a, 0.0), 0.0);
        }
    }

    #[test]
    fn flatten_round_trip_and_dimension() {
        let (q, l) = (2, 5);
        for r in 1..=3 {
            assert_eq!(theta_dim(r, q, l), r * q + r * l + (r - 1) * q);
            let mut rng = RngStream::new(r as u64);
            let prior = PriorConfig::for_data(30, 3);
            let p = dispersed_start(r, q, l, 0.5, &prior, &mut rng);
            let flat = flatten(&p);
            assert_eq!(flat.len(), theta_dim(r, q, l));
            assert_eq!(unflatten(&flat, q, l, &p.taus()), p);
        }
    }

    #[test]
    fn jump_target_excludes_tau_prior() {
        let data = toy_data(20, 3);
        let prior = PriorConfig::for_data(20, 2);
        let mut rng = RngStream::new(4);
        let p = dispersed_start(2, 2, 3, 0.3, &prior, &mut rng);
        let full = observed_loglik(&p, &data) + log_prior(&p, &prior) + prior.ln_model_prior(2);
        let tau_term = crate::model::ln_tau_prior(&p.taus(), prior.c_tau);
        assert!((jump_target(&p, &data, &prior) - (full - tau_term)).abs() < 1e-9);
    }

    #[test]
    fn pilots_have_expected_shape_and_are_reproducible() {
        let data = toy_data(40, 3);
        let prior = PriorConfig::for_data(40, 3);
        let settings = SamplerSettings::default();
        let a = run_pilots(&data, &prior, &settings, &short(), 5).unwrap();
        let b = run_pilots(&data, &prior, &settings, &short(), 5).unwrap();
        assert_eq!(a, b);
        for m in &a.models {
            assert_eq!(m.dim(), theta_dim(m.r, 2, 3));
            let cov = m.cov_matrix();
            assert!((&cov - cov.transpose()).norm() < 1e-9);
            assert_eq!(m.last_tau.len(), m.r);
        }
        assert!(a.proposals().is_ok());
    }

    #[test]
    fn single_model_never_jumps() {
        let data = toy_data(30, 3);
        let prior = PriorConfig::for_data(30, 1);
        let settings = SamplerSettings::default();
        let pilots = run_pilots(&data, &prior, &settings, &short(), 6).unwrap();
        let trace = run_chain(&data, &pilots, &prior, &settings, &short(), RngStream::new(6)).unwrap();
        assert_eq!(trace.draws.len(), 30);
        assert!(trace.draws.iter().all(|d| d.r == 1));
        assert!(trace.move_log.iter().all(|m| m.proposed.is_none()));
    }

    #[test]
    fn chain_is_deterministic_and_resumable() {
        let data = toy_data(40, 3);
        let prior = PriorConfig::for_data(40, 3);
        let settings = SamplerSettings::default();
        let config = short();
        let pilots = run_pilots(&data, &prior, &settings, &config, 7).unwrap();
        let full = run_chain(&data, &pilots, &prior, &settings, &config, RngStream::new(8)).unwrap();
        let again = run_chain(&data, &pilots, &prior, &settings, &config, RngStream::new(8)).unwrap();
        assert_eq!(full, again);
        assert_eq!(full.draws.len(), config.sampling);
        let freq: f64 = full.model_frequencies(3).iter().sum();
        assert!((freq - 1.0).abs() < 1e-12);
        for w in full.draws.windows(2) {
            assert!(w[0].iteration < w[1].iteration);
        }

        // Stop halfway, serialize, restore, finish.
        let mut chain = Chain::new(&pilots, &prior, data.n(), RngStream::new(8));
        let half = ChainConfig {
            warmup: 10,
            sampling: 0,
            ..config.clone()
        };
        let proposals = pilots.proposals().unwrap();
        while chain.iteration < half.warmup {
            chain.step(&data, &proposals, &prior, &settings).unwrap();
        }
        let json = serde_json::to_string(&chain).unwrap();
        let mut restored: Chain = serde_json::from_str(&json).unwrap();
        let rest = continue_chain(&mut restored, &data, &pilots, &prior, &settings, &config, |_| Ok(())).unwrap();
        assert_eq!(rest.draws, full.draws);
    }
}
