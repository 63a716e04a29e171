//! Posterior summaries of a fitted chain and out-of-sample prediction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisExpansion, Dataset};
use crate::error::{Error, Result};
use crate::model::{linear_row, mixture_probability, MixtureParams};
use crate::rjmcmc::ChainTrace;

pub const DEFAULT_LEVEL: f64 = 0.9;

/// Empirical quantile of sorted data by linear interpolation between order
/// statistics (`h = (n − 1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and equal-tailed interval of a set of draws. The interval is widened
/// if needed so that it contains the mean.
pub fn summarize_values(values: &mut [f64], level: f64) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let a = 1.0 - level;
    let low = quantile_sorted(values, a / 2.0).min(mean);
    let high = quantile_sorted(values, 1.0 - a / 2.0).max(mean);
    (mean.clamp(0.0, 1.0), low.clamp(0.0, 1.0), high.clamp(0.0, 1.0))
}

/// Point estimates with pointwise intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prob: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Posterior summaries plus what is needed to predict at new points.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub level: f64,
    pub model_probs: Vec<f64>,
    pub fitted_probs: Vec<f64>,
    pub interval_low: Vec<f64>,
    pub interval_high: Vec<f64>,
    pub draw_count: usize,
    pub basis: BasisExpansion,
    pub draws: Vec<MixtureParams>,
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::usage(format!("interval level must lie in (0, 1), got {level}")))
    }
}

/// Evaluate every draw at every point and reduce per point.
pub fn evaluate_draws(draws: &[MixtureParams], basis: &BasisExpansion, points: &DMatrix<f64>, level: f64) -> Result<Prediction> {
    check_level(level)?;
    if draws.is_empty() {
        return Err(Error::data("no retained draws to summarise"));
    }
    if points.ncols() != basis.dim() {
        return Err(Error::data(format!(
            "points have {} columns but the model was fitted with {}",
            points.ncols(),
            basis.dim()
        )));
    }
    let one = |i: usize| {
        let raw: Vec<f64> = points.row(i).iter().copied().collect();
        let z = linear_row(&basis.normalization.apply(&raw));
        let b = basis.basis_row(&raw);
        let mut values: Vec<f64> = draws.iter().map(|d| mixture_probability(d, &z, &b)).collect();
        summarize_values(&mut values, level)
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<(f64, f64, f64)> = {
        use rayon::prelude::*;
        (0..points.nrows()).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<(f64, f64, f64)> = (0..points.nrows()).map(one).collect();
    Ok(Prediction {
        prob: rows.iter().map(|r| r.0).collect(),
        low: rows.iter().map(|r| r.1).collect(),
        high: rows.iter().map(|r| r.2).collect(),
    })
}

/// Model-averaged surface, intervals and `Pr(r | w)` from a trace.
pub fn summarize(trace: &ChainTrace, data: &Dataset, basis: &BasisExpansion, max_r: usize, level: f64) -> Result<FitResult> {
    if trace.draws.is_empty() {
        return Err(Error::data("trace contains no retained draws"));
    }
    let draws: Vec<MixtureParams> = trace.draws.iter().map(|d| d.params.clone()).collect();
    let pred = evaluate_draws(&draws, basis, data.covariates(), level)?;
    Ok(FitResult {
        level,
        model_probs: trace.model_frequencies(max_r),
        fitted_probs: pred.prob,
        interval_low: pred.low,
        interval_high: pred.high,
        draw_count: draws.len(),
        basis: basis.clone(),
        draws,
    })
}

/// Predict at new raw points using every retained draw.
pub fn predict(result: &FitResult, points: &DMatrix<f64>) -> Result<Prediction> {
    evaluate_draws(&result.draws, &result.basis, points, result.level)
}
