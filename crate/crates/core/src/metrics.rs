//! Accuracy, coverage and discrimination measures for fitted surfaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLAMP: f64 = 1e-12;

fn same_length(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::data(format!("{what}: lengths differ ({a} vs {b})")))
    }
}

/// `I(H, Ĥ) = Ĥ₀ ln(Ĥ₀/H₀) + Ĥ₁ ln(Ĥ₁/H₁)` for Bernoulli probabilities.
fn directed_kl(h: f64, h_hat: f64) -> f64 {
    (1.0 - h_hat) * ((1.0 - h_hat) / (1.0 - h)).ln() + h_hat * (h_hat / h).ln()
}

/// Average symmetric Kullback-Leibler divergence. Nonnegative; smaller is better.
pub fn askld(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    same_length(truth.len(), estimate.len(), "askld")?;
    if truth.is_empty() {
        return Err(Error::data("askld: no points"));
    }
    let total: f64 = truth
        .iter()
        .zip(estimate)
        .map(|(&h, &e)| {
            let h = h.clamp(CLAMP, 1.0 - CLAMP);
            let e = e.clamp(CLAMP, 1.0 - CLAMP);
            // Each direction is nonnegative; guard against rounding below 0.
            (directed_kl(h, e) + directed_kl(e, h)).max(0.0)
        })
        .sum();
    Ok(total / truth.len() as f64)
}

/// Average squared error.
pub fn ase(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    same_length(truth.len(), estimate.len(), "ase")?;
    if truth.is_empty() {
        return Err(Error::data("ase: no points"));
    }
    Ok(truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64)
}

/// `100 (ASE_other − ASE_me) / ASE_me`.
pub fn pct_delta_ase(ase_other: f64, ase_me: f64) -> Result<f64> {
    if !(ase_me > 0.0) {
        return Err(Error::numerical(format!("percentage change relative to ASE {ase_me} is undefined")));
    }
    Ok(100.0 * (ase_other - ase_me) / ase_me)
}

/// Whether each interval contains the truth.
pub fn ecp(truth: &[f64], low: &[f64], high: &[f64]) -> Result<Vec<bool>> {
    same_length(truth.len(), low.len(), "ecp")?;
    same_length(truth.len(), high.len(), "ecp")?;
    Ok(truth
        .iter()
        .zip(low.iter().zip(high))
        .map(|(t, (lo, hi))| lo <= t && t <= hi)
        .collect())
}

/// Per-point coverage across replications (`hits[rep][point]`).
pub fn coverage_by_point(hits: &[Vec<bool>]) -> Result<Vec<f64>> {
    let Some(first) = hits.first() else {
        return Err(Error::data("coverage: no replications"));
    };
    let n = first.len();
    let mut out = vec![0.0; n];
    for rep in hits {
        same_length(n, rep.len(), "coverage")?;
        for (o, &h) in out.iter_mut().zip(rep) {
            *o += f64::from(u8::from(h));
        }
    }
    let reps = hits.len() as f64;
    Ok(out.into_iter().map(|c| c / reps).collect())
}

/// `100 (mean_i ECP(x_i) − nominal) / nominal`.
pub fn pct_delta_aecp(hits: &[Vec<bool>], nominal: f64) -> Result<f64> {
    if !(nominal > 0.0 && nominal < 1.0) {
        return Err(Error::usage(format!("nominal coverage must lie in (0, 1), got {nominal}")));
    }
    let per_point = coverage_by_point(hits)?;
    if per_point.is_empty() {
        return Err(Error::data("coverage: no points"));
    }
    let avg = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(100.0 * (avg - nominal) / nominal)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first entry is `+∞` (nothing classified positive).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// ROC curve sweeping each distinct score as a `score ≥ t` threshold.
pub fn roc(labels: &[bool], scores: &[f64]) -> Result<RocCurve> {
    same_length(labels.len(), scores.len(), "roc")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::data("roc: scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::data("roc: labels must contain both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        thresholds.push(t);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * 0.5 * (t[0] + t[1]))
        .sum();
    Ok(RocCurve {
        thresholds,
        tpr,
        fpr,
        auc,
    })
}

/// Normalised Mann-Whitney statistic: the fraction of (positive, negative)
/// pairs ranked correctly, counting ties as one half.
pub fn mann_whitney_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
