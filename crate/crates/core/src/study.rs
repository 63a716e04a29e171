//! Replicated simulation studies comparing the mixture with a single spline.

use log::warn;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_dataset, FitOptions};
use crate::inference::quantile_sorted;
use crate::metrics::{askld, ase, ecp, pct_delta_aecp};
use crate::rng::RngStream;
use crate::simgen::{design_points, simulate_at, Benchmark, Design};

/// Substream reserved for the shared covariate design.
const DESIGN_STREAM: u64 = u32::MAX as u64;

#[derive(Clone, Debug, PartialEq)]
pub struct StudySpec {
    pub benchmark: Benchmark,
    pub n: usize,
    pub replications: usize,
    pub design: Design,
    /// Reuse one covariate draw across replications.
    pub fixed_design: bool,
    /// Options for the mixture fit; the single-spline fit uses the same with `R = 1`.
    pub options: FitOptions,
    /// Skip the single-spline fit.
    pub mixture_only: bool,
}

/// Outcome of one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub askld_mixture: f64,
    pub askld_single: Option<f64>,
    /// `ASKLD_single − ASKLD_mixture`; positive favours the mixture.
    pub askld_diff: Option<f64>,
    pub ase_mixture: f64,
    pub ase_single: Option<f64>,
    pub model_probs: Vec<f64>,
    /// Fraction of points whose mixture interval covers the truth.
    pub coverage_mixture: f64,
    pub hits: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub completed: usize,
    pub failed: Vec<(usize, String)>,
    pub median_askld_mixture: f64,
    pub median_askld_single: Option<f64>,
    pub median_askld_diff: Option<f64>,
    pub mean_model_probs: Vec<f64>,
    pub mean_coverage: f64,
    pub pct_delta_aecp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<ReplicationRow>,
    pub summary: StudySummary,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

fn run_replication(spec: &StudySpec, rep: usize, shared: Option<&nalgebra::DMatrix<f64>>) -> Result<ReplicationRow> {
    let mut rng = RngStream::substream(spec.options.seed, rep as u64);
    let x = match shared {
        Some(x) => x.clone(),
        None => design_points(spec.n, spec.benchmark.dimension(), spec.design, &mut rng)?,
    };
    let sim = simulate_at(&spec.benchmark, x, &mut rng)?;
    let data = sim.dataset()?;

    let mut mix_opts = spec.options.clone();
    mix_opts.seed = rng.next_u64();
    let mixture = fit_dataset(&data, &mix_opts, |_| Ok(()))?;
    let m = &mixture.result;
    let askld_mixture = askld(&sim.truth, &m.fitted_probs)?;
    let ase_mixture = ase(&sim.truth, &m.fitted_probs)?;
    let hits = ecp(&sim.truth, &m.interval_low, &m.interval_high)?;
    let coverage_mixture = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;

    let (askld_single, ase_single) = if spec.mixture_only {
        (None, None)
    } else {
        let mut single_opts = spec.options.clone();
        single_opts.prior.model_prior = vec![1.0];
        single_opts.seed = rng.next_u64();
        let single = fit_dataset(&data, &single_opts, |_| Ok(()))?;
        (
            Some(askld(&sim.truth, &single.result.fitted_probs)?),
            Some(ase(&sim.truth, &single.result.fitted_probs)?),
        )
    };
    Ok(ReplicationRow {
        replication: rep,
        askld_mixture,
        askld_single,
        askld_diff: askld_single.map(|s| s - askld_mixture),
        ase_mixture,
        ase_single,
        model_probs: m.model_probs.clone(),
        coverage_mixture,
        hits,
    })
}

/// Run every replication (in parallel when enabled) and aggregate.
pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    if spec.replications == 0 {
        return Err(Error::usage("replications must be positive"));
    }
    let shared = if spec.fixed_design {
        let mut rng = RngStream::substream(spec.options.seed, DESIGN_STREAM);
        Some(design_points(spec.n, spec.benchmark.dimension(), spec.design, &mut rng)?)
    } else {
        None
    };
    let one = |rep: usize| (rep, run_replication(spec, rep, shared.as_ref()));
    #[cfg(feature = "parallel")]
    let outcomes: Vec<(usize, Result<ReplicationRow>)> = {
        use rayon::prelude::*;
        (0..spec.replications).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<(usize, Result<ReplicationRow>)> = (0..spec.replications).map(one).collect();

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => {
                warn!("replication {rep} failed: {e}");
                failed.push((rep, e.to_string()));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::numerical(format!("all {} replications failed", spec.replications)));
    }
    let summary = summarize_rows(&rows, failed, spec.options.prior.max_components(), spec.options.level)?;
    Ok(StudyResult { rows, summary })
}

/// Aggregate replication rows.
pub fn summarize_rows(
    rows: &[ReplicationRow],
    failed: Vec<(usize, String)>,
    max_r: usize,
    level: f64,
) -> Result<StudySummary> {
    let k = rows.len() as f64;
    let mix: Vec<f64> = rows.iter().map(|r| r.askld_mixture).collect();
    let single: Option<Vec<f64>> = rows.iter().map(|r| r.askld_single).collect();
    let diff: Option<Vec<f64>> = rows.iter().map(|r| r.askld_diff).collect();
    let mut mean_model_probs = vec![0.0; max_r];
    for r in rows {
        for (m, p) in mean_model_probs.iter_mut().zip(&r.model_probs) {
            *m += p / k;
        }
    }
    let hits: Vec<Vec<bool>> = rows.iter().map(|r| r.hits.clone()).collect();
    Ok(StudySummary {
        completed: rows.len(),
        failed,
        median_askld_mixture: median(&mix),
        median_askld_single: single.as_deref().map(median),
        median_askld_diff: diff.as_deref().map(median),
        mean_model_probs,
        mean_coverage: rows.iter().map(|r| r.coverage_mixture).sum::<f64>() / k,
        pct_delta_aecp: pct_delta_aecp(&hits, level)?,
    })
}

impl StudyResult {
    /// Header and rows for tabular output: one row per replication, then a
    /// summary row with medians of the ASKLD columns, mean model
    /// probabilities and mean coverage.
    pub fn table(&self, max_r: usize) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header: Vec<String> = [
            "replication",
            "askld_mixture",
            "askld_single",
            "askld_single_minus_mixture",
            "ase_mixture",
            "ase_single",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=max_r).map(|r| format!("pr_r{r}")));
        header.push("coverage_mixture".into());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.replication.to_string(),
                    r.askld_mixture.to_string(),
                    opt(r.askld_single),
                    opt(r.askld_diff),
                    r.ase_mixture.to_string(),
                    opt(r.ase_single),
                ];
                row.extend(r.model_probs.iter().map(|p| p.to_string()));
                row.push(r.coverage_mixture.to_string());
                row
            })
            .collect();
        let s = &self.summary;
        let ase_mix: Vec<f64> = self.rows.iter().map(|r| r.ase_mixture).collect();
        let ase_single: Option<Vec<f64>> = self.rows.iter().map(|r| r.ase_single).collect();
        let mut summary = vec![
            "summary".to_string(),
            s.median_askld_mixture.to_string(),
            opt(s.median_askld_single),
            opt(s.median_askld_diff),
            median(&ase_mix).to_string(),
            opt(ase_single.as_deref().map(median)),
        ];
        summary.extend(s.mean_model_probs.iter().map(|p| p.to_string()));
        summary.push(s.mean_coverage.to_string());
        out.push(summary);
        (header, out)
    }
}
