//! Partial thin-plate spline design matrix.
//!
//! Covariates are mapped to the unit hypercube, knots are placed at the centre
//! of gravity of every occupied `ε`-cell, radial functions `r^a log r` are
//! evaluated against the knots and the resulting `n × m` matrix is replaced by
//! the leading `l′` columns of `UΛ` from its singular value decomposition.
//! The columns of the design are therefore mutually orthogonal, which the
//! samplers rely on to keep every smoothing-parameter update diagonal.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine bounds mapping raw covariates onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Map a raw point. Points outside the training range are not clipped.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect()
    }
}

/// Covariates with binary responses.
#[derive(Clone, Debug)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    responses: Vec<bool>,
    names: Vec<String>,
    bounds: Normalization,
}

impl Dataset {
    /// Build a dataset, deriving normalization bounds from the data.
    pub fn new(covariates: DMatrix<f64>, responses: Vec<bool>) -> Result<Self> {
        let names = (1..=covariates.ncols()).map(|k| format!("x{k}")).collect();
        Self::with_names(covariates, responses, names)
    }

    pub fn with_names(covariates: DMatrix<f64>, responses: Vec<bool>, names: Vec<String>) -> Result<Self> {
        let (n, p) = covariates.shape();
        if n == 0 || p == 0 {
            return Err(Error::data(format!("dataset must have n >= 1 and p >= 1, got {n}x{p}")));
        }
        if responses.len() != n {
            return Err(Error::data(format!(
                "{} responses for {n} covariate rows",
                responses.len()
            )));
        }
        if names.len() != p {
            return Err(Error::data(format!("{} column names for {p} covariates", names.len())));
        }
        if let Some(bad) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite covariate at row {} column '{}'",
                bad % n + 1,
                names[bad / n]
            )));
        }
        let mut min = Vec::with_capacity(p);
        let mut max = Vec::with_capacity(p);
        for (k, col) in covariates.column_iter().enumerate() {
            let lo = col.min();
            let hi = col.max();
            if hi <= lo {
                return Err(Error::data(format!(
                    "covariate column '{}' is constant ({lo}); it cannot be normalized",
                    names[k]
                )));
            }
            min.push(lo);
            max.push(hi);
        }
        Ok(Dataset {
            covariates,
            responses,
            names,
            bounds: Normalization { min, max },
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn responses(&self) -> &[bool] {
        &self.responses
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &Normalization {
        &self.bounds
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }
}

/// Map every covariate column onto `[0, 1]` using the dataset's bounds.
pub fn normalize_covariates(data: &Dataset) -> DMatrix<f64> {
    let b = data.bounds();
    let mut out = data.covariates().clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        let (lo, span) = (b.min[k], b.max[k] - b.min[k]);
        col.apply(|v| *v = (*v - lo) / span);
    }
    out
}

fn cell_count(epsilon: f64) -> usize {
    // Guard against 1/ε landing a rounding error above an integer.
    ((1.0 / epsilon) - 1e-9).ceil().max(1.0) as usize
}

/// One knot per occupied axis-aligned cell of width `epsilon`, at the mean of
/// the points in that cell. Cells are half-open `[kε, (k+1)ε)`, the last one
/// closed at 1. Knots are ordered by cell index.
pub fn select_knots(normalized: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::usage(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let (n, p) = normalized.shape();
    let cells = cell_count(epsilon);
    let mut groups: BTreeMap<Vec<usize>, (usize, Vec<f64>)> = BTreeMap::new();
    for i in 0..n {
        let key: Vec<usize> = (0..p)
            .map(|k| {
                let v = normalized[(i, k)];
                ((v / epsilon).floor().max(0.0) as usize).min(cells - 1)
            })
            .collect();
        let entry = groups.entry(key).or_insert_with(|| (0, vec![0.0; p]));
        entry.0 += 1;
        for k in 0..p {
            entry.1[k] += normalized[(i, k)];
        }
    }
    let m = groups.len();
    let mut knots = DMatrix::zeros(m, p);
    for (j, (count, sums)) in groups.into_values().enumerate() {
        for k in 0..p {
            knots[(j, k)] = sums[k] / count as f64;
        }
    }
    Ok(knots)
}

/// Thin-plate radial exponent `a = 2·ceil(p/2 + 0.1) − p`.
pub fn tps_exponent(p: usize) -> i32 {
    let p = p as f64;
    (2.0 * (p / 2.0 + 0.1).ceil() - p) as i32
}

/// `r^a log r`, with the value at `r = 0` taken as its limit 0.
pub fn radial(distance: f64, a: i32) -> f64 {
    if distance <= 0.0 {
        0.0
    } else {
        distance.powi(a) * distance.ln()
    }
}

fn radial_row(point: &[f64], knots: &DMatrix<f64>, a: i32) -> Vec<f64> {
    (0..knots.nrows())
        .map(|j| {
            let d2: f64 = point
                .iter()
                .enumerate()
                .map(|(k, v)| (v - knots[(j, k)]).powi(2))
                .sum();
            radial(d2.sqrt(), a)
        })
        .collect()
}

/// Radial basis matrix `Φ[i, j] = ‖x_i − k_j‖^a log ‖x_i − k_j‖`.
pub fn rbf_matrix(normalized: &DMatrix<f64>, knots: &DMatrix<f64>, a: i32) -> DMatrix<f64> {
    let (n, p) = normalized.shape();
    assert_eq!(p, knots.ncols(), "knots and points disagree on dimension");
    let mut phi = DMatrix::zeros(n, knots.nrows());
    let mut point = vec![0.0; p];
    for i in 0..n {
        for (k, v) in point.iter_mut().enumerate() {
            *v = normalized[(i, k)];
        }
        for (j, v) in radial_row(&point, knots, a).into_iter().enumerate() {
            phi[(i, j)] = v;
        }
    }
    phi
}

/// Leading singular structure of a radial basis matrix.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    /// `n × l′` matrix `UΛ` restricted to the kept directions.
    pub design: DMatrix<f64>,
    /// `m × l′` leading right singular vectors.
    pub right_factor: DMatrix<f64>,
    /// All singular values, nonincreasing.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub energy_ratio: f64,
}

/// Truncated SVD of `phi` keeping at most `l_max` directions.
///
/// Directions whose singular value is numerically zero are never kept, so the
/// retained rank is `min(l_max, numerical rank)`.
pub fn truncate_svd(phi: DMatrix<f64>, l_max: usize) -> Result<TruncatedSvd> {
    if l_max == 0 {
        return Err(Error::usage("l_max must be at least 1"));
    }
    let (n, m) = phi.shape();
    let frob = phi.norm();
    let amax = phi.amax();
    let svd = SVD::try_new(phi, true, true, f64::EPSILON, 100_000).ok_or_else(|| {
        Error::numerical(format!(
            "SVD of the {n}x{m} radial basis matrix did not converge (Frobenius norm {frob:.6e}, max |entry| {amax:.6e})"
        ))
    })?;
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let s_max = singular_values.first().copied().unwrap_or(0.0);
    let tol = s_max * f64::EPSILON * n.max(m) as f64;
    let numerical_rank = singular_values.iter().take_while(|&&s| s > tol).count();
    let rank = l_max.min(numerical_rank);
    if rank == 0 {
        return Err(Error::numerical(format!(
            "radial basis matrix {n}x{m} is numerically zero"
        )));
    }
    let u = svd.u.as_ref().expect("left vectors requested");
    let v_t = svd.v_t.as_ref().expect("right vectors requested");
    let mut design = u.columns(0, rank).into_owned();
    for (c, s) in singular_values.iter().take(rank).enumerate() {
        design.column_mut(c).scale_mut(*s);
    }
    let right_factor = v_t.rows(0, rank).transpose();
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let kept: f64 = singular_values.iter().take(rank).map(|s| s * s).sum();
    let energy_ratio = if total > 0.0 { (1.0 - kept / total).clamp(0.0, 1.0) } else { 0.0 };
    Ok(TruncatedSvd {
        design,
        right_factor,
        singular_values,
        rank,
        energy_ratio,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub epsilon: f64,
    pub l_max: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            epsilon: 0.05,
            l_max: 25,
        }
    }
}

/// Low-rank thin-plate basis for one dataset, plus everything needed to build
/// rows for new points.
#[derive(Clone, Debug)]
pub struct BasisExpansion {
    pub normalization: Normalization,
    pub knots: DMatrix<f64>,
    pub exponent: i32,
    pub right_factor: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub design: DMatrix<f64>,
    pub epsilon: f64,
    pub energy_ratio: f64,
}

impl BasisExpansion {
    pub fn build(data: &Dataset, config: &BasisConfig) -> Result<Self> {
        let normalized = normalize_covariates(data);
        let knots = select_knots(&normalized, config.epsilon)?;
        let exponent = tps_exponent(data.p());
        let phi = rbf_matrix(&normalized, &knots, exponent);
        let svd = truncate_svd(phi, config.l_max)?;
        debug!(
            "basis: n={} m={} l'={} energy_ratio={:.3e}",
            data.n(),
            knots.nrows(),
            svd.rank,
            svd.energy_ratio
        );
        Ok(BasisExpansion {
            normalization: data.bounds().clone(),
            knots,
            exponent,
            right_factor: svd.right_factor,
            singular_values: svd.singular_values,
            design: svd.design,
            epsilon: config.epsilon,
            energy_ratio: svd.energy_ratio,
        })
    }

    /// Rebuild from archived pieces; the training design is not kept.
    pub fn from_parts(
        normalization: Normalization,
        knots: DMatrix<f64>,
        right_factor: DMatrix<f64>,
        singular_values: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if knots.ncols() != normalization.dim() || right_factor.nrows() != knots.nrows() {
            return Err(Error::data(format!(
                "inconsistent basis: {} knots in {} dims, right factor {}x{}, {} bounds",
                knots.nrows(),
                knots.ncols(),
                right_factor.nrows(),
                right_factor.ncols(),
                normalization.dim()
            )));
        }
        let exponent = tps_exponent(knots.ncols());
        let total: f64 = singular_values.iter().map(|s| s * s).sum();
        let kept: f64 = singular_values.iter().take(right_factor.ncols()).map(|s| s * s).sum();
        let energy_ratio = if total > 0.0 { (1.0 - kept / total).clamp(0.0, 1.0) } else { 0.0 };
        let design = DMatrix::zeros(0, right_factor.ncols());
        Ok(BasisExpansion {
            normalization,
            knots,
            exponent,
            right_factor,
            singular_values,
            design,
            epsilon,
            energy_ratio,
        })
    }

    /// Number of retained directions `l′`.
    pub fn rank(&self) -> usize {
        self.right_factor.ncols()
    }

    pub fn knot_count(&self) -> usize {
        self.knots.nrows()
    }

    pub fn dim(&self) -> usize {
        self.knots.ncols()
    }

    /// Design row for a raw (unnormalized) point: `φ(x) · V`.
    pub fn basis_row(&self, raw: &[f64]) -> Vec<f64> {
        let point = self.normalization.apply(raw);
        let phi = radial_row(&point, &self.knots, self.exponent);
        (0..self.rank())
            .map(|c| phi.iter().enumerate().map(|(j, v)| v * self.right_factor[(j, c)]).sum())
            .collect()
    }
}
