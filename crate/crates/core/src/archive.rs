//! Versioned JSON archive of a fitted model.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisExpansion, Normalization};
use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::inference::FitResult;
use crate::model::{ComponentParams, MixtureParams};

pub const FORMAT: &str = "mixprobit-archive";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchivedDraw {
    pub r: usize,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
}

impl From<&MixtureParams> for ArchivedDraw {
    fn from(p: &MixtureParams) -> Self {
        ArchivedDraw {
            r: p.r(),
            alpha: p.components.iter().map(|c| c.alpha.clone()).collect(),
            beta: p.components.iter().map(|c| c.beta.clone()).collect(),
            delta: p.delta.clone(),
            tau: p.taus(),
        }
    }
}

impl ArchivedDraw {
    fn to_params(&self, q: usize, l: usize) -> Result<MixtureParams> {
        let r = self.r;
        let shape_ok = r >= 1
            && self.alpha.len() == r
            && self.beta.len() == r
            && self.tau.len() == r
            && self.delta.len() == r - 1
            && self.alpha.iter().all(|a| a.len() == q)
            && self.beta.iter().all(|b| b.len() == l)
            && self.delta.iter().all(|d| d.len() == q);
        if !shape_ok {
            return Err(Error::data(format!("archived draw with r={r} has inconsistent shapes")));
        }
        Ok(MixtureParams {
            components: (0..r)
                .map(|j| ComponentParams {
                    alpha: self.alpha[j].clone(),
                    beta: self.beta[j].clone(),
                    tau: self.tau[j],
                })
                .collect(),
            delta: self.delta.clone(),
        })
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::data(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub format: String,
    pub version: u32,
    pub covariate_names: Vec<String>,
    pub normalization: Normalization,
    pub epsilon: f64,
    pub knots: Vec<Vec<f64>>,
    pub right_factor: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub level: f64,
    pub model_probs: Vec<f64>,
    pub fitted_probs: Vec<f64>,
    pub interval_low: Vec<f64>,
    pub interval_high: Vec<f64>,
    pub report: Option<FitReport>,
    pub draws: Vec<ArchivedDraw>,
}

impl Archive {
    pub fn from_result(result: &FitResult, names: &[String], report: Option<FitReport>) -> Self {
        let b = &result.basis;
        Archive {
            format: FORMAT.to_string(),
            version: VERSION,
            covariate_names: names.to_vec(),
            normalization: b.normalization.clone(),
            epsilon: b.epsilon,
            knots: rows(&b.knots),
            right_factor: rows(&b.right_factor),
            singular_values: b.singular_values.clone(),
            level: result.level,
            model_probs: result.model_probs.clone(),
            fitted_probs: result.fitted_probs.clone(),
            interval_low: result.interval_low.clone(),
            interval_high: result.interval_high.clone(),
            report,
            draws: result.draws.iter().map(ArchivedDraw::from).collect(),
        }
    }

    pub fn to_result(&self) -> Result<FitResult> {
        self.check_version()?;
        let p = self.normalization.dim();
        let knots = from_rows(&self.knots, p, "knots")?;
        let l = self.right_factor.first().map_or(0, |r| r.len());
        let right_factor = from_rows(&self.right_factor, l, "right_factor")?;
        let basis = BasisExpansion::from_parts(
            self.normalization.clone(),
            knots,
            right_factor,
            self.singular_values.clone(),
            self.epsilon,
        )?;
        let draws = self
            .draws
            .iter()
            .map(|d| d.to_params(p + 1, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(FitResult {
            level: self.level,
            model_probs: self.model_probs.clone(),
            fitted_probs: self.fitted_probs.clone(),
            interval_low: self.interval_low.clone(),
            interval_high: self.interval_high.clone(),
            draw_count: draws.len(),
            basis,
            draws,
        })
    }

    fn check_version(&self) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::data(format!(
                "archive is '{}' version {}, this build reads '{FORMAT}' version {VERSION}",
                self.format, self.version
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the stamp before the body so a version mismatch is reported as such.
        let head: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::data(format!("archive is not valid JSON: {e}")))?;
        let format = head.get("format").and_then(|v| v.as_str()).unwrap_or("");
        let version = head.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if format != FORMAT || version != u64::from(VERSION) {
            return Err(Error::data(format!(
                "archive is '{format}' version {version}, this build reads '{FORMAT}' version {VERSION}"
            )));
        }
        serde_json::from_value(head).map_err(|e| Error::data(format!("malformed archive: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
