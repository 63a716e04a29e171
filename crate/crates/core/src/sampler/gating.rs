//! Metropolis-Hastings update of the gating coefficients.
//!
//! The conditional `p(δ | γ)` is a multinomial-logit likelihood of the labels
//! times a Gaussian prior. Its mode is found by damped Newton iterations and
//! used as the centre of a multivariate-t(5) independence proposal whose scale
//! is the inverse negative Hessian at the mode.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::dist::MultivariateT;

const MAX_NEWTON_ITERS: usize = 100;
const DECREMENT_TOL: f64 = 1e-12;
const STALL_TOL: f64 = 1e-6;
const MAX_HALVINGS: usize = 60;

/// Log posterior of the stacked gating vector given labels, with its
/// gradient and Hessian.
pub struct GatingObjective<'a> {
    z: &'a DMatrix<f64>,
    labels: &'a [usize],
    r: usize,
    prior_var: f64,
}

impl<'a> GatingObjective<'a> {
    pub fn new(z: &'a DMatrix<f64>, labels: &'a [usize], r: usize, prior_var: f64) -> Self {
        GatingObjective {
            z,
            labels,
            r,
            prior_var,
        }
    }

    pub fn dim(&self) -> usize {
        (self.r - 1) * self.z.ncols()
    }

    fn scores(&self, d: &[f64], i: usize, out: &mut [f64]) {
        let q = self.z.ncols();
        out[0] = 0.0;
        for k in 1..self.r {
            let row = &d[(k - 1) * q..k * q];
            out[k] = (0..q).map(|a| row[a] * self.z[(i, a)]).sum();
        }
    }

    pub fn value(&self, d: &[f64]) -> f64 {
        let mut s = vec![0.0; self.r];
        let mut total = 0.0;
        for (i, &g) in self.labels.iter().enumerate() {
            self.scores(d, i, &mut s);
            total += s[g] - log_sum_exp(&s);
        }
        total - 0.5 * d.iter().map(|v| v * v).sum::<f64>() / self.prior_var
    }

    /// Gradient and Hessian of [`value`](Self::value).
    pub fn derivatives(&self, d: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let q = self.z.ncols();
        let dim = self.dim();
        let mut grad = DVector::from_iterator(dim, d.iter().map(|v| -v / self.prior_var));
        let mut hess = DMatrix::from_diagonal_element(dim, dim, -1.0 / self.prior_var);
        let mut s = vec![0.0; self.r];
        for (i, &g) in self.labels.iter().enumerate() {
            self.scores(d, i, &mut s);
            let lse = log_sum_exp(&s);
            let pi: Vec<f64> = s.iter().map(|v| (v - lse).exp()).collect();
            for k in 1..self.r {
                let resid = if g == k { 1.0 } else { 0.0 } - pi[k];
                for a in 0..q {
                    grad[(k - 1) * q + a] += resid * self.z[(i, a)];
                }
                for k2 in 1..self.r {
                    let w = pi[k] * (if k == k2 { 1.0 } else { 0.0 } - pi[k2]);
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..q {
                        let za = self.z[(i, a)] * w;
                        for b in 0..q {
                            hess[((k - 1) * q + a, (k2 - 1) * q + b)] -= za * self.z[(i, b)];
                        }
                    }
                }
            }
        }
        (grad, hess)
    }
}

pub(crate) fn log_sum_exp(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mode of the gating objective and the negative Hessian there.
pub struct GatingMode {
    pub mode: Vec<f64>,
    pub neg_hessian: DMatrix<f64>,
    pub iterations: usize,
}

/// Damped Newton ascent from `start`. Converged once half the Newton
/// decrement `g′(−H)⁻¹g / 2` falls below [`DECREMENT_TOL`]; returns `None` if
/// that has not happened within the iteration budget.
pub fn find_mode(obj: &GatingObjective<'_>, start: &[f64]) -> Option<GatingMode> {
    let mut d = start.to_vec();
    let mut f = obj.value(&d);
    for it in 0..MAX_NEWTON_ITERS {
        let (grad, hess) = obj.derivatives(&d);
        let neg_h = -hess;
        let chol = Cholesky::<f64, Dyn>::new(neg_h.clone())?;
        let step = chol.solve(&grad);
        let decrement = 0.5 * grad.dot(&step);
        if decrement < DECREMENT_TOL {
            return Some(GatingMode {
                mode: d,
                neg_hessian: neg_h,
                iterations: it,
            });
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = d.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let fc = obj.value(&cand);
            if fc >= f {
                d = cand;
                f = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // Rounding in the objective hides any further ascent.
            return (decrement < STALL_TOL).then_some(GatingMode {
                mode: d,
                neg_hessian: neg_h,
                iterations: it,
            });
        }
    }
    None
}

/// Outcome of one gating update.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingDraw {
    pub delta: Vec<Vec<f64>>,
    pub accepted: bool,
    pub converged: bool,
}

fn stack(delta: &[Vec<f64>]) -> Vec<f64> {
    delta.iter().flatten().copied().collect()
}

fn unstack(flat: &[f64], q: usize) -> Vec<Vec<f64>> {
    flat.chunks(q).map(|c| c.to_vec()).collect()
}

/// Independence-MH update of the gating rows given component labels.
pub fn draw_delta<R: Rng + ?Sized>(
    delta: &[Vec<f64>],
    labels: &[usize],
    z: &DMatrix<f64>,
    r: usize,
    prior_var: f64,
    rng: &mut R,
) -> GatingDraw {
    if r < 2 {
        return GatingDraw {
            delta: Vec::new(),
            accepted: true,
            converged: true,
        };
    }
    let q = z.ncols();
    let obj = GatingObjective::new(z, labels, r, prior_var);
    let current = stack(delta);
    let Some(mode) = find_mode(&obj, &current) else {
        warn!("gating mode search did not converge; keeping current coefficients");
        return GatingDraw {
            delta: delta.to_vec(),
            accepted: false,
            converged: false,
        };
    };
    let scale = match Cholesky::<f64, Dyn>::new(mode.neg_hessian.clone()) {
        Some(c) => c.inverse(),
        None => {
            warn!("gating Hessian is not negative definite at the mode; keeping current coefficients");
            return GatingDraw {
                delta: delta.to_vec(),
                accepted: false,
                converged: false,
            };
        }
    };
    let scale = 0.5 * (&scale + scale.transpose());
    let proposal = match MultivariateT::new(DVector::from_vec(mode.mode), scale) {
        Ok(p) => p,
        Err(e) => {
            warn!("gating proposal could not be formed: {e}");
            return GatingDraw {
                delta: delta.to_vec(),
                accepted: false,
                converged: false,
            };
        }
    };
    let cand = proposal.sample(rng);
    let log_ratio = obj.value(&cand) - obj.value(&current) + proposal.ln_pdf(&current) - proposal.ln_pdf(&cand);
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        GatingDraw {
            delta: unstack(&cand, q),
            accepted: true,
            converged: true,
        }
    } else {
        GatingDraw {
            delta: delta.to_vec(),
            accepted: false,
            converged: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn design(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { i as f64 / (n - 1) as f64 })
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let z = design(30);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let obj = GatingObjective::new(&z, &labels, 3, 5.0);
        let d = vec![0.3, -0.2, -0.5, 1.1];
        let (g, h) = obj.derivatives(&d);
        let eps = 1e-5;
        for a in 0..4 {
            let mut up = d.clone();
            let mut dn = d.clone();
            up[a] += eps;
            dn[a] -= eps;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * eps);
            assert!((fd - g[a]).abs() < 1e-6, "grad {a}: {fd} vs {}", g[a]);
            let (gu, _) = obj.derivatives(&up);
            let (gd, _) = obj.derivatives(&dn);
            for b in 0..4 {
                let fd2 = (gu[b] - gd[b]) / (2.0 * eps);
                assert!((fd2 - h[(b, a)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn newton_finds_stationary_point() {
        let z = design(50);
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i > 20)).collect();
        let obj = GatingObjective::new(&z, &labels, 2, 50.0);
        let mode = find_mode(&obj, &[0.0, 0.0]).unwrap();
        let (g, _) = obj.derivatives(&mode.mode);
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn all_labels_first_gives_finite_mode() {
        let z = design(40);
        let labels = vec![0usize; 40];
        let obj = GatingObjective::new(&z, &labels, 2, 40.0);
        let mode = find_mode(&obj, &[0.0, 0.0]).unwrap();
        assert!(mode.mode.iter().all(|v| v.is_finite()));
        // Pushes the second component's score down everywhere.
        assert!(mode.mode[0] < 0.0);
    }

    #[test]
    fn single_component_is_noop() {
        let z = design(5);
        let mut rng = RngStream::new(1);
        let d = draw_delta(&[], &[0; 5], &z, 1, 5.0, &mut rng);
        assert!(d.delta.is_empty() && d.accepted);
    }
}
