//! Sequential minimal optimization for the soft-margin SVM dual and the
//! one-class SVM dual.
//!
//! Both solvers use maximal-violating-pair working-set selection on a
//! precomputed Gram matrix and stop once the violation gap falls below
//! `tol`.

use serde::{Deserialize, Serialize};

use super::kernel::{gram, KernelSpec};
use crate::error::{Error, Result};

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the dual objective after every update (for diagnostics).
    pub record_objective: bool,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 10_000_000,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal violation gap.
    pub gap: f64,
    /// Dual objective (maximization form) after each iteration, starting
    /// with the initial point. Empty unless recording was requested.
    pub objective: Vec<f64>,
}

/// Kernel SVM in dual form. Positive class (`+1`) is anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        let gamma = self.kernel.numeric_gamma()?;
        if let Some(sv) = self.support_vectors.first() {
            if sv.len() != x.len() {
                return Err(Error::invalid("feature length mismatch"));
            }
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, a)| a * self.kernel.eval_unchecked(gamma, sv, x))
            .sum::<f64>()
            + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.decision(x)? > 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    /// Multipliers for every training sample, in input order.
    pub alphas: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

/// Trains a C-SVM on `features` with boolean labels (`true` = positive).
pub fn train_svm(
    features: &[Vec<f64>],
    labels: &[bool],
    c: f64,
    kernel: &KernelSpec,
    options: &SmoOptions,
) -> Result<SvmFit> {
    if features.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::invalid("SVM training needs both classes"));
    }
    let kernel = kernel.resolve(features)?;
    let k = gram(&kernel, features)?;
    let n = features.len();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − eᵀα.
    let mut grad = vec![-1.0; n];
    let mut objective = 0.0;
    let mut diag = SolverDiagnostics::default();
    if options.record_objective {
        diag.objective.push(0.0);
    }

    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    loop {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let (mut m, mut big_m) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m {
                m = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < big_m {
                big_m = v;
                j = t;
            }
        }
        diag.gap = m - big_m;
        if i == usize::MAX || j == usize::MAX || diag.gap < options.tol {
            diag.converged = true;
            break;
        }
        if diag.iterations >= options.max_iter {
            break;
        }
        diag.iterations += 1;

        let eta = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(TAU);
        let mut step = diag.gap / eta;
        step = step.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
        step = step.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });
        alpha[i] = (alpha[i] + y[i] * step).clamp(0.0, c);
        alpha[j] = (alpha[j] - y[j] * step).clamp(0.0, c);
        for t in 0..n {
            grad[t] += y[t] * step * (k[t][i] - k[t][j]);
        }
        let prev = objective;
        objective += step * diag.gap - 0.5 * step * step * eta;
        debug_assert!(objective >= prev - 1e-12 * prev.abs().max(1.0));
        if options.record_objective {
            diag.objective.push(objective);
        }
    }

    let rho = svm_rho(&alpha, &y, &grad, c);
    let (mut support_vectors, mut dual_coefs) = (Vec::new(), Vec::new());
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(features[t].clone());
            dual_coefs.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmFit {
        model: SvmModel {
            support_vectors,
            dual_coefs,
            bias: -rho,
            kernel,
            c,
        },
        alphas: alpha,
        diagnostics: diag,
    })
}

/// Offset from free multipliers, or the midpoint of the feasible interval
/// when every multiplier sits at a bound.
fn svm_rho(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut free) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// One-class SVM: `decision(x) = Σ α_i k(x_i, x) − ρ`, negative means outlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub dual_coefs: Vec<f64>,
    pub rho: f64,
    pub kernel: KernelSpec,
    pub nu: f64,
}

impl OcsvmModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        let gamma = self.kernel.numeric_gamma()?;
        if let Some(sv) = self.support_vectors.first() {
            if sv.len() != x.len() {
                return Err(Error::invalid("feature length mismatch"));
            }
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, a)| a * self.kernel.eval_unchecked(gamma, sv, x))
            .sum::<f64>()
            - self.rho)
    }

    /// True when `x` falls outside the learned support (anomalous).
    pub fn is_outlier(&self, x: &[f64]) -> Result<bool> {
        Ok(self.decision(x)? < 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct OcsvmFit {
    pub model: OcsvmModel,
    pub alphas: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

/// Trains a one-class SVM on normal samples.
///
/// Solves `min ½ αᵀKα` subject to `0 ≤ α_i ≤ 1/(νn)` and `Σ α_i = 1`.
/// `tol` is measured in units where the box bound is 1, so it matches the
/// usual convention regardless of `n`.
pub fn train_ocsvm(
    features: &[Vec<f64>],
    nu: f64,
    kernel: &KernelSpec,
    options: &SmoOptions,
) -> Result<OcsvmFit> {
    if features.is_empty() {
        return Err(Error::invalid("one-class SVM needs at least one sample"));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::invalid(format!("nu must lie in (0, 1], got {nu}")));
    }
    let kernel = kernel.resolve(features)?;
    let k = gram(&kernel, features)?;
    let n = features.len();
    let bound = 1.0 / (nu * n as f64);

    // Fill the first ⌊νn⌋ multipliers to the bound, the next with the rest.
    let mut alpha = vec![0.0; n];
    let mut remaining: f64 = 1.0;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = remaining.min(bound);
        remaining -= *a;
    }
    let mut grad: Vec<f64> = (0..n)
        .map(|t| (0..n).map(|s| k[t][s] * alpha[s]).sum())
        .collect();
    let mut objective = -0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    let mut diag = SolverDiagnostics::default();
    if options.record_objective {
        diag.objective.push(objective);
    }
    let tol = options.tol * bound;

    loop {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let (mut m, mut big_m) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in 0..n {
            let v = -grad[t];
            if alpha[t] < bound && v > m {
                m = v;
                i = t;
            }
            if alpha[t] > 0.0 && v < big_m {
                big_m = v;
                j = t;
            }
        }
        diag.gap = (m - big_m) / bound;
        if i == usize::MAX || j == usize::MAX || m - big_m < tol {
            diag.converged = true;
            break;
        }
        if diag.iterations >= options.max_iter {
            break;
        }
        diag.iterations += 1;

        let eta = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(TAU);
        let step = ((m - big_m) / eta).min(bound - alpha[i]).min(alpha[j]);
        alpha[i] = (alpha[i] + step).min(bound);
        alpha[j] = (alpha[j] - step).max(0.0);
        for t in 0..n {
            grad[t] += step * (k[t][i] - k[t][j]);
        }
        let prev = objective;
        objective += step * (m - big_m) - 0.5 * step * step * eta;
        debug_assert!(objective >= prev - 1e-12 * prev.abs().max(1.0));
        if options.record_objective {
            diag.objective.push(objective);
        }
    }

    // Recompute from scratch so training scores match `decision` bit for bit.
    for t in 0..n {
        grad[t] = (0..n).map(|s| k[t][s] * alpha[s]).sum();
    }
    // Free multipliers sit on the boundary up to the solver tolerance. Taking
    // the smallest of their gradients keeps each of them on or inside it, so
    // only multipliers at the bound (at most νn of them) score as outliers.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut free_min = f64::INFINITY;
    for t in 0..n {
        if alpha[t] >= bound {
            lb = lb.max(grad[t]);
        } else if alpha[t] <= 0.0 {
            ub = ub.min(grad[t]);
        } else {
            free_min = free_min.min(grad[t]);
        }
    }
    let rho = if free_min.is_finite() {
        free_min
    } else {
        (ub + lb) / 2.0
    };
    let (mut support_vectors, mut dual_coefs) = (Vec::new(), Vec::new());
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(features[t].clone());
            dual_coefs.push(alpha[t]);
        }
    }
    Ok(OcsvmFit {
        model: OcsvmModel {
            support_vectors,
            dual_coefs,
            rho,
            kernel,
            nu,
        },
        alphas: alpha,
        diagnostics: diag,
    })
}
