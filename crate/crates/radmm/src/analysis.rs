//! Convergence-condition checkers, optimality residuals, and sample
//! complexity formulas.
//!
//! The sufficient conditions compare matrix products of the penalty
//! diagonals with the (signless) Laplacian. The products are not
//! symmetric in general, so "positive definite" is evaluated on the
//! symmetric part `(M + M^T)/2`, and the smallest eigenvalue of that
//! part is reported as the margin.
//!
//! One wrinkle: `D + A` is singular exactly when the graph is
//! bipartite, and on its kernel condition (ii) degenerates to
//! `0 > c D_M`, which is false for every penalty and every `gamma`.
//! Read literally, the condition would be unsatisfiable on any
//! bipartite topology, contradicting the guarantee that a large enough
//! `gamma` always satisfies it. Condition (ii) is therefore evaluated
//! on the orthogonal complement of `Null(D + A)`; for non-bipartite
//! graphs this is the whole space and nothing changes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::topology::Topology;

/// Inputs for the two-iterate sufficient condition.
#[derive(Debug, Clone)]
pub struct ConditionInputs<'a> {
    pub topology: &'a Topology,
    /// Penalty diagonal `W(t)` entries.
    pub eta_t: Vec<f64>,
    /// Penalty diagonal `W(t+1)` entries; must dominate `eta_t`.
    pub eta_next: Vec<f64>,
    pub gamma: f64,
    /// Gradient-Lipschitz bounds `M_i`; the checker squares them.
    pub lipschitz: Vec<f64>,
    /// Constant `L > 0`.
    pub l: f64,
    /// Constant `mu > 1`.
    pub mu: f64,
}

/// Verdict and positive-definiteness margins of the two conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub holds_i: bool,
    pub holds_ii: bool,
    /// Smallest eigenvalue of the symmetric part of condition (i)'s
    /// matrix difference.
    pub margin_i: f64,
    pub margin_ii: f64,
}

impl ConditionReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "holds_i": self.holds_i,
            "holds_ii": self.holds_ii,
            "margin_i": self.margin_i,
            "margin_ii": self.margin_ii,
        })
    }
}

fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(entries))
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::NonfiniteInput(what));
        }
    }
    Ok(())
}

/// Moore-Penrose pseudo-inverse; singular values below
/// `1e-12 * sigma_max` are truncated. `D - A` has rank `N - 1` for a
/// connected graph, so the truncation is always well defined.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = 1e-12 * sigma_max.max(1.0);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let inv_sigma = DMatrix::from_diagonal(&svd.singular_values.map(|s| {
        if s > eps {
            1.0 / s
        } else {
            0.0
        }
    }));
    v_t.transpose() * inv_sigma * u.transpose()
}

fn smallest_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym).eigenvalues.min()
}

/// Smallest eigenvalue of the symmetric part of `m`, restricted to the
/// orthogonal complement of `Null(basis_of)` (a symmetric PSD matrix).
fn smallest_symmetric_eigenvalue_on_range(m: &DMatrix<f64>, basis_of: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(basis_of.clone());
    let lambda_max = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * lambda_max.max(1.0))
        .collect();
    let n = basis_of.nrows();
    let mut b = DMatrix::zeros(n, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        b.column_mut(col).copy_from(&eig.eigenvectors.column(i));
    }
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(b.transpose() * sym * b)
        .eigenvalues
        .min()
}

fn sigma_min_step(eta_t: &[f64], degrees: &[usize], gamma: f64) -> f64 {
    eta_t
        .iter()
        .zip(degrees)
        .map(|(&eta, &v)| 2.0 * eta * v as f64 + gamma)
        .fold(f64::INFINITY, f64::min)
}

/// Checks the sufficient convergence conditions (i) and (ii) for a
/// non-decreasing penalty schedule step `W(t) -> W(t+1)`.
pub fn check_mr_conditions(inp: &ConditionInputs<'_>) -> Result<ConditionReport> {
    let n = inp.topology.n_nodes();
    check_finite(
        inp.eta_t
            .iter()
            .chain(&inp.eta_next)
            .chain(&inp.lipschitz)
            .copied()
            .chain([inp.gamma, inp.l, inp.mu]),
        "condition inputs",
    )?;
    if !(inp.l > 0.0) || !(inp.mu > 1.0) {
        return Err(Error::ConfigError {
            field: "l/mu".into(),
            message: "conditions require L > 0 and mu > 1".into(),
        });
    }
    let degrees = inp.topology.degrees();
    let (lap, signless) = inp.topology.laplacian_matrices();
    let w_next = diag(&inp.eta_next);
    let w_t = diag(&inp.eta_t);
    let d_tilde_inv = diag(
        &inp.eta_t
            .iter()
            .zip(&degrees)
            .map(|(&eta, &v)| 1.0 / (2.0 * eta * v as f64 + inp.gamma))
            .collect::<Vec<_>>(),
    );
    let sigma_min = sigma_min_step(&inp.eta_t, &degrees, inp.gamma);
    let d_m = diag(&inp.lipschitz.iter().map(|m| m * m).collect::<Vec<_>>());

    // (i) I + W(t+1)(D+A) Dt^{-1}  >  (L mu / (2 sigma_min)) (W(t+1)(D-A))^+ D_M
    let lhs_i = DMatrix::identity(n, n) + &w_next * &signless * &d_tilde_inv;
    let rhs_i =
        pseudo_inverse(&(&w_next * &lap)) * &d_m * (inp.l * inp.mu / (2.0 * sigma_min));
    let margin_i = smallest_symmetric_eigenvalue(&(lhs_i - rhs_i));

    // (ii) W(t+1)(D+A)  >  W(t+1)(D+A) Dt^{-1} (W(t)(D-A) + (2/L) W(t+1)(D+A))
    //      + (L mu / (2 sigma_min (mu-1))) D_M
    let wpa = &w_next * &signless;
    let rhs_ii = &wpa * &d_tilde_inv * (&w_t * &lap + (2.0 / inp.l) * &wpa)
        + &d_m * (inp.l * inp.mu / (2.0 * sigma_min * (inp.mu - 1.0)));
    let margin_ii = smallest_symmetric_eigenvalue_on_range(&(wpa - rhs_ii), &signless);

    let holds_i = margin_i > 0.0;
    let holds_ii = margin_ii > 0.0;
    Ok(ConditionReport {
        holds: holds_i && holds_ii,
        holds_i,
        holds_ii,
        margin_i,
        margin_ii,
    })
}

/// The constant-penalty specialization (conditions (iii) and (iv),
/// obtained from (i)(ii) at `L = 2`, `mu = 2`).
pub fn check_r_conditions(
    topology: &Topology,
    eta: f64,
    gamma: f64,
    lipschitz: &[f64],
) -> Result<ConditionReport> {
    let inputs = ConditionInputs {
        topology,
        eta_t: vec![eta; topology.n_nodes()],
        eta_next: vec![eta; topology.n_nodes()],
        gamma,
        lipschitz: lipschitz.to_vec(),
        l: 2.0,
        mu: 2.0,
    };
    check_mr_conditions(&inputs)
}

/// First-order optimality residuals of a stacked state:
/// `stationarity = ||grad O(f) + 2 Lambda||_F`,
/// `consensus = ||(D - A) f||_F`.
pub fn optimality_residuals(
    primals: &[DVector<f64>],
    duals: &[DVector<f64>],
    topology: &Topology,
    objectives: &[Arc<dyn Objective>],
) -> (f64, f64) {
    let stationarity: f64 = primals
        .iter()
        .zip(duals)
        .zip(objectives)
        .map(|((f, lambda), o)| (o.gradient(f) + 2.0 * lambda).norm_squared())
        .sum::<f64>()
        .sqrt();
    let (lap, _) = topology.laplacian_matrices();
    let d = primals[0].len();
    let n = primals.len();
    let mut stacked = DMatrix::zeros(n, d);
    for (i, f) in primals.iter().enumerate() {
        stacked.row_mut(i).copy_from(&f.transpose());
    }
    let consensus = (lap * stacked).norm();
    (stationarity, consensus)
}

/// Inputs of the sample-complexity formulas. `deltas[k]` is the
/// per-iteration excess-risk constant (`Delta_i(k)` or
/// `Delta_i^new(k)`); `alphas[k]` is only read by the private formula.
#[derive(Debug, Clone)]
pub struct SampleComplexityInputs {
    pub f_ref_norm_sq: f64,
    pub tau: f64,
    pub delta: f64,
    pub deltas: Vec<f64>,
    /// Calibration constant `w`.
    pub w: f64,
    /// Constant `a > 0` of the private bound.
    pub a: f64,
    pub alphas: Vec<f64>,
    pub dim: usize,
    pub c: f64,
    pub n_nodes: usize,
}

/// `B_i >= w max_k ||f_ref||^2 log(1/delta) / (tau - Delta_i(k))^2`.
pub fn sample_complexity_nonprivate(inp: &SampleComplexityInputs) -> Result<f64> {
    let log_term = (1.0 / inp.delta).ln();
    inp.deltas
        .iter()
        .map(|&dk| {
            let gap = inp.tau - dk;
            if gap <= 0.0 {
                Err(Error::InfeasibleTarget)
            } else {
                Ok(inp.w * inp.f_ref_norm_sq * log_term / (gap * gap))
            }
        })
        .try_fold(0.0_f64, |acc, v| v.map(|v| acc.max(v)))
}

/// The private bound; the denominator subtracts the noise penalty
/// `(1 + a)(N d^2 / (C alpha^2)) log(d/delta)^2` and must stay positive.
pub fn sample_complexity_private(inp: &SampleComplexityInputs) -> Result<f64> {
    let n = inp.n_nodes as f64;
    let log_delta = (1.0 / inp.delta).ln();
    let log_d_delta = (inp.dim as f64 / inp.delta).ln();
    inp.deltas
        .iter()
        .zip(&inp.alphas)
        .map(|(&dk, &alpha)| {
            let gap = inp.tau - dk;
            if gap <= 0.0 {
                return Err(Error::InfeasibleTarget);
            }
            let signal = n * inp.c * gap * gap / (2.0 * inp.f_ref_norm_sq);
            let noise = (1.0 + inp.a) * n * (inp.dim as f64).powi(2)
                / (inp.c * alpha * alpha)
                * log_d_delta.powi(2);
            let denom = signal - noise;
            if denom <= 0.0 {
                return Err(Error::InfeasiblePrivacy);
            }
            Ok(inp.w * inp.c * n * log_delta / denom)
        })
        .try_fold(0.0_f64, |acc, v| v.map(|v| acc.max(v)))
}
