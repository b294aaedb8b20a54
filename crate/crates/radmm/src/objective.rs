//! Per-node objectives: regularized logistic ERM, plus a quadratic test
//! objective used as a closed-form oracle in solver tests.
//!
//! The solver only sees the [`Objective`] trait, so anything convex with
//! a Lipschitz gradient can be plugged in.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Which access window the solver is currently in. Used by the
/// instrumented wrapper to attribute dataset reads to a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessPhase {
    /// Inside the odd-iteration inner minimization.
    OddSolve,
    /// The single gradient evaluation cached at the end of an odd step.
    OddCache,
    /// Even (recycled) iterations. Must see zero dataset reads.
    Even,
}

/// A convex differentiable objective with a known gradient-Lipschitz
/// bound and strong-convexity modulus.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, f: &DVector<f64>) -> f64;
    fn gradient(&self, f: &DVector<f64>) -> DVector<f64>;
    /// An upper bound `M_i` on the gradient Lipschitz constant.
    fn gradient_lipschitz(&self) -> f64;
    /// A lower bound on the strong-convexity modulus (0 if merely convex).
    fn strong_convexity(&self) -> f64;
    /// Notification from the solver when the access window changes.
    fn phase_hint(&self, _phase: AccessPhase) {}
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Overflow-safe logistic loss `L(z) = log(1 + exp(-z))`.
///
/// Returns `(value, L'(z), L''(z))` with `L' in (-1, 0)` and
/// `L'' in (0, 1/4]`.
pub fn logistic_loss(z: f64) -> (f64, f64, f64) {
    let value = if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    };
    // sigmoid(z), evaluated on the non-overflowing branch
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    (value, s - 1.0, s * (1.0 - s))
}

/// A node's local dataset: feature rows of L2 norm at most 1 and
/// labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        check_dim(features.nrows(), labels.len())?;
        for (n, row) in features.row_iter().enumerate() {
            if row.norm() > 1.0 + 1e-9 {
                return Err(Error::ConfigError {
                    field: format!("features[{n}]"),
                    message: format!("row norm {} exceeds 1", row.norm()),
                });
            }
        }
        for &y in labels.iter() {
            if y != 1.0 && y != -1.0 {
                return Err(Error::UnmappableLabel(y.to_string()));
            }
        }
        Ok(Dataset { features, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    /// Mean plain logistic loss `(1/B) sum L(y f^T x)`; no `C` or
    /// regularizer weighting.
    pub fn mean_logistic_loss(&self, f: &DVector<f64>) -> f64 {
        let margins = &self.features * f;
        margins
            .iter()
            .zip(self.labels.iter())
            .map(|(&m, &y)| logistic_loss(y * m).0)
            .sum::<f64>()
            / self.n_samples() as f64
    }
}

/// Constants of the regularized ERM objective
/// `O(f, D_i) = (C/B_i) sum L(y f^T x) + (rho/N) * (1/2)||f||^2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveParams {
    /// Loss weight `C` (must satisfy `C <= B_i` at every node).
    pub c: f64,
    /// Regularization weight `rho > 0`.
    pub rho: f64,
    /// Number of nodes `N` sharing the regularizer.
    pub n_nodes: usize,
    /// Bound on the loss curvature `L'' <= c1`; 1/4 for logistic loss.
    pub c1: f64,
}

impl ObjectiveParams {
    pub fn logistic(c: f64, rho: f64, n_nodes: usize) -> Self {
        ObjectiveParams {
            c,
            rho,
            n_nodes,
            c1: 0.25,
        }
    }

    pub fn validate(&self, min_batch: usize) -> Result<()> {
        if !(self.c > 0.0) || self.c > min_batch as f64 {
            return Err(Error::ConfigError {
                field: "c".into(),
                message: format!("C must lie in (0, min_i B_i] = (0, {min_batch}]"),
            });
        }
        if !(self.rho > 0.0) || !(self.c1 > 0.0) || self.n_nodes == 0 {
            return Err(Error::ConfigError {
                field: "objective".into(),
                message: "rho, c1 and N must be positive".into(),
            });
        }
        Ok(())
    }
}

/// The logistic ERM objective of one node.
#[derive(Debug, Clone)]
pub struct ErmObjective {
    data: Dataset,
    params: ObjectiveParams,
}

impl ErmObjective {
    pub fn new(data: Dataset, params: ObjectiveParams) -> Result<Self> {
        params.validate(data.n_samples())?;
        Ok(ErmObjective { data, params })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &ObjectiveParams {
        &self.params
    }
}

impl Objective for ErmObjective {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn value(&self, f: &DVector<f64>) -> f64 {
        assert_eq!(f.len(), self.dim(), "dimension mismatch");
        let margins = self.data.features() * f;
        let loss: f64 = margins
            .iter()
            .zip(self.data.labels().iter())
            .map(|(&m, &y)| logistic_loss(y * m).0)
            .sum();
        let b = self.data.n_samples() as f64;
        self.params.c / b * loss
            + self.params.rho / self.params.n_nodes as f64 * 0.5 * f.norm_squared()
    }

    fn gradient(&self, f: &DVector<f64>) -> DVector<f64> {
        assert_eq!(f.len(), self.dim(), "dimension mismatch");
        let margins = self.data.features() * f;
        let b = self.data.n_samples() as f64;
        let mut grad = f * (self.params.rho / self.params.n_nodes as f64);
        for n in 0..self.data.n_samples() {
            let y = self.data.labels()[n];
            let (_, d1, _) = logistic_loss(y * margins[n]);
            let scale = self.params.c / b * d1 * y;
            grad.axpy(scale, &self.data.features().row(n).transpose(), 1.0);
        }
        grad
    }

    fn gradient_lipschitz(&self) -> f64 {
        // (C/B) sum L'' x x^T <= C c1 I for ||x|| <= 1, plus the regularizer.
        self.params.c * self.params.c1 + self.params.rho / self.params.n_nodes as f64
    }

    fn strong_convexity(&self) -> f64 {
        self.params.rho / self.params.n_nodes as f64
    }
}

/// Quadratic test objective `O(f) = (1/2)||f - a||^2`.
///
/// In a consensus run the global optimum is the mean of the per-node
/// targets `a_i`, which gives solver tests a closed-form oracle.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    target: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(target: DVector<f64>) -> Self {
        QuadraticObjective { target }
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn value(&self, f: &DVector<f64>) -> f64 {
        0.5 * (f - &self.target).norm_squared()
    }

    fn gradient(&self, f: &DVector<f64>) -> DVector<f64> {
        f - &self.target
    }

    fn gradient_lipschitz(&self) -> f64 {
        1.0
    }

    fn strong_convexity(&self) -> f64 {
        1.0
    }
}

/// Sum of per-node objectives; used by the centralized reference solver.
pub struct SumObjective {
    terms: Vec<Arc<dyn Objective>>,
}

impl SumObjective {
    pub fn new(terms: Vec<Arc<dyn Objective>>) -> Self {
        assert!(!terms.is_empty());
        SumObjective { terms }
    }
}

impl Objective for SumObjective {
    fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    fn value(&self, f: &DVector<f64>) -> f64 {
        self.terms.iter().map(|o| o.value(f)).sum()
    }

    fn gradient(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for o in &self.terms {
            g += o.gradient(f);
        }
        g
    }

    fn gradient_lipschitz(&self) -> f64 {
        self.terms.iter().map(|o| o.gradient_lipschitz()).sum()
    }

    fn strong_convexity(&self) -> f64 {
        self.terms.iter().map(|o| o.strong_convexity()).sum()
    }
}

/// Per-phase dataset access tallies recorded by [`CountingObjective`].
#[derive(Debug, Default)]
pub struct AccessCounters {
    phase: AtomicUsize,
    pub odd_solve: AtomicUsize,
    pub odd_cache: AtomicUsize,
    pub even: AtomicUsize,
}

impl AccessCounters {
    fn bump(&self) {
        match self.phase.load(Ordering::Relaxed) {
            0 => &self.odd_solve,
            1 => &self.odd_cache,
            _ => &self.even,
        }
        .fetch_add(1, Ordering::Relaxed);
    }

    pub fn even_accesses(&self) -> usize {
        self.even.load(Ordering::Relaxed)
    }

    pub fn odd_cache_accesses(&self) -> usize {
        self.odd_cache.load(Ordering::Relaxed)
    }

    pub fn odd_solve_accesses(&self) -> usize {
        self.odd_solve.load(Ordering::Relaxed)
    }
}

/// Wraps an objective and counts every value/gradient evaluation,
/// attributed to the solver phase active at the time of the call.
pub struct CountingObjective {
    inner: Arc<dyn Objective>,
    counters: Arc<AccessCounters>,
}

impl CountingObjective {
    pub fn new(inner: Arc<dyn Objective>) -> (Self, Arc<AccessCounters>) {
        let counters = Arc::new(AccessCounters::default());
        (
            CountingObjective {
                inner,
                counters: counters.clone(),
            },
            counters,
        )
    }
}

impl Objective for CountingObjective {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, f: &DVector<f64>) -> f64 {
        self.counters.bump();
        self.inner.value(f)
    }

    fn gradient(&self, f: &DVector<f64>) -> DVector<f64> {
        self.counters.bump();
        self.inner.gradient(f)
    }

    fn gradient_lipschitz(&self) -> f64 {
        self.inner.gradient_lipschitz()
    }

    fn strong_convexity(&self) -> f64 {
        self.inner.strong_convexity()
    }

    fn phase_hint(&self, phase: AccessPhase) {
        let id = match phase {
            AccessPhase::OddSolve => 0,
            AccessPhase::OddCache => 1,
            AccessPhase::Even => 2,
        };
        self.counters.phase.store(id, Ordering::Relaxed);
        self.inner.phase_hint(phase);
    }
}
