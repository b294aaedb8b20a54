//! Objective perturbation, the private solver, and the cumulative
//! privacy accountant.
//!
//! Odd iterations add a random linear term `eps^T f` to the local
//! objective before the inner solve; even iterations reuse the cached
//! combination `eps + grad O` recovered from the KKT condition, so they
//! touch neither the dataset nor the noise source and contribute zero
//! privacy loss.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Dataset, ErmObjective, Objective, ObjectiveParams};
use crate::rng::stream_rng;
use crate::solver::{
    self, IterationTrace, NodeState, OddPerturbation, PenaltySchedule, SolverConfig, Variant,
};
use crate::topology::Topology;

/// Noise scale `alpha_i(k) > 0` per node and odd iteration. Larger
/// `alpha` means less noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseParams {
    Constant(f64),
    PerNode(Vec<f64>),
}

impl NoiseParams {
    pub fn alpha(&self, node: usize, _k: usize) -> f64 {
        match self {
            NoiseParams::Constant(a) => *a,
            NoiseParams::PerNode(v) => v[node],
        }
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let ok = match self {
            NoiseParams::Constant(a) => *a > 0.0 && a.is_finite(),
            NoiseParams::PerNode(v) => {
                v.len() == n_nodes && v.iter().all(|a| *a > 0.0 && a.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigError {
                field: "alpha".into(),
                message: "noise scales must be positive and finite".into(),
            })
        }
    }
}

/// Draws the perturbation vector: norm from `Gamma(shape = d,
/// scale = 1/alpha)`, direction uniform on the unit sphere
/// (normalized standard normals).
pub fn sample_noise(alpha: f64, d: usize, rng: &mut impl Rng) -> DVector<f64> {
    assert!(alpha > 0.0 && d >= 1);
    let norm = Gamma::new(d as f64, 1.0 / alpha)
        .expect("valid gamma parameters")
        .sample(rng);
    loop {
        let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let len = dir.norm();
        if len > 1e-12 {
            return dir * (norm / len);
        }
    }
}

/// Cumulative privacy-loss report over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// `sum_k (2C/B_i)(1.4 c1 / (rho/N + 2 eta_i(2k-1) V_i) + alpha_i(k))`
    /// per node.
    pub per_node_cumulative: Vec<f64>,
    /// `beta = max_i per_node_cumulative[i]`.
    pub bound_beta: f64,
    /// Per-iteration node contributions, indexed `t = 1..=2K`; even
    /// iterations are exactly zero for the recycled variants.
    pub per_iteration_breakdown: Vec<Vec<f64>>,
}

impl PrivacyReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "beta": self.bound_beta,
            "per_node": self.per_node_cumulative,
            "per_k": self.per_iteration_breakdown,
        })
    }
}

fn per_iteration_term(
    params: &ObjectiveParams,
    eta: f64,
    degree: usize,
    batch: usize,
    alpha: f64,
) -> f64 {
    let denom = params.rho / params.n_nodes as f64 + 2.0 * eta * degree as f64;
    2.0 * params.c / batch as f64 * (1.4 * params.c1 / denom + alpha)
}

/// Evaluates the cumulative privacy-loss upper bound for a recycled run
/// of `K` pairs. Only odd iterations contribute; evens are identically
/// zero by the recycling structure.
///
/// The bound is stated for the regularized ERM classification objective;
/// callers supply its constants via `params`.
pub fn privacy_bound(
    params: &ObjectiveParams,
    topology: &Topology,
    schedule: &PenaltySchedule,
    noise: &NoiseParams,
    k_pairs: usize,
    batch_sizes: &[usize],
) -> PrivacyReport {
    let n = topology.n_nodes();
    let mut per_node = vec![0.0; n];
    let mut breakdown = Vec::with_capacity(2 * k_pairs);
    for k in 1..=k_pairs {
        let odd: Vec<f64> = (0..n)
            .map(|i| {
                per_iteration_term(
                    params,
                    schedule.eta(i, k),
                    topology.degree(i),
                    batch_sizes[i],
                    noise.alpha(i, k),
                )
            })
            .collect();
        for (acc, term) in per_node.iter_mut().zip(&odd) {
            *acc += term;
        }
        breakdown.push(odd);
        breakdown.push(vec![0.0; n]);
    }
    let bound_beta = per_node.iter().cloned().fold(0.0, f64::max);
    PrivacyReport {
        per_node_cumulative: per_node,
        bound_beta,
        per_iteration_breakdown: breakdown,
    }
}

/// Accountant for the per-iteration-perturbed conventional baseline:
/// every one of the `2K` iterations performs a perturbed solve and
/// contributes the same form of term.
pub fn conventional_privacy_bound(
    params: &ObjectiveParams,
    topology: &Topology,
    eta: f64,
    noise: &NoiseParams,
    k_pairs: usize,
    batch_sizes: &[usize],
) -> PrivacyReport {
    let n = topology.n_nodes();
    let mut per_node = vec![0.0; n];
    let mut breakdown = Vec::with_capacity(2 * k_pairs);
    for t in 1..=(2 * k_pairs) {
        let row: Vec<f64> = (0..n)
            .map(|i| {
                per_iteration_term(params, eta, topology.degree(i), batch_sizes[i], noise.alpha(i, t))
            })
            .collect();
        for (acc, term) in per_node.iter_mut().zip(&row) {
            *acc += term;
        }
        breakdown.push(row);
    }
    let bound_beta = per_node.iter().cloned().fold(0.0, f64::max);
    PrivacyReport {
        per_node_cumulative: per_node,
        bound_beta,
        per_iteration_breakdown: breakdown,
    }
}

/// The first-iteration penalty gate:
/// `2 c1 < min_i (B_i/C)(rho/N + 2 eta_i(1) V_i)`, strictly.
///
/// It bounds the worst-case per-iteration loss but is not required for
/// convergence, so the runner exposes an override.
pub fn check_eta1_condition(
    params: &ObjectiveParams,
    topology: &Topology,
    schedule: &PenaltySchedule,
    batch_sizes: &[usize],
) -> bool {
    let rhs = (0..topology.n_nodes())
        .map(|i| {
            batch_sizes[i] as f64 / params.c
                * (params.rho / params.n_nodes as f64
                    + 2.0 * schedule.eta(i, 1) * topology.degree(i) as f64)
        })
        .fold(f64::INFINITY, f64::min);
    2.0 * params.c1 < rhs
}

/// Samples fresh noise per `(node, pair)` from independent seeded
/// streams; reproducible for any worker count.
pub struct SampledPerturbation {
    pub noise: NoiseParams,
    pub seed: u64,
}

impl OddPerturbation for SampledPerturbation {
    fn epsilon(&self, node: usize, pair: usize, dim: usize) -> Option<DVector<f64>> {
        let mut rng = stream_rng(self.seed, node, pair);
        Some(sample_noise(self.noise.alpha(node, pair), dim, &mut rng))
    }
}

/// Test hook: fixed noise vectors, one per node, reused at every pair.
pub struct InjectedPerturbation {
    pub per_node: Vec<DVector<f64>>,
}

impl OddPerturbation for InjectedPerturbation {
    fn epsilon(&self, node: usize, _pair: usize, _dim: usize) -> Option<DVector<f64>> {
        Some(self.per_node[node].clone())
    }
}

/// Perturbed odd primal update with explicit noise; caches
/// `eps + grad O` via the KKT identity without storing `eps`.
#[allow(clippy::too_many_arguments)]
pub fn private_odd_update(
    i: usize,
    states_prev: &[NodeState],
    topology: &Topology,
    eta: f64,
    objective: &dyn Objective,
    epsilon: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<NodeState> {
    solver::odd_update(
        i,
        states_prev,
        topology,
        eta,
        objective,
        Some(epsilon),
        tol,
        max_iter,
    )
}

/// Recycled even update; identical formula to the non-private one since
/// the cache already holds `eps + grad O`.
pub fn private_even_update(
    state: &NodeState,
    degree: usize,
    eta: f64,
    gamma: f64,
) -> Result<DVector<f64>> {
    solver::even_update(state, degree, eta, gamma)
}

/// Configuration of a private run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateConfig {
    pub schedule: PenaltySchedule,
    pub gamma: f64,
    pub outer_pairs: usize,
    #[serde(default = "default_tol")]
    pub inner_tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub inner_max_iterations: usize,
    pub seed: u64,
    /// `MrAdmm` (or `RAdmm` via a constant schedule) for the recycled
    /// algorithm; `Conventional` for the per-iteration-perturbed baseline.
    pub variant: Variant,
    /// When true, a violated first-iteration gate aborts the run instead
    /// of proceeding.
    #[serde(default)]
    pub enforce_eta1_gate: bool,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    200_000
}

/// Runs the private algorithm on ERM datasets and returns the trace
/// together with the accountant's report.
pub fn run_private(
    topology: &Topology,
    datasets: &[Dataset],
    params: &ObjectiveParams,
    noise: &NoiseParams,
    cfg: &PrivateConfig,
) -> Result<(IterationTrace, PrivacyReport)> {
    noise.validate(topology.n_nodes())?;
    let batch_sizes: Vec<usize> = datasets.iter().map(|d| d.n_samples()).collect();
    if cfg.enforce_eta1_gate
        && !check_eta1_condition(params, topology, &cfg.schedule, &batch_sizes)
    {
        return Err(Error::ConfigError {
            field: "schedule".into(),
            message: "eta_i(1) violates the worst-case privacy gate".into(),
        });
    }
    let objectives: Vec<std::sync::Arc<dyn Objective>> = datasets
        .iter()
        .map(|d| {
            ErmObjective::new(d.clone(), *params)
                .map(|o| std::sync::Arc::new(o) as std::sync::Arc<dyn Objective>)
        })
        .collect::<Result<_>>()?;
    let solver_cfg = SolverConfig {
        variant: cfg.variant,
        schedule: cfg.schedule.clone(),
        gamma: cfg.gamma,
        outer_pairs: cfg.outer_pairs,
        inner_tolerance: cfg.inner_tolerance,
        inner_max_iterations: cfg.inner_max_iterations,
        seed: cfg.seed,
    };
    let perturbation = SampledPerturbation {
        noise: noise.clone(),
        seed: cfg.seed,
    };
    let trace = solver::run_with_perturbation(topology, &objectives, &solver_cfg, &perturbation)?;
    let report = match cfg.variant {
        Variant::Conventional => conventional_privacy_bound(
            params,
            topology,
            cfg.schedule.eta(0, 1),
            noise,
            cfg.outer_pairs,
            &batch_sizes,
        ),
        _ => privacy_bound(
            params,
            topology,
            &cfg.schedule,
            noise,
            cfg.outer_pairs,
            &batch_sizes,
        ),
    };
    Ok((trace, report))
}

/// Inverts a monotone `beta(alpha)` map by bisection to absolute
/// tolerance 1e-10. `beta` must be increasing in `alpha`.
pub fn calibrate_constant_alpha(
    target_beta: f64,
    beta_of_alpha: impl Fn(f64) -> f64,
) -> Result<f64> {
    if !(target_beta > 0.0) {
        return Err(Error::InfeasiblePrivacy);
    }
    let mut lo = 1e-12;
    let mut hi = 1.0;
    if beta_of_alpha(lo) >= target_beta {
        return Err(Error::InfeasiblePrivacy);
    }
    while beta_of_alpha(hi) < target_beta {
        hi *= 2.0;
        if hi > 1e18 {
            return Err(Error::InfeasiblePrivacy);
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if beta_of_alpha(mid) < target_beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
