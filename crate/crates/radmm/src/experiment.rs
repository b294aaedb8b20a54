//! Configuration-driven experiment runner: repeated seeded solver runs,
//! loss/error/privacy metrics with mean-and-range aggregation, and
//! plot-ready CSV output.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{self, PartitionedData, Schema};
use crate::error::{Error, Result};
use crate::objective::{Dataset, ErmObjective, Objective, ObjectiveParams};
use crate::privacy::{
    calibrate_constant_alpha, conventional_privacy_bound, privacy_bound, NoiseParams,
    PrivacyReport, PrivateConfig,
};
use crate::solver::{run_solver, IterationTrace, PenaltySchedule, SolverConfig, Variant};
use crate::topology::Topology;

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
    Synthetic {
        n_samples: usize,
        dim: usize,
        separation: f64,
    },
}

/// How the communication graph is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySpec {
    Explicit {
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
    },
    Random {
        n_nodes: usize,
        edge_probability: f64,
        seed: u64,
    },
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology> {
        match self {
            TopologySpec::Explicit { n_nodes, edges } => Topology::build(*n_nodes, edges),
            TopologySpec::Random {
                n_nodes,
                edge_probability,
                seed,
            } => Topology::random_connected(*n_nodes, *edge_probability, *seed),
        }
    }
}

fn default_n_repeats() -> usize {
    10
}

fn default_test_fraction() -> f64 {
    0.2
}

/// One experiment: data, graph, algorithm, schedule, noise, repeats.
///
/// `c: null` applies the desk-scale default `min(1750, min_i B_i)`;
/// `noise: null` runs the non-private algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub topology: TopologySpec,
    pub variant: Variant,
    pub schedule: PenaltySchedule,
    pub gamma: f64,
    /// Number of odd/even pairs `K`; every variant runs `2K` iterations.
    pub outer_pairs: usize,
    #[serde(default)]
    pub c: Option<f64>,
    pub rho: f64,
    #[serde(default)]
    pub noise: Option<NoiseParams>,
    #[serde(default = "default_n_repeats")]
    pub n_repeats: usize,
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub inner_tolerance: Option<f64>,
    #[serde(default)]
    pub inner_max_iterations: Option<usize>,
    /// Pin the worker pool size; `null` uses all cores. Output is
    /// identical either way.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub enforce_eta1_gate: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats < 1 {
            return Err(Error::ConfigError {
                field: "n_repeats".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.test_fraction >= 0.0 && self.test_fraction < 1.0) {
            return Err(Error::ConfigError {
                field: "test_fraction".into(),
                message: "must lie in [0, 1)".into(),
            });
        }
        if !(self.rho > 0.0) {
            return Err(Error::ConfigError {
                field: "rho".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the configured dataset, preprocesses it, and partitions
    /// training rows across the nodes.
    pub fn load_data(&self, n_nodes: usize) -> Result<PartitionedData> {
        match &self.dataset {
            DatasetSource::Csv { path, schema } => {
                let schema_text = std::fs::read_to_string(schema)?;
                let schema: Schema = serde_json::from_str(&schema_text)?;
                let raw = data::load_csv(path, &schema)?;
                let (features, labels) = data::preprocess(&raw)?;
                data::split_and_partition(&features, &labels, n_nodes, self.test_fraction, self.seed)
            }
            DatasetSource::Synthetic {
                n_samples,
                dim,
                separation,
            } => data::synthetic_partitioned(
                *n_samples,
                *dim,
                *separation,
                n_nodes,
                self.test_fraction,
                self.seed,
            ),
        }
    }

    /// Objective constants with the desk-scale `C` rule applied.
    pub fn objective_params(&self, n_nodes: usize, batch_sizes: &[usize]) -> ObjectiveParams {
        let min_batch = batch_sizes.iter().copied().min().unwrap_or(0) as f64;
        let c = self.c.unwrap_or_else(|| 1750.0_f64.min(min_batch));
        ObjectiveParams::logistic(c, self.rho, n_nodes)
    }

    fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            variant: self.variant,
            schedule: self.schedule.clone(),
            gamma: self.gamma,
            outer_pairs: self.outer_pairs,
            inner_tolerance: self.inner_tolerance.unwrap_or(1e-8),
            inner_max_iterations: self.inner_max_iterations.unwrap_or(200_000),
            seed,
        }
    }

    fn private_config(&self, seed: u64) -> PrivateConfig {
        PrivateConfig {
            schedule: self.schedule.clone(),
            gamma: self.gamma,
            outer_pairs: self.outer_pairs,
            inner_tolerance: self.inner_tolerance.unwrap_or(1e-8),
            inner_max_iterations: self.inner_max_iterations.unwrap_or(200_000),
            seed,
            variant: self.variant,
            enforce_eta1_gate: self.enforce_eta1_gate,
        }
    }
}

/// Aggregated metrics across repeats: per iteration `t = 1..2K` the
/// training-loss mean and range and the privacy bound `P(t)`; the test
/// error of the averaged classifier at the final iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub t: Vec<usize>,
    pub l_mean: Vec<f64>,
    pub l_range: Vec<f64>,
    /// Cumulative privacy bound after iteration `t`; infinite for
    /// non-private runs.
    pub p: Vec<f64>,
    pub e_mean: f64,
    pub e_range: f64,
    /// Final accountant bound; infinite for non-private runs.
    pub beta_final: f64,
}

/// `L(t) = (1/N) sum_i (1/B_i) sum_n loss(y f_i^T x)` — plain logistic
/// loss, each node evaluated on its own shard with its own iterate.
pub fn average_loss(primals: &[DVector<f64>], train: &[Dataset]) -> f64 {
    primals
        .iter()
        .zip(train)
        .map(|(f, d)| d.mean_logistic_loss(f))
        .sum::<f64>()
        / train.len() as f64
}

/// Misclassification rate of the averaged classifier
/// `f_bar = (1/N) sum_i f_i` on the test set; ties predict `+1`.
pub fn error_rate(primals: &[DVector<f64>], test: &Dataset) -> Result<f64> {
    if test.n_samples() == 0 {
        return Err(Error::EmptyTestSet);
    }
    let mut f_bar = primals[0].clone();
    for f in &primals[1..] {
        f_bar += f;
    }
    f_bar /= primals.len() as f64;
    let scores = test.features() * f_bar;
    let errors = scores
        .iter()
        .zip(test.labels().iter())
        .filter(|(&s, &y)| {
            let predicted = if s >= 0.0 { 1.0 } else { -1.0 };
            predicted != y
        })
        .count();
    Ok(errors as f64 / test.n_samples() as f64)
}

/// The cumulative stair-step `P(t)` from an accountant report:
/// running per-node sums over the breakdown, maximized across nodes.
fn privacy_stair(report: &PrivacyReport) -> Vec<f64> {
    let n = report.per_node_cumulative.len();
    let mut acc = vec![0.0; n];
    report
        .per_iteration_breakdown
        .iter()
        .map(|row| {
            for (a, term) in acc.iter_mut().zip(row) {
                *a += term;
            }
            acc.iter().cloned().fold(0.0, f64::max)
        })
        .collect()
}

/// The accountant's view of a config (no solver run). Errors when the
/// config is non-private.
pub fn accountant_report(cfg: &ExperimentConfig) -> Result<PrivacyReport> {
    let topology = cfg.topology.build()?;
    let data = cfg.load_data(topology.n_nodes())?;
    let batch_sizes = data.batch_sizes();
    let params = cfg.objective_params(topology.n_nodes(), &batch_sizes);
    let noise = cfg.noise.as_ref().ok_or(Error::ConfigError {
        field: "noise".into(),
        message: "accountant needs a private config".into(),
    })?;
    noise.validate(topology.n_nodes())?;
    Ok(match cfg.variant {
        Variant::Conventional => conventional_privacy_bound(
            &params,
            &topology,
            cfg.schedule.eta(0, 1),
            noise,
            cfg.outer_pairs,
            &batch_sizes,
        ),
        _ => privacy_bound(
            &params,
            &topology,
            &cfg.schedule,
            noise,
            cfg.outer_pairs,
            &batch_sizes,
        ),
    })
}

/// Solves for the constant noise parameter `alpha` whose Theorem-2
/// bound equals `target_beta` under this config's schedule and data.
pub fn calibrate_alpha(cfg: &ExperimentConfig, target_beta: f64) -> Result<f64> {
    let topology = cfg.topology.build()?;
    let data = cfg.load_data(topology.n_nodes())?;
    let batch_sizes = data.batch_sizes();
    let params = cfg.objective_params(topology.n_nodes(), &batch_sizes);
    calibrate_constant_alpha(target_beta, |alpha| {
        let noise = NoiseParams::Constant(alpha);
        match cfg.variant {
            Variant::Conventional => conventional_privacy_bound(
                &params,
                &topology,
                cfg.schedule.eta(0, 1),
                &noise,
                cfg.outer_pairs,
                &batch_sizes,
            )
            .bound_beta,
            _ => privacy_bound(
                &params,
                &topology,
                &cfg.schedule,
                &noise,
                cfg.outer_pairs,
                &batch_sizes,
            )
            .bound_beta,
        }
    })
}

fn run_one(
    cfg: &ExperimentConfig,
    topology: &Topology,
    data: &PartitionedData,
    params: &ObjectiveParams,
    seed: u64,
) -> Result<IterationTrace> {
    match &cfg.noise {
        Some(noise) => {
            let (trace, _) = crate::privacy::run_private(
                topology,
                &data.train,
                params,
                noise,
                &cfg.private_config(seed),
            )?;
            Ok(trace)
        }
        None => {
            let objectives: Vec<Arc<dyn Objective>> = data
                .train
                .iter()
                .map(|d| {
                    ErmObjective::new(d.clone(), *params)
                        .map(|o| Arc::new(o) as Arc<dyn Objective>)
                })
                .collect::<Result<_>>()?;
            run_solver(topology, &objectives, &cfg.solver_config(seed))
        }
    }
}

fn run_experiment_inner(cfg: &ExperimentConfig) -> Result<MetricsTrace> {
    cfg.validate()?;
    let topology = cfg.topology.build()?;
    let data = cfg.load_data(topology.n_nodes())?;
    let batch_sizes = data.batch_sizes();
    let params = cfg.objective_params(topology.n_nodes(), &batch_sizes);
    let iterations = 2 * cfg.outer_pairs;

    let mut losses: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_repeats);
    let mut errors: Vec<f64> = Vec::with_capacity(cfg.n_repeats);
    for l in 0..cfg.n_repeats {
        let trace = run_one(cfg, &topology, &data, &params, cfg.seed + l as u64)?;
        let per_t: Vec<f64> = trace
            .iterations()
            .iter()
            .map(|r| average_loss(&r.primal, &data.train))
            .collect();
        debug_assert_eq!(per_t.len(), iterations);
        losses.push(per_t);
        errors.push(error_rate(&trace.final_record().primal, &data.test)?);
    }

    let l_mean: Vec<f64> = (0..iterations)
        .map(|t| losses.iter().map(|run| run[t]).sum::<f64>() / cfg.n_repeats as f64)
        .collect();
    let l_range: Vec<f64> = (0..iterations)
        .map(|t| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for run in &losses {
                lo = lo.min(run[t]);
                hi = hi.max(run[t]);
            }
            hi - lo
        })
        .collect();
    let e_mean = errors.iter().sum::<f64>() / cfg.n_repeats as f64;
    let e_range = errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - errors.iter().cloned().fold(f64::INFINITY, f64::min);

    let (p, beta_final) = match accountant_report(cfg) {
        Ok(report) => (privacy_stair(&report), report.bound_beta),
        Err(_) => (vec![f64::INFINITY; iterations], f64::INFINITY),
    };

    Ok(MetricsTrace {
        t: (1..=iterations).collect(),
        l_mean,
        l_range,
        p,
        e_mean,
        e_range,
        beta_final,
    })
}

/// Runs the full experiment: `n_repeats` solver runs with seeds
/// `seed + l`, deterministic aggregation in repeat order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTrace> {
    match cfg.workers {
        None => run_experiment_inner(cfg),
        Some(workers) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::ConfigError {
                    field: "workers".into(),
                    message: e.to_string(),
                })?;
            pool.install(|| run_experiment_inner(cfg))
        }
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.17e}")
    }
}

/// Renders the CSV body (`t,L_mean,L_range,P`). Deterministic for a
/// given trace, byte for byte.
pub fn render_csv(trace: &MetricsTrace) -> String {
    let mut out = String::from("t,L_mean,L_range,P\n");
    for idx in 0..trace.t.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            trace.t[idx],
            fmt_metric(trace.l_mean[idx]),
            fmt_metric(trace.l_range[idx]),
            fmt_metric(trace.p[idx]),
        ));
    }
    out
}

/// Writes the CSV plus a sibling `.json` carrying the final error
/// metrics, the accountant bound, and a config echo.
pub fn emit_results(trace: &MetricsTrace, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, render_csv(trace))?;
    let summary = serde_json::json!({
        "E_mean": trace.e_mean,
        "E_range": trace.e_range,
        "beta_final": if trace.beta_final.is_finite() {
            serde_json::json!(trace.beta_final)
        } else {
            serde_json::json!("inf")
        },
        "config": cfg,
    });
    let json_path = path.with_extension("json");
    std::fs::write(json_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Re-parses an emitted CSV body back into `(t, L_mean, L_range, P)`
/// rows; used by round-trip checks.
pub fn parse_csv(text: &str) -> Result<Vec<(usize, f64, f64, f64)>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "t,L_mean,L_range,P" {
                return Err(Error::ParseError {
                    row: 1,
                    message: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::ParseError {
                row: idx + 1,
                message: "expected 4 fields".into(),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            if s == "inf" {
                return Ok(f64::INFINITY);
            }
            s.parse().map_err(|_| Error::ParseError {
                row: idx + 1,
                message: format!("bad float {s:?}"),
            })
        };
        rows.push((
            parts[0].parse().map_err(|_| Error::ParseError {
                row: idx + 1,
                message: "bad iteration index".into(),
            })?,
            parse(parts[1])?,
            parse(parts[2])?,
            parse(parts[3])?,
        ));
    }
    Ok(rows)
}
