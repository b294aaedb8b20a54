//! Decentralized consensus optimization with recycled ADMM.
//!
//! The crate implements the recycled family of decentralized ADMM
//! solvers — R-ADMM, its modified variant MR-ADMM with per-node
//! non-decreasing penalties, and their differentially private versions
//! via objective perturbation — together with the supporting analysis
//! machinery: a convergence-condition checker, a privacy accountant
//! with calibration, sample-complexity calculators, a dataset pipeline,
//! and a configuration-driven experiment harness.
//!
//! Start with [`experiment::run_experiment`] for end-to-end runs, or
//! [`solver::run_solver`] / [`privacy::run_private`] to drive the
//! engine directly.

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiment;
pub mod objective;
pub mod privacy;
pub mod rng;
pub mod solver;
pub mod topology;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, MetricsTrace};
pub use objective::{Dataset, ErmObjective, Objective, ObjectiveParams};
pub use privacy::{run_private, NoiseParams, PrivacyReport, PrivateConfig};
pub use solver::{run_solver, IterationTrace, PenaltySchedule, SolverConfig, Variant};
pub use topology::Topology;
