//! Safe, context-aware Gaussian-process bandits for *leveling* tasks:
//! keep an unknown response `f(z, d)` inside a safety band `[T_min, T_max]`
//! and as close as possible to a target level `T`.
//!
//! The crate provides:
//!
//! - [`kernel`] — kernel functions, the kernel-induced metric and its
//!   inversion in the dose direction, and Lipschitz-constant bookkeeping.
//! - [`gp`] — exact GP regression with incremental Cholesky updates,
//!   posterior function sampling, and the information-gain running sum.
//! - [`bounds`] — confidence-width schedules, the per-context dose
//!   discretization, and Lipschitz-tightened confidence bounds.
//! - [`safeset`] — safe sets as interval unions, the certified expansion
//!   rule, and the true-function reachability / safe-path oracles.
//! - [`policy`] — the TACO acquisition rule, ESCADA (TACO restricted to the
//!   safe set), Thompson sampling and its safe variant, GP-UCB over
//!   pseudo-rewards, the rule-based dose calculator, and a random-safe
//!   baseline.
//! - [`env`] — synthetic dose-response environments with known ground truth,
//!   meal-event context generators, and Lipschitz-certificate auditing.
//! - [`metrics`] — per-round records, cumulative regret, violation
//!   frequencies, and cross-seed aggregation.
//! - [`config`] / [`runner`] — the config-driven experiment harness (SME,
//!   MME and fixed-context scenarios, sweeps, oracle-check suites).
//! - [`oracle`] — independent numerical oracles (dense-solve GP posterior,
//!   log-det information gain, grid-mask reachability, safe-path grid
//!   minimization) used by the `oracle-check` release gate.
//!
//! Policies are pure functions of `(state, round inputs, seed)`; a single
//! bandit trajectory is strictly sequential while independent runs execute
//! in parallel with independent, counter-derived random streams.

pub mod bounds;
pub mod config;
pub mod env;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod runner;
pub mod safeset;
pub mod seed;

pub use error::{Error, Result};
