//! End-to-end risk-budgeting portfolio engine.
//!
//! A small perceptron maps market features to per-asset risk budgets, a
//! log-barrier Newton solver turns budgets into long-only allocations, and the
//! solver's optimality conditions are differentiated implicitly so the whole
//! pipeline trains on realized portfolio performance. Optional stochastic gates
//! learn to drop assets from the universe.
//!
//! Modules:
//! - [`data`]: return panels, CSV ingest, features, simulated markets.
//! - [`risk`]: covariance estimation, risk contributions, the risk-budget
//!   solver and its implicit Jacobian.
//! - [`net`]: model-free and model-based networks, gates, objectives,
//!   backpropagation and the training loop.
//! - [`benchmarks`]: nominal risk parity, fix-mix and filtered risk parity.
//! - [`backtest`]: the rolling retrain/allocate engine.
//! - [`metrics`]: drawdowns, annualized statistics and Z tests.

// Negated comparisons deliberately treat NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod benchmarks;
pub mod data;
pub mod metrics;
pub mod net;
pub mod risk;

pub use backtest::{run_backtest, BacktestRun, BacktestSchedule, Strategy, WealthSeries};
pub use data::{FeatureVector, ReturnsPanel, SimSpec};
pub use metrics::PerfStats;
pub use net::{Architecture, NetworkParams, Objective, TrainConfig};
pub use risk::{Allocation, CovMatrix, RiskBudget};
