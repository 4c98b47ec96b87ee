//! Command-line layer over the `riskbudget` engine: TOML run configs, the
//! `backtest`, `simstudy` and `gridsearch` commands, and report files.

// Negated comparisons deliberately treat NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

pub use commands::{
    backtest_report, cmd_backtest, cmd_gridsearch, cmd_simstudy, gridsearch_report,
    select_hyperparameters, simstudy_report, GridCell,
};
pub use config::{RunConfig, StrategyId};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration, including unreadable data files.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
