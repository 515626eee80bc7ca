//! Experiment runner for deep linear (and ReLU) networks trained by gradient
//! descent on compressed-sensing style inverse problems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csvio;
pub mod plot;
pub mod runner;
pub mod theory;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error(transparent)]
    Core(#[from] subspace_gd_core::error::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
