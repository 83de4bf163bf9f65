//! Two-population mean-field game of stablecoin de-peg dynamics.
//!
//! Retail traders trade only on secondary venues; arbitrageurs additionally
//! route flow through primary mint/redeem channels. Each population solves a
//! finite-horizon discounted linear-quadratic control problem against a frozen
//! market path, and the market path is rolled forward from the aggregated
//! flows. [`mfe::solve_mfe`] iterates the two steps to a fixed point and
//! certifies it with normalized exploitability.
//!
//! Around the solver sit the pieces needed to use it on data:
//!
//! - [`data`] parses candlestick files into mispricing series,
//! - [`calibration`] segments an episode into regimes and fits parameters
//!   with differential evolution,
//! - [`analysis`] estimates AR(1) half-lives, decomposes flows by channel and
//!   runs two-parameter sensitivity sweeps,
//! - [`export`] writes the plot-ready CSV tables.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod calibration;
pub mod data;
pub mod error;
pub mod export;
pub mod lq;
pub mod market;
pub mod mfe;
pub mod params;
pub mod path;

pub use error::{Error, Result};
pub use lq::{best_response, evaluate_policy, stage_costs, AffinePolicy, StageCosts, ValueQuadratic};
pub use market::{rollout, Rollout, ShockStream};
pub use mfe::{exploitability, solve_mfe, EquilibriumResult, Exploitability, IterationDiagnostics};
pub use params::{
    AgentParams, AgentType, GarchParams, MarketParams, ModelParams, PrimaryConvention, RoutingMode,
    ShockMode, SimConfig, ValidationReport,
};
pub use path::MeanFieldPath;
