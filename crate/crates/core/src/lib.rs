//! Discrete-time (per-TTI) scheduling engine for multi-slice-in-slice-connected
//! 5G users.
//!
//! The engine learns per-service radio allocations and throughputs from an
//! exponential-utility model, optimizes per-service bandwidth with an
//! epsilon-constraint Wolfe line search, grows slice-in-slice categories under
//! the radio budget, and aggregates capacity/throughput metrics per slice.
//!
//! Module map:
//! - [`model`] — domain types (slices, services, categories, schedule map) and
//!   scenario validation.
//! - [`config`] — scenario file (TOML) loading.
//! - [`channel`] — Rayleigh fading, SINR, SNR sampling, modulation mapping.
//! - [`utility`] — utility-learning kernel: rate terms, stationarity solve,
//!   radio allocation, beta calibration.
//! - [`pareto`] — the bandwidth MOP: objectives f1/f2, Wolfe search,
//!   epsilon-constraint minimizer, Pareto classification.
//! - [`category`] — greedy SLA-range category formation.
//! - [`scheduler`] — per-TTI orchestration and category growth.
//! - [`harness`] — scenario build, mobility/channel evolution, simulation
//!   loop, metric aggregation and artifact output.

pub mod category;
pub mod channel;
pub mod config;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod pareto;
pub mod scheduler;
pub mod utility;

pub use model::{
    Category, OptimizerParams, PowerModel, ScenarioConfig, ScheduleMap, SliceConfig,
    SystemResources, UEService,
};
