//! Predictive decision support for a single metro line.
//!
//! The crate turns fare-gate taps into per-station arrival forecasts one and
//! two bins ahead, splits them into origin-destination flows, pushes those
//! flows through a capacity-constrained line simulator, and derives
//! operator-facing products (crowding hotspots, entrance-denial probability,
//! gate-closure what-ifs) from the simulated platforms.
//!
//! Module map:
//!
//! - [`time`], [`network`]: bins, stations, line topology, covariates
//! - [`ingest`]: AFC taps, journeys, daily profiles, events, train positions,
//!   synthetic data
//! - [`patterns`]: per-station day clustering and online classification
//! - [`forecast`]: state-space arrival model, Kalman filter, MLE fitting
//! - [`od`]: destination shares and OD flow forecasts
//! - [`mesosim`]: meso-scale line simulator
//! - [`decisions`]: hotspots, denial probability, gate-closure evaluation
//! - [`engine`]: the per-bin forecasting cycle, replay and accuracy
//! - [`pipeline`]: file-level generate / fit / replay used by the CLI

pub mod config;
pub mod decisions;
pub mod engine;
pub mod error;
pub mod forecast;
pub mod ingest;
pub mod mesosim;
pub mod models;
pub mod network;
pub mod od;
pub mod optim;
pub mod patterns;
pub mod pipeline;
pub mod time;

pub use error::{Error, Result};
pub use network::{ExogSchema, ExogenousVector, LineTopology, StationId};
pub use time::{BinClock, TimeBin};
