//! Simulation of low-voltage grid metering rollouts and their effect on
//! weighted-least-squares state estimation quality.
//!
//! The pipeline per (grid, variant): power-flow ground truth, device
//! allocation, measurement synthesis, WLS estimation, quality samples and
//! use-case verdicts.

pub mod allocation;
pub mod config;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod fixtures;
pub mod grid;
pub mod measurement;
pub mod power_flow;
pub mod scenario;

pub use allocation::{EquipmentVariant, MeasurementSpec, SubstationDevice};
pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use grid::{load_grid, GridTopology};
pub use power_flow::Network;
pub use scenario::{compare_variants, run_scenario, QualityReport, Study};
