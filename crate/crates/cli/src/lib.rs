//! Batch front end for the GMWB engine: TOML run configurations, scenario
//! sweeps and CSV artifacts for pricing, fair fees, policy heatmaps and
//! simulated withdrawal behaviour.

pub mod cells;
pub mod commands;
pub mod config;
pub mod error;

pub use cells::Cell;
pub use commands::{
    calibrate_cell, execute, execute_in, resolve_fee, simulate_cell, solve_cell, CellFee, Command, Session,
};
pub use config::{FeeChoice, RunConfig};
pub use error::CliError;
