//! Valuation engine for variable annuities carrying a guaranteed minimum
//! withdrawal benefit with optional ratchet, provider cash fund and taxation.
//!
//! The pipeline is: [`contract`] cash-flow mechanics, a per-period PDE solve
//! ([`pde`]) on the (account, base) mesh ([`grid`]), backward induction over
//! withdrawal dates ([`dp`]), fair-fee search ([`calibrate`]) and Monte Carlo
//! replay of the optimal policy ([`sim`]).

pub mod calibrate;
pub mod contract;
pub mod dp;
pub mod error;
pub mod grid;
pub mod pde;
pub mod sim;
pub mod spline;

pub use calibrate::{fair_fee, value_at_fee, FeeOutcome, FeeSweep, SweepPoint, SweepRecord};
pub use contract::{fee_adjust, ContractSpec, ContractState, MarketParams, WithdrawalTerms};
pub use dp::{apply_jump, decide, Decision, terminal_surface, value_contract, withdrawal_grid, Jump, PolicySurface, SolveResult, Strategy};
pub use error::{GmwbError, Result};
pub use grid::{build_grid, GridConfig, GridSpec, LowerBoundary, Side, Spacing, ValueSurface};
pub use pde::step_period;
pub use sim::{
    classify, policy_ratio_export, replay_path, run_policy, run_policy_with, simulate_paths, Action, Event, PathBatch, PathTrace,
    RatioSurfaces, ScenarioStats, WithdrawalMix, PolicyLookup,
};
pub use spline::NaturalSpline;
