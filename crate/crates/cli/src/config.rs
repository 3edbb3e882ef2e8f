//! Run configuration read from TOML.
//!
//! Every section is optional and falls back to the base-case contract:
//! P0 = 100, T = 10, annual withdrawals at 10% of the base, r = 3%,
//! σ = 20% with 80% equity exposure, and an 80 × 80 mesh with 50 time steps
//! per period.

use std::path::{Path, PathBuf};

use gmwb_core::{
    build_grid, ContractSpec, FeeSweep, GridConfig, MarketParams, PolicyLookup, Strategy,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cells::Cell;
use crate::error::CliError;

/// Guarantee fee used for pricing, policy export and simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeeChoice {
    /// Fee in basis points.
    Fixed(f64),
    /// Calibrate each cell to its fair fee.
    Keyword(FeeKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeKeyword {
    Fair,
}

impl Default for FeeChoice {
    fn default() -> Self {
        FeeChoice::Keyword(FeeKeyword::Fair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractBlock {
    pub premium: f64,
    pub maturity: f64,
    pub period: f64,
    pub withdrawal_rate: f64,
    pub fee_bps: FeeChoice,
    pub ratchet: bool,
    pub cash_fund: bool,
    pub cash_rate: f64,
    pub tax_rate: f64,
}

impl Default for ContractBlock {
    fn default() -> Self {
        let s = ContractSpec::default();
        Self {
            premium: s.premium,
            maturity: s.maturity,
            period: s.period,
            withdrawal_rate: s.withdrawal_rate,
            fee_bps: FeeChoice::default(),
            ratchet: s.ratchet,
            cash_fund: s.cash_fund,
            cash_rate: s.cash_rate,
            tax_rate: s.tax_rate,
        }
    }
}

impl ContractBlock {
    /// Contract with the fee set to zero; cells fill in the fee.
    pub fn spec(&self) -> ContractSpec {
        ContractSpec {
            premium: self.premium,
            maturity: self.maturity,
            period: self.period,
            withdrawal_rate: self.withdrawal_rate,
            fee: 0.0,
            ratchet: self.ratchet,
            cash_fund: self.cash_fund,
            cash_rate: self.cash_rate,
            tax_rate: self.tax_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketBlock {
    pub risk_free: f64,
    pub volatility: f64,
    pub equity_exposure: f64,
}

impl Default for MarketBlock {
    fn default() -> Self {
        let m = MarketParams::default();
        Self {
            risk_free: m.risk_free,
            volatility: m.volatility,
            equity_exposure: m.equity_exposure,
        }
    }
}

impl From<MarketBlock> for MarketParams {
    fn from(b: MarketBlock) -> Self {
        MarketParams {
            risk_free: b.risk_free,
            volatility: b.volatility,
            equity_exposure: b.equity_exposure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeBlock {
    pub strategy: Strategy,
}

impl Default for ModeBlock {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dynamic,
        }
    }
}

/// Scenario lists. An empty list takes the single value from the contract
/// or mode section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub strategies: Vec<Strategy>,
    pub ratchet: Vec<bool>,
    pub cash_fund: Vec<bool>,
    pub cash_rates: Vec<f64>,
    pub tax_rates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationBlock {
    pub n_paths: usize,
    pub seed: u64,
    pub lookup: PolicyLookup,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            n_paths: gmwb_core::sim::DEFAULT_PATHS,
            seed: 2024,
            lookup: PolicyLookup::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyBlock {
    pub dates: Vec<usize>,
}

impl Default for PolicyBlock {
    fn default() -> Self {
        Self { dates: vec![1, 5, 9] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub contract: ContractBlock,
    pub market: MarketBlock,
    pub mode: ModeBlock,
    pub grid: GridConfig,
    pub sweep: SweepBlock,
    pub fee_search: FeeSweep,
    pub simulation: SimulationBlock,
    pub policy: PolicyBlock,
    /// Where artifacts go. Not part of the echoed config or its hash.
    #[serde(skip_serializing)]
    pub output: OutputBlock,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        MarketParams::from(self.market)
            .validate()
            .or_else(|e| bad(format!("market: {e}")))?;
        self.fee_search.validate().or_else(|e| bad(format!("fee_search: {e}")))?;
        if let FeeChoice::Fixed(bps) = self.contract.fee_bps {
            if !bps.is_finite() || bps < 0.0 {
                return bad(format!("contract.fee_bps: {bps} is not a non-negative number"));
            }
        }
        if self.simulation.n_paths == 0 {
            return bad("simulation.n_paths: must be at least 1".into());
        }
        for cell in self.cells() {
            let spec = cell.spec(&self.contract.spec(), 0.0);
            spec.validate().or_else(|e| bad(format!("cell {}: {e}", cell.label())))?;
            build_grid(&spec, &self.grid).map_err(|e| CliError::Config(format!("grid: {e}")))?;
        }
        Ok(())
    }

    /// Checks that every policy date is a withdrawal date. Only the policy
    /// command reads them.
    pub fn validate_dates(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let n = self.contract.spec().num_periods();
        if self.policy.dates.is_empty() {
            return bad("policy.dates: at least one date is required".into());
        }
        for &d in &self.policy.dates {
            if d == 0 || d >= n {
                return bad(format!("policy.dates: {d} is not a withdrawal date (1..={})", n - 1));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        crate::cells::expand(self)
    }

    pub fn market_params(&self) -> MarketParams {
        self.market.into()
    }

    /// Resolved configuration as TOML, without the output section.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of [`echo`](Self::echo), hex encoded.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.echo().as_bytes()))
    }
}
