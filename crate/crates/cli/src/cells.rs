//! Expansion of sweep lists into scenario cells.

use gmwb_core::{ContractSpec, Strategy};

use crate::config::RunConfig;

/// One scenario: a strategy and the contract features that vary across a
/// batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub strategy: Strategy,
    pub ratchet: bool,
    pub cash_fund: bool,
    /// `None` when no cash fund is held, since the rate then has no effect.
    pub cash_rate: Option<f64>,
    pub tax_rate: f64,
}

impl Cell {
    /// `base` with this cell's features and a fee in basis points.
    pub fn spec(&self, base: &ContractSpec, fee_bps: f64) -> ContractSpec {
        ContractSpec {
            fee: fee_bps * 1e-4,
            ratchet: self.ratchet,
            cash_fund: self.cash_fund,
            cash_rate: self.cash_rate.unwrap_or(base.cash_rate),
            tax_rate: self.tax_rate,
            ..*base
        }
    }

    /// File-system safe identifier, unique within a batch.
    pub fn label(&self) -> String {
        let cf = match self.cash_rate {
            Some(eta) if self.cash_fund => format!("cf{eta}"),
            _ => "nocf".to_string(),
        };
        let ratchet = if self.ratchet { "ratchet" } else { "noratchet" };
        format!("{}_{cf}_{ratchet}_tax{}", self.strategy, self.tax_rate)
    }
}

fn or_single<T: Copy>(list: &[T], single: T) -> Vec<T> {
    if list.is_empty() {
        vec![single]
    } else {
        list.to_vec()
    }
}

/// Cross product of the sweep lists, ordered by strategy, cash fund,
/// ratchet, tax rate and cash rate as listed. Static withdrawals never
/// reach the cash fund, so static cells drop it; cells that differ only in
/// an irrelevant cash rate are merged, keeping the first.
pub fn expand(cfg: &RunConfig) -> Vec<Cell> {
    let s = &cfg.sweep;
    let c = &cfg.contract;
    let mut cells: Vec<Cell> = Vec::new();
    for strategy in or_single(&s.strategies, cfg.mode.strategy) {
        for cash_fund in or_single(&s.cash_fund, c.cash_fund) {
            for ratchet in or_single(&s.ratchet, c.ratchet) {
                for tax_rate in or_single(&s.tax_rates, c.tax_rate) {
                    for eta in or_single(&s.cash_rates, c.cash_rate) {
                        let cash_fund = cash_fund && strategy == Strategy::Dynamic;
                        let cell = Cell {
                            strategy,
                            ratchet,
                            cash_fund,
                            cash_rate: cash_fund.then_some(eta),
                            tax_rate,
                        };
                        if !cells.contains(&cell) {
                            cells.push(cell);
                        }
                    }
                }
            }
        }
    }
    cells
}
