//! Contract state transitions and cash flows.
//!
//! Every quantity here is a function of the pre-event state: the pre-fee
//! account value `x` and the prevailing benefit base `γ` at a withdrawal
//! date. Fees are charged first, the guaranteed amount is fixed off the
//! (possibly ratcheted) base, and the withdrawal then moves the account, the
//! base and the cash fund.

use serde::{Deserialize, Serialize};

use crate::error::{GmwbError, Result};

/// Contractual parameters of a hybrid GMWB variable annuity.
///
/// Rates are annual. `fee` is stored as a fraction (100 bps = 0.01).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub premium: f64,
    pub maturity: f64,
    pub period: f64,
    pub withdrawal_rate: f64,
    pub fee: f64,
    pub ratchet: bool,
    pub cash_fund: bool,
    pub cash_rate: f64,
    pub tax_rate: f64,
}

impl Default for ContractSpec {
    fn default() -> Self {
        Self {
            premium: 100.0,
            maturity: 10.0,
            period: 1.0,
            withdrawal_rate: 0.10,
            fee: 0.0,
            ratchet: true,
            cash_fund: true,
            cash_rate: 0.04,
            tax_rate: 0.0,
        }
    }
}

/// Risk-neutral market inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub risk_free: f64,
    pub volatility: f64,
    pub equity_exposure: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            risk_free: 0.03,
            volatility: 0.20,
            equity_exposure: 0.80,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GmwbError::InvalidMarket(m.to_string()));
        if !(self.risk_free.is_finite() && self.volatility.is_finite() && self.equity_exposure.is_finite()) {
            return bad("parameters must be finite");
        }
        if self.risk_free < 0.0 {
            return bad("risk-free rate must be non-negative");
        }
        if self.volatility <= 0.0 {
            return bad("volatility must be positive");
        }
        if !(0.0..=1.0).contains(&self.equity_exposure) {
            return bad("equity exposure must lie in [0, 1]");
        }
        Ok(())
    }

    /// Volatility of the mixed portfolio backing the account.
    pub fn effective_volatility(&self) -> f64 {
        self.equity_exposure * self.volatility
    }
}

/// Pre-event state at a withdrawal date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractState {
    /// Account value before fees.
    pub account: f64,
    /// Benefit base before any ratchet.
    pub base: f64,
}

impl ContractState {
    pub fn new(account: f64, base: f64) -> Self {
        Self { account, base }
    }
}

/// Quantities fixed at a withdrawal date before the policyholder acts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithdrawalTerms {
    pub post_fee: f64,
    pub guaranteed: f64,
    /// Benefit base after the ratchet, before excess-withdrawal reductions.
    pub ratcheted_base: f64,
    pub max_withdrawal: f64,
}

impl WithdrawalTerms {
    pub fn check(&self, w: f64) -> Result<()> {
        if !(w >= 0.0 && w <= self.max_withdrawal) {
            return Err(GmwbError::InadmissibleWithdrawal {
                amount: w,
                max: self.max_withdrawal,
            });
        }
        if w > self.guaranteed && self.post_fee <= self.guaranteed {
            return Err(GmwbError::ExcessWithoutHeadroom {
                post_fee: self.post_fee,
                guaranteed: self.guaranteed,
            });
        }
        Ok(())
    }

    /// Account value after withdrawing `w`. Admissibility is not checked.
    ///
    /// The full guaranteed amount leaves the account even when `w` is below
    /// it; the shortfall goes to the cash fund (or is forfeited).
    #[inline]
    pub fn account_after(&self, w: f64) -> f64 {
        let excess = (w - self.guaranteed).max(0.0);
        (self.post_fee - self.guaranteed - excess).max(0.0)
    }

    /// Benefit base after withdrawing `w`. Admissibility is not checked.
    #[inline]
    pub fn base_after(&self, w: f64) -> f64 {
        if w <= self.guaranteed {
            self.ratcheted_base
        } else {
            let share = (w - self.guaranteed) / (self.post_fee - self.guaranteed);
            (self.ratcheted_base * (1.0 - share)).max(0.0)
        }
    }
}

/// Post-fee account value `x·(1 − φΔt)`.
#[inline]
pub fn fee_adjust(x: f64, fee: f64, period: f64) -> f64 {
    x * (1.0 - fee * period)
}

impl ContractSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GmwbError::InvalidContract(m));
        let fields = [
            self.premium,
            self.maturity,
            self.period,
            self.withdrawal_rate,
            self.fee,
            self.cash_rate,
            self.tax_rate,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if self.premium <= 0.0 {
            return bad(format!("premium {} must be positive", self.premium));
        }
        if !(self.withdrawal_rate > 0.0 && self.withdrawal_rate <= 1.0) {
            return bad(format!("withdrawal rate {} outside (0, 1]", self.withdrawal_rate));
        }
        let fee_charge = self.fee * self.period;
        if !(0.0..1.0).contains(&fee_charge) {
            return bad(format!("per-period fee charge {fee_charge} outside [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.tax_rate) {
            return bad(format!("tax rate {} outside [0, 1)", self.tax_rate));
        }
        if self.cash_rate < 0.0 {
            return bad(format!("cash rate {} is negative", self.cash_rate));
        }
        if self.period <= 0.0 || self.maturity <= 0.0 {
            return bad("maturity and period must be positive".into());
        }
        let n = (self.maturity / self.period).round();
        if n < 2.0 || (n * self.period - self.maturity).abs() > 1e-9 * self.maturity {
            return bad(format!(
                "maturity {} is not an integer multiple (>= 2) of period {}",
                self.maturity, self.period
            ));
        }
        Ok(())
    }

    /// Number of periods `N`; withdrawals happen at dates `1..N`.
    pub fn num_periods(&self) -> usize {
        (self.maturity / self.period).round() as usize
    }

    /// Calendar time of event date `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.period
    }

    #[inline]
    pub fn post_fee(&self, x: f64) -> f64 {
        fee_adjust(x, self.fee, self.period)
    }

    #[inline]
    pub fn terms(&self, state: ContractState) -> WithdrawalTerms {
        let post_fee = self.post_fee(state.account);
        let ratcheted_base = if self.ratchet {
            post_fee.max(state.base)
        } else {
            state.base
        };
        let guaranteed = self.withdrawal_rate * ratcheted_base;
        WithdrawalTerms {
            post_fee,
            guaranteed,
            ratcheted_base,
            max_withdrawal: post_fee.max(guaranteed),
        }
    }

    pub fn guaranteed_amount(&self, state: ContractState) -> f64 {
        self.terms(state).guaranteed
    }

    pub fn max_withdrawal(&self, state: ContractState) -> f64 {
        self.terms(state).max_withdrawal
    }

    pub fn post_withdrawal_account(&self, state: ContractState, w: f64) -> Result<f64> {
        let terms = self.terms(state);
        terms.check(w)?;
        Ok(terms.account_after(w))
    }

    pub fn post_withdrawal_base(&self, state: ContractState, w: f64) -> Result<f64> {
        let terms = self.terms(state);
        terms.check(w)?;
        Ok(terms.base_after(w))
    }

    /// Multiplier applied to a cash-fund deposit made at `time` to express
    /// its post-tax maturity payout in time-`time` money. Zero without a
    /// cash fund.
    #[inline]
    pub fn deposit_factor(&self, time: f64, market: &MarketParams) -> f64 {
        if !self.cash_fund {
            return 0.0;
        }
        let remaining = self.maturity - time;
        let r = market.risk_free;
        (1.0 - self.tax_rate) * (-(r - self.cash_rate) * remaining).exp()
            + self.tax_rate * (-r * remaining).exp()
    }

    /// Running cash flow at withdrawal date `time`, given precomputed terms.
    #[inline]
    pub fn running_cashflow_with(&self, terms: &WithdrawalTerms, w: f64, deposit_factor: f64) -> f64 {
        let paid = (1.0 - self.tax_rate) * w;
        if self.cash_fund {
            paid + deposit_factor * (terms.guaranteed - w).max(0.0)
        } else {
            paid
        }
    }

    pub fn running_cashflow(
        &self,
        time: f64,
        state: ContractState,
        w: f64,
        market: &MarketParams,
    ) -> Result<f64> {
        let terms = self.terms(state);
        terms.check(w)?;
        Ok(self.running_cashflow_with(&terms, w, self.deposit_factor(time, market)))
    }

    /// Maturity payout `(1 − θ)·max(𝔣(x), g(t_N))`.
    pub fn terminal_cashflow(&self, state: ContractState) -> f64 {
        (1.0 - self.tax_rate) * self.terms(state).max_withdrawal
    }

    /// Cash-fund payout at maturity per unit deposited at `time`, after tax
    /// on the interest: `(1 − θ)e^{η(T − t)} + θ`.
    pub fn cash_fund_growth(&self, time: f64) -> f64 {
        (1.0 - self.tax_rate) * (self.cash_rate * (self.maturity - time)).exp() + self.tax_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} != {b} (tol {})", $tol);
        }};
    }

    fn spec(ratchet: bool) -> ContractSpec {
        ContractSpec {
            fee: 0.0,
            ratchet,
            ..ContractSpec::default()
        }
    }

    #[test]
    fn fee_adjust_cases() {
        assert_eq!(fee_adjust(100.0, 0.0, 1.0), 100.0);
        assert_eq!(fee_adjust(0.0, 0.02, 1.0), 0.0);
        assert_close!(fee_adjust(100.0, 0.0230165, 1.0), 97.69835, 1e-12);
    }

    #[test]
    fn guaranteed_amount_cases() {
        let s = ContractState::new(120.0, 100.0);
        assert_close!(spec(true).guaranteed_amount(s), 12.0, 1e-12);
        assert_close!(spec(false).guaranteed_amount(s), 10.0, 1e-12);
        let empty = ContractState::new(0.0, 100.0);
        assert_close!(spec(true).guaranteed_amount(empty), 10.0, 1e-12);
    }

    #[test]
    fn max_withdrawal_cases() {
        let sp = spec(true);
        assert_close!(sp.max_withdrawal(ContractState::new(120.0, 100.0)), 120.0, 1e-12);
        // The guarantee only dominates once the post-fee account is below g.
        assert_close!(sp.max_withdrawal(ContractState::new(50.0, 100.0)), 50.0, 1e-12);
        assert_close!(sp.max_withdrawal(ContractState::new(5.0, 100.0)), 10.0, 1e-12);
        assert_eq!(sp.max_withdrawal(ContractState::new(0.0, 0.0)), 0.0);
    }

    #[test]
    fn post_withdrawal_account_cases() {
        let sp = spec(true);
        let s = ContractState::new(100.0, 100.0);
        assert_close!(sp.post_withdrawal_account(s, 10.0).unwrap(), 90.0, 1e-12);
        assert_close!(sp.post_withdrawal_account(s, 0.0).unwrap(), 90.0, 1e-12);
        assert_eq!(sp.post_withdrawal_account(s, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn post_withdrawal_base_cases() {
        let sp = spec(true);
        let s = ContractState::new(100.0, 100.0);
        assert_close!(sp.post_withdrawal_base(s, 10.0).unwrap(), 100.0, 1e-12);
        assert_close!(sp.post_withdrawal_base(s, 55.0).unwrap(), 50.0, 1e-12);
        assert_eq!(sp.post_withdrawal_base(s, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn no_ratchet_excess_reduces_locked_base() {
        let sp = spec(false);
        let s = ContractState::new(200.0, 100.0);
        // g = 10, headroom 190; withdrawing 105 removes half the headroom.
        assert_close!(sp.post_withdrawal_base(s, 105.0).unwrap(), 50.0, 1e-12);
        assert_eq!(sp.post_withdrawal_base(s, 200.0).unwrap(), 0.0);
    }

    #[test]
    fn inadmissible_withdrawals_rejected() {
        let sp = spec(true);
        let s = ContractState::new(100.0, 100.0);
        assert!(matches!(
            sp.post_withdrawal_account(s, -1.0),
            Err(GmwbError::InadmissibleWithdrawal { .. })
        ));
        assert!(matches!(
            sp.post_withdrawal_base(s, 100.5),
            Err(GmwbError::InadmissibleWithdrawal { .. })
        ));
        // Account below the guarantee: the cap is g itself.
        let low = ContractState::new(5.0, 100.0);
        assert!(sp.post_withdrawal_base(low, 10.0).is_ok());
        assert!(sp.post_withdrawal_base(low, 10.1).is_err());
    }

    #[test]
    fn running_cashflow_cases() {
        let market = MarketParams {
            risk_free: 0.03,
            ..MarketParams::default()
        };
        let sp = ContractSpec {
            cash_rate: 0.04,
            maturity: 10.0,
            ..spec(true)
        };
        // w = g = 10, no tax.
        let s = ContractState::new(100.0, 100.0);
        assert_close!(sp.running_cashflow(3.0, s, 10.0, &market).unwrap(), 10.0, 1e-12);

        let taxed = ContractSpec { tax_rate: 0.2, ..sp };
        let expected = 10.0 * (0.8 * 0.05f64.exp() + 0.2 * (-0.15f64).exp());
        assert_close!(taxed.running_cashflow(5.0, s, 0.0, &market).unwrap(), expected, 1e-12);
        assert_close!(expected, 10.1315847, 1e-7);

        let no_cf = ContractSpec {
            tax_rate: 0.1,
            cash_fund: false,
            ..sp
        };
        assert_close!(no_cf.running_cashflow(5.0, s, 7.0, &market).unwrap(), 6.3, 1e-12);
    }

    #[test]
    fn terminal_cashflow_cases() {
        let sp = spec(true);
        assert_close!(sp.terminal_cashflow(ContractState::new(150.0, 100.0)), 150.0, 1e-12);
        assert_close!(sp.terminal_cashflow(ContractState::new(50.0, 100.0)), 50.0, 1e-12);
        assert_close!(sp.terminal_cashflow(ContractState::new(5.0, 100.0)), 10.0, 1e-12);
        let taxed = ContractSpec { tax_rate: 0.2, ..sp };
        assert_close!(taxed.terminal_cashflow(ContractState::new(150.0, 100.0)), 120.0, 1e-12);
    }

    #[test]
    fn validation() {
        assert!(ContractSpec::default().validate().is_ok());
        let bad_rate = ContractSpec {
            withdrawal_rate: 0.0,
            ..ContractSpec::default()
        };
        assert!(bad_rate.validate().is_err());
        let bad_horizon = ContractSpec {
            maturity: 10.5,
            ..ContractSpec::default()
        };
        assert!(bad_horizon.validate().is_err());
        let single = ContractSpec {
            maturity: 1.0,
            ..ContractSpec::default()
        };
        assert!(single.validate().is_err());
        assert!(MarketParams::default().validate().is_ok());
        assert!(MarketParams {
            volatility: 0.0,
            ..MarketParams::default()
        }
        .validate()
        .is_err());
    }
}
