//! Monte Carlo replay of an extracted withdrawal policy.
//!
//! Paths of the mixed portfolio are drawn under the pricing measure. At each
//! date the withdrawal is taken from the solution of
//! [`value_contract`](crate::dp::value_contract), either by repeating the
//! solver's maximisation at the simulated state or by interpolating the
//! node policy, and each path's withdrawals, cash-fund deposits and
//! discounted cash flows are recorded.
//!
//! A solution priced with [`LowerBoundary::MaturityPayout`] treats an
//! exhausted account as paying its maturity amount at the next date and
//! ending; replay follows the same rule so that the simulated value
//! estimates the priced contract.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{ContractSpec, ContractState, MarketParams};
use crate::dp::{decide, SolveResult};
use crate::error::{GmwbError, Result};
use crate::grid::LowerBoundary;

pub const DEFAULT_PATHS: usize = 10_000;

/// Largest share of policy lookups allowed to fall outside the mesh.
pub const MAX_CLAMP_SHARE: f64 = 0.005;

const CLASS_TOLERANCE: f64 = 1e-6;

/// Gross portfolio returns, one row per path and one column per period.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub seed: u64,
    pub returns: Array2<f64>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.returns.nrows()
    }
}

/// Draws `n` paths. Path `p` uses stream `p` of a ChaCha8 generator keyed
/// by `seed`, so a batch is reproducible regardless of thread count.
pub fn simulate_paths(n: usize, seed: u64, market: &MarketParams, spec: &ContractSpec) -> Result<PathBatch> {
    if n == 0 {
        return Err(GmwbError::InvalidContract("at least one path is required".into()));
    }
    market.validate()?;
    spec.validate()?;
    let periods = spec.num_periods();
    let vol = market.effective_volatility();
    let dt = spec.period;
    let drift = (market.risk_free - 0.5 * vol * vol) * dt;
    let shock = vol * dt.sqrt();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            (0..periods)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (drift + shock * z).exp()
                })
                .collect()
        })
        .collect();
    let returns = Array2::from_shape_fn((n, periods), |(p, k)| rows[p][k]);
    Ok(PathBatch { seed, returns })
}

/// How the withdrawal at a simulated state is read off the solution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLookup {
    /// Re-run the jump-condition maximisation at the state itself against
    /// the bilinear post-withdrawal surface.
    #[default]
    Reoptimized,
    /// Bilinear interpolation of the node-optimal withdrawal. Mixes
    /// neighbouring decisions near policy switches and across the ratchet
    /// kink, so classes are blurred there.
    Interpolated,
}

/// Kind of withdrawal made at an opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    None,
    BelowGuarantee,
    AtGuarantee,
    Excess,
    Surrender,
}

/// Classifies `w` against the guarantee `g` and post-fee account `f`.
pub fn classify(w: f64, g: f64, post_fee: f64) -> Action {
    let tol = CLASS_TOLERANCE * (1.0 + g);
    if (w - g).abs() <= tol {
        Action::AtGuarantee
    } else if w <= tol {
        Action::None
    } else if w > g + tol {
        if w >= post_fee - CLASS_TOLERANCE * (1.0 + post_fee) {
            Action::Surrender
        } else {
            Action::Excess
        }
    } else {
        Action::BelowGuarantee
    }
}

/// One withdrawal opportunity along a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub date: usize,
    pub account: f64,
    pub base: f64,
    pub guaranteed: f64,
    pub withdrawal: f64,
    pub action: Action,
}

/// Everything recorded while replaying one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub events: Vec<Event>,
    pub surrender_date: Option<usize>,
    /// Date of the final payment on an exhausted account, when the contract
    /// was priced with [`LowerBoundary::MaturityPayout`].
    pub lapse_date: Option<usize>,
    /// Cash-fund payout at maturity, after tax on the interest.
    pub cash_fund_payout: f64,
    /// Discounted value of all cash flows.
    pub present_value: f64,
    pub lookups: u64,
    pub clamped: u64,
}

/// Replays the policy in `solve` along one path of gross returns.
pub fn replay_path(
    returns: &[f64],
    solve: &SolveResult,
    spec: &ContractSpec,
    market: &MarketParams,
    lookup: PolicyLookup,
) -> Result<PathTrace> {
    let n = spec.num_periods();
    if returns.len() != n {
        return Err(GmwbError::ShapeMismatch {
            expected: (n, 1),
            found: (returns.len(), 1),
        });
    }
    let grid = &solve.grid;
    let r = market.risk_free;
    let growth = (spec.cash_rate * spec.period).exp();
    let mut state = ContractState::new(spec.premium, spec.premium);
    let mut trace = PathTrace {
        events: Vec::with_capacity(n - 1),
        surrender_date: None,
        lapse_date: None,
        cash_fund_payout: 0.0,
        present_value: 0.0,
        lookups: 0,
        clamped: 0,
    };
    let (mut balance, mut principal) = (0.0, 0.0);
    let lapses = grid.lower_boundary == LowerBoundary::MaturityPayout;

    for date in 1..n {
        state.account *= returns[date - 1];
        balance *= growth;
        if trace.surrender_date.is_some() || trace.lapse_date.is_some() {
            continue;
        }
        let terms = spec.terms(state);
        let (raw, clamped) = match lookup {
            PolicyLookup::Interpolated => grid.interpolate(&solve.policy(date)?.optimal, state.account, state.base),
            PolicyLookup::Reoptimized => {
                let post = solve.post_withdrawal(date).ok_or(GmwbError::NotWithdrawalDate(date))?;
                let d = decide(post, grid, spec, spec.deposit_factor(spec.time(date), market), solve.strategy, state);
                let outside = state.account > grid.x_max() || state.base > grid.gamma_max();
                (d.withdrawal, outside || d.clamped > 0)
            }
        };
        trace.lookups += 1;
        trace.clamped += clamped as u64;
        let mut w = raw.clamp(0.0, terms.max_withdrawal);
        let tol = CLASS_TOLERANCE * (1.0 + terms.guaranteed);
        for target in [0.0, terms.guaranteed, terms.max_withdrawal] {
            if (w - target).abs() <= tol {
                w = target;
            }
        }
        let action = classify(w, terms.guaranteed, terms.post_fee);
        trace.events.push(Event {
            date,
            account: state.account,
            base: state.base,
            guaranteed: terms.guaranteed,
            withdrawal: w,
            action,
        });

        let t = spec.time(date);
        trace.present_value += (-r * t).exp() * (1.0 - spec.tax_rate) * w;
        if spec.cash_fund {
            let deposit = (terms.guaranteed - w).max(0.0);
            balance += deposit;
            principal += deposit;
        }
        state = ContractState::new(terms.account_after(w), terms.base_after(w));
        if action == Action::Surrender {
            trace.surrender_date = Some(date);
        } else if lapses && state.account <= grid.x_min() {
            // The priced contract pays the maturity amount on an exhausted
            // account at the next date and ends there.
            let next = ContractState::new(grid.x_min(), state.base);
            trace.present_value += (-r * spec.time(date + 1)).exp() * spec.terminal_cashflow(next);
            trace.lapse_date = Some(date + 1);
        }
    }

    state.account *= returns[n - 1];
    balance *= growth;
    trace.cash_fund_payout = principal + (1.0 - spec.tax_rate) * (balance - principal);
    let terminal = if trace.surrender_date.is_some() || trace.lapse_date.is_some() { 0.0 } else { spec.terminal_cashflow(state) };
    trace.present_value += (-r * spec.maturity).exp() * (terminal + trace.cash_fund_payout);
    Ok(trace)
}

/// Shares of non-surrender withdrawal opportunities by kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithdrawalMix {
    pub none: f64,
    pub below: f64,
    pub at: f64,
    pub excess: f64,
}

/// Aggregate statistics of a policy replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub n_paths: usize,
    pub seed: u64,
    pub surrender_rate: f64,
    /// Mean surrender time in years over surrendering paths.
    pub avg_surrender_time: Option<f64>,
    /// Mean time in the contract in years, up to surrender or maturity.
    pub avg_duration: f64,
    pub mix: WithdrawalMix,
    pub mc_value: f64,
    pub mc_std_error: f64,
    pub lookups: u64,
    pub clamped: u64,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    total: f64,
    carry: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.total + v;
        if self.total.abs() >= v.abs() {
            self.carry += (self.total - t) + v;
        } else {
            self.carry += (v - t) + self.total;
        }
        self.total = t;
    }

    fn value(&self) -> f64 {
        self.total + self.carry
    }
}

/// Replays the policy on every path of `batch` and aggregates in path order.
pub fn run_policy(
    batch: &PathBatch,
    solve: &SolveResult,
    spec: &ContractSpec,
    market: &MarketParams,
) -> Result<ScenarioStats> {
    run_policy_with(batch, solve, spec, market, PolicyLookup::default())
}

pub fn run_policy_with(
    batch: &PathBatch,
    solve: &SolveResult,
    spec: &ContractSpec,
    market: &MarketParams,
    lookup: PolicyLookup,
) -> Result<ScenarioStats> {
    let traces: Vec<PathTrace> = (0..batch.n_paths())
        .into_par_iter()
        .map(|p| {
            let row = batch.returns.row(p);
            replay_path(row.as_slice().expect("row-major batch"), solve, spec, market, lookup)
        })
        .collect::<Result<_>>()?;

    let mut lookups = 0u64;
    let mut clamped = 0u64;
    let mut counts = [0u64; 4];
    let mut surrenders = 0usize;
    let (mut surrender_time, mut duration, mut pv, mut pv_sq) = (Sum::default(), Sum::default(), Sum::default(), Sum::default());
    for trace in &traces {
        lookups += trace.lookups;
        clamped += trace.clamped;
        for e in &trace.events {
            match e.action {
                Action::None => counts[0] += 1,
                Action::BelowGuarantee => counts[1] += 1,
                Action::AtGuarantee => counts[2] += 1,
                Action::Excess => counts[3] += 1,
                Action::Surrender => {}
            }
        }
        match trace.surrender_date {
            Some(d) => {
                surrenders += 1;
                surrender_time.add(spec.time(d));
                duration.add(spec.time(d));
            }
            None => duration.add(spec.maturity),
        }
        pv.add(trace.present_value);
        pv_sq.add(trace.present_value * trace.present_value);
    }
    if clamped as f64 > MAX_CLAMP_SHARE * lookups as f64 {
        return Err(GmwbError::ExcessiveClamping { clamped, lookups });
    }

    let n = traces.len() as f64;
    let opportunities: u64 = counts.iter().sum();
    let share = |c: u64| if opportunities == 0 { 0.0 } else { c as f64 / opportunities as f64 };
    let mean = pv.value() / n;
    let variance = if traces.len() > 1 {
        ((pv_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(ScenarioStats {
        n_paths: traces.len(),
        seed: batch.seed,
        surrender_rate: surrenders as f64 / n,
        avg_surrender_time: (surrenders > 0).then(|| surrender_time.value() / surrenders as f64),
        avg_duration: duration.value() / n,
        mix: WithdrawalMix {
            none: share(counts[0]),
            below: share(counts[1]),
            at: share(counts[2]),
            excess: share(counts[3]),
        },
        mc_value: mean,
        mc_std_error: (variance / n).sqrt(),
        lookups,
        clamped,
    })
}

/// Grid-aligned ratio surfaces `w*/g` and `w*/w̄` at one withdrawal date.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSurfaces {
    pub date: usize,
    pub x: Vec<f64>,
    pub gamma: Vec<f64>,
    pub to_guaranteed: Array2<f64>,
    pub to_max: Array2<f64>,
}

pub fn policy_ratio_export(solve: &SolveResult, date: usize) -> Result<RatioSurfaces> {
    let policy = solve.policy(date)?;
    Ok(RatioSurfaces {
        date,
        x: solve.grid.x.clone(),
        gamma: solve.grid.gamma.clone(),
        to_guaranteed: policy.ratio_to_guaranteed(),
        to_max: policy.ratio_to_max(),
    })
}
