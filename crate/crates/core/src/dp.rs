//! Backward induction over withdrawal dates.
//!
//! Starting from the maturity payout, each period is rolled back with the
//! PDE solver ([`step_period`]) and the withdrawal decision at the date is
//! applied as a jump condition: at every mesh node the admissible interval
//! `[0, w̄]` is sampled, the post-withdrawal state is looked up in the
//! continuation surface by bilinear interpolation, and the best withdrawal
//! is kept.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{ContractSpec, ContractState, MarketParams, WithdrawalTerms};
use crate::error::{GmwbError, Result};
use crate::grid::{GridSpec, Side, ValueSurface};
use crate::pde::step_period;

/// Uniform points laid on `[0, w̄]` before the distinguished actions are added.
pub const WITHDRAWAL_POINTS: usize = 81;

/// Relative tolerance under which two candidate values count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

/// Withdrawal behaviour of the policyholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Withdraw exactly the guaranteed amount at every date.
    Static,
    /// Withdraw whatever maximises the contract value.
    Dynamic,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Static => write!(f, "static"),
            Strategy::Dynamic => write!(f, "dynamic"),
        }
    }
}

/// Optimal withdrawals on the mesh at one withdrawal date, with the
/// guaranteed and maximum amounts they are measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySurface {
    pub date: usize,
    pub optimal: Array2<f64>,
    pub guaranteed: Array2<f64>,
    pub max_withdrawal: Array2<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl PolicySurface {
    /// `w*/g` at each node, with `0/0 = 0`.
    pub fn ratio_to_guaranteed(&self) -> Array2<f64> {
        ndarray::Zip::from(&self.optimal)
            .and(&self.guaranteed)
            .map_collect(|&w, &g| ratio(w, g))
    }

    /// `w*/w̄` at each node, with `0/0 = 0`.
    pub fn ratio_to_max(&self) -> Array2<f64> {
        ndarray::Zip::from(&self.optimal)
            .and(&self.max_withdrawal)
            .map_collect(|&w, &m| ratio(w, m))
    }
}

/// Output of a full backward induction.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value_at_inception: f64,
    pub strategy: Strategy,
    pub grid: GridSpec,
    /// Continuation surface at `t_0`.
    pub inception: ValueSurface,
    /// Pre-withdrawal surfaces for dates `1..=N` (maturity last).
    pub pre: Vec<ValueSurface>,
    /// Post-withdrawal surfaces for dates `1..N`.
    pub post: Vec<ValueSurface>,
    /// Policies for dates `1..N`.
    pub policies: Vec<PolicySurface>,
    /// Interpolation queries that fell outside the mesh and were clamped.
    pub clamp_count: u64,
}

impl SolveResult {
    pub fn policy(&self, date: usize) -> Result<&PolicySurface> {
        self.policies
            .iter()
            .find(|p| p.date == date)
            .ok_or(GmwbError::NotWithdrawalDate(date))
    }

    pub fn pre_withdrawal(&self, date: usize) -> Option<&ValueSurface> {
        self.pre.iter().find(|s| s.date == date)
    }

    pub fn post_withdrawal(&self, date: usize) -> Option<&ValueSurface> {
        self.post.iter().find(|s| s.date == date)
    }
}

/// Candidate withdrawals: `WITHDRAWAL_POINTS` uniform points on `[0, w̄]`
/// together with `0`, `g` and `w̄` exactly, ascending and deduplicated.
pub fn withdrawal_grid(terms: &WithdrawalTerms) -> Vec<f64> {
    let top = terms.max_withdrawal;
    if top <= 0.0 {
        return vec![0.0];
    }
    let last = (WITHDRAWAL_POINTS - 1) as f64;
    let mut points: Vec<f64> = (0..WITHDRAWAL_POINTS)
        .map(|i| top * (i as f64 / last))
        .collect();
    points.push(terms.guaranteed);
    points.sort_by(f64::total_cmp);
    let eps = 1e-12 * (1.0 + top);
    let mut out: Vec<f64> = Vec::with_capacity(points.len());
    for p in points {
        match out.last_mut() {
            Some(prev) if p - *prev <= eps => {
                // Keep the distinguished value when a uniform point nearly
                // coincides with it.
                if p == terms.guaranteed {
                    *prev = p;
                }
            }
            _ => out.push(p),
        }
    }
    out
}

/// Maturity payout on the mesh.
pub fn terminal_surface(spec: &ContractSpec, grid: &GridSpec) -> ValueSurface {
    let values = Array2::from_shape_fn(grid.shape(), |(i, j)| {
        spec.terminal_cashflow(ContractState::new(grid.x[i], grid.gamma[j]))
    });
    ValueSurface::new(values, spec.num_periods(), Side::Pre)
}

/// Result of applying the jump condition at one date.
#[derive(Debug, Clone)]
pub struct Jump {
    pub pre: ValueSurface,
    pub policy: PolicySurface,
    pub clamp_count: u64,
}

/// Outcome of the withdrawal decision at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub value: f64,
    pub withdrawal: f64,
    pub terms: WithdrawalTerms,
    /// Continuation lookups that fell outside the mesh.
    pub clamped: u64,
}

/// Best withdrawal at an arbitrary pre-withdrawal state, with `V_plus`
/// interpolated bilinearly and `h^X` floored at `x_min`. Ties go to the
/// smallest withdrawal.
pub fn decide(
    post: &ValueSurface,
    grid: &GridSpec,
    spec: &ContractSpec,
    deposit_factor: f64,
    strategy: Strategy,
    state: ContractState,
) -> Decision {
    let terms = spec.terms(state);
    let x_floor = grid.x_min();
    let mut clamped = 0u64;
    let mut continuation = |w: f64| -> f64 {
        let x_next = terms.account_after(w).max(x_floor);
        let (v, c) = grid.interpolate(&post.values, x_next, terms.base_after(w));
        clamped += c as u64;
        spec.running_cashflow_with(&terms, w, deposit_factor) + v
    };
    let (value, withdrawal) = match strategy {
        Strategy::Static => (continuation(terms.guaranteed), terms.guaranteed),
        Strategy::Dynamic => {
            let candidates = withdrawal_grid(&terms);
            let values: Vec<f64> = candidates.iter().map(|&w| continuation(w)).collect();
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let cutoff = best - TIE_TOLERANCE * (1.0 + best.abs());
            let pick = values.iter().position(|&v| v >= cutoff).unwrap_or(0);
            (values[pick], candidates[pick])
        }
    };
    Decision {
        value,
        withdrawal,
        terms,
        clamped,
    }
}

/// Applies the withdrawal decision at `date` to the post-withdrawal surface.
pub fn apply_jump(
    post: &ValueSurface,
    date: usize,
    spec: &ContractSpec,
    market: &MarketParams,
    grid: &GridSpec,
    strategy: Strategy,
) -> Result<Jump> {
    post.check(grid)?;
    let n = spec.num_periods();
    if date == 0 || date >= n {
        return Err(GmwbError::NotWithdrawalDate(date));
    }
    let deposit_factor = spec.deposit_factor(spec.time(date), market);
    let at_node = |i: usize, j: usize| {
        decide(post, grid, spec, deposit_factor, strategy, ContractState::new(grid.x[i], grid.gamma[j]))
    };

    let (nx, ng) = grid.shape();
    let columns: Vec<Vec<Decision>> = (0..ng)
        .into_par_iter()
        .map(|j| (0..nx).map(|i| at_node(i, j)).collect())
        .collect();

    let pick = |f: fn(&Decision) -> f64| Array2::from_shape_fn((nx, ng), |(i, j)| f(&columns[j][i]));
    let values = pick(|d| d.value);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GmwbError::NonFinite("jump condition"));
    }
    Ok(Jump {
        pre: ValueSurface::new(values, date, Side::Pre),
        policy: PolicySurface {
            date,
            optimal: pick(|d| d.withdrawal),
            guaranteed: pick(|d| d.terms.guaranteed),
            max_withdrawal: pick(|d| d.terms.max_withdrawal),
        },
        clamp_count: columns.iter().flatten().map(|d| d.clamped).sum(),
    })
}

/// Values the contract by backward induction from maturity to inception.
///
/// No fee or withdrawal occurs at `t_0`, so the inception value is the
/// continuation value of the first period.
pub fn value_contract(
    spec: &ContractSpec,
    market: &MarketParams,
    grid: &GridSpec,
    strategy: Strategy,
) -> Result<SolveResult> {
    spec.validate()?;
    market.validate()?;
    grid.validate()?;
    let n = spec.num_periods();

    let mut pre = vec![terminal_surface(spec, grid)];
    let mut post = Vec::with_capacity(n - 1);
    let mut policies = Vec::with_capacity(n - 1);
    let mut clamp_count = 0;
    for date in (1..n).rev() {
        let rolled = step_period(pre.last().expect("non-empty"), spec, market, grid)?;
        let jump = apply_jump(&rolled, date, spec, market, grid, strategy)?;
        clamp_count += jump.clamp_count;
        post.push(rolled);
        pre.push(jump.pre);
        policies.push(jump.policy);
    }
    let inception = step_period(pre.last().expect("non-empty"), spec, market, grid)?;
    let (value_at_inception, _) = grid.interpolate(&inception.values, spec.premium, spec.premium);
    if !(value_at_inception.is_finite() && value_at_inception >= 0.0) {
        return Err(GmwbError::NonFinite("inception value"));
    }

    pre.reverse();
    post.reverse();
    policies.reverse();
    Ok(SolveResult {
        value_at_inception,
        strategy,
        grid: grid.clone(),
        inception,
        pre,
        post,
        policies,
        clamp_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridConfig};

    fn setup(spec: ContractSpec) -> (ContractSpec, MarketParams, GridSpec) {
        let grid = build_grid(&spec, &GridConfig::default()).unwrap();
        (spec, MarketParams::default(), grid)
    }

    #[test]
    fn withdrawal_grid_contains_distinguished_points() {
        let spec = ContractSpec::default();
        let terms = spec.terms(ContractState::new(150.0, 100.0));
        let w = withdrawal_grid(&terms);
        assert_eq!(w[0], 0.0);
        assert_eq!(*w.last().unwrap(), terms.max_withdrawal);
        assert!(w.contains(&terms.guaranteed));
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        assert!(w.len() == WITHDRAWAL_POINTS || w.len() == WITHDRAWAL_POINTS + 1);
        assert_eq!(withdrawal_grid(&spec.terms(ContractState::new(0.0, 0.0))), vec![0.0]);
    }

    #[test]
    fn terminal_surface_nodes() {
        let spec = ContractSpec {
            fee: 0.01,
            ..ContractSpec::default()
        };
        let (spec, _, grid) = setup(spec);
        let surf = terminal_surface(&spec, &grid);
        let last = grid.x.len() - 1;
        assert!((surf.values[[last, 0]] - 495.0).abs() < 1e-9);
        let j = grid.gamma.iter().position(|&g| g == 100.0).unwrap();
        assert!((surf.values[[0, j]] - 10.0).abs() < 1e-12);

        let taxed = ContractSpec {
            tax_rate: 0.2,
            fee: 0.0,
            ..ContractSpec::default()
        };
        assert!((taxed.terminal_cashflow(ContractState::new(200.0, 100.0)) - 160.0).abs() < 1e-12);
    }

    #[test]
    fn zero_continuation_takes_everything() {
        let spec = ContractSpec {
            cash_fund: false,
            ..ContractSpec::default()
        };
        let (spec, market, grid) = setup(spec);
        let zero = ValueSurface::new(Array2::zeros(grid.shape()), 5, Side::Post);
        let jump = apply_jump(&zero, 5, &spec, &market, &grid, Strategy::Dynamic).unwrap();
        for ((i, j), &w) in jump.policy.optimal.indexed_iter() {
            let w_max = jump.policy.max_withdrawal[[i, j]];
            assert_eq!(w, w_max);
            assert_eq!(jump.pre.values[[i, j]], w_max);
        }
    }

    #[test]
    fn static_jump_is_definitional() {
        let (spec, market, grid) = setup(ContractSpec::default());
        let post = ValueSurface::new(
            Array2::from_shape_fn(grid.shape(), |(i, j)| 0.7 * grid.x[i] + 0.2 * grid.gamma[j]),
            4,
            Side::Post,
        );
        let jump = apply_jump(&post, 4, &spec, &market, &grid, Strategy::Static).unwrap();
        for &(i, j) in &[(10, 10), (40, 20), (3, 70), (79, 79)] {
            let state = ContractState::new(grid.x[i], grid.gamma[j]);
            let terms = spec.terms(state);
            let g = terms.guaranteed;
            let c = spec.running_cashflow(spec.time(4), state, g, &market).unwrap();
            let x_next = spec.post_withdrawal_account(state, g).unwrap().max(grid.x_min());
            let expected = c + post.at(&grid, x_next, terms.ratcheted_base);
            assert!((jump.pre.values[[i, j]] - expected).abs() < 1e-12);
            assert_eq!(jump.policy.optimal[[i, j]], g);
        }
    }

    #[test]
    fn jump_rejects_non_withdrawal_dates() {
        let (spec, market, grid) = setup(ContractSpec::default());
        let zero = ValueSurface::new(Array2::zeros(grid.shape()), 0, Side::Post);
        for date in [0, 10, 11] {
            assert!(matches!(
                apply_jump(&zero, date, &spec, &market, &grid, Strategy::Dynamic),
                Err(GmwbError::NotWithdrawalDate(_))
            ));
        }
    }

    #[test]
    fn ratios_follow_conventions() {
        let policy = PolicySurface {
            date: 1,
            optimal: ndarray::arr2(&[[10.0, 120.0, 0.0, 0.0]]),
            guaranteed: ndarray::arr2(&[[10.0, 12.0, 10.0, 0.0]]),
            max_withdrawal: ndarray::arr2(&[[80.0, 120.0, 50.0, 0.0]]),
        };
        assert_eq!(policy.ratio_to_guaranteed(), ndarray::arr2(&[[1.0, 10.0, 0.0, 0.0]]));
        assert_eq!(policy.ratio_to_max(), ndarray::arr2(&[[0.125, 1.0, 0.0, 0.0]]));
    }
}
