//! Per-period continuation values by the method of lines.
//!
//! Between two event dates the benefit base is frozen, so each γ-slice of the
//! value surface evolves independently under the discounted Black-Scholes
//! operator in the account variable. In time-to-go `τ` the problem reads
//!
//! ```text
//! U_τ = ½(ϱσx)² U_xx + r x U_x − r U,    U(0, x) = V_{k+1}^-(x)
//! ```
//!
//! Time is discretised by backward differences (two implicit Euler steps,
//! then the three-level BDF2 formula). Each step leaves a linear two-point
//! boundary-value problem `a U'' + b U' − c_n U = F_n`, solved here with
//! second-order finite differences and the Thomas algorithm. The drift is
//! upwinded wherever central differencing would lose the M-matrix property.
//!
//! Boundaries: Dirichlet `e^{−rτ}·B(γ)` at `x_min`, where `B` is chosen by
//! [`LowerBoundary`] (the maturity payout of an empty account, or the
//! lower-edge value of the surface being rolled back), and `U'' = 0` at
//! `x_max`, imposed by linear extrapolation of the last two interior nodes.

use ndarray::Array2;
use rayon::prelude::*;

use crate::contract::{ContractSpec, ContractState, MarketParams};
use crate::error::{GmwbError, Result};
use crate::grid::{GridSpec, LowerBoundary, Side, ValueSurface};

/// Floor on the diffusion coefficient, keeping the ODE non-degenerate near 0.
const MIN_DIFFUSION: f64 = 1e-6;

/// Spatial operator `a ∂xx + b ∂x` at interior nodes, as tridiagonal rows.
struct Operator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Operator {
    fn new(x: &[f64], rate: f64, vol: f64) -> Self {
        let m = x.len();
        let mut op = Operator {
            lower: vec![0.0; m],
            diag: vec![0.0; m],
            upper: vec![0.0; m],
        };
        for i in 1..m - 1 {
            let hm = x[i] - x[i - 1];
            let hp = x[i + 1] - x[i];
            let a = (0.5 * (vol * x[i]).powi(2)).max(MIN_DIFFUSION);
            let b = rate * x[i];
            let span = hm + hp;
            let dl = 2.0 * a / (hm * span);
            let du = 2.0 * a / (hp * span);
            let cl = -b * hp / (hm * span);
            let cu = b * hm / (hp * span);
            let cd = b * (hp - hm) / (hm * hp);
            if dl + cl >= 0.0 {
                op.lower[i] = dl + cl;
                op.upper[i] = du + cu;
                op.diag[i] = -(dl + du) + cd;
            } else {
                op.lower[i] = dl;
                op.upper[i] = du + b / hp;
                op.diag[i] = -(dl + du) - b / hp;
            }
        }
        op
    }
}

/// Solves `lower[i]·u[i-1] + diag[i]·u[i] + upper[i]·u[i+1] = rhs[i]` in place
/// (the solution overwrites `rhs`). `scratch` must have the same length.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) -> Result<()> {
    let n = rhs.len();
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(GmwbError::SingularSystem(0));
    }
    rhs[0] /= pivot;
    for i in 1..n {
        scratch[i] = upper[i - 1] / pivot;
        pivot = diag[i] - lower[i] * scratch[i];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(GmwbError::SingularSystem(i));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
    Ok(())
}

fn solve_slice(
    initial: Vec<f64>,
    bottom: f64,
    x: &[f64],
    op: &Operator,
    rate: f64,
    period: f64,
    n_tau: usize,
) -> Result<Vec<f64>> {
    let m = initial.len();
    let last = m - 1;
    // U_last = (1 + ρ) U_{last-1} − ρ U_{last-2}
    let rho = (x[last] - x[last - 1]) / (x[last - 1] - x[last - 2]);
    let dtau = period / n_tau as f64;

    // Unknowns are nodes 1..last-1; the top node follows by extrapolation.
    let k = m - 2;
    let mut lower = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    let mut scratch = vec![0.0; k];

    let mut older = initial.clone();
    let mut prev = initial;
    let mut next = vec![0.0; m];

    for n in 1..=n_tau {
        let three_level = n >= 3;
        let c = if three_level { rate + 1.5 / dtau } else { rate + 1.0 / dtau };
        let boundary = (-rate * dtau * n as f64).exp() * bottom;
        for r in 0..k {
            let i = r + 1;
            lower[r] = op.lower[i];
            diag[r] = op.diag[i] - c;
            upper[r] = op.upper[i];
            rhs[r] = if three_level {
                -(4.0 * prev[i] - older[i]) / (2.0 * dtau)
            } else {
                -prev[i] / dtau
            };
        }
        rhs[0] -= lower[0] * boundary;
        lower[0] = 0.0;
        let top = op.upper[last - 1];
        diag[k - 1] += (1.0 + rho) * top;
        if k >= 2 {
            lower[k - 1] -= rho * top;
        } else {
            rhs[0] += rho * top * boundary;
        }
        upper[k - 1] = 0.0;

        thomas(&lower, &diag, &upper, &mut rhs, &mut scratch)?;

        next[0] = boundary;
        next[1..=k].copy_from_slice(&rhs);
        next[last] = (1.0 + rho) * next[last - 1] - rho * next[last - 2];

        std::mem::swap(&mut older, &mut prev);
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(prev)
}

/// Rolls the pre-withdrawal surface at `t_{k+1}^-` back one period to the
/// post-withdrawal surface at `t_k^+`.
pub fn step_period(
    next: &ValueSurface,
    spec: &ContractSpec,
    market: &MarketParams,
    grid: &GridSpec,
) -> Result<ValueSurface> {
    next.check(grid)?;
    let (nx, ng) = grid.shape();
    if nx < 3 {
        return Err(GmwbError::InvalidGrid("the PDE solver needs at least 3 account nodes".into()));
    }
    let rate = market.risk_free;
    let op = Operator::new(&grid.x, rate, market.effective_volatility());

    let slices: Vec<Vec<f64>> = (0..ng)
        .into_par_iter()
        .map(|j| {
            let bottom = match grid.lower_boundary {
                LowerBoundary::MaturityPayout => spec.terminal_cashflow(ContractState::new(grid.x_min(), grid.gamma[j])),
                LowerBoundary::Carried => next.values[[0, j]],
            };
            solve_slice(next.values.column(j).to_vec(), bottom, &grid.x, &op, rate, spec.period, grid.n_tau)
        })
        .collect::<Result<_>>()?;

    let values = Array2::from_shape_fn((nx, ng), |(i, j)| slices[j][i]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GmwbError::NonFinite("PDE solution"));
    }
    Ok(ValueSurface::new(values, next.date.saturating_sub(1), Side::Post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridConfig};

    fn setup() -> (ContractSpec, MarketParams, GridSpec) {
        let spec = ContractSpec::default();
        let market = MarketParams::default();
        let grid = build_grid(&spec, &GridConfig::default()).unwrap();
        (spec, market, grid)
    }

    #[test]
    fn thomas_solves_small_system() {
        // [2 1 0; 1 3 1; 0 1 2] u = [3, 5, 3] → u = [1, 1, 1]
        let lower = [0.0, 1.0, 1.0];
        let diag = [2.0, 3.0, 2.0];
        let upper = [1.0, 1.0, 0.0];
        let mut rhs = [3.0, 5.0, 3.0];
        let mut scratch = [0.0; 3];
        thomas(&lower, &diag, &upper, &mut rhs, &mut scratch).unwrap();
        for u in rhs {
            assert!((u - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn thomas_reports_singular_pivot() {
        let mut rhs = [1.0, 1.0];
        let mut scratch = [0.0; 2];
        let err = thomas(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &mut rhs, &mut scratch);
        assert_eq!(err, Err(GmwbError::SingularSystem(0)));
    }

    #[test]
    fn operator_rows_annihilate_constants_and_lines() {
        let (_, market, grid) = setup();
        let op = Operator::new(&grid.x, market.risk_free, market.effective_volatility());
        for i in 1..grid.x.len() - 1 {
            let sum = op.lower[i] + op.diag[i] + op.upper[i];
            assert!(sum.abs() < 1e-9 * op.diag[i].abs().max(1.0));
            let slope = op.lower[i] * grid.x[i - 1] + op.diag[i] * grid.x[i] + op.upper[i] * grid.x[i + 1];
            let expected = market.risk_free * grid.x[i];
            assert!((slope - expected).abs() < 1e-8 * (1.0 + expected), "row {i}: {slope} vs {expected}");
            assert!(op.lower[i] >= 0.0 && op.upper[i] >= 0.0);
        }
    }

    #[test]
    fn rejects_mismatched_surface() {
        let (spec, market, grid) = setup();
        let bad = ValueSurface::new(Array2::zeros((3, 3)), 1, Side::Pre);
        assert!(matches!(
            step_period(&bad, &spec, &market, &grid),
            Err(GmwbError::ShapeMismatch { .. })
        ));
        let mut nan = ValueSurface::new(Array2::zeros(grid.shape()), 1, Side::Pre);
        nan.values[[3, 3]] = f64::NAN;
        assert_eq!(step_period(&nan, &spec, &market, &grid), Err(GmwbError::NonFinite("value surface")));
    }
}
