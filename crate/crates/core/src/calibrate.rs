//! Fair-fee search.
//!
//! The premium gap `G(φ) = P0 − V₀(P0, P0; φ)` is tabulated on an equally
//! spaced fee sweep, the bracketing interval is re-swept at the same
//! density, and the root of a natural cubic spline through the local points
//! is taken as the fair fee. The root is then re-valued and must reproduce
//! the premium to within `1e-4·P0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{ContractSpec, MarketParams};
use crate::dp::{value_contract, Strategy};
use crate::error::{GmwbError, Result};
use crate::grid::GridSpec;
use crate::spline::NaturalSpline;

/// Relative tolerance on the re-valued premium at the fair fee.
pub const ROOT_TOLERANCE: f64 = 1e-4;

/// Fee range in basis points and the number of equally spaced points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeeSweep {
    pub lo_bps: f64,
    pub hi_bps: f64,
    pub count: usize,
}

impl Default for FeeSweep {
    fn default() -> Self {
        Self {
            lo_bps: 0.0,
            hi_bps: 400.0,
            count: 21,
        }
    }
}

impl FeeSweep {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo_bps >= 0.0 && self.hi_bps > self.lo_bps && self.hi_bps.is_finite()) {
            return Err(GmwbError::InvalidSweep(format!(
                "need 0 ≤ lo < hi, got [{}, {}] bps",
                self.lo_bps, self.hi_bps
            )));
        }
        if self.count < 4 {
            return Err(GmwbError::InvalidSweep(format!("count {} is below 4", self.count)));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        spaced(self.lo_bps, self.hi_bps, self.count)
    }
}

fn spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let last = (count - 1) as f64;
    (0..count)
        .map(|i| if i + 1 == count { hi } else { lo + (hi - lo) * i as f64 / last })
        .collect()
}

/// One valuation on a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fee_bps: f64,
    pub value: f64,
    /// `P0 − V₀`.
    pub gap: f64,
}

/// Sweeps tabulated during a search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub coarse: Vec<SweepPoint>,
    pub refined: Vec<SweepPoint>,
}

impl SweepRecord {
    /// Whether the gap is strictly increasing in the fee on every sweep.
    pub fn is_monotone(&self) -> bool {
        let up = |s: &[SweepPoint]| s.windows(2).all(|w| w[1].gap > w[0].gap);
        up(&self.coarse) && up(&self.refined)
    }

    /// Sign changes of the gap along the coarse sweep.
    pub fn sign_changes(&self) -> usize {
        self.coarse
            .windows(2)
            .filter(|w| (w[0].gap > 0.0) != (w[1].gap > 0.0))
            .count()
    }
}

/// Result of a fair-fee search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeeOutcome {
    Fair {
        fee_bps: f64,
        /// `V₀ − P0` on re-valuation at `fee_bps`.
        residual: f64,
        sweeps: SweepRecord,
    },
    /// Even the lowest fee leaves the contract worth less than the premium.
    NotViable { sweeps: SweepRecord },
    /// The contract is worth more than the premium across the whole sweep.
    CapTooLow { sweeps: SweepRecord },
}

impl FeeOutcome {
    pub fn fee_bps(&self) -> Option<f64> {
        match self {
            FeeOutcome::Fair { fee_bps, .. } => Some(*fee_bps),
            _ => None,
        }
    }

    pub fn sweeps(&self) -> &SweepRecord {
        match self {
            FeeOutcome::Fair { sweeps, .. } | FeeOutcome::NotViable { sweeps } | FeeOutcome::CapTooLow { sweeps } => {
                sweeps
            }
        }
    }
}

/// Inception value at a fee given in basis points.
pub fn value_at_fee(
    spec: &ContractSpec,
    market: &MarketParams,
    grid: &GridSpec,
    strategy: Strategy,
    fee_bps: f64,
) -> Result<f64> {
    let spec = ContractSpec {
        fee: fee_bps * 1e-4,
        ..*spec
    };
    Ok(value_contract(&spec, market, grid, strategy)?.value_at_inception)
}

fn tabulate(
    spec: &ContractSpec,
    market: &MarketParams,
    grid: &GridSpec,
    strategy: Strategy,
    fees: &[f64],
) -> Result<Vec<SweepPoint>> {
    fees.par_iter()
        .map(|&fee_bps| {
            let value = value_at_fee(spec, market, grid, strategy, fee_bps)?;
            Ok(SweepPoint {
                fee_bps,
                value,
                gap: spec.premium - value,
            })
        })
        .collect()
}

/// Searches for the fee at which the inception value equals the premium.
/// The fee stored in `spec` is ignored.
pub fn fair_fee(
    spec: &ContractSpec,
    market: &MarketParams,
    grid: &GridSpec,
    strategy: Strategy,
    sweep: &FeeSweep,
) -> Result<FeeOutcome> {
    sweep.validate()?;
    let fees = sweep.points();
    let mut sweeps = SweepRecord::default();

    // The lowest fee decides viability before the rest is priced.
    let first = tabulate(spec, market, grid, strategy, &fees[..1])?;
    sweeps.coarse = first;
    if sweeps.coarse[0].gap > 0.0 {
        return Ok(FeeOutcome::NotViable { sweeps });
    }
    let rest = tabulate(spec, market, grid, strategy, &fees[1..])?;
    sweeps.coarse.extend(rest);

    let Some(k) = sweeps.coarse.iter().position(|p| p.gap >= 0.0) else {
        return Ok(FeeOutcome::CapTooLow { sweeps });
    };
    if sweeps.coarse[k].gap == 0.0 {
        let fee_bps = sweeps.coarse[k].fee_bps;
        return Ok(FeeOutcome::Fair {
            fee_bps,
            residual: 0.0,
            sweeps,
        });
    }
    let (a, b) = (sweeps.coarse[k - 1].fee_bps, sweeps.coarse[k].fee_bps);

    let local = spaced(a, b, sweep.count);
    let inner = tabulate(spec, market, grid, strategy, &local[1..local.len() - 1])?;
    sweeps.refined = std::iter::once(sweeps.coarse[k - 1])
        .chain(inner)
        .chain(std::iter::once(sweeps.coarse[k]))
        .collect();

    let x: Vec<f64> = sweeps.refined.iter().map(|p| p.fee_bps).collect();
    let y: Vec<f64> = sweeps.refined.iter().map(|p| p.gap).collect();
    let spline = NaturalSpline::new(&x, &y)?;
    let fee_bps = spline
        .first_root(a, b)
        .ok_or_else(|| GmwbError::InvalidSweep(format!("no spline root in [{a}, {b}] bps")))?;

    let residual = value_at_fee(spec, market, grid, strategy, fee_bps)? - spec.premium;
    if residual.abs() > ROOT_TOLERANCE * spec.premium {
        return Err(GmwbError::CalibrationTolerance { fee_bps, gap: residual });
    }
    Ok(FeeOutcome::Fair {
        fee_bps,
        residual,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridConfig};

    #[test]
    fn sweep_points_and_validation() {
        let s = FeeSweep::default();
        let p = s.points();
        assert_eq!(p.len(), 21);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[20], 400.0);
        assert!((p[1] - 20.0).abs() < 1e-12);
        assert!(FeeSweep { count: 3, ..s }.validate().is_err());
        assert!(FeeSweep { lo_bps: -1.0, ..s }.validate().is_err());
        assert!(FeeSweep { lo_bps: 50.0, hi_bps: 50.0, ..s }.validate().is_err());
    }

    #[test]
    fn record_diagnostics() {
        let pt = |fee_bps, gap| SweepPoint { fee_bps, value: 100.0 - gap, gap };
        let rec = SweepRecord {
            coarse: vec![pt(0.0, -2.0), pt(1.0, -1.0), pt(2.0, 0.5), pt(3.0, 1.0)],
            refined: vec![],
        };
        assert!(rec.is_monotone());
        assert_eq!(rec.sign_changes(), 1);
        let bent = SweepRecord {
            coarse: vec![pt(0.0, -2.0), pt(1.0, 1.0), pt(2.0, -0.5)],
            refined: vec![],
        };
        assert!(!bent.is_monotone());
        assert_eq!(bent.sign_changes(), 2);
    }

    #[test]
    fn short_contract_calibrates_and_reports_edges() {
        let spec = ContractSpec {
            maturity: 3.0,
            ..ContractSpec::default()
        };
        let market = MarketParams::default();
        let grid = build_grid(&spec, &GridConfig::default()).unwrap();
        let sweep = FeeSweep {
            count: 6,
            ..FeeSweep::default()
        };
        let out = fair_fee(&spec, &market, &grid, Strategy::Static, &sweep).unwrap();
        let FeeOutcome::Fair { fee_bps, residual, sweeps } = &out else {
            panic!("{out:?}")
        };
        let fee_bps = *fee_bps;
        assert!(fee_bps > 0.0 && fee_bps < 400.0, "{fee_bps}");
        assert!(residual.abs() <= ROOT_TOLERANCE * spec.premium);
        assert!(sweeps.is_monotone());
        assert_eq!(sweeps.refined.len(), 6);

        let taxed = ContractSpec { tax_rate: 0.3, ..spec };
        let out = fair_fee(&taxed, &market, &grid, Strategy::Static, &sweep).unwrap();
        assert!(matches!(&out, FeeOutcome::NotViable { sweeps } if sweeps.coarse.len() == 1));

        let capped = FeeSweep {
            hi_bps: 0.5 * fee_bps,
            ..sweep
        };
        let out = fair_fee(&spec, &market, &grid, Strategy::Static, &capped).unwrap();
        assert!(matches!(out, FeeOutcome::CapTooLow { .. }));
    }
}
