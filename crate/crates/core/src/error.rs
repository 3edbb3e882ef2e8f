use thiserror::Error;

/// Errors raised by the valuation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmwbError {
    #[error("invalid contract specification: {0}")]
    InvalidContract(String),

    #[error("invalid market parameters: {0}")]
    InvalidMarket(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("inadmissible withdrawal {amount} (admissible range [0, {max}])")]
    InadmissibleWithdrawal { amount: f64, max: f64 },

    #[error("excess withdrawal requested while post-fee account {post_fee} does not exceed guarantee {guaranteed}")]
    ExcessWithoutHeadroom { post_fee: f64, guaranteed: f64 },

    #[error("surface shape {found:?} does not match grid {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("singular tridiagonal system at row {0}")]
    SingularSystem(usize),

    #[error("{0} is not a withdrawal date")]
    NotWithdrawalDate(usize),

    #[error("invalid fee sweep: {0}")]
    InvalidSweep(String),

    #[error("fee calibration did not reach tolerance: gap {gap} at {fee_bps} bps")]
    CalibrationTolerance { fee_bps: f64, gap: f64 },

    #[error("grid clamping on {clamped} of {lookups} policy lookups exceeds the permitted share")]
    ExcessiveClamping { clamped: u64, lookups: u64 },
}

pub type Result<T> = std::result::Result<T, GmwbError>;
