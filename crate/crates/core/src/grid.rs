//! State-space mesh over (account, benefit base) and surfaces defined on it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::contract::ContractSpec;
use crate::error::{GmwbError, Result};

/// Default gap growth factor of the account axis.
pub const DEFAULT_RATIO: f64 = 1.05;

/// Node placement along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Spacing {
    #[default]
    Uniform,
    /// Gaps grow by a constant factor `ratio` moving away from the premium
    /// node in both directions (from the lower end if the premium lies
    /// outside the axis).
    Geometric { ratio: f64 },
}

/// Value imposed at the lowest account node during each period solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundary {
    /// Discounted maturity payout of an empty account, `e^{−rτ}·D(0, γ)`,
    /// in every period. Exact in the final period; earlier periods ignore
    /// the guaranteed withdrawals still owed on an exhausted account.
    #[default]
    MaturityPayout,
    /// Discounted lower-edge value of the surface being rolled back. An
    /// empty account stays empty, so this is exact in every period.
    Carried,
}

/// User-facing mesh configuration. Bounds left as `None` default to five
/// times the premium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_gamma: usize,
    pub n_tau: usize,
    pub x_min: f64,
    pub x_max: Option<f64>,
    pub gamma_max: Option<f64>,
    pub spacing: Spacing,
    pub gamma_spacing: Spacing,
    pub lower_boundary: LowerBoundary,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_x: 80,
            n_gamma: 80,
            n_tau: 50,
            x_min: 1e-6,
            x_max: None,
            gamma_max: None,
            spacing: Spacing::Geometric { ratio: DEFAULT_RATIO },
            gamma_spacing: Spacing::Uniform,
            lower_boundary: LowerBoundary::default(),
        }
    }
}

/// Resolved mesh: node coordinates along both axes plus the number of time
/// steps used per period by the PDE solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n_tau: usize,
    pub lower_boundary: LowerBoundary,
}

fn axis(lo: f64, hi: f64, n: usize, spacing: Spacing, anchor: f64) -> Result<Vec<f64>> {
    let mut nodes: Vec<f64> = match spacing {
        Spacing::Uniform => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
        Spacing::Geometric { ratio } => {
            if !(ratio.is_finite() && ratio >= 1.0) {
                return Err(GmwbError::InvalidGrid(format!("geometric ratio {ratio} must be at least 1")));
            }
            if anchor > lo && anchor < hi && n >= 3 {
                anchored_geometric(lo, hi, n, ratio, anchor)
            } else {
                let mut nodes = vec![lo];
                nodes.extend(stretch(lo, hi, n - 1, ratio));
                nodes
            }
        }
    };
    if let Spacing::Uniform = spacing {
        force_node(&mut nodes, anchor);
    }
    Ok(nodes)
}

/// `count` nodes stepping from `from` towards `to` (which is the last one),
/// each gap `ratio` times the previous.
fn stretch(from: f64, to: f64, count: usize, ratio: f64) -> Vec<f64> {
    let weights: Vec<f64> = (0..count).map(|k| ratio.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut nodes: Vec<f64> = weights[..count - 1]
        .iter()
        .map(|w| {
            acc += w;
            from + (to - from) * acc / total
        })
        .collect();
    nodes.push(to);
    nodes
}

/// Geometric stretching on both sides of `anchor`, which becomes a node with
/// (nearly) equal gaps on either side. The split of nodes between the two
/// sides is chosen to make the two innermost gaps as close as possible.
fn anchored_geometric(lo: f64, hi: f64, n: usize, ratio: f64, anchor: f64) -> Vec<f64> {
    let gaps = n - 1;
    let first_gap = |len: f64, count: usize| {
        let total: f64 = (0..count).map(|k| ratio.powi(k as i32)).sum();
        len / total
    };
    let below = (1..gaps)
        .min_by(|&a, &b| {
            let mismatch = |nb: usize| (first_gap(anchor - lo, nb) / first_gap(hi - anchor, gaps - nb)).ln().abs();
            mismatch(a).total_cmp(&mismatch(b))
        })
        .unwrap_or(1);
    let mut nodes: Vec<f64> = stretch(anchor, lo, below, ratio).into_iter().rev().collect();
    nodes.push(anchor);
    nodes.extend(stretch(anchor, hi, gaps - below, ratio));
    nodes
}

/// Makes `value` a node. The nearest interior node is moved onto it when that
/// keeps the axis strictly increasing; otherwise the value is inserted.
/// Values outside the axis range are ignored.
fn force_node(nodes: &mut Vec<f64>, value: f64) {
    let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
    if !(value > lo && value < hi) || nodes.contains(&value) {
        return;
    }
    let upper = nodes.partition_point(|&v| v < value);
    let nearest = if value - nodes[upper - 1] < nodes[upper] - value {
        upper - 1
    } else {
        upper
    };
    let interior = nearest > 0 && nearest < nodes.len() - 1;
    if interior && nodes[nearest - 1] < value && value < nodes[nearest + 1] {
        nodes[nearest] = value;
    } else {
        nodes.insert(upper, value);
    }
}

/// Builds the (x, γ) mesh for a contract. The premium is forced onto both
/// axes so that inception valuation needs no interpolation.
pub fn build_grid(spec: &ContractSpec, config: &GridConfig) -> Result<GridSpec> {
    let bad = |m: String| Err(GmwbError::InvalidGrid(m));
    if config.n_x < 2 || config.n_gamma < 2 {
        return bad("at least two nodes are required along each axis".into());
    }
    if config.n_tau < 3 {
        return bad(format!("n_tau = {} but the three-level scheme needs at least 3", config.n_tau));
    }
    let x_max = config.x_max.unwrap_or(5.0 * spec.premium);
    let gamma_max = config.gamma_max.unwrap_or(5.0 * spec.premium);
    if !(config.x_min > 0.0 && config.x_min < x_max && x_max.is_finite()) {
        return bad(format!("need 0 < x_min < x_max, got [{}, {x_max}]", config.x_min));
    }
    if !(gamma_max > 0.0 && gamma_max.is_finite()) {
        return bad(format!("gamma_max {gamma_max} must be positive"));
    }
    let x = axis(config.x_min, x_max, config.n_x, config.spacing, spec.premium)?;
    let gamma = axis(0.0, gamma_max, config.n_gamma, config.gamma_spacing, spec.premium)?;
    let grid = GridSpec {
        x,
        gamma,
        n_tau: config.n_tau,
        lower_boundary: config.lower_boundary,
    };
    grid.validate()?;
    Ok(grid)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|a| a.is_finite());
        if self.x.len() < 2 || self.gamma.len() < 2 {
            return Err(GmwbError::InvalidGrid("axis with fewer than two nodes".into()));
        }
        if !increasing(&self.x) || !increasing(&self.gamma) {
            return Err(GmwbError::InvalidGrid("node arrays must be strictly increasing".into()));
        }
        if self.x[0] <= 0.0 {
            return Err(GmwbError::InvalidGrid("x axis must start strictly above zero".into()));
        }
        if self.gamma[0] < 0.0 {
            return Err(GmwbError::InvalidGrid("γ axis must be non-negative".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x.len(), self.gamma.len())
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma[self.gamma.len() - 1]
    }

    /// Bilinear interpolation of `values` (indexed `[x, γ]`) at `(x, γ)`.
    ///
    /// Queries below `x_min` are evaluated at `x_min` silently: the lowest
    /// node stands in for an empty account. Queries above `x_max`, or outside
    /// `[γ_0, γ_max]`, are clamped to the boundary and reported through the
    /// returned flag.
    #[inline]
    pub fn interpolate(&self, values: &Array2<f64>, x: f64, gamma: f64) -> (f64, bool) {
        let (ix, tx, cx) = locate(&self.x, x);
        let (ig, tg, cg) = locate(&self.gamma, gamma);
        let clamped = (cx && x > self.x[0]) || cg;
        let v00 = values[[ix, ig]];
        let v10 = values[[ix + 1, ig]];
        let v01 = values[[ix, ig + 1]];
        let v11 = values[[ix + 1, ig + 1]];
        let lower = v00 + tx * (v10 - v00);
        let upper = v01 + tx * (v11 - v01);
        (lower + tg * (upper - lower), clamped)
    }
}

/// Cell index, fractional position within the cell, and whether the query
/// fell outside the axis.
#[inline]
fn locate(nodes: &[f64], v: f64) -> (usize, f64, bool) {
    let n = nodes.len();
    if v <= nodes[0] {
        return (0, 0.0, v < nodes[0]);
    }
    if v >= nodes[n - 1] {
        return (n - 2, 1.0, v > nodes[n - 1]);
    }
    let upper = nodes.partition_point(|&a| a <= v);
    let i = upper - 1;
    let t = (v - nodes[i]) / (nodes[i + 1] - nodes[i]);
    (i, t, false)
}

/// Which side of a withdrawal event a surface describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Before fee and withdrawal (`t_k^-`).
    Pre,
    /// After withdrawal (`t_k^+`).
    Post,
}

/// Contract values on the mesh at one event date, indexed `[x, γ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub values: Array2<f64>,
    pub date: usize,
    pub side: Side,
}

impl ValueSurface {
    pub fn new(values: Array2<f64>, date: usize, side: Side) -> Self {
        Self { values, date, side }
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let found = self.values.dim();
        if found != grid.shape() {
            return Err(GmwbError::ShapeMismatch {
                expected: grid.shape(),
                found,
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GmwbError::NonFinite("value surface"));
        }
        Ok(())
    }

    pub fn at(&self, grid: &GridSpec, x: f64, gamma: f64) -> f64 {
        grid.interpolate(&self.values, x, gamma).0
    }
}
