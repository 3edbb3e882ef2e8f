//! Natural cubic spline through scattered points.

use crate::error::{GmwbError, Result};

/// Piecewise cubic interpolant with zero second derivative at both ends.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(GmwbError::InvalidSweep(format!("{n} abscissae and {} ordinates", y.len())));
        }
        if !x.windows(2).all(|w| w[0] < w[1]) || x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(GmwbError::InvalidSweep("knots must be finite and strictly increasing".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for the interior second derivatives.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for r in 0..k {
                let i = r + 1;
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[r] = 2.0 * (h0 + h1);
                upper[r] = h1;
                rhs[r] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for r in 1..k {
                let lower = x[r + 1] - x[r];
                let factor = lower / diag[r - 1];
                diag[r] -= factor * upper[r - 1];
                rhs[r] -= factor * rhs[r - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for r in (0..k - 1).rev() {
                m[r + 1] = (rhs[r] - upper[r] * m[r + 2]) / diag[r];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    /// Evaluates the spline; outside the knot range the end cubics are
    /// continued.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = self.x[1..n - 1].partition_point(|&k| k <= t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// Smallest root of the spline in `[lo, hi]`, located on the first knot
    /// interval (or sub-interval straddling a knot) where the sign changes
    /// and refined by bisection.
    pub fn first_root(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut points: Vec<f64> = std::iter::once(lo)
            .chain(self.x.iter().copied().filter(|&k| k > lo && k < hi))
            .chain(std::iter::once(hi))
            .collect();
        points.dedup();
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (self.eval(a), self.eval(b));
            if fa == 0.0 {
                return Some(a);
            }
            // Sample inside the piece too: a cubic can cross twice.
            let samples: Vec<f64> = (0..=8).map(|s| a + (b - a) * s as f64 / 8.0).collect();
            for s in samples.windows(2) {
                let (p, q) = (s[0], s[1]);
                let (fp, fq) = (self.eval(p), self.eval(q));
                if fp == 0.0 {
                    return Some(p);
                }
                if fp.signum() != fq.signum() {
                    return Some(self.bisect(p, q));
                }
            }
            if fb == 0.0 {
                return Some(b);
            }
        }
        None
    }

    fn bisect(&self, mut a: f64, mut b: f64) -> f64 {
        let mut fa = self.eval(a);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = self.eval(mid);
            if fm == 0.0 {
                return mid;
            }
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}
