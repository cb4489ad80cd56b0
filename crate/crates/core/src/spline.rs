//! Uniform B-spline bases on a clamped domain.
//!
//! The knot vector extends the uniform grid `k` steps past each end of
//! `[lo, hi]`, so the `G + k` basis functions form a partition of unity on the
//! whole closed domain. Inputs outside the domain are clamped to it and have
//! zero derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Highest supported spline degree.
pub const MAX_ORDER: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct KnotGrid {
    lo: f64,
    hi: f64,
    intervals: usize,
    order: usize,
    knots: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo: -3.0,
            hi: 3.0,
            intervals: 8,
            order: 3,
        }
    }
}

impl TryFrom<GridSpec> for KnotGrid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        KnotGrid::new(s.lo, s.hi, s.intervals, s.order)
    }
}

impl From<KnotGrid> for GridSpec {
    fn from(g: KnotGrid) -> Self {
        g.spec()
    }
}

/// The `order + 1` basis functions that can be nonzero at a point.
#[derive(Debug, Clone, Copy)]
pub struct ActiveBasis {
    /// Global index of `values[0]`.
    pub start: usize,
    pub len: usize,
    pub values: [f64; MAX_ORDER + 1],
    pub derivs: [f64; MAX_ORDER + 1],
}

impl KnotGrid {
    pub fn new(lo: f64, hi: f64, intervals: usize, order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInput(format!("spline domain [{lo}, {hi}] is empty")));
        }
        if intervals == 0 {
            return Err(Error::InvalidInput("spline grid needs at least one interval".into()));
        }
        if order == 0 || order > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "spline order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let h = (hi - lo) / intervals as f64;
        let mut knots: Vec<f64> = (0..intervals + 2 * order + 1)
            .map(|i| lo + (i as f64 - order as f64) * h)
            .collect();
        knots[order] = lo;
        knots[order + intervals] = hi;
        Ok(KnotGrid {
            lo,
            hi,
            intervals,
            order,
            knots,
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            lo: self.lo,
            hi: self.hi,
            intervals: self.intervals,
            order: self.order,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.intervals + self.order
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    fn span(&self, x: f64) -> usize {
        let k = self.order;
        let last = k + self.intervals - 1;
        let guess = ((x - self.lo) / self.step()).floor();
        let mut m = if guess <= 0.0 {
            k
        } else {
            (k + guess as usize).min(last)
        };
        while m > k && x < self.knots[m] {
            m -= 1;
        }
        while m < last && x >= self.knots[m + 1] {
            m += 1;
        }
        m
    }

    /// Nonzero basis values and derivatives at `x` (clamped to the domain).
    pub fn active(&self, x: f64) -> Result<ActiveBasis> {
        if x.is_nan() {
            return Err(Error::InvalidInput("NaN spline input".into()));
        }
        let outside = x < self.lo || x > self.hi;
        let x = x.clamp(self.lo, self.hi);
        let p = self.order;
        let m = self.span(x);
        let t = &self.knots;

        // Cox–de Boor in triangular form; `lower` keeps the degree p-1 row.
        let mut n = [0.0f64; MAX_ORDER + 1];
        let mut lower = [0.0f64; MAX_ORDER + 1];
        let mut left = [0.0f64; MAX_ORDER + 1];
        let mut right = [0.0f64; MAX_ORDER + 1];
        n[0] = 1.0;
        for j in 1..=p {
            if j == p {
                lower = n;
            }
            left[j] = x - t[m + 1 - j];
            right[j] = t[m + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }

        let mut derivs = [0.0f64; MAX_ORDER + 1];
        if !outside {
            // lower[r] is B_{m-p+1+r, p-1}; the global index i runs m-p..=m
            let pf = p as f64;
            for (r, d) in derivs.iter_mut().enumerate().take(p + 1) {
                let i = m - p + r;
                let b_i = if r >= 1 { lower[r - 1] } else { 0.0 };
                let b_next = if r < p { lower[r] } else { 0.0 };
                let mut v = 0.0;
                if b_i != 0.0 {
                    v += b_i / (t[i + p] - t[i]);
                }
                if b_next != 0.0 {
                    v -= b_next / (t[i + p + 1] - t[i + 1]);
                }
                *d = pf * v;
            }
        }
        Ok(ActiveBasis {
            start: m - p,
            len: p + 1,
            values: n,
            derivs,
        })
    }
}

/// All `G + k` basis values `B_i(x)`.
pub fn basis_eval(grid: &KnotGrid, x: f64) -> Result<Tensor> {
    let a = grid.active(x)?;
    let mut out = vec![0.0; grid.num_basis()];
    out[a.start..a.start + a.len].copy_from_slice(&a.values[..a.len]);
    Tensor::new(vec![grid.num_basis()], out)
}

/// All `G + k` basis derivatives `B_i'(x)`; zero outside `[lo, hi]`.
pub fn basis_deriv(grid: &KnotGrid, x: f64) -> Result<Tensor> {
    let a = grid.active(x)?;
    let mut out = vec![0.0; grid.num_basis()];
    out[a.start..a.start + a.len].copy_from_slice(&a.derivs[..a.len]);
    Tensor::new(vec![grid.num_basis()], out)
}
