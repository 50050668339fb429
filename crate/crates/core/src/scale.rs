//! Natural-scale maps `F = phi/psi` and `F~ = -psi/phi` and the grids envelopes run on.

use crate::diffusion::FundamentalSolutions;
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    UniformX,
    UniformY,
}

/// Which scale the envelopes work in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `y = phi/psi`, values divided by `psi`. The scale origin sits at the left end.
    PsiScale,
    /// `y = -psi/phi`, values divided by `phi`. The scale origin sits at the right end.
    PhiScale,
}

#[derive(Debug, Clone)]
pub struct ScaleTransform<T> {
    fund: FundamentalSolutions<T>,
    x: Vec<T>,
    y: Vec<T>,
    direction: Direction,
}

impl<T: Real> ScaleTransform<T> {
    pub fn fund(&self) -> &FundamentalSolutions<T> {
        &self.fund
    }
    pub fn x_grid(&self) -> &[T] {
        &self.x
    }
    pub fn y_grid(&self) -> &[T] {
        &self.y
    }
    pub fn direction(&self) -> Direction {
        self.direction
    }
    pub fn len(&self) -> usize {
        self.x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The scale map evaluated anywhere `phi`, `psi` are defined.
    pub fn scale(&self, x: T) -> T {
        let (p, q) = (self.fund.phi(x), self.fund.psi(x));
        match self.direction {
            Direction::PsiScale => p / q,
            Direction::PhiScale => -q / p,
        }
    }

    /// `psi(x)` in psi-scale, `phi(x)` in phi-scale.
    pub fn divisor(&self, x: T) -> T {
        match self.direction {
            Direction::PsiScale => self.fund.psi(x),
            Direction::PhiScale => self.fund.phi(x),
        }
    }

    /// `(divisor, d divisor/dx, dy/dx)` at `x`.
    pub fn local(&self, x: T) -> (T, T, T) {
        let (p, dp, q, dq) = self.fund.eval_all(x);
        let w = dp * q - p * dq;
        match self.direction {
            Direction::PsiScale => (q, dq, w / (q * q)),
            Direction::PhiScale => (p, dp, w / (p * p)),
        }
    }

    /// `F(x)` for `x` inside the grid span.
    pub fn to_natural(&self, x: T) -> Result<T> {
        let (lo, hi) = (self.x[0], self.x[self.x.len() - 1]);
        let slack = (hi - lo) * lit(1e-12);
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(Error::OutOfRange {
                value: to_f64(x),
                lo: to_f64(lo),
                hi: to_f64(hi),
            });
        }
        Ok(self.scale(x.max(lo).min(hi)))
    }

    /// `F^{-1}(y)` by bisection, bracketed by the grid and run to float resolution.
    pub fn from_natural(&self, y: T) -> Result<T> {
        let n = self.y.len();
        let (ylo, yhi) = (self.y[0], self.y[n - 1]);
        let slack = (yhi - ylo) * lit(1e-12);
        if !(y >= ylo - slack && y <= yhi + slack) {
            return Err(Error::OutOfRange {
                value: to_f64(y),
                lo: to_f64(ylo),
                hi: to_f64(yhi),
            });
        }
        if y <= ylo {
            return Ok(self.x[0]);
        }
        if y >= yhi {
            return Ok(self.x[n - 1]);
        }
        let k = self.y.partition_point(|&v| v <= y);
        if self.y[k - 1] == y {
            return Ok(self.x[k - 1]);
        }
        Ok(invert(|x| self.scale(x), y, self.x[k - 1], self.x[k]))
    }
}

impl<T: Real> ScaleTransform<T> {
    /// The same `x` nodes measured in the other scale (or this one).
    pub fn with_direction(&self, direction: Direction) -> Result<Self> {
        let mut st = ScaleTransform {
            fund: self.fund.clone(),
            x: self.x.clone(),
            y: Vec::new(),
            direction,
        };
        st.y = st.x.iter().map(|&v| st.scale(v)).collect();
        for i in 0..st.y.len() {
            if !st.y[i].is_finite() || (i > 0 && !(st.y[i] > st.y[i - 1])) {
                return Err(Error::NonMonotoneScale {
                    at: to_f64(st.x[i]),
                });
            }
        }
        Ok(st)
    }
}

/// Bisection for an increasing `f` with `f(lo) <= target <= f(hi)`.
pub(crate) fn invert<T: Real>(f: impl Fn(T) -> T, target: T, mut lo: T, mut hi: T) -> T {
    for _ in 0..200 {
        let mid = lo + (hi - lo) / lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (f(hi) - target).abs() < (f(lo) - target).abs() {
        hi
    } else {
        lo
    }
}

/// Builds an `n`-point grid over the window of `fund`.
pub fn build_scale<T: Real>(
    fund: &FundamentalSolutions<T>,
    n: usize,
    spacing: Spacing,
    direction: Direction,
) -> Result<ScaleTransform<T>> {
    let (lo, hi) = fund.window();
    build_scale_on(fund, lo, hi, n, spacing, direction)
}

/// As [`build_scale`] on a sub-window `[lo, hi]`.
pub fn build_scale_on<T: Real>(
    fund: &FundamentalSolutions<T>,
    lo: T,
    hi: T,
    n: usize,
    spacing: Spacing,
    direction: Direction,
) -> Result<ScaleTransform<T>> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("grid needs n >= 3, got {n}")));
    }
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("empty window [{lo}, {hi}]")));
    }
    let mut st = ScaleTransform {
        fund: fund.clone(),
        x: Vec::new(),
        y: Vec::new(),
        direction,
    };
    let last = from_usize::<T>(n - 1);
    let x: Vec<T> = match spacing {
        Spacing::UniformX => (0..n)
            .map(|i| lo + (hi - lo) * from_usize::<T>(i) / last)
            .collect(),
        Spacing::UniformY => {
            let (ylo, yhi) = (st.scale(lo), st.scale(hi));
            if !(ylo < yhi) || !ylo.is_finite() || !yhi.is_finite() {
                return Err(Error::NonMonotoneScale { at: to_f64(lo) });
            }
            let mut xs = Vec::with_capacity(n);
            xs.push(lo);
            for i in 1..n - 1 {
                let target = ylo + (yhi - ylo) * from_usize::<T>(i) / last;
                let start = xs[i - 1];
                xs.push(invert(|x| st.scale(x), target, start, hi));
            }
            xs.push(hi);
            // A scale that is nearly flat over most of the window leaves it inside a few cells,
            // where the envelope cannot see the payoff at all.
            let widest = xs
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(T::zero(), |m, d| m.max(d));
            let allowed = (hi - lo) * lit::<T>(0.25).max(lit::<T>(32.0) / last);
            if widest > allowed {
                return Err(Error::UnsupportedParameters(format!(
                    "uniform-y grid leaves {} of the window [{lo}, {hi}] in one cell; use uniform x spacing",
                    to_f64(widest)
                )));
            }
            xs
        }
    };
    let y: Vec<T> = x.iter().map(|&v| st.scale(v)).collect();
    for i in 0..n {
        if !y[i].is_finite() {
            return Err(Error::NonMonotoneScale { at: to_f64(x[i]) });
        }
        if i > 0 && !(y[i] > y[i - 1] && x[i] > x[i - 1]) {
            return Err(Error::NonMonotoneScale { at: to_f64(x[i]) });
        }
    }
    st.x = x;
    st.y = y;
    Ok(st)
}
