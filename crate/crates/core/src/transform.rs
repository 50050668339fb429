//! Payoffs rescaled into natural scale: `W^G = G/psi` over `y = F(x)` (or `G/phi` over `F~`),
//! plus the boundary limits `l_a`, `l_b` that decide whether a finite value exists.

use crate::error::{Error, Result};
use crate::payoff_expr::PayoffSpec;
use crate::scalar::{lit, to_f64, Real};
use crate::scale::{Direction, ScaleTransform};

/// User overrides for the boundary data; `None` means estimate from the grid.
#[derive(Debug, Clone, Copy)]
pub struct TransformOptions<T> {
    pub l_a: Option<T>,
    pub l_b: Option<T>,
    pub w0: Option<T>,
    /// Fail with `GrowthViolation` when a limit is positive.
    pub require_growth: bool,
    /// Relative tolerance for the end gaps (default `1e-3`).
    pub gap_rel: T,
}

impl<T: Real> Default for TransformOptions<T> {
    fn default() -> Self {
        TransformOptions {
            l_a: None,
            l_b: None,
            w0: None,
            require_growth: false,
            gap_rel: lit(1e-3),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformedObstacle<T> {
    pub st: ScaleTransform<T>,
    pub payoff: PayoffSpec,
    /// Raw payoffs on the x-grid.
    pub g: Vec<T>,
    pub h: Option<Vec<T>>,
    pub wg: Vec<T>,
    pub wh: Option<Vec<T>>,
    /// `lim G+/psi` at `a` and `lim G+/phi` at `b` (override or estimate).
    pub l_a: T,
    pub l_b: T,
    /// Value pinned at the natural-scale origin.
    pub w0: T,
    /// Whether `w0` came from the caller.
    pub w0_overridden: bool,
    /// Gaps `(H - G)/psi` at the left grid end and `(H - G)/phi` at the right end.
    pub gap_a: T,
    pub gap_b: T,
    pub tol_gap_a: T,
    pub tol_gap_b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub g_le_h: bool,
    pub stuck_together: bool,
    pub l_a_zero: bool,
    pub l_b_zero: bool,
    pub gap_a: f64,
    pub gap_b: f64,
    pub l_a: f64,
    pub l_b: f64,
    /// Largest `G - H` on the grid (positive means the order is violated).
    pub worst_order: f64,
    pub worst_order_x: f64,
}

/// Limit of `ratio` as `t -> 0` by a linear fit through the two nodes nearest the end.
fn end_limit<T: Real>(ratio: [T; 2], t: [T; 2], scale: T) -> T {
    let slope = (ratio[1] - ratio[0]) / (t[1] - t[0]);
    let l = (ratio[0] - slope * t[0]).max(T::zero());
    if l <= scale * lit(1e-3) || !l.is_finite() {
        T::zero()
    } else {
        l
    }
}

pub fn transform_payoff<T: Real>(
    st: &ScaleTransform<T>,
    payoff: &PayoffSpec,
) -> Result<TransformedObstacle<T>> {
    transform_payoff_with(st, payoff, &TransformOptions::default())
}

pub fn transform_payoff_with<T: Real>(
    st: &ScaleTransform<T>,
    payoff: &PayoffSpec,
    opts: &TransformOptions<T>,
) -> Result<TransformedObstacle<T>> {
    let xs = st.x_grid();
    let n = xs.len();
    let fund = st.fund();
    let g: Vec<T> = xs
        .iter()
        .map(|&x| payoff.g.eval(x))
        .collect::<Result<_>>()?;
    let h: Option<Vec<T>> = match &payoff.h {
        Some(e) => Some(xs.iter().map(|&x| e.eval(x)).collect::<Result<_>>()?),
        None => None,
    };
    let div: Vec<T> = xs.iter().map(|&x| st.divisor(x)).collect();
    let wg: Vec<T> = g.iter().zip(&div).map(|(&v, &d)| v / d).collect();
    let wh: Option<Vec<T>> = h
        .as_ref()
        .map(|h| h.iter().zip(&div).map(|(&v, &d)| v / d).collect());

    let psi: Vec<T> = xs.iter().map(|&x| fund.psi(x)).collect();
    let phi: Vec<T> = xs.iter().map(|&x| fund.phi(x)).collect();
    let max_by = |d: &[T]| {
        g.iter()
            .zip(d)
            .map(|(&v, &dv)| v.max(T::zero()) / dv)
            .fold(T::zero(), |m, v| m.max(v))
    };
    let l_a_est = end_limit(
        [g[0].max(T::zero()) / psi[0], g[1].max(T::zero()) / psi[1]],
        [T::one() / psi[0], T::one() / psi[1]],
        max_by(&psi),
    );
    let l_b_est = end_limit(
        [
            g[n - 1].max(T::zero()) / phi[n - 1],
            g[n - 2].max(T::zero()) / phi[n - 2],
        ],
        [T::one() / phi[n - 1], T::one() / phi[n - 2]],
        max_by(&phi),
    );
    let l_a = opts.l_a.unwrap_or(l_a_est);
    let l_b = opts.l_b.unwrap_or(l_b_est);
    if opts.require_growth {
        if l_a > T::zero() {
            return Err(Error::GrowthViolation {
                which: "l_a".into(),
                value: to_f64(l_a),
            });
        }
        if l_b > T::zero() {
            return Err(Error::GrowthViolation {
                which: "l_b".into(),
                value: to_f64(l_b),
            });
        }
    }
    let near = match st.direction() {
        Direction::PsiScale => l_a,
        Direction::PhiScale => l_b,
    };
    let w0 = opts.w0.unwrap_or(near);

    let (gap_a, gap_b, tol_gap_a, tol_gap_b) = match &h {
        Some(h) => {
            let span = |d: &[T]| {
                let mut hi = T::neg_infinity();
                let mut lo = T::infinity();
                for i in 0..n {
                    hi = hi.max(h[i] / d[i]);
                    lo = lo.min(g[i] / d[i]);
                }
                (hi - lo).max(T::min_positive_value())
            };
            (
                (h[0] - g[0]) / psi[0],
                (h[n - 1] - g[n - 1]) / phi[n - 1],
                span(&psi) * opts.gap_rel,
                span(&phi) * opts.gap_rel,
            )
        }
        None => (T::zero(), T::zero(), T::zero(), T::zero()),
    };
    Ok(TransformedObstacle {
        st: st.clone(),
        payoff: payoff.clone(),
        g,
        h,
        wg,
        wh,
        l_a,
        l_b,
        w0,
        w0_overridden: opts.w0.is_some(),
        gap_a,
        gap_b,
        tol_gap_a,
        tol_gap_b,
    })
}

impl<T: Real> TransformedObstacle<T> {
    pub fn y(&self) -> &[T] {
        self.st.y_grid()
    }

    pub fn x(&self) -> &[T] {
        self.st.x_grid()
    }

    /// The limit at the scale origin (`l_a` in psi-scale, `l_b` in phi-scale).
    pub fn near_limit(&self) -> T {
        match self.st.direction() {
            Direction::PsiScale => self.l_a,
            Direction::PhiScale => self.l_b,
        }
    }

    /// Asymptotic slope of `W` at the far end: `l_b` in psi-scale (right end),
    /// `-l_a` in phi-scale (left end).
    pub fn far_slope(&self) -> T {
        match self.st.direction() {
            Direction::PsiScale => self.l_b,
            Direction::PhiScale => -self.l_a,
        }
    }

    /// Whether the scale origin is the left end of the grid.
    pub fn origin_is_left(&self) -> bool {
        self.st.direction() == Direction::PsiScale
    }

    /// Gap and tolerance at the near (origin) end and at the far end.
    pub fn end_gaps(&self) -> ((T, T), (T, T)) {
        match self.st.direction() {
            Direction::PsiScale => ((self.gap_a, self.tol_gap_a), (self.gap_b, self.tol_gap_b)),
            Direction::PhiScale => ((self.gap_b, self.tol_gap_b), (self.gap_a, self.tol_gap_a)),
        }
    }
}

/// Diagnostic report on the order, boundary-limit and end-gap assumptions.
pub fn check_assumptions<T: Real>(tob: &TransformedObstacle<T>) -> AssumptionReport {
    let (mut worst, mut worst_x) = (f64::NEG_INFINITY, f64::NAN);
    if let Some(h) = &tob.h {
        for i in 0..h.len() {
            let d = to_f64(tob.g[i] - h[i]);
            if d > worst {
                worst = d;
                worst_x = to_f64(tob.x()[i]);
            }
        }
    }
    let scale = tob
        .g
        .iter()
        .chain(tob.h.iter().flatten())
        .fold(0.0f64, |m, &v| m.max(to_f64(v).abs()));
    let stuck =
        tob.h.is_none() || (tob.gap_a.abs() <= tob.tol_gap_a && tob.gap_b.abs() <= tob.tol_gap_b);
    AssumptionReport {
        g_le_h: tob.h.is_none() || worst <= 1e-12 * scale.max(1.0),
        stuck_together: stuck,
        l_a_zero: tob.l_a == T::zero(),
        l_b_zero: tob.l_b == T::zero(),
        gap_a: to_f64(tob.gap_a),
        gap_b: to_f64(tob.gap_b),
        l_a: to_f64(tob.l_a),
        l_b: to_f64(tob.l_b),
        worst_order: worst,
        worst_order_x: worst_x,
    }
}
