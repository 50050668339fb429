//! Single-obstacle kernel: least concave majorants on a grid, concave conjugates and
//! superdifferentials, with brute-force oracles for testing.

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Boundary behaviour at one end of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum End<T> {
    /// Plain hull: the end point itself is a vertex.
    Free,
    /// Virtual point `(at, value)` outside the grid. `limit` is the limit of `f` at that end;
    /// an anchor strictly below it means no finite majorant.
    Anchor { at: T, value: T, limit: Option<T> },
    /// The majorant continues past the end as a ray of slope `s`.
    Slope(T),
}

#[derive(Debug, Clone)]
pub struct EnvelopeResult<T> {
    pub values: Vec<T>,
    pub contact: Vec<bool>,
    /// Maximal runs `(start, end)` (inclusive) of non-contact indices.
    pub segments: Vec<(usize, usize)>,
    pub eps_profile: Vec<T>,
    pub tol_eq: T,
}

/// Default contact tolerance `1e-9 * range(f)`.
pub fn contact_tolerance<T: Real>(f: &[T]) -> T {
    let (lo, hi) = f
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let scale = f.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    (hi - lo) * lit(1e-9) + scale * T::epsilon() * lit(64.0)
}

fn slack<T: Real>(a: T, b: T, c: T) -> T {
    T::epsilon() * lit::<T>(8.0) * (a.abs() + b.abs() + c.abs())
}

/// Chord value at `yb` between `(ya, fa)` and `(yc, fc)`.
#[inline]
pub(crate) fn chord<T: Real>(ya: T, fa: T, yc: T, fc: T, yb: T) -> T {
    fa + (fc - fa) * ((yb - ya) / (yc - ya))
}

pub(crate) fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &c) in flags.iter().enumerate() {
        match (c, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

fn check_grid<T: Real>(y: &[T], f: &[T]) -> Result<()> {
    if y.is_empty() || y.len() != f.len() {
        return Err(Error::InvalidInput(
            "grid and values need equal, nonzero length".into(),
        ));
    }
    if y.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "grid must be strictly increasing".into(),
        ));
    }
    if f.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("grid and values must be finite".into()));
    }
    Ok(())
}

/// Pointwise-smallest concave sequence above `f` that honours the end conditions.
/// Monotone-chain sweep, O(n).
pub fn least_concave_majorant<T: Real>(
    y: &[T],
    f: &[T],
    left: End<T>,
    right: End<T>,
) -> Result<EnvelopeResult<T>> {
    check_grid(y, f)?;
    let n = y.len();
    let range_tol = contact_tolerance(f);
    for (end, first) in [(left, true), (right, false)] {
        if let End::Anchor { at, value, limit } = end {
            if (first && !(at < y[0])) || (!first && !(at > y[n - 1])) {
                return Err(Error::InvalidInput(format!(
                    "anchor at {at} must lie outside the grid"
                )));
            }
            if let Some(l) = limit {
                if value < l - range_tol {
                    return Err(Error::AnchorBelowF {
                        value: to_f64(value),
                        limit: to_f64(l),
                    });
                }
            }
        }
    }
    // Points as (y, f); virtual anchors are added at the ends.
    let mut py: Vec<T> = Vec::with_capacity(n + 2);
    let mut pf: Vec<T> = Vec::with_capacity(n + 2);
    let offset = if let End::Anchor { at, value, .. } = left {
        py.push(at);
        pf.push(value);
        1
    } else {
        0
    };
    py.extend_from_slice(y);
    pf.extend_from_slice(f);
    if let End::Anchor { at, value, .. } = right {
        py.push(at);
        pf.push(value);
    }
    let m = py.len();

    // Slope ends cut the hull at the extreme point of f - s y.
    let mut lo = 0usize;
    let mut hi = m - 1;
    let near_max = |s: T, k: usize, best: T| {
        let v = pf[k] - s * py[k];
        v >= best - slack(best, pf[k], s * py[k])
    };
    if let End::Slope(s) = right {
        let best = (0..m).fold(T::neg_infinity(), |b, k| b.max(pf[k] - s * py[k]));
        hi = (0..m)
            .rev()
            .find(|&k| near_max(s, k, best))
            .unwrap_or(m - 1);
    }
    if let End::Slope(s) = left {
        let best = (0..m).fold(T::neg_infinity(), |b, k| b.max(pf[k] - s * py[k]));
        lo = (0..m).find(|&k| near_max(s, k, best)).unwrap_or(0);
    }
    if lo > hi {
        return Err(Error::InvalidInput(
            "end slopes admit no concave majorant".into(),
        ));
    }

    let mut hull: Vec<usize> = Vec::with_capacity(hi - lo + 1);
    for k in lo..=hi {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let c = chord(py[a], pf[a], py[k], pf[k], py[b]);
            if pf[b] < c - slack(pf[a], pf[b], pf[k]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }

    let mut vals = vec![T::zero(); m];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        vals[a] = pf[a];
        for k in a + 1..b {
            vals[k] = chord(py[a], pf[a], py[b], pf[b], py[k]).max(pf[k]);
        }
    }
    vals[hull[hull.len() - 1]] = pf[hull[hull.len() - 1]];
    if let End::Slope(s) = right {
        for k in hi + 1..m {
            vals[k] = (pf[hi] + s * (py[k] - py[hi])).max(pf[k]);
        }
    }
    if let End::Slope(s) = left {
        for k in 0..lo {
            vals[k] = (pf[lo] + s * (py[k] - py[lo])).max(pf[k]);
        }
    }
    let values: Vec<T> = vals[offset..offset + n].to_vec();
    Ok(finish(values, f, range_tol))
}

fn finish<T: Real>(values: Vec<T>, f: &[T], tol_eq: T) -> EnvelopeResult<T> {
    let eps_profile: Vec<T> = values
        .iter()
        .zip(f)
        .map(|(&v, &g)| (v - g).max(T::zero()))
        .collect();
    let contact: Vec<bool> = eps_profile.iter().map(|&e| e <= tol_eq).collect();
    let segments = runs(&contact);
    EnvelopeResult {
        values,
        contact,
        segments,
        eps_profile,
        tol_eq,
    }
}

/// `min_i (c y_i - f_i)`.
pub fn concave_conjugate<T: Real>(y: &[T], f: &[T], c: T) -> T {
    y.iter()
        .zip(f)
        .fold(T::infinity(), |m, (&yi, &fi)| m.min(c * yi - fi))
}

/// `f**(y_k) = min_c (c y_k - f_*(c))` by double enumeration over `c_grid`.
pub fn biconjugate_from_conjugate<T: Real>(y: &[T], f: &[T], c_grid: &[T]) -> Vec<T> {
    let conj: Vec<T> = c_grid.iter().map(|&c| concave_conjugate(y, f, c)).collect();
    y.iter()
        .map(|&yk| {
            c_grid
                .iter()
                .zip(&conj)
                .fold(T::infinity(), |m, (&c, &fc)| m.min(c * yk - fc))
        })
        .collect()
}

/// All pairwise secant slopes of `f` on `y`.
pub fn secant_slopes<T: Real>(y: &[T], f: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(y.len() * (y.len().saturating_sub(1)) / 2);
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            out.push((f[j] - f[i]) / (y[j] - y[i]));
        }
    }
    out
}

/// Majorant as the best chord value over all pairs `l <= k <= r` (the tangent construction).
pub fn chord_majorant<T: Real>(y: &[T], f: &[T]) -> Vec<T> {
    let n = y.len();
    (0..n)
        .map(|k| {
            let mut best = f[k];
            for l in 0..k {
                for r in k + 1..n {
                    best = best.max(chord(y[l], f[l], y[r], f[r], y[k]));
                }
            }
            best
        })
        .collect()
}

/// Slopes `[d+, d-]` of the lines through `(y_i, f_i)` lying above `f`, or `None`.
pub fn superdifferential_at<T: Real>(y: &[T], f: &[T], i: usize) -> Option<(T, T)> {
    superdifferential_at_tol(y, f, i, contact_tolerance(f))
}

/// As [`superdifferential_at`] with the inequality relaxed by `tol`.
pub fn superdifferential_at_tol<T: Real>(y: &[T], f: &[T], i: usize, tol: T) -> Option<(T, T)> {
    let mut lo = T::neg_infinity();
    let mut hi = T::infinity();
    for j in 0..y.len() {
        if j == i {
            continue;
        }
        let s = (f[j] - f[i] - tol) / (y[j] - y[i]);
        if j > i {
            lo = lo.max(s);
        } else {
            hi = hi.min(s);
        }
    }
    if lo <= hi {
        Some((lo, hi))
    } else {
        None
    }
}
