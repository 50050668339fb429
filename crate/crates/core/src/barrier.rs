//! Two-obstacle kernel: the taut string between a lower obstacle `wg` and an upper
//! obstacle `wh`, a projected-SOR double-obstacle oracle, literal sup/inf constructions
//! over lines, and the barrier-modified super/subdifferentials.

use crate::envelope::{chord, contact_tolerance};
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, median3, to_f64, Real};
use crate::transform::TransformedObstacle;

/// End condition of a corridor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorridorEnd<T> {
    /// The string passes through this value at the end grid node.
    Pinned(T),
    /// The string passes through the virtual point `(at, value)` outside the grid.
    Anchor { at: T, value: T },
    /// Free end leaving the grid with slope `s` (clamped to the obstacles).
    Slope(T),
}

/// Obstacle pair on a grid with end conditions.
#[derive(Debug, Clone)]
pub struct Corridor<T> {
    pub y: Vec<T>,
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    pub left: CorridorEnd<T>,
    pub right: CorridorEnd<T>,
}

impl<T: Real> Corridor<T> {
    /// Corridor pinned at both ends to the obstacle midpoints.
    pub fn pinned(y: Vec<T>, lo: Vec<T>, hi: Vec<T>) -> Self {
        let n = y.len();
        let two = lit::<T>(2.0);
        let left = CorridorEnd::Pinned((lo[0] + hi[0]) / two);
        let right = CorridorEnd::Pinned((lo[n - 1] + hi[n - 1]) / two);
        Corridor {
            y,
            lo,
            hi,
            left,
            right,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Contact tolerance `1e-9 * range` over both obstacles, with `hi` clipped to `max(lo)`
    /// so a far-away upper obstacle does not loosen contact with the lower one.
    pub fn tolerance(&self) -> T {
        let top = self.lo.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let all: Vec<T> = self
            .lo
            .iter()
            .copied()
            .chain(self.hi.iter().map(|&h| h.min(top)))
            .collect();
        contact_tolerance(&all)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n < 2 || self.lo.len() != n || self.hi.len() != n {
            return Err(Error::InvalidInput(
                "corridor needs >= 2 nodes and matching obstacle lengths".into(),
            ));
        }
        if self.y.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "corridor grid must be strictly increasing".into(),
            ));
        }
        if self
            .y
            .iter()
            .chain(&self.lo)
            .chain(&self.hi)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("corridor values must be finite".into()));
        }
        let tol = self.tolerance();
        for i in 0..n {
            if self.lo[i] > self.hi[i] + tol {
                return Err(Error::ObstacleOrderViolation {
                    x: to_f64(self.y[i]),
                    g: to_f64(self.lo[i]),
                    h: to_f64(self.hi[i]),
                });
            }
        }
        for (end, idx, left) in [(self.left, 0, true), (self.right, n - 1, false)] {
            match end {
                CorridorEnd::Pinned(v) => {
                    if !(v >= self.lo[idx] - tol && v <= self.hi[idx] + tol) {
                        return Err(Error::InvalidInput(format!(
                            "pinned value {v} outside the corridor"
                        )));
                    }
                }
                CorridorEnd::Anchor { at, value } => {
                    let outside = if left {
                        at < self.y[0]
                    } else {
                        at > self.y[n - 1]
                    };
                    if !outside || !value.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "anchor at {at} must lie outside the grid"
                        )));
                    }
                }
                CorridorEnd::Slope(s) => {
                    if !s.is_finite() {
                        return Err(Error::InvalidInput("end slope must be finite".into()));
                    }
                }
            }
        }
        if matches!(self.left, CorridorEnd::Slope(_)) && matches!(self.right, CorridorEnd::Slope(_))
        {
            return Err(Error::InvalidInput(
                "at most one free (slope) end is supported".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the corridor for a game: the scale-origin end is anchored at `y = 0` with `w0`,
/// the far end leaves with the asymptotic slope. Both ends must be stuck together.
pub fn corridor<T: Real>(tob: &TransformedObstacle<T>) -> Result<Corridor<T>> {
    let wh = tob
        .wh
        .clone()
        .ok_or_else(|| Error::InvalidInput("game needs an upper payoff H".into()))?;
    let ((gn, tn), (gf, tf)) = tob.end_gaps();
    let near_bad = !tob.w0_overridden && gn.abs() > tn;
    let far_bad = gf.abs() > tf;
    if near_bad || far_bad {
        let near = if near_bad { to_f64(gn) } else { 0.0 };
        let far = if far_bad { to_f64(gf) } else { 0.0 };
        let (left, right) = if tob.origin_is_left() {
            (near, far)
        } else {
            (far, near)
        };
        return Err(Error::EndsNotAnchored { left, right });
    }
    let origin = CorridorEnd::Anchor {
        at: T::zero(),
        value: tob.w0,
    };
    let far = CorridorEnd::Slope(tob.far_slope());
    let (left, right) = if tob.origin_is_left() {
        (origin, far)
    } else {
        (far, origin)
    };
    Ok(Corridor {
        y: tob.y().to_vec(),
        lo: tob.wg.clone(),
        hi: wh,
        left,
        right,
    })
}

/// The constrained biconjugate on the grid.
#[derive(Debug, Clone)]
pub struct TautEnvelope<T> {
    pub values: Vec<T>,
    pub eps_star: Vec<T>,
    pub delta_star: Vec<T>,
    pub contact_lower: Vec<bool>,
    pub contact_upper: Vec<bool>,
    pub tol: T,
}

fn finish<T: Real>(c: &Corridor<T>, mut values: Vec<T>, tol: T) -> TautEnvelope<T> {
    for i in 0..values.len() {
        values[i] = median3(c.lo[i], values[i], c.hi[i].max(c.lo[i]));
    }
    let eps_star: Vec<T> = values.iter().zip(&c.lo).map(|(&v, &g)| v - g).collect();
    let delta_star: Vec<T> = values
        .iter()
        .zip(&c.hi)
        .map(|(&v, &h)| (h - v).max(T::zero()))
        .collect();
    let contact_lower = eps_star.iter().map(|&e| e <= tol).collect();
    let contact_upper = delta_star.iter().map(|&d| d <= tol).collect();
    TautEnvelope {
        values,
        eps_star,
        delta_star,
        contact_lower,
        contact_upper,
        tol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct P<T> {
    u: T,
    v: T,
}

/// `> 0` when `c` lies above the line `a -> b` (for `b.u > a.u`).
#[inline]
fn cross<T: Real>(a: P<T>, b: P<T>, c: P<T>) -> T {
    (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u)
}

/// Shortest path from `start` to `end` through the vertical gates `(u, lo, hi)`.
/// Funnel with an upper (convex) and a lower (concave) chain; O(n).
fn funnel<T: Real>(start: P<T>, gates: &[(T, T, T)], end: P<T>) -> Vec<P<T>> {
    let mut path = vec![start];
    let mut up: Vec<P<T>> = vec![start];
    let mut dn: Vec<P<T>> = vec![start];
    let (mut uh, mut dh) = (0usize, 0usize);

    let add_upper = |p: P<T>,
                     path: &mut Vec<P<T>>,
                     up: &mut Vec<P<T>>,
                     uh: &mut usize,
                     dn: &mut Vec<P<T>>,
                     dh: &mut usize| {
        while up.len() - *uh >= 2 {
            let k = up.len();
            if cross(up[k - 2], p, up[k - 1]) >= T::zero() {
                up.pop();
            } else {
                break;
            }
        }
        if up.len() - *uh == 1 {
            while dn.len() - *dh >= 2 && cross(dn[*dh], dn[*dh + 1], p) < T::zero() {
                *dh += 1;
                path.push(dn[*dh]);
            }
            let apex = dn[*dh];
            up.truncate(0);
            *uh = 0;
            up.push(apex);
        }
        if *up.last().unwrap() != p {
            up.push(p);
        }
    };
    let add_lower = |q: P<T>,
                     path: &mut Vec<P<T>>,
                     up: &mut Vec<P<T>>,
                     uh: &mut usize,
                     dn: &mut Vec<P<T>>,
                     dh: &mut usize| {
        while dn.len() - *dh >= 2 {
            let k = dn.len();
            if cross(dn[k - 2], q, dn[k - 1]) <= T::zero() {
                dn.pop();
            } else {
                break;
            }
        }
        if dn.len() - *dh == 1 {
            while up.len() - *uh >= 2 && cross(up[*uh], up[*uh + 1], q) > T::zero() {
                *uh += 1;
                path.push(up[*uh]);
            }
            let apex = up[*uh];
            dn.truncate(0);
            *dh = 0;
            dn.push(apex);
        }
        if *dn.last().unwrap() != q {
            dn.push(q);
        }
    };

    for &(u, lo, hi) in gates {
        add_upper(
            P { u, v: hi },
            &mut path,
            &mut up,
            &mut uh,
            &mut dn,
            &mut dh,
        );
        add_lower(
            P { u, v: lo },
            &mut path,
            &mut up,
            &mut uh,
            &mut dn,
            &mut dh,
        );
    }
    add_upper(end, &mut path, &mut up, &mut uh, &mut dn, &mut dh);
    add_lower(end, &mut path, &mut up, &mut uh, &mut dn, &mut dh);
    let rest: &[P<T>] = if dn.len() - dh > 2 {
        &dn[dh + 1..]
    } else {
        &up[uh + 1..]
    };
    path.extend_from_slice(rest);
    if *path.last().unwrap() != end {
        path.push(end);
    }
    path
}

/// Samples a polyline (increasing `u`, possibly with vertical steps) at the grid.
fn sample<T: Real>(path: &[P<T>], y: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(y.len());
    let mut k = 0usize;
    for &u in y {
        while k + 1 < path.len() - 1 && path[k + 1].u <= u {
            k += 1;
        }
        let (a, b) = (path[k], path[k + 1]);
        let v = if b.u > a.u {
            chord(a.u, a.v, b.u, b.v, u.max(a.u).min(b.u))
        } else {
            b.v
        };
        out.push(v);
    }
    out
}

/// Path for fixed end values at the grid ends (`None` for anchors).
fn solve_fixed<T: Real>(c: &Corridor<T>, left_pin: Option<T>, right_pin: Option<T>) -> Vec<P<T>> {
    let n = c.len();
    let (start, first) = match (left_pin, c.left) {
        (Some(v), _) => (P { u: c.y[0], v }, 1),
        (None, CorridorEnd::Anchor { at, value }) => (P { u: at, v: value }, 0),
        _ => unreachable!("left end resolved by caller"),
    };
    let (end, last) = match (right_pin, c.right) {
        (Some(v), _) => (P { u: c.y[n - 1], v }, n - 1),
        (None, CorridorEnd::Anchor { at, value }) => (P { u: at, v: value }, n),
        _ => unreachable!("right end resolved by caller"),
    };
    let gates: Vec<(T, T, T)> = (first..last)
        .map(|i| (c.y[i], c.lo[i], c.hi[i].max(c.lo[i])))
        .collect();
    funnel(start, &gates, end)
}

fn path_slope<T: Real>(a: P<T>, b: P<T>) -> T {
    (b.v - a.v) / (b.u - a.u)
}

/// Bisection on an end value so the adjacent string segment has slope `s`.
/// `increasing` says whether that slope grows with the end value.
fn fit_slope<T: Real>(lo: T, hi: T, s: T, increasing: bool, slope_at: impl Fn(T) -> T) -> T {
    if hi <= lo {
        return lo;
    }
    let (f_lo, f_hi) = (slope_at(lo), slope_at(hi));
    let below = |f: T| if increasing { f < s } else { f > s };
    if !below(f_lo) {
        return lo;
    }
    if below(f_hi) {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = a + (b - a) / lit(2.0);
        if m <= a || m >= b {
            break;
        }
        if below(slope_at(m)) {
            a = m;
        } else {
            b = m;
        }
    }
    a + (b - a) / lit(2.0)
}

/// The taut string: shortest path in the corridor honouring the end conditions.
pub fn taut_string<T: Real>(c: &Corridor<T>) -> Result<TautEnvelope<T>> {
    c.validate()?;
    let n = c.len();
    let tol = c.tolerance();
    let pin = |e: CorridorEnd<T>| {
        if let CorridorEnd::Pinned(v) = e {
            Some(v)
        } else {
            None
        }
    };
    let (mut lp, mut rp) = (pin(c.left), pin(c.right));
    if let CorridorEnd::Slope(s) = c.right {
        let v = fit_slope(c.lo[n - 1], c.hi[n - 1].max(c.lo[n - 1]), s, true, |v| {
            let path = solve_fixed(c, lp, Some(v));
            let k = path.len();
            path_slope(path[k - 2], path[k - 1])
        });
        rp = Some(v);
    }
    if let CorridorEnd::Slope(s) = c.left {
        let v = fit_slope(c.lo[0], c.hi[0].max(c.lo[0]), s, false, |v| {
            let path = solve_fixed(c, Some(v), rp);
            path_slope(path[0], path[1])
        });
        lp = Some(v);
    }
    let path = solve_fixed(c, lp, rp);
    let mut values = sample(&path, &c.y);
    if let Some(v) = lp {
        values[0] = v;
    }
    if let Some(v) = rp {
        values[n - 1] = v;
    }
    Ok(finish(c, values, tol))
}

/// Projected SOR for the discrete double-obstacle problem: each node is clamped to the
/// obstacles after relaxing towards the linear interpolation of its neighbours.
pub fn double_obstacle_fixpoint<T: Real>(
    c: &Corridor<T>,
    tol: T,
    max_iter: usize,
) -> Result<TautEnvelope<T>> {
    c.validate()?;
    let n = c.len();
    let two = lit::<T>(2.0);
    let hi: Vec<T> = (0..n).map(|i| c.hi[i].max(c.lo[i])).collect();
    let mut v: Vec<T> = (0..n).map(|i| (c.lo[i] + hi[i]) / two).collect();
    if let CorridorEnd::Pinned(p) = c.left {
        v[0] = p;
    }
    if let CorridorEnd::Pinned(p) = c.right {
        v[n - 1] = p;
    }
    let omega = two / (T::one() + (T::PI() / from_usize::<T>(n + 1)).sin());
    for _ in 0..max_iter {
        let mut change = T::zero();
        for i in 0..n {
            let old = v[i];
            let new = if i == 0 {
                match c.left {
                    CorridorEnd::Pinned(p) => p,
                    CorridorEnd::Slope(s) => median3(c.lo[0], v[1] - s * (c.y[1] - c.y[0]), hi[0]),
                    CorridorEnd::Anchor { at, value } => {
                        let avg = chord(at, value, c.y[1], v[1], c.y[0]);
                        median3(c.lo[0], old + omega * (avg - old), hi[0])
                    }
                }
            } else if i == n - 1 {
                match c.right {
                    CorridorEnd::Pinned(p) => p,
                    CorridorEnd::Slope(s) => {
                        median3(c.lo[i], v[i - 1] + s * (c.y[i] - c.y[i - 1]), hi[i])
                    }
                    CorridorEnd::Anchor { at, value } => {
                        let avg = chord(c.y[i - 1], v[i - 1], at, value, c.y[i]);
                        median3(c.lo[i], old + omega * (avg - old), hi[i])
                    }
                }
            } else {
                let avg = chord(c.y[i - 1], v[i - 1], c.y[i + 1], v[i + 1], c.y[i]);
                median3(c.lo[i], old + omega * (avg - old), hi[i])
            };
            v[i] = new;
            change = change.max((new - old).abs());
        }
        if change <= tol {
            return Ok(finish(c, v, c.tolerance()));
        }
    }
    Err(Error::NoConvergence(max_iter))
}

/// Which literal construction [`supinf_bruteforce`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupInfSide {
    /// Highest line through the point that meets the lower obstacle first on both sides.
    SupSup,
    /// Lowest line through the point that meets the upper obstacle first on both sides.
    InfInf,
    /// Inf over slopes of the best lower-obstacle value inside the windows of lines that meet the upper obstacle first.
    InfSup,
    /// Sup over slopes of the worst upper-obstacle value inside the windows of lines that meet the lower obstacle first.
    SupInf,
}

/// Line intercepts around a grid point. Missing intercepts follow `sup {} = -inf`, `inf {} = +inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineProbe<T> {
    pub l_g: T,
    pub r_g: T,
    pub l_h: T,
    pub r_h: T,
    /// Where the line leaves the closed band between the obstacles.
    pub big_l: T,
    pub big_r: T,
}

/// Corridor with its end conditions folded into the grid (anchors become zero-width
/// nodes, pins collapse the end node).
struct Ext<T> {
    y: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
    offset: usize,
    tol: T,
}

impl<T: Real> Ext<T> {
    fn new(c: &Corridor<T>) -> Result<Self> {
        c.validate()?;
        let n = c.len();
        let (mut y, mut lo, mut hi) = (
            Vec::with_capacity(n + 2),
            Vec::with_capacity(n + 2),
            Vec::with_capacity(n + 2),
        );
        let mut offset = 0;
        match c.left {
            CorridorEnd::Anchor { at, value } => {
                y.push(at);
                lo.push(value);
                hi.push(value);
                offset = 1;
            }
            CorridorEnd::Slope(_) => {
                return Err(Error::Unsupported(
                    "slope ends in the brute-force oracle".into(),
                ))
            }
            CorridorEnd::Pinned(_) => {}
        }
        y.extend_from_slice(&c.y);
        lo.extend_from_slice(&c.lo);
        hi.extend((0..n).map(|i| c.hi[i].max(c.lo[i])));
        if let CorridorEnd::Pinned(p) = c.left {
            lo[offset] = p;
            hi[offset] = p;
        }
        match c.right {
            CorridorEnd::Anchor { at, value } => {
                y.push(at);
                lo.push(value);
                hi.push(value);
            }
            CorridorEnd::Slope(_) => {
                return Err(Error::Unsupported(
                    "slope ends in the brute-force oracle".into(),
                ))
            }
            CorridorEnd::Pinned(p) => {
                let k = offset + n - 1;
                lo[k] = p;
                hi[k] = p;
            }
        }
        Ok(Ext {
            y,
            lo,
            hi,
            offset,
            tol: c.tolerance(),
        })
    }

    fn interp(&self, f: &[T], u: T) -> T {
        let n = self.y.len();
        let k = self.y.partition_point(|&v| v <= u).clamp(1, n - 1);
        chord(self.y[k - 1], f[k - 1], self.y[k], f[k], u)
    }

    /// First root of `line - f` strictly past index `k` going in direction `dir`, or at `k`
    /// itself when the line touches there.
    fn root(&self, f: &[T], k: usize, c: T, p: T, right: bool) -> T {
        let line = |j: usize| p + c * (self.y[j] - self.y[k]);
        let d = |j: usize| line(j) - f[j];
        let tol = self.tol;
        if d(k).abs() <= tol {
            return self.y[k];
        }
        let n = self.y.len();
        let mut j = k;
        loop {
            let nj = if right {
                if j + 1 >= n {
                    return T::infinity();
                }
                j + 1
            } else {
                if j == 0 {
                    return T::neg_infinity();
                }
                j - 1
            };
            let (a, b) = (d(j), d(nj));
            if b.abs() <= tol {
                return self.y[nj];
            }
            if (a > T::zero()) != (b > T::zero()) {
                return self.y[j] + (self.y[nj] - self.y[j]) * (a / (a - b));
            }
            j = nj;
        }
    }

    /// Where the line leaves the band `lo <= line <= hi`, scanning from `k`.
    fn exit(&self, k: usize, c: T, p: T, right: bool) -> T {
        let line = |j: usize| p + c * (self.y[j] - self.y[k]);
        let tol = self.tol;
        let n = self.y.len();
        let mut j = k;
        loop {
            let nj = if right {
                if j + 1 >= n {
                    return T::infinity();
                }
                j + 1
            } else {
                if j == 0 {
                    return T::neg_infinity();
                }
                j - 1
            };
            let (eg_a, eg_b) = (
                (line(j) - self.lo[j]).max(T::zero()),
                line(nj) - self.lo[nj],
            );
            let (eh_a, eh_b) = (
                (self.hi[j] - line(j)).max(T::zero()),
                self.hi[nj] - line(nj),
            );
            let mut t = T::infinity();
            if eg_b < -tol {
                t = t.min(eg_a / (eg_a - eg_b));
            }
            if eh_b < -tol {
                t = t.min(eh_a / (eh_a - eh_b));
            }
            if t.is_finite() {
                return self.y[j] + (self.y[nj] - self.y[j]) * t;
            }
            j = nj;
        }
    }

    fn probe(&self, k: usize, c: T, p: T) -> LineProbe<T> {
        LineProbe {
            l_g: self.root(&self.lo, k, c, p, false),
            r_g: self.root(&self.lo, k, c, p, true),
            l_h: self.root(&self.hi, k, c, p, false),
            r_h: self.root(&self.hi, k, c, p, true),
            big_l: self.exit(k, c, p, false),
            big_r: self.exit(k, c, p, true),
        }
    }

    fn g_first(&self, k: usize, c: T, p: T) -> bool {
        let pr = self.probe(k, c, p);
        pr.l_h <= pr.l_g && pr.r_g <= pr.r_h
    }

    fn h_first(&self, k: usize, c: T, p: T) -> bool {
        let pr = self.probe(k, c, p);
        pr.l_g <= pr.l_h && pr.r_h <= pr.r_g
    }

    /// Levels at `y_k` of the lines with slope `c` through every obstacle vertex, inside
    /// `[lo_k, hi_k]`, sorted.
    fn levels(&self, k: usize, c: T) -> Vec<T> {
        let (a, b) = (self.lo[k], self.hi[k]);
        let mut out = vec![a, b];
        for j in 0..self.y.len() {
            for f in [self.lo[j], self.hi[j]] {
                let p = f - c * (self.y[j] - self.y[k]);
                if p > a && p < b {
                    out.push(p);
                }
            }
        }
        out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        out.dedup();
        // Line properties only change at these levels; the midpoints stand in for the open
        // intervals between them (even index = level, odd = interval).
        let mut mixed = Vec::with_capacity(2 * out.len());
        for w in out.windows(2) {
            mixed.push(w[0]);
            mixed.push(w[0] + (w[1] - w[0]) / lit(2.0));
        }
        mixed.push(out[out.len() - 1]);
        mixed
    }

    fn slopes(&self) -> Vec<T> {
        let mut pts: Vec<(T, T)> = Vec::with_capacity(2 * self.y.len());
        for j in 0..self.y.len() {
            pts.push((self.y[j], self.lo[j]));
            if self.hi[j] != self.lo[j] {
                pts.push((self.y[j], self.hi[j]));
            }
        }
        let mut out = Vec::with_capacity(pts.len() * pts.len() / 2);
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if pts[j].0 != pts[i].0 {
                    out.push((pts[j].1 - pts[i].1) / (pts[j].0 - pts[i].0));
                }
            }
        }
        out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        out.dedup();
        out
    }

    /// Largest level (true) or smallest level (false) in `levels` with `pred`, assuming
    /// `pred` holds on a prefix (true) or suffix (false).
    fn extreme_level(levels: &[T], from_bottom: bool, pred: impl Fn(T) -> bool) -> Option<usize> {
        if from_bottom {
            if !pred(levels[0]) {
                return None;
            }
            let (mut a, mut b) = (0usize, levels.len());
            while b - a > 1 {
                let m = (a + b) / 2;
                if pred(levels[m]) {
                    a = m;
                } else {
                    b = m;
                }
            }
            Some(a)
        } else {
            let last = levels.len() - 1;
            if !pred(levels[last]) {
                return None;
            }
            let (mut a, mut b) = (0usize, last);
            if pred(levels[0]) {
                return Some(0);
            }
            while b - a > 1 {
                let m = (a + b) / 2;
                if pred(levels[m]) {
                    b = m;
                } else {
                    a = m;
                }
            }
            Some(b)
        }
    }

    /// Union of the band windows `[L, R]` of the lines through `(y_k, p)`, `p` in `levels`,
    /// clipped to the grid. Every window contains `y_k`, so the union is an interval.
    fn window_union(&self, k: usize, c: T, levels: &[T]) -> (T, T) {
        let (mut lo, mut hi) = (self.y[k], self.y[k]);
        for &p in levels {
            lo = lo.min(self.exit(k, c, p, false));
            hi = hi.max(self.exit(k, c, p, true));
        }
        (lo.max(self.y[0]), hi.min(self.y[self.y.len() - 1]))
    }

    /// `sup` (or `inf`) over `u` in `[lo, hi]` of `f(u) - c (u - y_k)`.
    fn extreme_on(&self, f: &[T], k: usize, c: T, lo: T, hi: T, sup: bool) -> T {
        let val = |u: T, fu: T| fu - c * (u - self.y[k]);
        let pick = |a: T, b: T| if sup { a.max(b) } else { a.min(b) };
        let mut out = pick(val(lo, self.interp(f, lo)), val(hi, self.interp(f, hi)));
        for j in 0..self.y.len() {
            if self.y[j] > lo && self.y[j] < hi {
                out = pick(out, val(self.y[j], f[j]));
            }
        }
        out
    }
}

/// Literal evaluation of the sup/inf line constructions at every grid node.
/// Brute force over all vertex-supported lines; for small grids only.
pub fn supinf_bruteforce<T: Real>(c: &Corridor<T>, side: SupInfSide) -> Result<Vec<T>> {
    const MAX_N: usize = 257;
    if c.len() > MAX_N {
        return Err(Error::GridTooLarge {
            n: c.len(),
            max: MAX_N,
        });
    }
    let ext = Ext::new(c)?;
    let slopes = ext.slopes();
    let mut out = Vec::with_capacity(c.len());
    for i in 0..c.len() {
        let k = i + ext.offset;
        let v = match side {
            SupInfSide::SupSup => {
                let mut best = ext.lo[k];
                for &z in &slopes {
                    let lv = ext.levels(k, z);
                    if let Some(j) = Ext::extreme_level(&lv, true, |p| ext.g_first(k, z, p)) {
                        best = best.max(lv[j + j % 2]);
                    }
                }
                best
            }
            SupInfSide::InfInf => {
                let mut best = ext.hi[k];
                for &z in &slopes {
                    let lv = ext.levels(k, z);
                    if let Some(j) = Ext::extreme_level(&lv, false, |p| ext.h_first(k, z, p)) {
                        best = best.min(lv[j - j % 2]);
                    }
                }
                best
            }
            SupInfSide::InfSup => {
                // For each slope: windows of the lines that meet the upper obstacle first,
                // then the best lower-obstacle value against that slope inside them.
                let mut best = T::infinity();
                for &z in &slopes {
                    let lv = ext.levels(k, z);
                    if let Some(j) = Ext::extreme_level(&lv, false, |p| ext.h_first(k, z, p)) {
                        let (lo, hi) = ext.window_union(k, z, &lv[j - j % 2..]);
                        best = best.min(ext.extreme_on(&ext.lo, k, z, lo, hi, true));
                    }
                }
                best
            }
            SupInfSide::SupInf => {
                let mut best = T::neg_infinity();
                for &z in &slopes {
                    let lv = ext.levels(k, z);
                    if let Some(j) = Ext::extreme_level(&lv, true, |p| ext.g_first(k, z, p)) {
                        let (lo, hi) = ext.window_union(k, z, &lv[..=j + j % 2]);
                        best = best.max(ext.extreme_on(&ext.hi, k, z, lo, hi, false));
                    }
                }
                best
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Intercepts of the line through `(y_i, p)` with slope `c`; `i` indexes the corridor grid.
pub fn line_probe<T: Real>(c: &Corridor<T>, i: usize, slope: T, p: T) -> Result<LineProbe<T>> {
    if i >= c.len() {
        return Err(Error::InvalidInput(format!("index {i} outside the grid")));
    }
    let ext = Ext::new(c)?;
    Ok(ext.probe(i + ext.offset, slope, p))
}

/// Slope interval `[lo, hi]`; empty when `lo > hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeInterval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> SlopeInterval<T> {
    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }
    pub fn contains(&self, s: T) -> bool {
        self.lo <= s && s <= self.hi
    }
}

impl<T: Real> Ext<T> {
    /// Does the line from `(y_k, p)` with slope `c` stay on the `above` side of `own`
    /// (within tolerance) until it reaches `other`, going right or left?
    fn admissible(&self, k: usize, c: T, p: T, own_lo: bool, right: bool) -> bool {
        let n = self.y.len();
        let tol = self.tol;
        let line = |j: usize| p + c * (self.y[j] - self.y[k]);
        // Signed distances: `bad` < 0 means the line crossed its own obstacle,
        // `hit` <= 0 means it reached the other one.
        let bad = |j: usize| {
            if own_lo {
                line(j) - self.lo[j] + tol
            } else {
                self.hi[j] - line(j) + tol
            }
        };
        let hit = |j: usize| {
            if own_lo {
                self.hi[j] - line(j)
            } else {
                line(j) - self.lo[j]
            }
        };
        if hit(k) <= tol {
            return true;
        }
        let mut j = k;
        loop {
            let nj = if right {
                if j + 1 >= n {
                    return true;
                }
                j + 1
            } else {
                if j == 0 {
                    return true;
                }
                j - 1
            };
            let (hb, bb) = (hit(nj), bad(nj));
            if bb < T::zero() {
                // Crossed the own obstacle inside this step; fine only if the other one came first.
                if hb > tol {
                    return false;
                }
                let ha = hit(j).max(T::zero());
                let ba = bad(j).max(T::zero());
                let t_hit = ha / (ha - hb);
                let t_bad = ba / (ba - bb);
                return t_hit <= t_bad;
            }
            if hb <= tol {
                return true;
            }
            j = nj;
        }
    }

    fn differential(&self, k: usize, own_lo: bool) -> SlopeInterval<T> {
        let p = if own_lo { self.lo[k] } else { self.hi[k] };
        let other = if own_lo { self.hi[k] } else { self.lo[k] };
        if (other - p).abs() <= self.tol {
            return SlopeInterval {
                lo: T::neg_infinity(),
                hi: T::infinity(),
            };
        }
        let cands = |right: bool| {
            let mut v: Vec<T> = Vec::new();
            for j in 0..self.y.len() {
                if (right && j > k) || (!right && j < k) {
                    for f in [self.lo[j], self.hi[j]] {
                        v.push((f - p) / (self.y[j] - self.y[k]));
                    }
                }
            }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        };
        // Going right the admissible slopes form [c_r, inf) for the lower obstacle and
        // (-inf, c_r] for the upper one; mirrored going left.
        let bound = |right: bool| -> T {
            let cs = cands(right);
            let up_ok = own_lo == right;
            if cs.is_empty() {
                return if up_ok {
                    T::neg_infinity()
                } else {
                    T::infinity()
                };
            }
            let ok = |c: T| self.admissible(k, c, p, own_lo, right);
            if up_ok {
                // Smallest admissible candidate; admissibility is upward closed.
                if ok(cs[0] - T::one()) && ok(cs[0]) {
                    return T::neg_infinity();
                }
                match cs.iter().position(|&c| ok(c)) {
                    Some(i) => cs[i],
                    None => T::infinity(),
                }
            } else {
                let last = cs[cs.len() - 1];
                if ok(last + T::one()) && ok(last) {
                    return T::infinity();
                }
                match cs.iter().rposition(|&c| ok(c)) {
                    Some(i) => cs[i],
                    None => T::neg_infinity(),
                }
            }
        };
        let (r, l) = (bound(true), bound(false));
        if own_lo {
            SlopeInterval { lo: r, hi: l }
        } else {
            SlopeInterval { lo: l, hi: r }
        }
    }
}

/// Barrier-modified differentials at grid node `i`: the subdifferential of the upper
/// obstacle in the presence of the lower one, and the superdifferential of the lower
/// obstacle in the presence of the upper one.
pub fn modified_differentials<T: Real>(
    c: &Corridor<T>,
    i: usize,
) -> Result<(SlopeInterval<T>, SlopeInterval<T>)> {
    if i >= c.len() {
        return Err(Error::InvalidInput(format!("index {i} outside the grid")));
    }
    let ext = Ext::new(c)?;
    let k = i + ext.offset;
    Ok((ext.differential(k, false), ext.differential(k, true)))
}
