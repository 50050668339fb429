//! Single-player stopping and two-player (Dynkin) game solves on top of the envelope and
//! taut-string kernels, mapped back to the original coordinates.

use crate::barrier::{corridor, taut_string, TautEnvelope};
use crate::diffusion::{fundamental_solutions, DiffusionSpec};
use crate::envelope::{least_concave_majorant, End, EnvelopeResult};
use crate::error::{Error, Result};
use crate::payoff_expr::{PayoffExpr, PayoffSpec, Side};
use crate::scalar::{lit, to_f64, Real};
use crate::scale::{build_scale, build_scale_on, Direction, ScaleTransform, Spacing};
use crate::transform::{transform_payoff_with, TransformOptions, TransformedObstacle};

#[derive(Debug, Clone)]
pub struct SolveOptions<T> {
    pub n: usize,
    pub spacing: Spacing,
    pub direction: Direction,
    /// Solve on `[lo, hi]` instead of the diffusion's default window.
    pub window: Option<(T, T)>,
    pub transform: TransformOptions<T>,
    /// Also solve in the other scale and record the discrepancy.
    pub cross_check: bool,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            n: 4097,
            spacing: Spacing::UniformY,
            direction: Direction::PsiScale,
            window: None,
            transform: TransformOptions::default(),
            cross_check: true,
        }
    }
}

/// Node classification on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Continuation,
    Lower,
    Upper,
    Both,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Region::Continuation => "C",
            Region::Lower => "D+",
            Region::Upper => "D-",
            Region::Both => "BOTH",
        }
    }
    fn is_lower(self) -> bool {
        matches!(self, Region::Lower | Region::Both)
    }
    fn is_upper(self) -> bool {
        matches!(self, Region::Upper | Region::Both)
    }
}

/// What holds a free segment of the natural-scale solution at one end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support<T> {
    /// Fixed point `(y, v)` (an anchor outside the grid or a grid end node).
    Point { y: T, v: T },
    /// The segment continues to the end of the domain with slope `s`.
    Ray(T),
    /// Touches an obstacle at `x` (`upper` for `W_H`). `refined` is false when the
    /// tangency could not be located off-grid and the grid node is used.
    Touch {
        x: T,
        y: T,
        v: T,
        upper: bool,
        node: usize,
        refined: bool,
    },
}

/// An affine piece `v0 + slope (y - y0)` of the natural-scale solution over `[x0, x1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeSegment<T> {
    pub x0: T,
    pub x1: T,
    pub y0: T,
    pub v0: T,
    pub slope: T,
    pub left: Support<T>,
    pub right: Support<T>,
}

impl<T: Real> FreeSegment<T> {
    fn at(&self, y: T) -> T {
        self.v0 + self.slope * (y - self.y0)
    }
}

/// Solution in natural scale plus everything needed to evaluate it anywhere in the window.
#[derive(Debug, Clone)]
pub struct ValueProfile<T> {
    pub st: ScaleTransform<T>,
    pub payoff: PayoffSpec,
    /// Natural-scale values on the grid.
    pub v_scaled: Vec<T>,
    /// `V` on the grid.
    pub v: Vec<T>,
    pub regions: Vec<Region>,
    pub segments: Vec<FreeSegment<T>>,
}

/// Transformed payoff `P/divisor` and its `y`-derivative from `side`.
fn obstacle_at<T: Real>(
    st: &ScaleTransform<T>,
    p: &PayoffExpr,
    x: T,
    side: Side,
) -> Result<(T, T, T)> {
    let (v, dv) = p.eval_with_derivative(x, side)?;
    let (d, dd, dydx) = st.local(x);
    let w = v / d;
    let dw = (dv * d - v * dd) / (d * d) / dydx;
    Ok((st.scale(x), w, dw))
}

/// Bisection for a sign change of `g` on `[a, b]`.
fn bisect<T: Real>(g: &impl Fn(T) -> Option<T>, a: T, b: T) -> Option<T> {
    let (mut a, mut b) = (a, b);
    let (mut ga, gb) = (g(a)?, g(b)?);
    if ga == T::zero() {
        return Some(a);
    }
    if gb == T::zero() {
        return Some(b);
    }
    if (ga > T::zero()) == (gb > T::zero()) {
        return None;
    }
    for _ in 0..200 {
        let m = a + (b - a) / lit(2.0);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m)?;
        if gm == T::zero() {
            return Some(m);
        }
        if (gm > T::zero()) == (ga > T::zero()) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Some(a + (b - a) / lit(2.0))
}

/// End condition of the natural-scale problem, as seen by the profile builder.
#[derive(Debug, Clone, Copy)]
pub(crate) enum EndKind<T> {
    Anchor { y: T, v: T },
    Ray(T),
    Node,
}

struct ProfileInput<'a, T> {
    st: &'a ScaleTransform<T>,
    payoff: &'a PayoffSpec,
    v: &'a [T],
    wg: &'a [T],
    wh: Option<&'a [T]>,
    lower: &'a [bool],
    upper: &'a [bool],
    left: EndKind<T>,
    right: EndKind<T>,
}

impl<T: Real> ValueProfile<T> {
    fn build(inp: ProfileInput<'_, T>) -> Result<Self> {
        let st = inp.st;
        let n = st.len();
        let xs = st.x_grid();
        let ys = st.y_grid();
        let regions: Vec<Region> = (0..n)
            .map(|i| match (inp.lower[i], inp.upper[i]) {
                (true, true) => Region::Both,
                (true, false) => Region::Lower,
                (false, true) => Region::Upper,
                (false, false) => Region::Continuation,
            })
            .collect();
        let node_support = |j: usize| -> Support<T> {
            let upper = regions[j] == Region::Upper;
            let v = if upper {
                inp.wh.map(|h| h[j]).unwrap_or(inp.v[j])
            } else {
                inp.wg[j]
            };
            Support::Touch {
                x: xs[j],
                y: ys[j],
                v,
                upper,
                node: j,
                refined: false,
            }
        };
        let end_support = |e: EndKind<T>, j: usize| -> Support<T> {
            match e {
                EndKind::Anchor { y, v } => Support::Point { y, v },
                EndKind::Ray(s) => Support::Ray(s),
                EndKind::Node => Support::Point {
                    y: ys[j],
                    v: inp.v[j],
                },
            }
        };

        let mut segments = Vec::new();
        let mut i = 0;
        while i < n {
            if regions[i] != Region::Continuation {
                i += 1;
                continue;
            }
            let i0 = i;
            while i + 1 < n && regions[i + 1] == Region::Continuation {
                i += 1;
            }
            let i1 = i;
            i += 1;
            let mut left = if i0 > 0 {
                node_support(i0 - 1)
            } else {
                end_support(inp.left, 0)
            };
            let mut right = if i1 + 1 < n {
                node_support(i1 + 1)
            } else {
                end_support(inp.right, n - 1)
            };
            for _ in 0..8 {
                let nl = refine(&inp, left, right, true)?;
                let nr = refine(&inp, right, nl, false)?;
                let done = nl == left && nr == right;
                left = nl;
                right = nr;
                if done {
                    break;
                }
            }
            segments.push(make_segment(left, right, xs[0], xs[n - 1]));
        }
        let v: Vec<T> = (0..n).map(|i| inp.v[i] * st.divisor(xs[i])).collect();
        Ok(ValueProfile {
            st: st.clone(),
            payoff: inp.payoff.clone(),
            v_scaled: inp.v.to_vec(),
            v,
            regions,
            segments,
        })
    }

    /// `V(x)` anywhere in the grid window.
    pub fn value(&self, x: T) -> Result<T> {
        let xs = self.st.x_grid();
        let n = xs.len();
        let (lo, hi) = (xs[0], xs[n - 1]);
        let slack = (hi - lo) * lit(1e-12);
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(Error::OutOfRange {
                value: to_f64(x),
                lo: to_f64(lo),
                hi: to_f64(hi),
            });
        }
        let x = x.max(lo).min(hi);
        if let Some(s) = self.segments.iter().find(|s| s.x0 <= x && x <= s.x1) {
            return Ok(s.at(self.st.scale(x)) * self.st.divisor(x));
        }
        let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
        let (a, b) = (self.regions[k - 1], self.regions[k]);
        let contact = if a == Region::Continuation { b } else { a };
        let mixed = (a == Region::Lower && b == Region::Upper)
            || (a == Region::Upper && b == Region::Lower);
        if mixed {
            let ys = self.st.y_grid();
            let y = self.st.scale(x);
            let v = self.v_scaled[k - 1]
                + (self.v_scaled[k] - self.v_scaled[k - 1])
                    * ((y - ys[k - 1]) / (ys[k] - ys[k - 1]));
            return Ok(v * self.st.divisor(x));
        }
        match contact {
            Region::Upper => self
                .payoff
                .h
                .as_ref()
                .expect("upper contact implies H")
                .eval(x),
            _ => self.payoff.g.eval(x),
        }
    }

    /// Maximal intervals of nodes satisfying `pred`, widened to refined tangency points.
    fn intervals(&self, pred: impl Fn(Region) -> bool, upper: bool) -> Vec<(T, T)> {
        let xs = self.st.x_grid();
        let n = xs.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            if !pred(self.regions[i]) {
                i += 1;
                continue;
            }
            let s = i;
            while i + 1 < n && pred(self.regions[i + 1]) {
                i += 1;
            }
            let e = i;
            i += 1;
            let mut a = xs[s];
            let mut b = xs[e];
            for seg in &self.segments {
                if let Support::Touch {
                    x, node, upper: u, ..
                } = seg.right
                {
                    if node == s && u == upper {
                        a = x;
                    }
                }
                if let Support::Touch {
                    x, node, upper: u, ..
                } = seg.left
                {
                    if node == e && u == upper {
                        b = x;
                    }
                }
            }
            out.push((a, b));
        }
        out
    }
}

fn make_segment<T: Real>(left: Support<T>, right: Support<T>, x_lo: T, x_hi: T) -> FreeSegment<T> {
    let point = |s: Support<T>| match s {
        Support::Point { y, v } => Some((y, v)),
        Support::Touch { y, v, .. } => Some((y, v)),
        Support::Ray(_) => None,
    };
    let (y0, v0, slope) = match (point(left), point(right), left, right) {
        (Some((ya, va)), Some((yb, vb)), _, _) => (ya, va, (vb - va) / (yb - ya)),
        (Some((ya, va)), None, _, Support::Ray(s)) => (ya, va, s),
        (None, Some((yb, vb)), Support::Ray(s), _) => (yb, vb, s),
        _ => unreachable!("at most one ray end"),
    };
    let x0 = if let Support::Touch { x, .. } = left {
        x
    } else {
        x_lo
    };
    let x1 = if let Support::Touch { x, .. } = right {
        x
    } else {
        x_hi
    };
    FreeSegment {
        x0,
        x1,
        y0,
        v0,
        slope,
        left,
        right,
    }
}

/// Moves a grid-node touch point to the off-grid tangency against the opposite support.
fn refine<T: Real>(
    inp: &ProfileInput<'_, T>,
    me: Support<T>,
    other: Support<T>,
    is_left: bool,
) -> Result<Support<T>> {
    let Support::Touch { upper, node, .. } = me else {
        return Ok(me);
    };
    let st = inp.st;
    let xs = st.x_grid();
    let n = xs.len();
    let expr = if upper {
        match &inp.payoff.h {
            Some(h) => h,
            None => return Ok(me),
        }
    } else {
        &inp.payoff.g
    };
    // Derivative from the free side of the touch point.
    let side = if is_left { Side::Right } else { Side::Left };
    let target = match other {
        Support::Ray(s) => Err(s),
        Support::Point { y, v } | Support::Touch { y, v, .. } => Ok((y, v)),
    };
    let g = |x: T| -> Option<T> {
        let (y, w, dw) = obstacle_at(st, expr, x, side).ok()?;
        let r = match target {
            Err(s) => dw - s,
            Ok((yo, vo)) => w + dw * (yo - y) - vo,
        };
        r.is_finite().then_some(r)
    };
    let toward = if is_left {
        node + 1
    } else {
        node.wrapping_sub(1)
    };
    let away = if is_left {
        node.wrapping_sub(1)
    } else {
        node + 1
    };
    for nb in [toward, away] {
        if nb >= n {
            continue;
        }
        let (a, b) = if nb < node {
            (xs[nb], xs[node])
        } else {
            (xs[node], xs[nb])
        };
        if let Some(x) = bisect(&g, a, b) {
            let (y, w, _) = obstacle_at(st, expr, x, side)?;
            return Ok(Support::Touch {
                x,
                y,
                v: w,
                upper,
                node,
                refined: true,
            });
        }
    }
    let (y, v) = (
        st.y_grid()[node],
        if upper {
            inp.wh.map(|h| h[node]).unwrap_or(inp.v[node])
        } else {
            inp.wg[node]
        },
    );
    Ok(Support::Touch {
        x: xs[node],
        y,
        v,
        upper,
        node,
        refined: false,
    })
}

/// Threshold pair of one continuation component (`None` where it reaches the window end).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds<T> {
    pub a_star: Option<T>,
    pub b_star: Option<T>,
}

#[derive(Debug, Clone)]
pub struct StoppingSolution<T> {
    pub tob: TransformedObstacle<T>,
    pub envelope: EnvelopeResult<T>,
    pub profile: ValueProfile<T>,
    pub continuation: Vec<(T, T)>,
    pub stopping: Vec<(T, T)>,
    pub thresholds: Vec<Thresholds<T>>,
    /// Largest relative difference against the solve in the other scale (interior nodes).
    pub dual_route_gap: Option<T>,
}

impl<T: Real> StoppingSolution<T> {
    pub fn value(&self, x: T) -> Result<T> {
        self.profile.value(x)
    }
}

fn scale_for<T: Real>(
    spec: &DiffusionSpec<T>,
    opts: &SolveOptions<T>,
    dir: Direction,
) -> Result<ScaleTransform<T>> {
    let fund = fundamental_solutions(spec)?;
    match opts.window {
        Some((lo, hi)) => build_scale_on(&fund, lo, hi, opts.n, opts.spacing, dir),
        None => build_scale(&fund, opts.n, opts.spacing, dir),
    }
}

fn ends_for<T: Real>(tob: &TransformedObstacle<T>) -> (EndKind<T>, EndKind<T>) {
    let origin = EndKind::Anchor {
        y: T::zero(),
        v: tob.w0,
    };
    let far = EndKind::Ray(tob.far_slope());
    if tob.origin_is_left() {
        (origin, far)
    } else {
        (far, origin)
    }
}

fn thresholds_of<T: Real>(p: &ValueProfile<T>) -> (Vec<(T, T)>, Vec<Thresholds<T>>) {
    let touch_x = |s: Support<T>| {
        if let Support::Touch { x, .. } = s {
            Some(x)
        } else {
            None
        }
    };
    let c = p.segments.iter().map(|s| (s.x0, s.x1)).collect();
    let t = p
        .segments
        .iter()
        .map(|s| Thresholds {
            a_star: touch_x(s.left),
            b_star: touch_x(s.right),
        })
        .collect();
    (c, t)
}

fn single_envelope<T: Real>(tob: &TransformedObstacle<T>) -> Result<EnvelopeResult<T>> {
    let origin = End::Anchor {
        at: T::zero(),
        value: tob.w0,
        limit: Some(tob.near_limit()),
    };
    let far = End::Slope(tob.far_slope());
    let (l, r) = if tob.origin_is_left() {
        (origin, far)
    } else {
        (far, origin)
    };
    least_concave_majorant(tob.y(), &tob.wg, l, r)
}

fn stopping_in(
    spec: &DiffusionSpec<impl Real>,
    payoff: &PayoffSpec,
    opts: &SolveOptions<impl Real>,
) -> Result<()> {
    spec.validate()?;
    if payoff.h.is_some() {
        return Err(Error::InvalidInput(
            "stopping problem takes G only; use the game solver".into(),
        ));
    }
    let _ = opts;
    Ok(())
}

fn solve_stopping_on<T: Real>(
    st: ScaleTransform<T>,
    payoff: &PayoffSpec,
    opts: &SolveOptions<T>,
) -> Result<StoppingSolution<T>> {
    let tob = transform_payoff_with(&st, payoff, &opts.transform)?;
    if tob.l_a > T::zero() || tob.l_b > T::zero() {
        return Err(Error::NoFiniteValue(format!(
            "G+/psi -> {} at the left end, G+/phi -> {} at the right end; no optimal stopping time exists",
            tob.l_a, tob.l_b
        )));
    }
    let envelope = single_envelope(&tob)?;
    let (left, right) = ends_for(&tob);
    let none = vec![false; st.len()];
    let profile = ValueProfile::build(ProfileInput {
        st: &st,
        payoff,
        v: &envelope.values,
        wg: &tob.wg,
        wh: None,
        lower: &envelope.contact,
        upper: &none,
        left,
        right,
    })?;
    let (continuation, thresholds) = thresholds_of(&profile);
    let stopping = profile.intervals(|r| r.is_lower(), false);
    Ok(StoppingSolution {
        tob,
        envelope,
        profile,
        continuation,
        stopping,
        thresholds,
        dual_route_gap: None,
    })
}

fn other(dir: Direction) -> Direction {
    match dir {
        Direction::PsiScale => Direction::PhiScale,
        Direction::PhiScale => Direction::PsiScale,
    }
}

/// Largest relative difference of two profiles at interior grid nodes of the first.
fn route_gap<T: Real>(a: &ValueProfile<T>, b: &ValueProfile<T>) -> T {
    let xs = a.st.x_grid();
    let n = xs.len();
    let skip = n / 100 + 1;
    let scale =
        a.v.iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
            .max(T::min_positive_value());
    let mut worst = T::zero();
    for i in skip..n.saturating_sub(skip) {
        if let (Ok(va), Ok(vb)) = (a.value(xs[i]), b.value(xs[i])) {
            let d = (va - vb).abs() / va.abs().max(scale * lit(1e-6));
            worst = worst.max(d);
        }
    }
    worst
}

/// Discounted optimal stopping with natural (or truncated) boundaries:
/// `V = W**(F(x)) * psi(x)` with the stopping set read off the contact set.
pub fn solve_stopping<T: Real>(
    spec: &DiffusionSpec<T>,
    payoff: &PayoffSpec,
    opts: &SolveOptions<T>,
) -> Result<StoppingSolution<T>> {
    stopping_in(spec, payoff, opts)?;
    let st = scale_for(spec, opts, opts.direction)?;
    // The check reuses the x nodes, so it compares the two scales and not two grids.
    let alt_st = if opts.cross_check {
        Some(st.with_direction(other(opts.direction))?)
    } else {
        None
    };
    let mut sol = solve_stopping_on(st, payoff, opts)?;
    if let Some(alt_st) = alt_st {
        let alt = solve_stopping_on(alt_st, payoff, opts)?;
        sol.dual_route_gap = Some(route_gap(&sol.profile, &alt.profile));
    }
    Ok(sol)
}

/// Stopping problem for the diffusion absorbed at `alpha` and `beta` (forced stop there).
pub fn solve_stopping_absorbed<T: Real>(
    spec: &DiffusionSpec<T>,
    payoff: &PayoffSpec,
    alpha: T,
    beta: T,
    opts: &SolveOptions<T>,
) -> Result<StoppingSolution<T>> {
    stopping_in(spec, payoff, opts)?;
    if !(spec.a < alpha && alpha <= beta && beta < spec.b) {
        return Err(Error::InvalidInput(format!(
            "need a < alpha <= beta < b, got alpha={alpha}, beta={beta}"
        )));
    }
    let fund = fundamental_solutions(spec)?;
    // alpha == beta: immediate absorption, a one-interval degenerate grid.
    let hi = if alpha == beta {
        alpha + (alpha.abs() + T::one()) * lit(1e-9)
    } else {
        beta
    };
    let n = if alpha == beta { 3 } else { opts.n };
    let st = build_scale_on(&fund, alpha, hi, n, opts.spacing, opts.direction)?;
    let tob = transform_payoff_with(&st, payoff, &opts.transform)?;
    let envelope = if alpha == beta {
        let mut e = least_concave_majorant(tob.y(), &tob.wg, End::Free, End::Free)?;
        e.values.clone_from(&tob.wg);
        e.contact = vec![true; n];
        e
    } else {
        least_concave_majorant(tob.y(), &tob.wg, End::Free, End::Free)?
    };
    let none = vec![false; n];
    let profile = ValueProfile::build(ProfileInput {
        st: &st,
        payoff,
        v: &envelope.values,
        wg: &tob.wg,
        wh: None,
        lower: &envelope.contact,
        upper: &none,
        left: EndKind::Node,
        right: EndKind::Node,
    })?;
    let (continuation, thresholds) = thresholds_of(&profile);
    let stopping = profile.intervals(|r| r.is_lower(), false);
    Ok(StoppingSolution {
        tob,
        envelope,
        profile,
        continuation,
        stopping,
        thresholds,
        dual_route_gap: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equilibrium {
    NashSaddle,
    StackelbergOnly,
    NoNash,
    Degenerate,
}

impl Equilibrium {
    pub fn name(self) -> &'static str {
        match self {
            Equilibrium::NashSaddle => "NashSaddle",
            Equilibrium::StackelbergOnly => "StackelbergOnly",
            Equilibrium::NoNash => "NoNash",
            Equilibrium::Degenerate => "Degenerate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GameSolution<T> {
    pub tob: TransformedObstacle<T>,
    pub taut: TautEnvelope<T>,
    pub profile: ValueProfile<T>,
    /// Where the sup-player stops (`V = G`).
    pub d_plus: Vec<(T, T)>,
    /// Where the inf-player stops (`V = H`).
    pub d_minus: Vec<(T, T)>,
    pub equilibrium: Equilibrium,
    /// Set when `H - G` is a positive constant: the cancellation penalty and its critical level.
    pub penalty: Option<T>,
    pub delta_star: Option<T>,
}

fn hitting_pair<T: Real>(set: &[(T, T)], x: T) -> (T, T) {
    let mut lo = T::neg_infinity();
    let mut hi = T::infinity();
    for &(a, b) in set {
        if a <= x && x <= b {
            return (x, x);
        }
        if b < x {
            lo = lo.max(b);
        }
        if a > x {
            hi = hi.min(a);
        }
    }
    (lo, hi)
}

impl<T: Real> GameSolution<T> {
    pub fn value(&self, x: T) -> Result<T> {
        self.profile.value(x)
    }

    /// `(x-, x+)`: the sup-player stops on leaving `(x-, x+)`; infinite where `D+` has no point.
    pub fn tau_thresholds(&self, x: T) -> (T, T) {
        hitting_pair(&self.d_plus, x)
    }

    /// `(y-, y+)` for the inf-player, from `D-`.
    pub fn sigma_thresholds(&self, x: T) -> (T, T) {
        hitting_pair(&self.d_minus, x)
    }
}

/// `max (V - G)` of the single-player solution, refined around the best node.
fn max_excess<T: Real>(sol: &StoppingSolution<T>, g: &PayoffExpr) -> Result<T> {
    let xs = sol.profile.st.x_grid();
    let n = xs.len();
    let f = |x: T| -> T {
        match (sol.value(x), g.eval(x)) {
            (Ok(v), Ok(gv)) => v - gv,
            _ => T::neg_infinity(),
        }
    };
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, &x) in xs.iter().enumerate() {
        let v = f(x);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    let (mut a, mut b) = (xs[best.saturating_sub(1)], xs[(best + 1).min(n - 1)]);
    let phi = lit::<T>(0.618_033_988_749_894_9);
    for _ in 0..200 {
        if b - a <= (a.abs() + b.abs()) * T::epsilon() {
            break;
        }
        let c = b - (b - a) * phi;
        let d = a + (b - a) * phi;
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best_v.max(f(a + (b - a) / lit(2.0))))
}

fn constant_gap<T: Real>(tob: &TransformedObstacle<T>) -> Option<T> {
    let h = tob.h.as_ref()?;
    let d0 = h[0] - tob.g[0];
    let scale = tob.g.iter().chain(h).fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = scale.max(T::one()) * lit(1e-12);
    let constant = h
        .iter()
        .zip(&tob.g)
        .all(|(&hv, &gv)| (hv - gv - d0).abs() <= tol);
    (constant && d0 > tol).then_some(d0)
}

/// Two-player stopping game: value from the taut string between `G/psi` and `H/psi`
/// (or the phi-scale pair), regions from its contact sets.
pub fn solve_game<T: Real>(
    spec: &DiffusionSpec<T>,
    payoff: &PayoffSpec,
    opts: &SolveOptions<T>,
) -> Result<GameSolution<T>> {
    spec.validate()?;
    if payoff.h.is_none() {
        return Err(Error::InvalidInput("game needs an upper payoff H".into()));
    }
    let st = scale_for(spec, opts, opts.direction)?;
    let tob = transform_payoff_with(&st, payoff, &opts.transform)?;
    let h = tob.h.as_ref().expect("checked above");
    let scale = tob.g.iter().chain(h).fold(T::zero(), |m, v| m.max(v.abs()));
    for i in 0..st.len() {
        if tob.g[i] > h[i] + scale.max(T::one()) * lit(1e-12) {
            return Err(Error::ObstacleOrderViolation {
                x: to_f64(st.x_grid()[i]),
                g: to_f64(tob.g[i]),
                h: to_f64(h[i]),
            });
        }
    }
    let c = corridor(&tob)?;
    let taut = taut_string(&c)?;
    let (left, right) = ends_for(&tob);
    let profile = ValueProfile::build(ProfileInput {
        st: &st,
        payoff,
        v: &taut.values,
        wg: &tob.wg,
        wh: tob.wh.as_deref(),
        lower: &taut.contact_lower,
        upper: &taut.contact_upper,
        left,
        right,
    })?;
    let d_plus = profile.intervals(|r| r.is_lower(), false);
    let d_minus = profile.intervals(|r| r.is_upper(), true);

    let penalty = constant_gap(&tob);
    let delta_star = match penalty {
        Some(_) if tob.l_a == T::zero() && tob.l_b == T::zero() => {
            let single = PayoffSpec {
                g: payoff.g.clone(),
                h: None,
                constants: payoff.constants.clone(),
            };
            let o = SolveOptions {
                cross_check: false,
                ..opts.clone()
            };
            let sol = solve_stopping_on(tob.st.clone(), &single, &o)?;
            Some(max_excess(&sol, &payoff.g)?)
        }
        _ => None,
    };

    let pos_a = tob.l_a > T::zero();
    let pos_b = tob.l_b > T::zero();
    let equilibrium = match (pos_a, pos_b) {
        (false, false) => {
            let degenerate = match (penalty, delta_star) {
                (Some(d), Some(ds)) => d >= ds,
                _ => d_minus.is_empty() && taut.delta_star.iter().any(|&d| d > taut.tol),
            };
            if degenerate {
                Equilibrium::Degenerate
            } else {
                Equilibrium::NashSaddle
            }
        }
        (true, true) => Equilibrium::StackelbergOnly,
        _ => {
            let n = st.len();
            // The end where the payoff keeps a positive limit.
            let k = if pos_a { 0 } else { n - 1 };
            // V > G next to that end: the sup-player's maximizing sequence never stops.
            if taut.eps_star[k] > taut.tol {
                Equilibrium::NoNash
            } else {
                Equilibrium::NashSaddle
            }
        }
    };
    Ok(GameSolution {
        tob,
        taut,
        profile,
        d_plus,
        d_minus,
        equilibrium,
        penalty,
        delta_star,
    })
}

/// Slope comparison at one free-boundary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothFitPoint<T> {
    pub x: T,
    /// Boundary of `D-` (against `H`) rather than `D+` (against `G`).
    pub upper: bool,
    /// The continuation region lies to the left of `x`.
    pub continuation_left: bool,
    /// Whether the tangency was located off-grid.
    pub refined: bool,
    /// `d(V/divisor)/dy` from the continuation side.
    pub slope: T,
    /// One-sided derivatives of the transformed payoff, `(left, right)`.
    pub payoff_slopes: (T, T),
    /// `dV/dx` from the continuation side and the payoff's `dx`-derivative on that side.
    pub value_dx: T,
    pub payoff_dx: T,
    pub contained: bool,
    /// Distance from `slope` to the admissible interval (0 when contained).
    pub mismatch: T,
}

#[derive(Debug, Clone)]
pub struct SmoothFitReport<T> {
    pub points: Vec<SmoothFitPoint<T>>,
    pub all_contained: bool,
}

/// Checks the (generalised) smooth-fit condition at every tangency point of the profile:
/// the continuation-side slope must lie in `[d+, d-]` of `G/divisor` (superdifferential)
/// at `D+` boundaries and in `[d-, d+]` of `H/divisor` at `D-` boundaries.
pub fn smooth_fit_report<T: Real>(p: &ValueProfile<T>) -> Result<SmoothFitReport<T>> {
    let mut points = Vec::new();
    for seg in &p.segments {
        for (sup, continuation_left) in [(seg.left, false), (seg.right, true)] {
            let Support::Touch {
                x, upper, refined, ..
            } = sup
            else {
                continue;
            };
            let expr = if upper {
                p.payoff.h.as_ref().expect("upper touch implies H")
            } else {
                &p.payoff.g
            };
            let (_, _, dl) = obstacle_at(&p.st, expr, x, Side::Left)?;
            let (_, _, dr) = obstacle_at(&p.st, expr, x, Side::Right)?;
            let (lo, hi) = if upper { (dl, dr) } else { (dr, dl) };
            let s = seg.slope;
            let tol = lit::<T>(1e-6) * T::one().max(s.abs()).max(dl.abs()).max(dr.abs());
            let mismatch = if s < lo {
                lo - s
            } else if s > hi {
                s - hi
            } else {
                T::zero()
            };
            let side = if continuation_left {
                Side::Left
            } else {
                Side::Right
            };
            let (d, dd, dydx) = p.st.local(x);
            let value_dx = dd * seg.at(p.st.scale(x)) + d * s * dydx;
            let (_, payoff_dx) = expr.eval_with_derivative(x, side)?;
            points.push(SmoothFitPoint {
                x,
                upper,
                continuation_left,
                refined,
                slope: s,
                payoff_slopes: (dl, dr),
                value_dx,
                payoff_dx,
                contained: mismatch <= tol,
                mismatch,
            });
        }
    }
    let all_contained = points.iter().all(|q| q.contained);
    Ok(SmoothFitReport {
        points,
        all_contained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn consts(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn put_opts() -> SolveOptions<f64> {
        SolveOptions {
            spacing: Spacing::UniformX,
            ..Default::default()
        }
    }

    fn gbm() -> DiffusionSpec<f64> {
        DiffusionSpec::gbm(0.05, 0.3).with_window(0.1, 409.7)
    }

    #[test]
    fn perpetual_put() {
        let p = PayoffSpec::parse("pos(K - x)", None, consts(&[("K", 100.0)])).unwrap();
        let sol = solve_stopping(&gbm(), &p, &put_opts()).unwrap();
        let xstar = 100.0 / (1.0 + 0.09 / 0.1);
        assert_eq!(sol.thresholds.len(), 1);
        let b = sol.thresholds[0].a_star.unwrap();
        assert!((b - xstar).abs() < 1e-9, "{b}");
        let k = 2.0 * 0.05 / 0.09;
        for i in 0..50 {
            let x = xstar + (300.0 - xstar) * i as f64 / 49.0;
            let exact = 0.09 / 0.1 * xstar.powf(1.0 + k) * x.powf(-k);
            let v = sol.value(x).unwrap();
            assert!((v / exact - 1.0).abs() < 1e-9, "x={x}: {v} vs {exact}");
        }
        assert!(
            sol.dual_route_gap.unwrap() < 1e-6,
            "{:?}",
            sol.dual_route_gap
        );
        let sf = smooth_fit_report(&sol.profile).unwrap();
        assert!(sf.all_contained);
        assert!((sf.points[0].value_dx + 1.0).abs() < 1e-6);
    }

    #[test]
    fn scale_concave_payoff_is_its_own_value() {
        // psi = x^(-10/9), phi = x: G = psi * (1 + F) = psi + phi is F-affine.
        let p = PayoffSpec::parse("x^(-10/9) + x", None, BTreeMap::new()).unwrap();
        let spec = DiffusionSpec::gbm(0.05, 0.3).with_window(1.0, 10.0);
        let o = SolveOptions {
            n: 257,
            transform: TransformOptions {
                l_a: Some(0.0),
                l_b: Some(0.0),
                ..Default::default()
            },
            ..put_opts()
        };
        let sol = solve_stopping_absorbed(&spec, &p, 1.0, 10.0, &o).unwrap();
        assert!(sol.continuation.is_empty());
        for x in [1.5, 3.0, 7.0] {
            assert!((sol.value(x).unwrap() - p.g.eval(x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn absorbed_tent() {
        let spec = DiffusionSpec::brownian(0.0, 2f64.sqrt(), 1e-12).with_window(-1.0, 2.0);
        let p = PayoffSpec::parse("pos(1 - 20*abs(x - 0.5))", None, BTreeMap::new()).unwrap();
        let o = SolveOptions {
            n: 101,
            ..put_opts()
        };
        let sol = solve_stopping_absorbed(&spec, &p, 0.0, 1.0, &o).unwrap();
        assert!((sol.value(0.25).unwrap() - 0.5).abs() < 1e-6);
        let same = solve_stopping_absorbed(&spec, &p, 0.5, 0.5, &o).unwrap();
        assert_eq!(same.value(0.5).unwrap(), 1.0);
    }

    #[test]
    fn h_present_is_rejected() {
        let p = PayoffSpec::parse(
            "pos(K - x)",
            Some("pos(K - x) + 1"),
            consts(&[("K", 100.0)]),
        )
        .unwrap();
        assert!(matches!(
            solve_stopping(&gbm(), &p, &put_opts()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn growth_violation_is_no_finite_value() {
        let p = PayoffSpec::parse("x^(-10/9)", None, BTreeMap::new()).unwrap();
        assert!(matches!(
            solve_stopping(&gbm(), &p, &put_opts()),
            Err(Error::NoFiniteValue(_))
        ));
    }

    #[test]
    fn equal_obstacles() {
        let p =
            PayoffSpec::parse("pos(K - x)", Some("pos(K - x)"), consts(&[("K", 100.0)])).unwrap();
        let sol = solve_game(&gbm(), &p, &put_opts()).unwrap();
        assert_eq!(sol.equilibrium, Equilibrium::NashSaddle);
        assert_eq!(sol.d_plus.len(), 1);
        assert_eq!(sol.d_minus.len(), 1);
        assert_eq!(sol.tau_thresholds(50.0), (50.0, 50.0));
        assert_eq!(sol.sigma_thresholds(150.0), (150.0, 150.0));
        assert!((sol.value(70.0).unwrap() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn order_violation() {
        let p = PayoffSpec::parse(
            "pos(K - x)",
            Some("pos(K - x) - 1"),
            consts(&[("K", 100.0)]),
        )
        .unwrap();
        assert!(matches!(
            solve_game(&gbm(), &p, &put_opts()),
            Err(Error::ObstacleOrderViolation { .. })
        ));
    }

    fn israeli(delta: f64) -> GameSolution<f64> {
        let p = PayoffSpec::parse(
            "pos(K - x)",
            Some("pos(K - x) + d"),
            consts(&[("K", 100.0), ("d", delta)]),
        )
        .unwrap();
        solve_game(&gbm(), &p, &put_opts()).unwrap()
    }

    const DELTA_STAR: f64 = 23.2146791256481;

    /// Root of beta (1 + d/K) u = k + u^beta, u = x/K, below 1.
    fn israeli_xstar(d: f64) -> f64 {
        let (kk, k) = (100.0, 2.0 * 0.05 / 0.09);
        let beta = 1.0 + k;
        let f = |u: f64| beta * (1.0 + d / kk) * u - k - u.powf(beta);
        let (mut a, mut b) = (1e-6, 1.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if (f(m) > 0.0) == (f(b) > 0.0) {
                b = m
            } else {
                a = m
            }
        }
        kk * 0.5 * (a + b)
    }

    #[test]
    fn israeli_put_saddle() {
        let d = 0.5 * DELTA_STAR;
        let sol = israeli(d);
        assert_eq!(sol.equilibrium, Equilibrium::NashSaddle);
        assert!(
            (sol.delta_star.unwrap() / DELTA_STAR - 1.0).abs() < 1e-10,
            "{:?}",
            sol.delta_star
        );
        let xs = israeli_xstar(d);
        assert!((xs - 63.34641247273159).abs() < 1e-9);
        assert_eq!(sol.tau_thresholds(80.0).0, sol.d_plus[0].1);
        assert!((sol.d_plus[0].1 - xs).abs() < 1e-8, "{:?}", sol.d_plus);
        assert_eq!(sol.d_minus.len(), 1);
        assert!(
            (sol.d_minus[0].0 - 100.0).abs() < 1e-9 && (sol.d_minus[0].1 - 100.0).abs() < 1e-9,
            "{:?}",
            sol.d_minus
        );
        let (kk, k) = (100.0_f64, 2.0 * 0.05 / 0.09);
        let a = 1.0 / (1.0 + k);
        let q = |x: f64| x.powf(-1.0 / a);
        let exact = |x: f64| {
            if x < xs {
                kk - x
            } else if x <= kk {
                d * (x / kk) * (q(xs) - q(x)) / (q(xs) - q(kk))
                    + (kk - xs) * (x / xs) * (q(x) - q(kk)) / (q(xs) - q(kk))
            } else {
                d * (x / kk).powf((a - 1.0) / a)
            }
        };
        for i in 0..50 {
            let x = 20.0 + 280.0 * i as f64 / 49.0;
            let v = sol.value(x).unwrap();
            assert!(
                (v / exact(x) - 1.0).abs() < 1e-8,
                "x={x}: {v} vs {}",
                exact(x)
            );
        }
        let sf = smooth_fit_report(&sol.profile).unwrap();
        assert!(sf.all_contained, "{:?}", sf.points);
    }

    #[test]
    fn israeli_put_degenerate() {
        let sol = israeli(2.0 * DELTA_STAR);
        assert_eq!(sol.equilibrium, Equilibrium::Degenerate);
        assert!(sol.d_minus.is_empty());
        let xstar: f64 = 100.0 / 1.9;
        let k = 2.0 * 0.05 / 0.09;
        for x in [60.0_f64, 100.0, 250.0] {
            let put = 0.09 / 0.1 * xstar.powf(1.0 + k) * x.powf(-k);
            assert!((sol.value(x).unwrap() / put - 1.0).abs() < 1e-9);
        }
    }

    fn bm_game(wg: &str) -> GameSolution<f64> {
        let spec = DiffusionSpec::brownian(0.0, 2f64.sqrt(), 1.0).with_window(-4.0, 3.0);
        let g = format!("exp(-x) * ({})", wg.replace('y', "exp(2*x)"));
        let h = format!("{g} + 3*exp(-abs(x))");
        let p = PayoffSpec::parse(&g, Some(&h), BTreeMap::new()).unwrap();
        let o = SolveOptions {
            n: 2049,
            ..put_opts()
        };
        solve_game(&spec, &p, &o).unwrap()
    }

    #[test]
    fn nash_failure_near_left_end() {
        let sol = bm_game("pos(1 - y) + 2*pos(1 - abs(y - 2))");
        assert!((sol.tob.l_a - 1.0).abs() < 1e-3, "{}", sol.tob.l_a);
        assert_eq!(sol.equilibrium, Equilibrium::NoNash);
        let sol = bm_game("max(0, min(1 + y, 4 - y))");
        assert!(sol.tob.l_a > 0.5);
        assert_eq!(sol.equilibrium, Equilibrium::NashSaddle);
    }
}
