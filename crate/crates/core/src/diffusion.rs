//! Regular one-dimensional diffusions `dX = mu(X) dt + sqrt(2 D(X)) dW` killed at rate `r`,
//! and the fundamental solutions of `D f'' + mu f' = r f`.

use crate::error::{Error, Result};
use crate::payoff_expr::PayoffExpr;
use crate::scalar::{from_usize, lit, to_f64, Real};

#[derive(Debug, Clone)]
pub enum DiffusionKind<T> {
    /// `dX = drift dt + sigma dW`.
    BrownianMotion { drift: T, sigma: T },
    /// `dX = r_drift X dt + sigma X dW`; closed form only when `r_drift` equals the discount rate.
    GeometricBM { r_drift: T, sigma: T },
    /// Fundamental solutions supplied as samples; interpolated with a monotone cubic.
    CustomTabulated {
        grid: Vec<T>,
        phi_values: Vec<T>,
        psi_values: Vec<T>,
    },
    /// Generator coefficients `mu(x)` and `D(x)` as expressions; solved numerically.
    Generator {
        mu: PayoffExpr,
        d: PayoffExpr,
        anchor: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind<T> {
    Natural,
    Absorbing { at: T },
}

#[derive(Debug, Clone)]
pub struct DiffusionSpec<T> {
    pub kind: DiffusionKind<T>,
    /// Discount rate, per unit time.
    pub rate: T,
    /// State interval `(a, b)`; endpoints may be infinite.
    pub a: T,
    pub b: T,
    pub left: BoundaryKind<T>,
    pub right: BoundaryKind<T>,
    /// Truncation distance from finite natural endpoints (default `1e-4 * (b - a)`).
    pub eta: Option<T>,
    /// Explicit computational window; required at infinite endpoints.
    pub x_min: Option<T>,
    pub x_max: Option<T>,
}

impl<T: Real> DiffusionSpec<T> {
    pub fn new(kind: DiffusionKind<T>, rate: T, a: T, b: T) -> Self {
        DiffusionSpec {
            kind,
            rate,
            a,
            b,
            left: BoundaryKind::Natural,
            right: BoundaryKind::Natural,
            eta: None,
            x_min: None,
            x_max: None,
        }
    }

    /// Geometric Brownian motion on `(0, inf)` with drift equal to the discount rate.
    pub fn gbm(rate: T, sigma: T) -> Self {
        Self::new(
            DiffusionKind::GeometricBM {
                r_drift: rate,
                sigma,
            },
            rate,
            T::zero(),
            T::infinity(),
        )
    }

    /// Brownian motion with drift on the real line.
    pub fn brownian(drift: T, sigma: T, rate: T) -> Self {
        Self::new(
            DiffusionKind::BrownianMotion { drift, sigma },
            rate,
            T::neg_infinity(),
            T::infinity(),
        )
    }

    pub fn with_window(mut self, x_min: T, x_max: T) -> Self {
        self.x_min = Some(x_min);
        self.x_max = Some(x_max);
        self
    }

    pub fn with_eta(mut self, eta: T) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_nan() || self.b.is_nan() || self.a >= self.b {
            return Err(Error::InvalidInput(format!(
                "need a < b, got ({}, {})",
                self.a, self.b
            )));
        }
        if !(self.rate > T::zero()) || !self.rate.is_finite() {
            return Err(Error::InvalidInput(format!(
                "discount rate must be positive, got {}",
                self.rate
            )));
        }
        match &self.kind {
            DiffusionKind::BrownianMotion { sigma, drift }
            | DiffusionKind::GeometricBM {
                sigma,
                r_drift: drift,
            } => {
                if !(*sigma > T::zero()) || !sigma.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "sigma must be positive, got {sigma}"
                    )));
                }
                if !drift.is_finite() {
                    return Err(Error::InvalidInput("drift must be finite".into()));
                }
            }
            DiffusionKind::CustomTabulated {
                grid,
                phi_values,
                psi_values,
            } => {
                check_table(grid, phi_values, psi_values)?;
            }
            DiffusionKind::Generator { anchor, .. } => {
                if !(*anchor > self.a && *anchor < self.b) {
                    return Err(Error::InvalidInput(format!(
                        "anchor {anchor} outside ({}, {})",
                        self.a, self.b
                    )));
                }
            }
        }
        if let Some(e) = self.eta {
            if !(e > T::zero()) {
                return Err(Error::InvalidInput(format!(
                    "eta must be positive, got {e}"
                )));
            }
        }
        for (at, which) in [(self.left, "left"), (self.right, "right")] {
            if let BoundaryKind::Absorbing { at } = at {
                if !(at >= self.a && at <= self.b) || !at.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "{which} absorbing point {at} outside [a, b]"
                    )));
                }
            }
        }
        Ok(())
    }

    fn eta_or_default(&self) -> T {
        match self.eta {
            Some(e) => e,
            None => {
                let w = self.b - self.a;
                if w.is_finite() {
                    w * lit(1e-4)
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Truncated computational window `[lo, hi]` inside `(a, b)`.
    pub fn window(&self) -> Result<(T, T)> {
        let eta = self.eta_or_default();
        let lo = match self.x_min {
            Some(v) => v,
            None if self.a.is_finite() => {
                if eta > T::zero() {
                    self.a + eta
                } else {
                    return Err(Error::InvalidInput(
                        "finite a with unbounded b needs eta or x_min".into(),
                    ));
                }
            }
            None => {
                return Err(Error::InvalidInput(
                    "infinite lower endpoint requires x_min".into(),
                ))
            }
        };
        let hi = match self.x_max {
            Some(v) => v,
            None if self.b.is_finite() => {
                if eta > T::zero() {
                    self.b - eta
                } else {
                    return Err(Error::InvalidInput(
                        "finite b with unbounded a needs eta or x_max".into(),
                    ));
                }
            }
            None => {
                return Err(Error::InvalidInput(
                    "infinite upper endpoint requires x_max".into(),
                ))
            }
        };
        if !(lo > self.a || (lo == self.a && matches!(self.left, BoundaryKind::Absorbing { .. })))
            || !(hi < self.b
                || (hi == self.b && matches!(self.right, BoundaryKind::Absorbing { .. })))
            || lo >= hi
        {
            return Err(Error::InvalidInput(format!(
                "window [{lo}, {hi}] not inside ({}, {})",
                self.a, self.b
            )));
        }
        Ok((lo, hi))
    }

    /// Drift coefficient `mu(x)`.
    pub fn drift(&self, x: T) -> Result<T> {
        match &self.kind {
            DiffusionKind::BrownianMotion { drift, .. } => Ok(*drift),
            DiffusionKind::GeometricBM { r_drift, .. } => Ok(*r_drift * x),
            DiffusionKind::Generator { mu, .. } => mu.eval(x),
            DiffusionKind::CustomTabulated { .. } => Err(Error::Unsupported(
                "tabulated diffusions carry no coefficients".into(),
            )),
        }
    }

    /// Volatility `sqrt(2 D(x))`.
    pub fn volatility(&self, x: T) -> Result<T> {
        match &self.kind {
            DiffusionKind::BrownianMotion { sigma, .. } => Ok(*sigma),
            DiffusionKind::GeometricBM { sigma, .. } => Ok(*sigma * x.abs()),
            DiffusionKind::Generator { d, .. } => {
                let dv = d.eval(x)?;
                if dv < T::zero() {
                    return Err(Error::DegenerateSystem(format!("D({x}) = {dv} < 0")));
                }
                Ok((lit::<T>(2.0) * dv).sqrt())
            }
            DiffusionKind::CustomTabulated { .. } => Err(Error::Unsupported(
                "tabulated diffusions carry no coefficients".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    ClosedForm,
    Tabulated,
    NumericOde,
}

#[derive(Debug, Clone)]
enum Repr<T> {
    Exponential { lp: T, lm: T },
    Power { k: T },
    Table { phi: Pchip<T>, psi: Pchip<T> },
    Ode { phi: Dense<T>, psi: Dense<T> },
}

/// The increasing (`phi`) and decreasing (`psi`) positive solutions of `L f = r f`.
#[derive(Debug, Clone)]
pub struct FundamentalSolutions<T> {
    repr: Repr<T>,
    source: Source,
    lo: T,
    hi: T,
    a: T,
    b: T,
    wronskian: Vec<T>,
}

impl<T: Real> FundamentalSolutions<T> {
    pub fn phi(&self, x: T) -> T {
        match &self.repr {
            Repr::Exponential { lp, .. } => (*lp * x).exp(),
            Repr::Power { .. } => x,
            Repr::Table { phi, .. } => phi.eval(x).0,
            Repr::Ode { phi, .. } => phi.eval(x).0,
        }
    }

    pub fn psi(&self, x: T) -> T {
        match &self.repr {
            Repr::Exponential { lm, .. } => (*lm * x).exp(),
            Repr::Power { k } => x.powf(-*k),
            Repr::Table { psi, .. } => psi.eval(x).0,
            Repr::Ode { psi, .. } => psi.eval(x).0,
        }
    }

    /// `(phi, phi', psi, psi')` at `x`.
    pub fn eval_all(&self, x: T) -> (T, T, T, T) {
        match &self.repr {
            Repr::Exponential { lp, lm } => {
                let p = (*lp * x).exp();
                let q = (*lm * x).exp();
                (p, *lp * p, q, *lm * q)
            }
            Repr::Power { k } => {
                let q = x.powf(-*k);
                (x, T::one(), q, -*k * q / x)
            }
            Repr::Table { phi, psi } => {
                let (p, dp) = phi.eval(x);
                let (q, dq) = psi.eval(x);
                (p, dp, q, dq)
            }
            Repr::Ode { phi, psi } => {
                let (p, dp) = phi.eval(x);
                let (q, dq) = psi.eval(x);
                (p, dp, q, dq)
            }
        }
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// Truncated window on which the solutions are meant to be evaluated.
    pub fn window(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    /// Underlying state interval `(a, b)`.
    pub fn interval(&self) -> (T, T) {
        (self.a, self.b)
    }

    /// Wronskian `phi' psi - phi psi'` divided by the scale density, sampled across the
    /// window (the raw Wronskian for tabulated input, which carries no coefficients).
    pub fn wronskian_samples(&self) -> &[T] {
        &self.wronskian
    }

    /// `(max - min) / |mean|` of the Wronskian samples.
    pub fn wronskian_spread(&self) -> T {
        spread(&self.wronskian)
    }

    /// Replaces `(phi, psi)` by `(c phi, c psi)`; used to check scale invariance.
    pub fn rescaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.repr = match &self.repr {
            Repr::Table { phi, psi } => Repr::Table {
                phi: phi.scaled(c),
                psi: psi.scaled(c),
            },
            Repr::Ode { phi, psi } => Repr::Ode {
                phi: phi.scaled(c),
                psi: psi.scaled(c),
            },
            Repr::Exponential { lp, lm } => {
                let grid = sample_grid(self.lo, self.hi, 257);
                let phi: Vec<T> = grid.iter().map(|&x| c * (*lp * x).exp()).collect();
                let psi: Vec<T> = grid.iter().map(|&x| c * (*lm * x).exp()).collect();
                let dphi: Vec<T> = grid.iter().zip(&phi).map(|(_, &p)| *lp * p).collect();
                let dpsi: Vec<T> = grid.iter().zip(&psi).map(|(_, &q)| *lm * q).collect();
                Repr::Table {
                    phi: Pchip::with_slopes(grid.clone(), phi, dphi),
                    psi: Pchip::with_slopes(grid, psi, dpsi),
                }
            }
            Repr::Power { k } => {
                let grid = sample_grid(self.lo, self.hi, 257);
                let phi: Vec<T> = grid.iter().map(|&x| c * x).collect();
                let psi: Vec<T> = grid.iter().map(|&x| c * x.powf(-*k)).collect();
                let dphi: Vec<T> = grid.iter().map(|_| c).collect();
                let dpsi: Vec<T> = grid.iter().zip(&psi).map(|(&x, &q)| -*k * q / x).collect();
                Repr::Table {
                    phi: Pchip::with_slopes(grid.clone(), phi, dphi),
                    psi: Pchip::with_slopes(grid, psi, dpsi),
                }
            }
        };
        out.wronskian = self.wronskian.iter().map(|&w| w * c * c).collect();
        out
    }
}

fn spread<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    let mut lo = xs[0];
    let mut hi = xs[0];
    let mut sum = T::zero();
    for &w in xs {
        lo = lo.min(w);
        hi = hi.max(w);
        sum = sum + w;
    }
    let mean = sum / from_usize(xs.len());
    (hi - lo) / mean.abs()
}

fn sample_grid<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    (0..n)
        .map(|i| lo + (hi - lo) * from_usize::<T>(i) / from_usize::<T>(n - 1))
        .collect()
}

fn check_table<T: Real>(grid: &[T], phi: &[T], psi: &[T]) -> Result<()> {
    if grid.len() < 2 || grid.len() != phi.len() || grid.len() != psi.len() {
        return Err(Error::TabulationInvalid(
            "grid, phi and psi need equal length >= 2".into(),
        ));
    }
    for i in 0..grid.len() {
        if !(phi[i] > T::zero()) || !(psi[i] > T::zero()) {
            return Err(Error::TabulationInvalid(format!(
                "non-positive value at grid index {i}"
            )));
        }
        if i > 0 {
            if !(grid[i] > grid[i - 1]) {
                return Err(Error::TabulationInvalid(format!(
                    "grid not increasing at index {i}"
                )));
            }
            if !(phi[i] > phi[i - 1]) {
                return Err(Error::TabulationInvalid(format!(
                    "phi not strictly increasing at index {i}"
                )));
            }
            if !(psi[i] < psi[i - 1]) {
                return Err(Error::TabulationInvalid(format!(
                    "psi not strictly decreasing at index {i}"
                )));
            }
        }
    }
    Ok(())
}

/// Builds the fundamental solutions: closed forms for the catalog kinds, monotone
/// interpolation for tables, and the numeric route for generator coefficients.
pub fn fundamental_solutions<T: Real>(spec: &DiffusionSpec<T>) -> Result<FundamentalSolutions<T>> {
    spec.validate()?;
    let r = spec.rate;
    match &spec.kind {
        DiffusionKind::BrownianMotion { drift, sigma } => {
            let (lo, hi) = spec.window()?;
            let s2 = *sigma * *sigma;
            let disc = (*drift * *drift + lit::<T>(2.0) * s2 * r).sqrt();
            let lp = (-*drift + disc) / s2;
            let lm = (-*drift - disc) / s2;
            let grid = sample_grid(lo, hi, 64);
            let two_mu = lit::<T>(2.0) * *drift / s2;
            // Normalise by the value at the left window end to keep the samples O(1).
            let wronskian = grid
                .iter()
                .map(|&x| (lp - lm) * ((lp + lm) * (x - lo)).exp() / (-two_mu * (x - lo)).exp())
                .collect();
            Ok(FundamentalSolutions {
                repr: Repr::Exponential { lp, lm },
                source: Source::ClosedForm,
                lo,
                hi,
                a: spec.a,
                b: spec.b,
                wronskian,
            })
        }
        DiffusionKind::GeometricBM { r_drift, sigma } => {
            if *r_drift != r {
                return Err(Error::UnsupportedParameters(format!(
                    "closed form needs drift = discount rate (drift {r_drift}, rate {r}); use the numeric route"
                )));
            }
            if spec.a != T::zero() {
                return Err(Error::UnsupportedParameters(
                    "geometric Brownian motion lives on (0, inf)".into(),
                ));
            }
            let (lo, hi) = spec.window()?;
            let k = lit::<T>(2.0) * r / (*sigma * *sigma);
            let grid = sample_grid(lo, hi, 64);
            let wronskian = grid
                .iter()
                .map(|&x| {
                    let q = x.powf(-k);
                    (q + k * q) / q
                })
                .collect();
            Ok(FundamentalSolutions {
                repr: Repr::Power { k },
                source: Source::ClosedForm,
                lo,
                hi,
                a: spec.a,
                b: spec.b,
                wronskian,
            })
        }
        DiffusionKind::CustomTabulated {
            grid,
            phi_values,
            psi_values,
        } => {
            check_table(grid, phi_values, psi_values)?;
            let phi = Pchip::new(grid.clone(), phi_values.clone());
            let psi = Pchip::new(grid.clone(), psi_values.clone());
            let lo = spec.x_min.unwrap_or(grid[0]).max(grid[0]);
            let hi = spec
                .x_max
                .unwrap_or(grid[grid.len() - 1])
                .min(grid[grid.len() - 1]);
            let wronskian = grid
                .iter()
                .map(|&x| {
                    let (p, dp) = phi.eval(x);
                    let (q, dq) = psi.eval(x);
                    dp * q - p * dq
                })
                .collect();
            Ok(FundamentalSolutions {
                repr: Repr::Table { phi, psi },
                source: Source::Tabulated,
                lo,
                hi,
                a: spec.a,
                b: spec.b,
                wronskian,
            })
        }
        DiffusionKind::Generator { mu, d, anchor } => {
            let a = spec.x_min.filter(|_| !spec.a.is_finite()).unwrap_or(spec.a);
            let b = spec.x_max.filter(|_| !spec.b.is_finite()).unwrap_or(spec.b);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidInput(
                    "numeric route needs finite endpoints or x_min/x_max".into(),
                ));
            }
            let eta = spec.eta.unwrap_or((b - a) * lit(1e-4));
            let mut f = fundamental_solutions_numeric(
                &|x| mu.eval(x),
                &|x| d.eval(x),
                r,
                (a, b),
                *anchor,
                eta,
            )?;
            f.a = spec.a;
            f.b = spec.b;
            if let Some(v) = spec.x_min {
                f.lo = f.lo.max(v);
            }
            if let Some(v) = spec.x_max {
                f.hi = f.hi.min(v);
            }
            Ok(f)
        }
    }
}

/// Numeric fundamental solutions from generator coefficients.
///
/// The increasing solution is integrated rightwards from `a + eta` with `f = 0, f' = 1`
/// and the decreasing one leftwards from `b - eta` with `f = 0, f' = -1`, each in its
/// growing direction. Both are normalised to 1 at `anchor`. The usable window is
/// `[a + 2 eta, b - 2 eta]`, where both solutions are strictly positive.
pub fn fundamental_solutions_numeric<T: Real>(
    mu: &dyn Fn(T) -> Result<T>,
    d: &dyn Fn(T) -> Result<T>,
    rate: T,
    interval: (T, T),
    anchor: T,
    eta: T,
) -> Result<FundamentalSolutions<T>> {
    let (a, b) = interval;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput(
            "numeric route needs a finite interval a < b".into(),
        ));
    }
    if !(eta > T::zero()) || a + lit::<T>(4.0) * eta >= b {
        return Err(Error::InvalidInput(format!(
            "truncation eta = {eta} too large for ({a}, {b})"
        )));
    }
    let lo = a + eta;
    let hi = b - eta;
    let wlo = a + lit::<T>(2.0) * eta;
    let whi = b - lit::<T>(2.0) * eta;
    if !(anchor > wlo && anchor < whi) {
        return Err(Error::InvalidInput(format!(
            "anchor {anchor} outside the usable window [{wlo}, {whi}]"
        )));
    }
    let rhs = |x: T, y: &[T; 3]| -> Result<[T; 3]> {
        let dv = d(x)?;
        if !(dv > T::zero()) {
            return Err(Error::DegenerateSystem(format!(
                "D({x}) = {dv} is not positive"
            )));
        }
        let m = mu(x)?;
        Ok([y[1], (rate * y[0] - m * y[1]) / dv, m / dv])
    };
    let mut phi = integrate(&rhs, lo, hi, [T::zero(), T::one(), T::zero()])?;
    let mut psi = integrate(&rhs, hi, lo, [T::zero(), -T::one(), T::zero()])?;
    psi.reverse();
    let (pa, _) = phi.eval(anchor);
    let (qa, _) = psi.eval(anchor);
    if !(pa > T::zero()) || !(qa > T::zero()) {
        return Err(Error::DegenerateSystem(
            "solutions not positive at the anchor".into(),
        ));
    }
    phi = phi.scaled(T::one() / pa);
    psi = psi.scaled(T::one() / qa);
    // Both solutions must be strictly monotone and positive on the usable window; an
    // exit boundary or a sign change in D shows up here.
    for (dense, inc) in [(&phi, true), (&psi, false)] {
        for i in 0..dense.x.len() {
            let x = dense.x[i];
            if x < wlo || x > whi {
                continue;
            }
            let ok = dense.f[i] > T::zero()
                && if inc {
                    dense.fp[i] > T::zero()
                } else {
                    dense.fp[i] < T::zero()
                };
            if !ok {
                return Err(Error::DegenerateSystem(format!(
                    "fundamental solution not monotone/positive at {x}"
                )));
            }
        }
    }
    let (p, dp) = phi.eval(anchor);
    let (q, dq) = psi.eval(anchor);
    let w = dp * q - p * dq;
    let cond = (dp * q).abs() + (p * dq).abs();
    if !(w.abs() > cond * lit(1e-12)) {
        return Err(Error::DegenerateSystem(
            "solutions numerically dependent".into(),
        ));
    }
    let i_anchor = phi.integral(anchor);
    let wronskian = sample_grid(wlo, whi, 64)
        .into_iter()
        .map(|x| {
            let (p, dp) = phi.eval(x);
            let (q, dq) = psi.eval(x);
            let s_prime = (-(phi.integral(x) - i_anchor)).exp();
            (dp * q - p * dq) / s_prime
        })
        .collect();
    Ok(FundamentalSolutions {
        repr: Repr::Ode { phi, psi },
        source: Source::NumericOde,
        lo: wlo,
        hi: whi,
        a,
        b,
        wronskian,
    })
}

/// Dense ODE output: nodes with value, first and second derivative, plus the running
/// integral of `mu/D`. Interpolated with quintic Hermite polynomials.
#[derive(Debug, Clone)]
struct Dense<T> {
    x: Vec<T>,
    f: Vec<T>,
    fp: Vec<T>,
    fpp: Vec<T>,
    int: Vec<T>,
    dint: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn reverse(&mut self) {
        self.x.reverse();
        self.f.reverse();
        self.fp.reverse();
        self.fpp.reverse();
        self.int.reverse();
        self.dint.reverse();
    }

    fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        for v in out
            .f
            .iter_mut()
            .chain(out.fp.iter_mut())
            .chain(out.fpp.iter_mut())
        {
            *v = *v * c;
        }
        out
    }

    fn locate(&self, x: T) -> (usize, T) {
        let n = self.x.len();
        let x = x.max(self.x[0]).min(self.x[n - 1]);
        let i = match self.x.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        (i, x)
    }

    fn eval(&self, x: T) -> (T, T) {
        let (i, x) = self.locate(x);
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let c = |v: f64| lit::<T>(v);
        let h0 = T::one() - c(10.0) * t3 + c(15.0) * t4 - c(6.0) * t5;
        let h1 = t - c(6.0) * t3 + c(8.0) * t4 - c(3.0) * t5;
        let h2 = c(0.5) * t2 - c(1.5) * t3 + c(1.5) * t4 - c(0.5) * t5;
        let h3 = c(0.5) * t3 - t4 + c(0.5) * t5;
        let h4 = -c(4.0) * t3 + c(7.0) * t4 - c(3.0) * t5;
        let h5 = c(10.0) * t3 - c(15.0) * t4 + c(6.0) * t5;
        let d0 = -c(30.0) * t2 + c(60.0) * t3 - c(30.0) * t4;
        let d1 = T::one() - c(18.0) * t2 + c(32.0) * t3 - c(15.0) * t4;
        let d2 = t - c(4.5) * t2 + c(6.0) * t3 - c(2.5) * t4;
        let d3 = c(1.5) * t2 - c(4.0) * t3 + c(2.5) * t4;
        let d4 = -c(12.0) * t2 + c(28.0) * t3 - c(15.0) * t4;
        let d5 = c(30.0) * t2 - c(60.0) * t3 + c(30.0) * t4;
        let (f0, f1) = (self.f[i], self.f[i + 1]);
        let (g0, g1) = (self.fp[i] * h, self.fp[i + 1] * h);
        let (s0, s1) = (self.fpp[i] * h * h, self.fpp[i + 1] * h * h);
        let v = f0 * h0 + g0 * h1 + s0 * h2 + s1 * h3 + g1 * h4 + f1 * h5;
        let dv = (f0 * d0 + g0 * d1 + s0 * d2 + s1 * d3 + g1 * d4 + f1 * d5) / h;
        (v, dv)
    }

    fn integral(&self, x: T) -> T {
        let (i, x) = self.locate(x);
        cubic_hermite(
            self.x[i],
            self.x[i + 1],
            self.int[i],
            self.int[i + 1],
            self.dint[i],
            self.dint[i + 1],
            x,
        )
        .0
    }
}

fn cubic_hermite<T: Real>(x0: T, x1: T, f0: T, f1: T, d0: T, d1: T, x: T) -> (T, T) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);
    let h00 = two * t3 - three * t2 + T::one();
    let h10 = t3 - two * t2 + t;
    let h01 = -two * t3 + three * t2;
    let h11 = t3 - t2;
    let v = h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1;
    let six = lit::<T>(6.0);
    let dv = (six * t2 - six * t) / h * f0
        + (three * t2 - lit::<T>(4.0) * t + T::one()) * d0
        + (-six * t2 + six * t) / h * f1
        + (three * t2 - two * t) * d1;
    (v, dv)
}

/// Adaptive Dormand-Prince 5(4) from `x0` to `x1` (either direction) with dense storage.
fn integrate<T: Real>(
    rhs: &dyn Fn(T, &[T; 3]) -> Result<[T; 3]>,
    x0: T,
    x1: T,
    y0: [T; 3],
) -> Result<Dense<T>> {
    let c = |v: f64| lit::<T>(v);
    let span = x1 - x0;
    let dir = span.signum();
    let len = span.abs();
    let rtol = c(1e-12).max(T::epsilon() * c(64.0));
    let atol = rtol * c(1e-3);
    let h_max = len / c(2000.0);
    let h_min = len * T::epsilon() * c(16.0);
    let mut h = len * c(1e-6);

    let (a21, a31, a32) = (c(1.0 / 5.0), c(3.0 / 40.0), c(9.0 / 40.0));
    let (a41, a42, a43) = (c(44.0 / 45.0), c(-56.0 / 15.0), c(32.0 / 9.0));
    let (a51, a52, a53, a54) = (
        c(19372.0 / 6561.0),
        c(-25360.0 / 2187.0),
        c(64448.0 / 6561.0),
        c(-212.0 / 729.0),
    );
    let (a61, a62, a63, a64, a65) = (
        c(9017.0 / 3168.0),
        c(-355.0 / 33.0),
        c(46732.0 / 5247.0),
        c(49.0 / 176.0),
        c(-5103.0 / 18656.0),
    );
    let (b1, b3, b4, b5, b6) = (
        c(35.0 / 384.0),
        c(500.0 / 1113.0),
        c(125.0 / 192.0),
        c(-2187.0 / 6784.0),
        c(11.0 / 84.0),
    );
    let (e1, e3, e4, e5, e6, e7) = (
        c(71.0 / 57600.0),
        c(-71.0 / 16695.0),
        c(71.0 / 1920.0),
        c(-17253.0 / 339200.0),
        c(22.0 / 525.0),
        c(-1.0 / 40.0),
    );
    let (c2, c3, c4, c5) = (c(0.2), c(0.3), c(0.8), c(8.0 / 9.0));

    let comb = |y: &[T; 3], ks: &[(&[T; 3], T)], h: T| -> [T; 3] {
        let mut out = *y;
        for (k, w) in ks {
            for j in 0..3 {
                out[j] = out[j] + h * *w * k[j];
            }
        }
        out
    };

    let mut x = x0;
    let mut y = y0;
    let mut k1 = rhs(x, &y)?;
    let mut out = Dense {
        x: vec![x],
        f: vec![y[0]],
        fp: vec![y[1]],
        fpp: vec![k1[1]],
        int: vec![y[2]],
        dint: vec![k1[2]],
    };
    let mut steps = 0usize;
    while (x1 - x) * dir > T::zero() {
        steps += 1;
        if steps > 2_000_000 {
            return Err(Error::IntegrationFailure("too many steps".into()));
        }
        h = h.min(h_max);
        let last = (x1 - x).abs() <= h;
        let hs = if last { x1 - x } else { h * dir };
        let k2 = rhs(x + c2 * hs, &comb(&y, &[(&k1, a21)], hs))?;
        let k3 = rhs(x + c3 * hs, &comb(&y, &[(&k1, a31), (&k2, a32)], hs))?;
        let k4 = rhs(
            x + c4 * hs,
            &comb(&y, &[(&k1, a41), (&k2, a42), (&k3, a43)], hs),
        )?;
        let k5 = rhs(
            x + c5 * hs,
            &comb(&y, &[(&k1, a51), (&k2, a52), (&k3, a53), (&k4, a54)], hs),
        )?;
        let k6 = rhs(
            x + hs,
            &comb(
                &y,
                &[(&k1, a61), (&k2, a62), (&k3, a63), (&k4, a64), (&k5, a65)],
                hs,
            ),
        )?;
        let ynew = comb(
            &y,
            &[(&k1, b1), (&k3, b3), (&k4, b4), (&k5, b5), (&k6, b6)],
            hs,
        );
        let k7 = rhs(x + hs, &ynew)?;
        let mut err = T::zero();
        for j in 0..3 {
            let e =
                hs * (e1 * k1[j] + e3 * k3[j] + e4 * k4[j] + e5 * k5[j] + e6 * k6[j] + e7 * k7[j]);
            let sc = atol + rtol * y[j].abs().max(ynew[j].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure(format!(
                "non-finite state near x = {}",
                to_f64(x)
            )));
        }
        if err <= T::one() {
            x = if last { x1 } else { x + hs };
            y = ynew;
            k1 = k7;
            out.x.push(x);
            out.f.push(y[0]);
            out.fp.push(y[1]);
            out.fpp.push(k1[1]);
            out.int.push(y[2]);
            out.dint.push(k1[2]);
            let fac = if err == T::zero() {
                c(5.0)
            } else {
                (c(0.9) * err.powf(c(-0.2))).min(c(5.0))
            };
            h = hs.abs() * fac;
        } else {
            h = hs.abs() * (c(0.9) * err.powf(c(-0.2))).max(c(0.2));
            if h < h_min {
                return Err(Error::IntegrationFailure(format!(
                    "step size underflow near x = {}",
                    to_f64(x)
                )));
            }
        }
    }
    Ok(out)
}

/// Shape-preserving piecewise cubic (Fritsch-Carlson) interpolant.
#[derive(Debug, Clone)]
struct Pchip<T> {
    x: Vec<T>,
    y: Vec<T>,
    d: Vec<T>,
}

impl<T: Real> Pchip<T> {
    fn new(x: Vec<T>, y: Vec<T>) -> Self {
        let n = x.len();
        let mut d = vec![T::zero(); n];
        if n == 2 {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            d[0] = s;
            d[1] = s;
            return Pchip { x, y, d };
        }
        let h: Vec<T> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let del: Vec<T> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let two = lit::<T>(2.0);
        for k in 1..n - 1 {
            if del[k - 1] * del[k] > T::zero() {
                let w1 = two * h[k] + h[k - 1];
                let w2 = h[k] + two * h[k - 1];
                d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
            }
        }
        let end = |h0: T, h1: T, m0: T, m1: T| -> T {
            let dd = ((two * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
            if dd.signum() != m0.signum() {
                T::zero()
            } else if m0.signum() != m1.signum() && dd.abs() > lit::<T>(3.0) * m0.abs() {
                lit::<T>(3.0) * m0
            } else {
                dd
            }
        };
        d[0] = end(h[0], h[1], del[0], del[1]);
        d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        Pchip { x, y, d }
    }

    fn with_slopes(x: Vec<T>, y: Vec<T>, d: Vec<T>) -> Self {
        Pchip { x, y, d }
    }

    fn scaled(&self, c: T) -> Self {
        Pchip {
            x: self.x.clone(),
            y: self.y.iter().map(|&v| v * c).collect(),
            d: self.d.iter().map(|&v| v * c).collect(),
        }
    }

    fn eval(&self, x: T) -> (T, T) {
        let n = self.x.len();
        let x = x.max(self.x[0]).min(self.x[n - 1]);
        let i = match self.x.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        cubic_hermite(
            self.x[i],
            self.x[i + 1],
            self.y[i],
            self.y[i + 1],
            self.d[i],
            self.d[i + 1],
            x,
        )
    }
}

/// Discounted exit probabilities from `(y, z)` started at `x`:
/// `(E_x[e^{-r T_y}; T_y < T_z], E_x[e^{-r T_z}; T_z < T_y])`.
/// `y = -inf` or `z = +inf` stand for the natural boundaries.
pub fn exit_laplace<T: Real>(fund: &FundamentalSolutions<T>, x: T, y: T, z: T) -> Result<(T, T)> {
    if !(y <= x && x <= z) {
        return Err(Error::OrderingViolated {
            y: to_f64(y),
            x: to_f64(x),
            z: to_f64(z),
        });
    }
    let (a, b) = fund.interval();
    let y_nat = y == T::neg_infinity() || y <= a;
    let z_nat = z == T::infinity() || z >= b;
    let clamp = |v: T| v.max(T::zero()).min(T::one());
    match (y_nat, z_nat) {
        (true, true) => Ok((T::zero(), T::zero())),
        (false, true) => Ok((clamp(fund.psi(x) / fund.psi(y)), T::zero())),
        (true, false) => Ok((T::zero(), clamp(fund.phi(x) / fund.phi(z)))),
        (false, false) => {
            if y == x {
                return Ok((T::one(), T::zero()));
            }
            if x == z {
                return Ok((T::zero(), T::one()));
            }
            let (px, qx) = (fund.phi(x), fund.psi(x));
            let (py, qy) = (fund.phi(y), fund.psi(y));
            let (pz, qz) = (fund.phi(z), fund.psi(z));
            let den = pz * qy - py * qz;
            let lower = (pz * qx - px * qz) / den;
            let upper = (px * qy - py * qx) / den;
            Ok((clamp(lower), clamp(upper)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn gbm_closed_form() {
        let spec = DiffusionSpec::gbm(0.05, 0.3).with_window(0.01, 300.0);
        let f = fundamental_solutions(&spec).unwrap();
        assert_eq!(f.source(), Source::ClosedForm);
        assert_eq!(f.phi(2.0), 2.0);
        assert!(rel(f.psi(2.0), 2f64.powf(-10.0 / 9.0)) < 1e-15);
        assert!(f.wronskian_spread() < 1e-12);
    }

    #[test]
    fn gbm_with_other_drift_is_rejected() {
        let mut spec = DiffusionSpec::gbm(0.05, 0.3).with_window(0.01, 300.0);
        spec.kind = DiffusionKind::GeometricBM {
            r_drift: 0.02,
            sigma: 0.3,
        };
        assert!(matches!(
            fundamental_solutions(&spec),
            Err(Error::UnsupportedParameters(_))
        ));
    }

    #[test]
    fn brownian_closed_form() {
        let spec = DiffusionSpec::brownian(0.0, 2f64.sqrt(), 1.0).with_window(-5.0, 5.0);
        let f = fundamental_solutions(&spec).unwrap();
        for x in [-1.0, 0.0, 0.7] {
            assert!(rel(f.phi(x), f64::exp(x)) < 1e-14);
            assert!(rel(f.psi(x), f64::exp(-x)) < 1e-14);
        }
        let spec = DiffusionSpec::<f64>::brownian(0.3, 0.5, 0.1).with_window(-5.0, 5.0);
        let f = fundamental_solutions(&spec).unwrap();
        assert!(f.wronskian_spread() < 1e-12);
        // D f'' + mu f' - r f = 0 for both exponentials.
        let (p, dp, q, dq) = f.eval_all(0.4);
        let lp = dp / p;
        let lm = dq / q;
        for l in [lp, lm] {
            assert!((0.125 * l * l + 0.3 * l - 0.1).abs() < 1e-14);
        }
    }

    #[test]
    fn table_must_be_monotone() {
        let grid = vec![1.0, 2.0, 3.0];
        let phi = vec![1.0, 2.0, 3.0];
        // psi is phi reversed but not strictly decreasing (flat tail).
        let psi = vec![3.0, 2.0, 2.0];
        let spec = DiffusionSpec::new(
            DiffusionKind::CustomTabulated {
                grid,
                phi_values: phi,
                psi_values: psi,
            },
            1.0,
            0.0,
            4.0,
        );
        assert!(matches!(
            fundamental_solutions(&spec),
            Err(Error::TabulationInvalid(_))
        ));
    }

    #[test]
    fn table_interpolation_is_monotone() {
        let grid: Vec<f64> = (0..20).map(|i| 0.5 + i as f64 * 0.25).collect();
        let phi: Vec<f64> = grid.iter().map(|x| x * x).collect();
        let psi: Vec<f64> = grid.iter().map(|x| 1.0 / x).collect();
        let spec = DiffusionSpec::new(
            DiffusionKind::CustomTabulated {
                grid: grid.clone(),
                phi_values: phi,
                psi_values: psi,
            },
            1.0,
            0.0,
            10.0,
        );
        let f = fundamental_solutions(&spec).unwrap();
        let mut last = (0.0, f64::INFINITY);
        for i in 0..500 {
            let x = 0.5 + 4.75 * i as f64 / 499.0;
            let (p, q) = (f.phi(x), f.psi(x));
            assert!(p >= last.0 && q <= last.1);
            last = (p, q);
        }
    }

    #[test]
    fn numeric_route_matches_gbm() {
        let (r, s) = (0.05, 0.3);
        let mu = move |x: f64| Ok(r * x);
        let d = move |x: f64| Ok(0.5 * s * s * x * x);
        let f = fundamental_solutions_numeric(&mu, &d, r, (0.0, 1e4), 1.0, 1e-4).unwrap();
        assert_eq!(f.source(), Source::NumericOde);
        let k = 2.0 * r / (s * s);
        for i in 0..20 {
            let x = 0.5 + 1.5 * i as f64 / 19.0;
            assert!(rel(f.phi(x), x) < 1e-6, "phi({x})");
            assert!(rel(f.psi(x), x.powf(-k)) < 1e-6, "psi({x})");
        }
        assert!(f.wronskian_spread() < 1e-6);
    }

    #[test]
    fn numeric_route_matches_exponentials() {
        let f = fundamental_solutions_numeric(
            &|_| Ok(0.0),
            &|_| Ok(1.0),
            1.0,
            (-20.0, 20.0),
            0.0,
            1e-3,
        )
        .unwrap();
        for i in 0..20 {
            let x = -2.0 + 4.0 * i as f64 / 19.0;
            assert!(rel(f.phi(x), x.exp()) < 1e-6);
            assert!(rel(f.psi(x), (-x).exp()) < 1e-6);
        }
        assert!(f.wronskian_spread() < 1e-6);
    }

    #[test]
    fn numeric_route_detects_vanishing_diffusion() {
        let err = fundamental_solutions_numeric(
            &|_| Ok(0.0),
            &|x: f64| Ok(x),
            1.0,
            (-1.0, 1.0),
            0.5,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::DegenerateSystem(_) | Error::IntegrationFailure(_)
        ));
    }

    #[test]
    fn exit_laplace_edges() {
        let spec = DiffusionSpec::gbm(0.05, 0.3).with_window(0.01, 300.0);
        let f = fundamental_solutions(&spec).unwrap();
        assert_eq!(exit_laplace(&f, 60.0, 60.0, 90.0).unwrap(), (1.0, 0.0));
        assert_eq!(exit_laplace(&f, 90.0, 60.0, 90.0).unwrap(), (0.0, 1.0));
        let (p, q) = exit_laplace(&f, 100.0, 50.0, f64::INFINITY).unwrap();
        assert!(rel(p, 2f64.powf(-10.0 / 9.0)) < 1e-14);
        assert_eq!(q, 0.0);
        assert!(matches!(
            exit_laplace(&f, 40.0, 50.0, 60.0),
            Err(Error::OrderingViolated { .. })
        ));
    }

    #[test]
    fn f32_closed_form() {
        let spec = DiffusionSpec::<f32>::gbm(0.05, 0.3).with_window(0.01, 300.0);
        let f = fundamental_solutions(&spec).unwrap();
        assert!((f.psi(2.0f32) - 2f32.powf(-10.0 / 9.0)).abs() < 1e-6);
    }
}
