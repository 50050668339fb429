//! Monte Carlo oracle: Euler paths, threshold stopping times and the discounted game payoff.
//!
//! Path `i` draws from ChaCha8 keyed by `(seed, i)`, so estimates do not depend on how the
//! work is split across threads. With `antithetic` the pair `(2i, 2i+1)` shares stream `i`
//! with negated increments and contributes one averaged sample.
//!
//! Several stopping rules can be evaluated on the same paths ([`simulate_rules`]); a path
//! runs until every rule has stopped it. This is how [`saddle_check`] gets exact common
//! random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{fundamental_solutions, DiffusionKind, DiffusionSpec};
use crate::error::{Error, Result};
use crate::payoff_expr::{PayoffExpr, PayoffSpec};
use crate::scalar::{from_usize, lit, pairwise_sum, to_f64, Real};
use crate::solver::GameSolution;

/// Work cap (path-steps) used when neither the config nor `STOPGAME_BUDGET` sets one.
pub const DEFAULT_BUDGET: f64 = 5e10;

#[derive(Debug, Clone)]
pub struct McConfig<T> {
    pub paths: usize,
    pub dt: T,
    /// Time cap; `None` picks `ln(1e4)/r`, where the discount has shrunk every payoff to
    /// 1e-4 of its largest size.
    pub horizon: Option<T>,
    pub seed: u64,
    pub antithetic: bool,
    /// Value credited to paths that reach the horizon or an absorbing end (before discounting).
    pub boundary_value: T,
    /// Overrides `STOPGAME_BUDGET`.
    pub budget: Option<f64>,
}

impl<T: Real> Default for McConfig<T> {
    fn default() -> Self {
        McConfig {
            paths: 100_000,
            dt: lit(1e-3),
            horizon: None,
            seed: 42,
            antithetic: true,
            boundary_value: T::zero(),
            budget: None,
        }
    }
}

impl<T: Real> McConfig<T> {
    pub fn horizon_for(&self, rate: T) -> Result<T> {
        match self.horizon {
            Some(h) => Ok(h),
            None if rate > T::zero() => Ok(lit::<T>(1e4).ln() / rate),
            None => Err(Error::InvalidInput(
                "zero discount rate: set an explicit horizon".into(),
            )),
        }
    }

    /// Budget in path-steps: config, then `STOPGAME_BUDGET`, then [`DEFAULT_BUDGET`].
    pub fn budget(&self) -> f64 {
        self.budget
            .or_else(|| {
                std::env::var("STOPGAME_BUDGET")
                    .ok()
                    .and_then(|s| s.trim().parse().ok())
            })
            .unwrap_or(DEFAULT_BUDGET)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub mean: T,
    pub std_error: T,
    pub paths_used: usize,
    /// Fraction of paths that hit the horizon.
    pub truncation_mass: T,
}

impl<T: Real> McEstimate<T> {
    /// `(mean - target) / SE`; infinite if SE is 0 and the mean misses.
    pub fn z_score(&self, target: T) -> T {
        let d = self.mean - target;
        if self.std_error > T::zero() {
            d / self.std_error
        } else if d == T::zero() {
            T::zero()
        } else {
            T::infinity() * d.signum()
        }
    }
}

/// A pair of threshold stopping times and the payoff they are scored with.
///
/// `tau` stops when `X <= tau.0` or `X >= tau.1` and pays `G`; `sigma` likewise pays `H`
/// (or the configured boundary value when there is no `H`). Ties pay `G`.
#[derive(Debug, Clone, Copy)]
pub struct StoppingRule<'a, T> {
    pub payoff: &'a PayoffSpec,
    pub tau: (T, T),
    pub sigma: (T, T),
}

#[derive(Clone, Copy)]
enum Coeffs<'a, T> {
    /// `mu = m0 + m1 x`, `sigma = s0 + s1 |x|`.
    Affine { m0: T, m1: T, s0: T, s1: T },
    Expr {
        mu: &'a PayoffExpr,
        d: &'a PayoffExpr,
    },
}

fn coeffs<T: Real>(spec: &DiffusionSpec<T>) -> Result<Coeffs<'_, T>> {
    match &spec.kind {
        DiffusionKind::BrownianMotion { drift, sigma } => Ok(Coeffs::Affine {
            m0: *drift,
            m1: T::zero(),
            s0: *sigma,
            s1: T::zero(),
        }),
        DiffusionKind::GeometricBM { r_drift, sigma } => Ok(Coeffs::Affine {
            m0: T::zero(),
            m1: *r_drift,
            s0: T::zero(),
            s1: *sigma,
        }),
        DiffusionKind::Generator { mu, d, .. } => Ok(Coeffs::Expr { mu, d }),
        DiffusionKind::CustomTabulated { .. } => Err(Error::Unsupported(
            "Monte Carlo needs drift and volatility; tabulated input has neither".into(),
        )),
    }
}

fn check_thresholds<T: Real>(name: &str, (lo, hi): (T, T), x0: T) -> Result<()> {
    if lo.is_nan() || hi.is_nan() || lo > x0 || hi < x0 {
        return Err(Error::InvalidInput(format!(
            "{name} thresholds ({lo}, {hi}) must bracket x0 = {x0}"
        )));
    }
    Ok(())
}

struct Sim<'a, T> {
    c: Coeffs<'a, T>,
    rules: &'a [StoppingRule<'a, T>],
    a: T,
    b: T,
    rate: T,
    x0: T,
    dt: T,
    sqdt: T,
    steps: u64,
    boundary: T,
}

/// One path's progress through the rules.
struct Lane<T> {
    x: T,
    values: Vec<T>,
    settled: Vec<bool>,
    truncated: Vec<bool>,
    open: usize,
    /// No open rule stops strictly inside `(lo, hi)`.
    lo: T,
    hi: T,
}

impl<T: Real> Sim<'_, T> {
    fn lane(&self) -> Lane<T> {
        let m = self.rules.len();
        let mut l = Lane {
            x: self.x0,
            values: vec![T::zero(); m],
            settled: vec![false; m],
            truncated: vec![false; m],
            open: m,
            lo: T::zero(),
            hi: T::zero(),
        };
        self.bounds(&mut l);
        l
    }

    fn bounds(&self, l: &mut Lane<T>) {
        l.lo = T::neg_infinity();
        l.hi = T::infinity();
        for (r, _) in self.rules.iter().zip(&l.settled).filter(|(_, &s)| !s) {
            l.lo = l.lo.max(r.tau.0).max(r.sigma.0);
            l.hi = l.hi.min(r.tau.1).min(r.sigma.1);
        }
    }

    fn discount(&self, k: u64) -> T {
        (-self.rate * self.dt * lit(k as f64)).exp()
    }

    /// Settles every open rule that stops at the lane's position at step `k`; true when none is left.
    fn check(&self, l: &mut Lane<T>, k: u64) -> bool {
        if l.x > l.lo && l.x < l.hi {
            return false;
        }
        let x = l.x;
        let disc = self.discount(k);
        for (j, r) in self.rules.iter().enumerate() {
            if l.settled[j] {
                continue;
            }
            let stop_g = x <= r.tau.0 || x >= r.tau.1;
            let stop_h = x <= r.sigma.0 || x >= r.sigma.1;
            if !(stop_g || stop_h) {
                continue;
            }
            let v = if stop_g {
                r.payoff.g.eval(x)
            } else {
                r.payoff.h.as_ref().map_or(Ok(self.boundary), |h| h.eval(x))
            };
            l.values[j] = v.unwrap_or(T::nan()) * disc;
            l.settled[j] = true;
            l.open -= 1;
        }
        self.bounds(l);
        l.open == 0
    }

    /// Pays the boundary value to every open rule (horizon or absorption at step `k`).
    fn close(&self, l: &mut Lane<T>, k: u64, truncated: bool) {
        let v = self.boundary * self.discount(k);
        for j in 0..self.rules.len() {
            if !l.settled[j] {
                l.values[j] = v;
                l.settled[j] = true;
                l.truncated[j] = truncated;
            }
        }
        l.open = 0;
    }

    #[inline(always)]
    fn normal(&self, rng: &mut ChaCha8Rng) -> T {
        let z: f64 = StandardNormal.sample(rng);
        self.sqdt * lit(z)
    }

    #[inline(always)]
    fn inside(&self, x: T) -> bool {
        x > self.a && x < self.b
    }

    /// Continues one lane from step `k`; `sign` flips the increments.
    fn single(
        &self,
        rng: &mut ChaCha8Rng,
        l: &mut Lane<T>,
        mut k: u64,
        sign: T,
        step: &impl Fn(T, T) -> Option<T>,
    ) {
        let mut x = l.x;
        let (mut lo, mut hi) = (l.lo, l.hi);
        loop {
            if !(x > lo && x < hi) {
                l.x = x;
                if self.check(l, k) {
                    return;
                }
                (lo, hi) = (l.lo, l.hi);
            }
            if k == self.steps {
                l.x = x;
                return self.close(l, k, true);
            }
            let w = self.normal(rng) * sign;
            k += 1;
            match step(x, w) {
                Some(nx) if self.inside(nx) => x = nx,
                _ => {
                    l.x = x;
                    return self.close(l, k, false);
                }
            }
        }
    }

    /// An antithetic pair on shared normals; once one lane is done the other runs alone.
    fn pair(
        &self,
        rng: &mut ChaCha8Rng,
        l1: &mut Lane<T>,
        l2: &mut Lane<T>,
        step: &impl Fn(T, T) -> Option<T>,
    ) {
        let one = T::one();
        let mut k = 0u64;
        loop {
            let d1 = !(l1.x > l1.lo && l1.x < l1.hi) && self.check(l1, k);
            let d2 = !(l2.x > l2.lo && l2.x < l2.hi) && self.check(l2, k);
            match (d1, d2) {
                (true, true) => return,
                (true, false) => return self.single(rng, l2, k, -one, step),
                (false, true) => return self.single(rng, l1, k, one, step),
                _ => {}
            }
            if k == self.steps {
                self.close(l1, k, true);
                return self.close(l2, k, true);
            }
            let w = self.normal(rng);
            k += 1;
            let n1 = step(l1.x, w).filter(|&v| self.inside(v));
            let n2 = step(l2.x, -w).filter(|&v| self.inside(v));
            match (n1, n2) {
                (Some(a), Some(b)) => {
                    l1.x = a;
                    l2.x = b;
                }
                (Some(a), None) => {
                    self.close(l2, k, false);
                    l1.x = a;
                    return self.single(rng, l1, k, one, step);
                }
                (None, Some(b)) => {
                    self.close(l1, k, false);
                    l2.x = b;
                    return self.single(rng, l2, k, -one, step);
                }
                (None, None) => {
                    self.close(l1, k, false);
                    return self.close(l2, k, false);
                }
            }
        }
    }

    fn sample_with(
        &self,
        rng: &mut ChaCha8Rng,
        antithetic: bool,
        step: impl Fn(T, T) -> Option<T>,
    ) -> Sample<T> {
        let mut l1 = self.lane();
        if antithetic {
            let mut l2 = self.lane();
            self.pair(rng, &mut l1, &mut l2, &step);
            let half = lit::<T>(0.5);
            Sample {
                values: l1
                    .values
                    .iter()
                    .zip(&l2.values)
                    .map(|(&a, &b)| (a + b) * half)
                    .collect(),
                truncated: l1
                    .truncated
                    .iter()
                    .zip(&l2.truncated)
                    .map(|(&a, &b)| a as u8 + b as u8)
                    .collect(),
            }
        } else {
            self.single(rng, &mut l1, 0, T::one(), &step);
            Sample {
                values: l1.values,
                truncated: l1.truncated.iter().map(|&t| t as u8).collect(),
            }
        }
    }

    fn sample(&self, seed: u64, i: usize, antithetic: bool) -> Sample<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let dt = self.dt;
        match self.c {
            // Written so only one multiply-add per step depends on the previous state.
            Coeffs::Affine { m0, m1, s0, s1 } => {
                let (c0, c1) = (m0 * dt, T::one() + m1 * dt);
                if self.a >= T::zero() {
                    self.sample_with(&mut rng, antithetic, |x, w| {
                        Some(x * (c1 + s1 * w) + (c0 + s0 * w))
                    })
                } else if self.b <= T::zero() {
                    self.sample_with(&mut rng, antithetic, |x, w| {
                        Some(x * (c1 - s1 * w) + (c0 + s0 * w))
                    })
                } else {
                    self.sample_with(&mut rng, antithetic, |x, w| {
                        Some(x * c1 + x.abs() * (s1 * w) + (c0 + s0 * w))
                    })
                }
            }
            Coeffs::Expr { mu, d } => self.sample_with(&mut rng, antithetic, |x, w| {
                let m = mu.eval(x).ok()?;
                let dv = d.eval(x).ok()?;
                (dv >= T::zero()).then(|| x + m * dt + (lit::<T>(2.0) * dv).sqrt() * w)
            }),
        }
    }
}

/// Per-rule results of one sample (an antithetic pair counts as one sample).
struct Sample<T> {
    values: Vec<T>,
    truncated: Vec<u8>,
}

#[cfg(feature = "parallel")]
fn collect<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn collect<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Per-rule sample values, path count and per-rule horizon counts.
struct RuleSamples<T> {
    values: Vec<Vec<T>>,
    paths: usize,
    truncated: Vec<usize>,
}

impl<T: Real> RuleSamples<T> {
    fn estimate(&self, j: usize) -> McEstimate<T> {
        summarize(&self.values[j], self.paths, self.truncated[j])
    }
}

fn run_rules<T: Real>(
    spec: &DiffusionSpec<T>,
    x0: T,
    rules: &[StoppingRule<'_, T>],
    cfg: &McConfig<T>,
) -> Result<RuleSamples<T>> {
    spec.validate()?;
    if cfg.paths == 0 {
        return Err(Error::InvalidInput("paths must be >= 1".into()));
    }
    if !(cfg.dt > T::zero()) {
        return Err(Error::InvalidInput(format!(
            "dt must be > 0, got {}",
            cfg.dt
        )));
    }
    if rules.is_empty() {
        return Err(Error::InvalidInput("no stopping rule given".into()));
    }
    for r in rules {
        check_thresholds("tau", r.tau, x0)?;
        check_thresholds("sigma", r.sigma, x0)?;
    }
    if !(spec.a < x0 && x0 < spec.b) {
        return Err(Error::InvalidInput(format!(
            "x0 = {x0} outside ({}, {})",
            spec.a, spec.b
        )));
    }
    let horizon = cfg.horizon_for(spec.rate)?;
    if cfg.dt > horizon {
        return Err(Error::InvalidInput(format!(
            "dt = {} exceeds horizon {horizon}",
            cfg.dt
        )));
    }
    let steps_f = to_f64(horizon / cfg.dt).ceil();
    let paths = if cfg.antithetic {
        cfg.paths.div_ceil(2) * 2
    } else {
        cfg.paths
    };
    let requested = paths as f64 * steps_f;
    let budget = cfg.budget();
    if requested > budget {
        return Err(Error::BudgetExceeded { requested, budget });
    }
    let sim = Sim {
        c: coeffs(spec)?,
        rules,
        a: spec.a,
        b: spec.b,
        rate: spec.rate,
        x0,
        dt: cfg.dt,
        sqdt: cfg.dt.sqrt(),
        steps: steps_f as u64,
        boundary: cfg.boundary_value,
    };
    let n = if cfg.antithetic { paths / 2 } else { paths };
    let raw = collect(n, |i| sim.sample(cfg.seed, i, cfg.antithetic));
    let m = rules.len();
    let mut values = vec![Vec::with_capacity(n); m];
    let mut truncated = vec![0usize; m];
    for s in &raw {
        for j in 0..m {
            values[j].push(s.values[j]);
            truncated[j] += s.truncated[j] as usize;
        }
    }
    for (j, v) in values.iter().enumerate() {
        if let Some(i) = v.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "payoff of rule {j} not finite on sample {i}"
            )));
        }
    }
    Ok(RuleSamples {
        values,
        paths,
        truncated,
    })
}

fn summarize<T: Real>(vals: &[T], paths: usize, truncated: usize) -> McEstimate<T> {
    let n = from_usize::<T>(vals.len());
    let mean = pairwise_sum(vals) / n;
    let dev: Vec<T> = vals.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = if vals.len() > 1 {
        pairwise_sum(&dev) / (n - T::one())
    } else {
        T::zero()
    };
    McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        paths_used: paths,
        truncation_mass: from_usize::<T>(truncated) / from_usize(paths),
    }
}

/// Estimates `R_x0(tau, sigma) = E[G(X_tau) e^{-r tau} 1{tau <= sigma} + H(X_sigma) e^{-r sigma} 1{sigma < tau}]`
/// for `tau` = first exit of `(tau_thr.0, tau_thr.1)` and `sigma` likewise. Use infinite
/// thresholds for "never". Without `H` the sigma thresholds pay `boundary_value`.
#[allow(non_snake_case)]
pub fn simulate_R<T: Real>(
    spec: &DiffusionSpec<T>,
    payoff: &PayoffSpec,
    x0: T,
    tau_thr: (T, T),
    sigma_thr: (T, T),
    cfg: &McConfig<T>,
) -> Result<McEstimate<T>> {
    let rule = StoppingRule {
        payoff,
        tau: tau_thr,
        sigma: sigma_thr,
    };
    Ok(run_rules(spec, x0, &[rule], cfg)?.estimate(0))
}

/// [`simulate_R`] for several rules on the same paths (one estimate per rule).
pub fn simulate_rules<T: Real>(
    spec: &DiffusionSpec<T>,
    x0: T,
    rules: &[StoppingRule<'_, T>],
    cfg: &McConfig<T>,
) -> Result<Vec<McEstimate<T>>> {
    let s = run_rules(spec, x0, rules, cfg)?;
    Ok((0..rules.len()).map(|j| s.estimate(j)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceCheck<T> {
    pub estimate: McEstimate<T>,
    /// `psi(x)/psi(y)` for `y < x`, `phi(x)/phi(y)` for `y > x`.
    pub exact: T,
    pub z_score: T,
}

/// Payoff `1`, the first-passage rule for level `y` from `x`, and `E_x[e^{-r T_y}]`.
pub fn first_passage_rule<T: Real>(
    spec: &DiffusionSpec<T>,
    x: T,
    y: T,
) -> Result<(PayoffSpec, (T, T), T)> {
    let fund = fundamental_solutions(spec)?;
    let one = PayoffSpec::parse("1", None, Default::default())?;
    Ok(if y < x {
        (one, (y, T::infinity()), fund.psi(x) / fund.psi(y))
    } else {
        (one, (T::neg_infinity(), y), fund.phi(x) / fund.phi(y))
    })
}

/// Estimates `E_x[e^{-r T_y}]` and compares it with the fundamental-solution ratio.
pub fn laplace_check<T: Real>(
    spec: &DiffusionSpec<T>,
    x: T,
    y: T,
    cfg: &McConfig<T>,
) -> Result<LaplaceCheck<T>> {
    let (one, thr, exact) = first_passage_rule(spec, x, y)?;
    let never = (T::neg_infinity(), T::infinity());
    let estimate = simulate_R(
        spec,
        &one,
        x,
        thr,
        never,
        &McConfig {
            boundary_value: T::zero(),
            ..cfg.clone()
        },
    )?;
    Ok(LaplaceCheck {
        estimate,
        exact,
        z_score: estimate.z_score(exact),
    })
}

/// A changed strategy for one player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation<T> {
    /// Replaces the inf-player's thresholds; the saddle needs `R(tau*, sigma') >= R(tau*, sigma*)`.
    Sigma(T, T),
    /// Replaces the sup-player's thresholds; the saddle needs `R(tau', sigma*) <= R(tau*, sigma*)`.
    Tau(T, T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleLine<T> {
    pub perturbation: Perturbation<T>,
    pub estimate: McEstimate<T>,
    /// Paired mean of `R(perturbed) - R(tau*, sigma*)` and its standard error.
    pub diff: T,
    pub diff_se: T,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct SaddleReport<T> {
    pub base: McEstimate<T>,
    pub tau_star: (T, T),
    pub sigma_star: (T, T),
    pub lines: Vec<SaddleLine<T>>,
    pub all_pass: bool,
}

/// Statistical check of the saddle inequalities with common random numbers: the base rule
/// and every perturbation are scored on the same paths, and the test is on paired differences.
pub fn saddle_check<T: Real>(
    spec: &DiffusionSpec<T>,
    payoff: &PayoffSpec,
    x0: T,
    solution: &GameSolution<T>,
    perturbations: &[Perturbation<T>],
    cfg: &McConfig<T>,
) -> Result<SaddleReport<T>> {
    let tau_star = solution.tau_thresholds(x0);
    let sigma_star = solution.sigma_thresholds(x0);
    let mut rules = vec![StoppingRule {
        payoff,
        tau: tau_star,
        sigma: sigma_star,
    }];
    rules.extend(perturbations.iter().map(|&p| match p {
        Perturbation::Sigma(lo, hi) => StoppingRule {
            payoff,
            tau: tau_star,
            sigma: (lo, hi),
        },
        Perturbation::Tau(lo, hi) => StoppingRule {
            payoff,
            tau: (lo, hi),
            sigma: sigma_star,
        },
    }));
    let s = run_rules(spec, x0, &rules, cfg)?;
    let base = s.estimate(0);
    let three = lit::<T>(3.0);
    let lines: Vec<SaddleLine<T>> = perturbations
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let j = i + 1;
            let diffs: Vec<T> = s.values[j]
                .iter()
                .zip(&s.values[0])
                .map(|(&a, &b)| a - b)
                .collect();
            let d = summarize(&diffs, s.paths, 0);
            let pass = match p {
                Perturbation::Sigma(..) => d.mean >= -three * d.std_error,
                Perturbation::Tau(..) => d.mean <= three * d.std_error,
            };
            SaddleLine {
                perturbation: p,
                estimate: s.estimate(j),
                diff: d.mean,
                diff_se: d.std_error,
                pass,
            }
        })
        .collect();
    let all_pass = lines.iter().all(|l| l.pass);
    Ok(SaddleReport {
        base,
        tau_star,
        sigma_star,
        lines,
        all_pass,
    })
}
