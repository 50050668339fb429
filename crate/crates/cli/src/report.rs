//! CSV export and the human-readable summaries.

use std::fmt::Write as _;

use stopgame_core::{GameSolution, Region, StoppingSolution, ValueProfile};

pub const CSV_HEADER: &str = "x,y,psi,phi,WG,WH,V_scaled,V,eps_star,delta_star,region";

/// 17 significant digits: enough to round-trip any `f64`.
pub fn exact(x: f64) -> String {
    format!("{x:.16e}")
}

/// At most `d` significant digits in plain notation, trailing zeros dropped.
pub fn sig(x: f64, d: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i64;
    let decimals = (d as i64 - 1 - e).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn rows(
    p: &ValueProfile,
    wg: &[f64],
    wh: Option<&[f64]>,
    eps: &[f64],
    delta: Option<&[f64]>,
) -> String {
    let (xs, ys) = (p.st.x_grid(), p.st.y_grid());
    let fund = p.st.fund();
    let opt = |v: Option<&[f64]>, i: usize| v.map(|v| exact(v[i])).unwrap_or_default();
    let mut out = String::with_capacity(xs.len() * 200);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for i in 0..xs.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            exact(xs[i]),
            exact(ys[i]),
            exact(fund.psi(xs[i])),
            exact(fund.phi(xs[i])),
            exact(wg[i]),
            opt(wh, i),
            exact(p.v_scaled[i]),
            exact(p.v[i]),
            exact(eps[i]),
            opt(delta, i),
            p.regions[i].label()
        );
    }
    out
}

/// Stopping problems leave the `WH` and `delta_star` columns empty.
pub fn stopping_csv(sol: &StoppingSolution) -> String {
    rows(
        &sol.profile,
        &sol.tob.wg,
        None,
        &sol.envelope.eps_profile,
        None,
    )
}

pub fn game_csv(sol: &GameSolution) -> String {
    rows(
        &sol.profile,
        &sol.tob.wg,
        sol.tob.wh.as_deref(),
        &sol.taut.eps_star,
        Some(&sol.taut.delta_star),
    )
}

/// One stopping-set component `[lo, hi]`, its interior ends reported as `a_star` / `b_star`.
/// Ends at the edge of the grid are not thresholds and are left out.
fn components(out: &mut String, label: &str, sets: &[(f64, f64)], window: (f64, f64)) {
    if sets.is_empty() {
        let _ = writeln!(out, "{label} = empty");
    }
    for (i, &(lo, hi)) in sets.iter().enumerate() {
        let _ = writeln!(out, "{label}[{i}] = [{}, {}]", sig(lo, 6), sig(hi, 6));
        if lo > window.0 {
            let _ = writeln!(out, "a_star = {}", sig(lo, 6));
        }
        if hi < window.1 {
            let _ = writeln!(out, "b_star = {}", sig(hi, 6));
        }
    }
}

fn window(p: &ValueProfile) -> (f64, f64) {
    let xs = p.st.x_grid();
    (xs[0], xs[xs.len() - 1])
}

fn points(out: &mut String, p: &ValueProfile, xs: &[f64]) -> stopgame_core::Result<()> {
    for &x in xs {
        let _ = writeln!(out, "V({}) = {}", sig(x, 6), sig(p.value(x)?, 6));
    }
    Ok(())
}

pub fn stopping_summary(sol: &StoppingSolution, at: &[f64]) -> stopgame_core::Result<String> {
    let mut out = String::new();
    let w = window(&sol.profile);
    let _ = writeln!(out, "problem = stopping");
    let _ = writeln!(
        out,
        "grid = {} nodes on [{}, {}]",
        sol.profile.st.len(),
        sig(w.0, 6),
        sig(w.1, 6)
    );
    components(&mut out, "D", &sol.stopping, w);
    for (i, &(lo, hi)) in sol.continuation.iter().enumerate() {
        let _ = writeln!(out, "C[{i}] = ({}, {})", sig(lo, 6), sig(hi, 6));
    }
    points(&mut out, &sol.profile, at)?;
    if let Some(g) = sol.dual_route_gap {
        let _ = writeln!(out, "dual_route_gap = {g:.3e}");
    }
    Ok(out)
}

pub fn game_summary(sol: &GameSolution, at: &[f64]) -> stopgame_core::Result<String> {
    let mut out = String::new();
    let w = window(&sol.profile);
    let _ = writeln!(out, "problem = game");
    let _ = writeln!(
        out,
        "grid = {} nodes on [{}, {}]",
        sol.profile.st.len(),
        sig(w.0, 6),
        sig(w.1, 6)
    );
    let _ = writeln!(out, "equilibrium = {}", sol.equilibrium.name());
    components(&mut out, "D+", &sol.d_plus, w);
    components(&mut out, "D-", &sol.d_minus, w);
    if let Some(p) = sol.penalty {
        let _ = writeln!(out, "penalty = {}", sig(p, 6));
    }
    if let Some(d) = sol.delta_star {
        let _ = writeln!(out, "delta_star = {}", sig(d, 10));
    }
    let both = sol
        .profile
        .regions
        .iter()
        .filter(|&&r| r == Region::Both)
        .count();
    if both > 0 {
        let _ = writeln!(out, "nodes in both stopping sets = {both}");
    }
    points(&mut out, &sol.profile, at)?;
    Ok(out)
}
