use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use stopgame_core::mc::{self, StoppingRule};
use stopgame_core::{
    saddle_check, solve_game, solve_stopping, solve_stopping_absorbed, Equilibrium, GameSolution,
    McConfig, McEstimate, Perturbation, StoppingSolution,
};

use crate::config::{ConfigError, ProblemConfig};
use crate::examples::{self, Market};
use crate::report::{self, sig};

/// A finished command that still wants a non-zero exit (the message is already printed).
#[derive(Debug)]
pub struct Failed {
    pub code: u8,
}

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.code)
    }
}

impl std::error::Error for Failed {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    ConfigError {
        line: None,
        key: None,
        message: message.into(),
    }
    .into()
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => Ok(()),
    }
}

fn stopping(cfg: &ProblemConfig) -> Result<StoppingSolution> {
    if cfg.h.is_some() {
        return Err(usage(
            "payoff.H is set, which makes this a game; use `game`",
        ));
    }
    let spec = cfg.diffusion()?;
    let payoff = cfg.payoff()?;
    let opts = cfg.solve_options();
    Ok(match cfg.absorb {
        Some((alpha, beta)) => solve_stopping_absorbed(&spec, &payoff, alpha, beta, &opts)?,
        None => solve_stopping(&spec, &payoff, &opts)?,
    })
}

fn game(cfg: &ProblemConfig) -> Result<GameSolution> {
    if cfg.h.is_none() {
        return Err(usage(
            "payoff.H is missing, so there is no second player; use `solve`",
        ));
    }
    if cfg.absorb.is_some() {
        return Err(usage("absorbing levels are supported by `solve` only"));
    }
    Ok(solve_game(
        &cfg.diffusion()?,
        &cfg.payoff()?,
        &cfg.solve_options(),
    )?)
}

/// Where `V` is printed: the configured points plus the Monte Carlo start.
fn report_points(cfg: &ProblemConfig) -> Vec<f64> {
    let mut pts = cfg.points.clone();
    pts.extend(cfg.x0.filter(|x| !cfg.points.contains(x)));
    pts
}

pub fn solve(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ProblemConfig::load(config)?;
    let sol = stopping(&cfg)?;
    print!("{}", report::stopping_summary(&sol, &report_points(&cfg))?);
    write_out(out, &report::stopping_csv(&sol))
}

pub fn game_cmd(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ProblemConfig::load(config)?;
    let sol = game(&cfg)?;
    print!("{}", report::game_summary(&sol, &report_points(&cfg))?);
    write_out(out, &report::game_csv(&sol))
}

/// Writes the CSV of whichever problem the config describes; to stdout without `out`.
pub fn export(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ProblemConfig::load(config)?;
    let csv = if cfg.h.is_some() {
        report::game_csv(&game(&cfg)?)
    } else {
        report::stopping_csv(&stopping(&cfg)?)
    };
    match out {
        Some(_) => write_out(out, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyFlags {
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub x0: Option<f64>,
}

/// Discretisation allowance on top of the statistical error, relative to the value.
const BIAS_ALLOWANCE: f64 = 0.005;
/// Above this relative standard error a comparison says nothing either way.
const MAX_REL_SE: f64 = 0.05;
const Z_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Pass,
    Inconclusive,
    Fail,
}

impl Status {
    fn name(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::Fail => "FAIL",
        }
    }
}

struct Row {
    label: String,
    exact: f64,
    est: McEstimate,
    /// Relative bias allowance applied before the z-score.
    allowance: f64,
}

impl Row {
    fn z(&self) -> f64 {
        let diff = self.est.mean - self.exact;
        let excess = (diff.abs() - self.allowance * self.exact.abs()).max(0.0);
        if excess == 0.0 {
            0.0
        } else {
            diff.signum() * excess / self.est.std_error
        }
    }

    fn status(&self) -> Status {
        let scale = self.exact.abs().max(self.est.mean.abs());
        if self.est.std_error > MAX_REL_SE * scale {
            Status::Inconclusive
        } else if self.z().abs() <= Z_MAX {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

fn table(rows: &[Row]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>14} {:>14} {:>12} {:>8} {:>10}  status",
        "quantity", "analytic", "mc", "se", "z", "truncated"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<22} {:>14} {:>14} {:>12} {:>8.2} {:>9.2}%  {}",
            r.label,
            sig(r.exact, 8),
            sig(r.est.mean, 8),
            sig(r.est.std_error, 4),
            r.z(),
            100.0 * r.est.truncation_mass,
            r.status().name()
        );
    }
    out
}

fn fmt_pair((lo, hi): (f64, f64)) -> String {
    format!("({}, {})", sig(lo, 6), sig(hi, 6))
}

/// Thresholds `(lo, hi)` of the first entry into `sets` from `x`: `(x, x)` inside a set.
fn hitting_pair(sets: &[(f64, f64)], x: f64) -> (f64, f64) {
    if sets.iter().any(|&(lo, hi)| lo <= x && x <= hi) {
        return (x, x);
    }
    let lo = sets
        .iter()
        .map(|s| s.1)
        .filter(|&h| h < x)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = sets
        .iter()
        .map(|s| s.0)
        .filter(|&l| l > x)
        .fold(f64::INFINITY, f64::min);
    (lo, hi)
}

/// Moves the finite ends of a threshold pair away from (`m > 1`) or towards `x0`.
fn scaled((lo, hi): (f64, f64), x0: f64, m: f64) -> (f64, f64) {
    let f = |t: f64| if t.is_finite() { x0 + m * (t - x0) } else { t };
    (f(lo), f(hi))
}

fn perturbations(sol: &GameSolution, x0: f64) -> Vec<Perturbation<f64>> {
    let never = (f64::NEG_INFINITY, f64::INFINITY);
    let sigma = sol.sigma_thresholds(x0);
    let tau = sol.tau_thresholds(x0);
    let mut p = Vec::new();
    let moves = [0.8, 0.9, 1.1, 1.2];
    if sigma != never {
        p.extend(
            moves
                .iter()
                .map(|&m| scaled(sigma, x0, m))
                .map(|(l, h)| Perturbation::Sigma(l, h)),
        );
        p.push(Perturbation::Sigma(never.0, never.1));
    } else {
        p.push(Perturbation::Sigma(x0, x0));
    }
    if tau != never {
        p.extend(
            moves
                .iter()
                .map(|&m| scaled(tau, x0, m))
                .map(|(l, h)| Perturbation::Tau(l, h)),
        );
    }
    if tau != (x0, x0) {
        p.push(Perturbation::Tau(x0, x0));
    }
    p.dedup();
    p
}

pub fn verify(config: &Path, flags: VerifyFlags) -> Result<()> {
    let cfg = ProblemConfig::load(config)?;
    let x0 = flags
        .x0
        .or(cfg.x0)
        .ok_or_else(|| usage("no start point: set mc.x0 or pass --x0"))?;
    let mc_cfg = McConfig {
        paths: flags.paths.unwrap_or(cfg.mc.paths),
        dt: flags.dt.unwrap_or(cfg.mc.dt),
        seed: flags.seed.unwrap_or(cfg.mc.seed),
        ..cfg.mc.clone()
    };
    if mc_cfg.paths == 0 || !(mc_cfg.dt > 0.0) {
        return Err(usage("--paths must be at least 1 and --dt positive"));
    }
    let spec = cfg.diffusion()?;
    let payoff = cfg.payoff()?;
    let never = (f64::NEG_INFINITY, f64::INFINITY);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "x0 = {}, paths = {}, dt = {}, seed = {}",
        sig(x0, 6),
        mc_cfg.paths,
        mc_cfg.dt,
        mc_cfg.seed
    );
    let mut rows = Vec::new();
    let mut saddle_ok = true;

    if cfg.h.is_none() {
        let sol = stopping(&cfg)?;
        let exact = sol.value(x0)?;
        let tau = hitting_pair(&sol.stopping, x0);
        let mut rules = vec![StoppingRule {
            payoff: &payoff,
            tau,
            sigma: never,
        }];
        let laplace = cfg
            .laplace_y
            .map(|y| mc::first_passage_rule(&spec, x0, y))
            .transpose()?;
        if let Some((one, thr, _)) = &laplace {
            rules.push(StoppingRule {
                payoff: one,
                tau: *thr,
                sigma: never,
            });
        }
        let _ = writeln!(out, "tau* = first exit from {}", fmt_pair(tau));
        let est = mc::simulate_rules(&spec, x0, &rules, &mc_cfg)?;
        rows.push(Row {
            label: format!("V({})", sig(x0, 6)),
            exact,
            est: est[0],
            allowance: BIAS_ALLOWANCE,
        });
        if let (Some((_, _, ratio)), Some(y)) = (laplace, cfg.laplace_y) {
            rows.push(Row {
                label: format!("E[exp(-r T_{})]", sig(y, 6)),
                exact: ratio,
                est: est[1],
                allowance: 0.0,
            });
        }
        out.push_str(&table(&rows));
    } else {
        let sol = game(&cfg)?;
        if !matches!(
            sol.equilibrium,
            Equilibrium::NashSaddle | Equilibrium::Degenerate
        ) {
            print!("{out}");
            println!(
                "equilibrium = {}: no saddle point to verify",
                sol.equilibrium.name()
            );
            return Err(Failed { code: 3 }.into());
        }
        let perts = perturbations(&sol, x0);
        let rep = saddle_check(&spec, &payoff, x0, &sol, &perts, &mc_cfg)?;
        let _ = writeln!(out, "equilibrium = {}", sol.equilibrium.name());
        let _ = writeln!(
            out,
            "tau* = first exit from {}, sigma* = first exit from {}",
            fmt_pair(rep.tau_star),
            fmt_pair(rep.sigma_star)
        );
        rows.push(Row {
            label: format!("V({})", sig(x0, 6)),
            exact: sol.value(x0)?,
            est: rep.base,
            allowance: BIAS_ALLOWANCE,
        });
        out.push_str(&table(&rows));
        let _ = writeln!(
            out,
            "saddle check (common random numbers, {} perturbations):",
            rep.lines.len()
        );
        for l in &rep.lines {
            let (who, pair, rel) = match l.perturbation {
                Perturbation::Sigma(lo, hi) => ("sigma'", (lo, hi), ">="),
                Perturbation::Tau(lo, hi) => ("tau'", (lo, hi), "<="),
            };
            let _ = writeln!(
                out,
                "  {who:<6} = {:<22} R = {:>12}  R - R* = {:>11} +- {:<10} need {rel} 0  {}",
                fmt_pair(pair),
                sig(l.estimate.mean, 8),
                sig(l.diff, 4),
                sig(l.diff_se, 3),
                if l.pass { "PASS" } else { "FAIL" }
            );
        }
        saddle_ok = rep.all_pass;
    }

    let mut status = rows.iter().map(Row::status).max().unwrap_or(Status::Pass);
    if !saddle_ok && status != Status::Inconclusive {
        status = Status::Fail;
    }
    let _ = writeln!(out, "verify: {}", status.name());
    print!("{out}");
    match status {
        Status::Pass => Ok(()),
        Status::Inconclusive => {
            eprintln!(
                "warning: standard error above {:.0}% of the value; increase --paths for a verdict",
                100.0 * MAX_REL_SE
            );
            Ok(())
        }
        Status::Fail => Err(Failed { code: 2 }.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExampleName {
    Put,
    IsraeliPut,
}

pub struct ExampleArgs {
    pub market: Market,
    pub delta: Option<f64>,
    pub out: Option<std::path::PathBuf>,
    pub config_out: Option<std::path::PathBuf>,
}

pub fn example(name: ExampleName, args: ExampleArgs) -> Result<()> {
    let m = args.market;
    if !(m.strike > 0.0 && m.rate > 0.0 && m.sigma > 0.0)
        || !(m.strike.is_finite() && m.rate.is_finite() && m.sigma.is_finite())
    {
        return Err(usage("--K, --r and --sigma must be positive and finite"));
    }
    let text = match name {
        ExampleName::Put => {
            if args.delta.is_some() {
                return Err(usage("--delta only applies to israeli-put"));
            }
            examples::put_config(&m)
        }
        ExampleName::IsraeliPut => {
            let d = args.delta.unwrap_or(0.5 * m.critical_penalty());
            if !(d > 0.0 && d.is_finite()) {
                return Err(usage("--delta must be positive and finite"));
            }
            examples::israeli_put_config(&m, d)
        }
    };
    if let Some(p) = &args.config_out {
        write_out(Some(p), &text)?;
    }
    let cfg = ProblemConfig::parse(&text)?;
    let pts = report_points(&cfg);
    match name {
        ExampleName::Put => {
            let sol = stopping(&cfg)?;
            print!("{}", report::stopping_summary(&sol, &pts)?);
            let xs = m.put_threshold();
            let found = sol.stopping.first().map(|s| s.1).unwrap_or(f64::NAN);
            println!(
                "closed-form b_star = {} (error {:.1e})",
                sig(xs, 10),
                (found - xs).abs()
            );
            write_out(args.out.as_deref(), &report::stopping_csv(&sol))
        }
        ExampleName::IsraeliPut => {
            let sol = game(&cfg)?;
            print!("{}", report::game_summary(&sol, &pts)?);
            println!("closed-form delta_star = {}", sig(m.critical_penalty(), 10));
            if let (Some(d), Some(&(_, xs))) = (cfg.constants.get("delta"), sol.d_plus.first()) {
                println!(
                    "exercise-level residual = {:.1e}",
                    m.exercise_residual(xs, *d).abs()
                );
            }
            write_out(args.out.as_deref(), &report::game_csv(&sol))
        }
    }
}
