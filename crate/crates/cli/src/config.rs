//! Line-oriented problem files: `section.key = value`, `#` starts a comment.
//!
//! Every value is parsed once, here; the rest of the binary only sees typed fields.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use stopgame_core::diffusion::DiffusionKind;
use stopgame_core::payoff_expr;
use stopgame_core::{
    BoundaryKind, DiffusionSpec, Direction, McConfig, PayoffSpec, SolveOptions, Spacing,
    TransformOptions,
};

/// A rejected configuration, pointing at the offending line and key where there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "`{k}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

const KEYS: &[&str] = &[
    "diffusion.kind",
    "diffusion.rate",
    "diffusion.sigma",
    "diffusion.drift",
    "diffusion.mu",
    "diffusion.d",
    "diffusion.anchor",
    "diffusion.a",
    "diffusion.b",
    "diffusion.eta",
    "diffusion.x_min",
    "diffusion.x_max",
    "diffusion.absorb_left",
    "diffusion.absorb_right",
    "payoff.G",
    "payoff.H",
    "grid.n",
    "grid.spacing",
    "grid.direction",
    "grid.cross_check",
    "game.l_a",
    "game.l_b",
    "game.w0",
    "mc.x0",
    "mc.paths",
    "mc.dt",
    "mc.horizon",
    "mc.seed",
    "mc.antithetic",
    "mc.boundary_value",
    "mc.budget",
    "mc.laplace_y",
    "output.points",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Kind {
    Gbm { sigma: f64, drift: f64 },
    Bm { drift: f64, sigma: f64 },
    Generator { mu: String, d: String, anchor: f64 },
}

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub kind: Kind,
    pub rate: f64,
    pub a: f64,
    pub b: f64,
    pub eta: Option<f64>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    /// Forced stop at these levels; only the single-player solver supports them.
    pub absorb: Option<(f64, f64)>,
    pub g: String,
    pub h: Option<String>,
    pub constants: BTreeMap<String, f64>,
    pub n: usize,
    pub spacing: Spacing,
    pub direction: Direction,
    pub cross_check: bool,
    pub l_a: Option<f64>,
    pub l_b: Option<f64>,
    pub w0: Option<f64>,
    pub x0: Option<f64>,
    pub mc: McConfig,
    pub laplace_y: Option<f64>,
    pub points: Vec<f64>,
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Raw {
    entries: HashMap<String, Entry>,
}

fn err(line: Option<usize>, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: Some(key.to_string()),
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
}

impl Raw {
    fn parse(text: &str) -> Result<Raw, ConfigError> {
        let mut entries = HashMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError {
                    line: Some(line),
                    key: None,
                    message: "expected `section.key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS.contains(&key) || key.strip_prefix("const.").is_some_and(is_ident);
            if !known {
                return Err(err(Some(line), key, "unknown key"));
            }
            if value.is_empty() {
                return Err(err(Some(line), key, "empty value"));
            }
            if let Some(prev) = entries.get(key).map(|e: &Entry| e.line) {
                return Err(err(
                    Some(line),
                    key,
                    format!("duplicate key (first set on line {prev})"),
                ));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                    used: false,
                },
            );
        }
        Ok(Raw { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.take(key).map(|(_, v)| v)
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        match v.parse::<f64>() {
            Ok(x) if !x.is_nan() => Ok(Some(x)),
            _ => Err(err(Some(line), key, format!("`{v}` is not a number"))),
        }
    }

    fn finite(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let line = self.line(key);
        match self.number(key)? {
            Some(x) if !x.is_finite() => Err(err(line, key, "must be finite")),
            x => Ok(x),
        }
    }

    fn positive(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let line = self.line(key);
        match self.finite(key)? {
            Some(x) if x <= 0.0 => Err(err(line, key, "must be positive")),
            x => Ok(x),
        }
    }

    fn integer(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        v.parse::<u64>().map(Some).map_err(|_| {
            err(
                Some(line),
                key,
                format!("`{v}` is not a non-negative integer"),
            )
        })
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        match v.as_str() {
            "true" => Ok(Some(true)),
            "false" => Ok(Some(false)),
            _ => Err(err(
                Some(line),
                key,
                format!("`{v}` is not `true` or `false`"),
            )),
        }
    }

    fn choice<T: Copy>(
        &mut self,
        key: &str,
        options: &[(&str, T)],
    ) -> Result<Option<T>, ConfigError> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        options
            .iter()
            .find(|(name, _)| *name == v)
            .map(|&(_, t)| Some(t))
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                err(
                    Some(line),
                    key,
                    format!("`{v}` is not one of {}", names.join(", ")),
                )
            })
    }

    fn required<T>(key: &str, v: Option<T>) -> Result<T, ConfigError> {
        v.ok_or_else(|| err(None, key, "missing required key"))
    }

    /// Keys that were set but mean nothing for the chosen diffusion kind.
    fn reject_unused(&self, prefix: &str, why: &str) -> Result<(), ConfigError> {
        let mut stray: Vec<(&String, &Entry)> = self
            .entries
            .iter()
            .filter(|(k, e)| k.starts_with(prefix) && !e.used)
            .collect();
        stray.sort_by_key(|(_, e)| e.line);
        match stray.first() {
            Some((k, e)) => Err(err(Some(e.line), k, why)),
            None => Ok(()),
        }
    }
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<ProblemConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            key: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ProblemConfig, ConfigError> {
        let mut raw = Raw::parse(text)?;

        let kind_line = raw.line("diffusion.kind");
        let kind_name = Raw::required("diffusion.kind", raw.string("diffusion.kind"))?;
        let rate = Raw::required("diffusion.rate", raw.positive("diffusion.rate")?)?;
        let (kind, a0, b0) = match kind_name.as_str() {
            "gbm" => {
                let sigma = Raw::required("diffusion.sigma", raw.positive("diffusion.sigma")?)?;
                let drift = raw.finite("diffusion.drift")?.unwrap_or(rate);
                (Kind::Gbm { sigma, drift }, 0.0, f64::INFINITY)
            }
            "bm" => {
                let sigma = Raw::required("diffusion.sigma", raw.positive("diffusion.sigma")?)?;
                let drift = raw.finite("diffusion.drift")?.unwrap_or(0.0);
                (Kind::Bm { drift, sigma }, f64::NEG_INFINITY, f64::INFINITY)
            }
            "generator" => {
                let mu = Raw::required("diffusion.mu", raw.string("diffusion.mu"))?;
                let d = Raw::required("diffusion.d", raw.string("diffusion.d"))?;
                let anchor = Raw::required("diffusion.anchor", raw.finite("diffusion.anchor")?)?;
                (
                    Kind::Generator { mu, d, anchor },
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                )
            }
            other => {
                return Err(err(
                    kind_line,
                    "diffusion.kind",
                    format!("`{other}` is not one of gbm, bm, generator"),
                ));
            }
        };
        for key in [
            "diffusion.sigma",
            "diffusion.drift",
            "diffusion.mu",
            "diffusion.d",
            "diffusion.anchor",
        ] {
            if let Some(line) = raw.line(key).filter(|_| !raw.entries[key].used) {
                return Err(err(
                    Some(line),
                    key,
                    format!("not a parameter of kind `{kind_name}`"),
                ));
            }
        }
        let a = raw.number("diffusion.a")?.unwrap_or(a0);
        let b = raw.number("diffusion.b")?.unwrap_or(b0);
        let eta = raw.positive("diffusion.eta")?;
        let x_min = raw.finite("diffusion.x_min")?;
        let x_max = raw.finite("diffusion.x_max")?;
        let absorb = match (
            raw.finite("diffusion.absorb_left")?,
            raw.finite("diffusion.absorb_right")?,
        ) {
            (None, None) => None,
            (Some(l), Some(r)) => Some((l, r)),
            _ => {
                let key = if raw.line("diffusion.absorb_left").is_some() {
                    "diffusion.absorb_right"
                } else {
                    "diffusion.absorb_left"
                };
                return Err(err(None, key, "absorbing levels come in pairs; set both"));
            }
        };

        let g = Raw::required("payoff.G", raw.string("payoff.G"))?;
        let h = raw.string("payoff.H");
        let mut constants = BTreeMap::new();
        let const_keys: Vec<String> = raw
            .entries
            .keys()
            .filter(|k| k.starts_with("const."))
            .cloned()
            .collect();
        for key in const_keys {
            let v = Raw::required(&key, raw.finite(&key)?)?;
            constants.insert(key["const.".len()..].to_string(), v);
        }

        let n = raw.integer("grid.n")?.unwrap_or(4097);
        if n < 3 {
            return Err(err(raw.line("grid.n"), "grid.n", "need at least 3 nodes"));
        }
        let spacing = raw
            .choice(
                "grid.spacing",
                &[
                    ("uniform_x", Spacing::UniformX),
                    ("uniform_y", Spacing::UniformY),
                ],
            )?
            .unwrap_or(Spacing::UniformY);
        let direction = raw
            .choice(
                "grid.direction",
                &[("psi", Direction::PsiScale), ("phi", Direction::PhiScale)],
            )?
            .unwrap_or(Direction::PsiScale);
        let cross_check = raw.boolean("grid.cross_check")?.unwrap_or(true);

        let l_a = raw.finite("game.l_a")?;
        let l_b = raw.finite("game.l_b")?;
        let w0 = raw.finite("game.w0")?;

        let x0 = raw.finite("mc.x0")?;
        let defaults = McConfig::default();
        let paths = raw.integer("mc.paths")?.unwrap_or(defaults.paths as u64);
        if paths == 0 {
            return Err(err(raw.line("mc.paths"), "mc.paths", "must be at least 1"));
        }
        let mc = McConfig {
            paths: paths as usize,
            dt: raw.positive("mc.dt")?.unwrap_or(defaults.dt),
            horizon: raw.positive("mc.horizon")?,
            seed: raw.integer("mc.seed")?.unwrap_or(defaults.seed),
            antithetic: raw.boolean("mc.antithetic")?.unwrap_or(defaults.antithetic),
            boundary_value: raw
                .finite("mc.boundary_value")?
                .unwrap_or(defaults.boundary_value),
            budget: raw.positive("mc.budget")?,
        };
        let laplace_y = raw.finite("mc.laplace_y")?;
        let points = match raw.take("output.points") {
            None => Vec::new(),
            Some((line, v)) => v
                .split(',')
                .map(|s| match s.trim().parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(err(
                        Some(line),
                        "output.points",
                        format!("`{}` is not a finite number", s.trim()),
                    )),
                })
                .collect::<Result<_, _>>()?,
        };
        raw.reject_unused("", "unused key")?;

        let cfg = ProblemConfig {
            kind,
            rate,
            a,
            b,
            eta,
            x_min,
            x_max,
            absorb,
            g,
            h,
            constants,
            n: n as usize,
            spacing,
            direction,
            cross_check,
            l_a,
            l_b,
            w0,
            x0,
            mc,
            laplace_y,
            points,
        };
        // Surface expression errors as config errors, with the key they came from.
        cfg.payoff()?;
        cfg.diffusion()?;
        Ok(cfg)
    }

    pub fn diffusion(&self) -> Result<DiffusionSpec, ConfigError> {
        let kind = match &self.kind {
            Kind::Gbm { sigma, drift } => DiffusionKind::GeometricBM {
                r_drift: *drift,
                sigma: *sigma,
            },
            Kind::Bm { drift, sigma } => DiffusionKind::BrownianMotion {
                drift: *drift,
                sigma: *sigma,
            },
            Kind::Generator { mu, d, anchor } => {
                let parse = |key: &str, s: &str| {
                    payoff_expr::parse(s, &self.constants)
                        .map_err(|e| err(None, key, e.to_string()))
                };
                DiffusionKind::Generator {
                    mu: parse("diffusion.mu", mu)?,
                    d: parse("diffusion.d", d)?,
                    anchor: *anchor,
                }
            }
        };
        let mut spec = DiffusionSpec::new(kind, self.rate, self.a, self.b);
        spec.eta = self.eta;
        spec.x_min = self.x_min;
        spec.x_max = self.x_max;
        if let Some((l, r)) = self.absorb {
            spec.left = BoundaryKind::Absorbing { at: l };
            spec.right = BoundaryKind::Absorbing { at: r };
        }
        Ok(spec)
    }

    pub fn payoff(&self) -> Result<PayoffSpec, ConfigError> {
        PayoffSpec::parse(&self.g, self.h.as_deref(), self.constants.clone()).map_err(|e| {
            // Tell the two expressions apart for the message.
            let g_ok = payoff_expr::parse(&self.g, &self.constants).is_ok();
            err(
                None,
                if g_ok { "payoff.H" } else { "payoff.G" },
                e.to_string(),
            )
        })
    }

    pub fn solve_options(&self) -> SolveOptions<f64> {
        SolveOptions {
            n: self.n,
            spacing: self.spacing,
            direction: self.direction,
            window: None,
            transform: TransformOptions {
                l_a: self.l_a,
                l_b: self.l_b,
                w0: self.w0,
                ..Default::default()
            },
            cross_check: self.cross_check,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUT: &str = "\
diffusion.kind = gbm
diffusion.rate = 0.05
diffusion.sigma = 0.3
diffusion.x_min = 0.1
diffusion.x_max = 409.7
payoff.G = pos(K - x)   # put
const.K = 100
";

    #[test]
    fn parses_put() {
        let c = ProblemConfig::parse(PUT).unwrap();
        assert_eq!(
            c.kind,
            Kind::Gbm {
                sigma: 0.3,
                drift: 0.05
            }
        );
        assert_eq!(c.constants["K"], 100.0);
        assert_eq!(c.n, 4097);
        assert!(c.h.is_none());
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let e = ProblemConfig::parse(&format!("{PUT}grid.nodes = 5\n")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(8), Some("grid.nodes")));
        assert!(e.to_string().contains("line 8"));
    }

    #[test]
    fn bad_number_and_duplicates() {
        let e = ProblemConfig::parse(&PUT.replace("0.3", "0.3x")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("diffusion.sigma"));
        let e = ProblemConfig::parse(&format!("{PUT}const.K = 90\n")).unwrap_err();
        assert!(e.message.contains("duplicate"));
    }

    #[test]
    fn parameter_of_other_kind_is_rejected() {
        let e = ProblemConfig::parse(&format!("{PUT}diffusion.mu = x\n")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("diffusion.mu"));
    }

    #[test]
    fn missing_payoff() {
        let e =
            ProblemConfig::parse(&PUT.replace("payoff.G = pos(K - x)   # put\n", "")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("payoff.G"));
    }

    #[test]
    fn bad_expression_is_a_config_error() {
        let e = ProblemConfig::parse(&PUT.replace("pos(K - x)", "pos(Q - x)")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("payoff.G"));
    }

    proptest::proptest! {
        #[test]
        fn mutated_configs_never_panic(
            drop in proptest::collection::vec(proptest::bool::ANY, 8),
            extra in "[a-z_.]{0,12} ?=? ?[-0-9a-z.()+*, ]{0,16}",
            at in 0usize..8,
        ) {
            let mut lines: Vec<String> =
                PUT.lines().zip(&drop).filter(|(_, &d)| !d).map(|(l, _)| l.to_string()).collect();
            lines.insert(at.min(lines.len()), extra);
            let _ = ProblemConfig::parse(&lines.join("\n"));
        }

        #[test]
        fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
            let _ = ProblemConfig::parse(&text);
        }
    }

    #[test]
    fn garbage_never_panics() {
        for text in [
            "=",
            "a",
            ".=.",
            "x.y = 1",
            "diffusion.kind =",
            "const. = 1",
            "const.1a = 2",
            "\u{0}=\u{0}",
        ] {
            assert!(ProblemConfig::parse(text).is_err(), "{text:?}");
        }
    }
}
