//! Flat `key = value` run configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Every key has a
//! default except the market parameters, which are required by subcommands
//! that simulate the market. Unknown keys are errors. A resolved config is
//! serialized with sorted keys and canonical values, so parsing it again
//! gives the same config.

use std::collections::BTreeMap;
use std::fmt;

use facelift_core::dual::DualSearch;
use facelift_core::germ::GermSearch;
use facelift_core::hjb::HjbGrid;
use facelift_core::{EndowmentSpec, MarketParams, Model, UtilitySpec};

/// Where a value came from, for error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override(usize),
    Default,
    /// Neither given nor defaulted.
    Missing,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override(n) => write!(f, "override #{n}"),
            Origin::Default => write!(f, "default"),
            Origin::Missing => write!(f, "config"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{origin}: {message}")]
pub struct ConfigError {
    pub origin: Origin,
    pub message: String,
}

fn err(origin: Origin, message: impl Into<String>) -> ConfigError {
    ConfigError {
        origin,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    Positive,
    Count,
    Seed,
    FloatList,
    Utility,
    Endowment,
    Knots,
    Grid,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: Option<&'static str>,
}

const fn key(name: &'static str, kind: Kind, default: Option<&'static str>) -> Key {
    Key {
        name,
        kind,
        default,
    }
}

const KEYS: &[Key] = &[
    key("run.seed", Kind::Seed, Some("7")),
    key("model.mu", Kind::Float, None),
    key("model.sigma", Kind::Positive, None),
    key("utility", Kind::Utility, Some("power:0.5")),
    key("endowment.kind", Kind::Endowment, Some("logistic")),
    key("endowment.eta0", Kind::Float, Some("0")),
    key("endowment.c0", Kind::Float, Some("0")),
    key("endowment.c1", Kind::Float, Some("2")),
    key("endowment.m", Kind::Float, Some("0")),
    key("endowment.s", Kind::Positive, Some("1")),
    key("endowment.value", Kind::Float, Some("1")),
    key("endowment.knots", Kind::Knots, Some("-1:1,0:0,1:1")),
    key("facelift.phi", Kind::Float, Some("1")),
    key("facelift.psi", Kind::Float, Some("0")),
    key("facelift.z_grid", Kind::Grid, Some("0.1:4:40")),
    key("germ.horizon", Kind::Positive, Some("0.1")),
    key("germ.nu_max", Kind::Positive, Some("1000")),
    key("germ.kappa_max", Kind::Positive, Some("10000")),
    key("germ.n_paths", Kind::Count, Some("100000")),
    key("germ.n_steps", Kind::Count, Some("1000")),
    key("germ.budget", Kind::Count, Some("24")),
    key("germ.bang_n", Kind::Positive, Some("40")),
    key("dual.horizons", Kind::FloatList, Some("0.2,0.1,0.05,0.025")),
    key("dual.z", Kind::FloatList, Some("2,0.25")),
    key("dual.budget", Kind::Count, Some("20")),
    key("dual.n_paths", Kind::Count, Some("200000")),
    key("dual.pilot_paths", Kind::Count, Some("25000")),
    key("dual.n_steps", Kind::Count, Some("64")),
    key("dual.nu_max", Kind::Positive, Some("1000")),
    key("dual.kappa_max", Kind::Positive, Some("10000")),
    key("primal.horizon", Kind::Positive, Some("0.1")),
    key("primal.x", Kind::Float, Some("1")),
    key("primal.theta", Kind::FloatList, Some("-0.5,0,0.5")),
    key("primal.nu", Kind::FloatList, Some("-0.5,0,0.5")),
    key("primal.z", Kind::FloatList, Some("0.5,1,2")),
    key("primal.n_paths", Kind::Count, Some("100000")),
    key("primal.n_steps", Kind::Count, Some("16")),
    key("hjb.eta_min", Kind::Float, Some("-14")),
    key("hjb.eta_max", Kind::Float, Some("8")),
    key("hjb.n_eta", Kind::Count, Some("201")),
    key("hjb.z_min", Kind::Positive, Some("0.01")),
    key("hjb.z_max", Kind::Positive, Some("4000")),
    key("hjb.n_z", Kind::Count, Some("201")),
    key("hjb.dt", Kind::Positive, Some("0.000125")),
    key("hjb.t_max", Kind::Positive, Some("0.1")),
    key("hjb.nu_max", Kind::Positive, Some("100")),
    key("hjb.eps_zz", Kind::Positive, Some("0.000001")),
    key("hjb.save_times", Kind::FloatList, Some("0.05,0.1")),
    key("hjb.probe_z", Kind::FloatList, Some("0.5,2,5")),
    key("nonattain.horizons", Kind::FloatList, Some("0.1,0.05")),
    key("nonattain.z", Kind::FloatList, Some("0.5,2,5")),
    key("nonattain.n_paths", Kind::Count, Some("100000")),
    key("nonattain.n_steps", Kind::Count, Some("64")),
    key("nonattain.nu_max", Kind::Positive, Some("1000")),
];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Validates `raw` against `kind` and returns its canonical spelling.
fn canonical(kind: Kind, raw: &str) -> Result<String, String> {
    let float = |s: &str| -> Result<f64, String> {
        let x: f64 = s
            .trim()
            .parse()
            .map_err(|_| format!("`{}` is not a number", s.trim()))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("`{}` is not finite", s.trim()))
        }
    };
    let raw = raw.trim();
    match kind {
        Kind::Float => Ok(float(raw)?.to_string()),
        Kind::Positive => {
            let x = float(raw)?;
            if x > 0.0 {
                Ok(x.to_string())
            } else {
                Err(format!("must be positive, got {x}"))
            }
        }
        Kind::Count => match raw.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n.to_string()),
            _ => Err(format!("`{raw}` is not a positive integer")),
        },
        Kind::Seed => raw
            .parse::<u64>()
            .map(|n| n.to_string())
            .map_err(|_| format!("`{raw}` is not a nonnegative integer")),
        Kind::FloatList => {
            let xs = raw.split(',').map(float).collect::<Result<Vec<_>, _>>()?;
            Ok(xs.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
        }
        Kind::Utility => Ok(parse_utility(raw)?.0),
        Kind::Endowment => match raw {
            "logistic" | "table" | "constant" => Ok(raw.to_string()),
            _ => Err(format!("`{raw}` is not one of logistic, table, constant")),
        },
        Kind::Knots => {
            let knots = parse_knots(raw)?;
            Ok(knots
                .iter()
                .map(|(a, b)| format!("{a}:{b}"))
                .collect::<Vec<_>>()
                .join(","))
        }
        Kind::Grid => {
            let (a, b, n) = parse_grid(raw)?;
            Ok(format!("{a}:{b}:{n}"))
        }
    }
}

fn parse_utility(raw: &str) -> Result<(String, UtilitySpec), String> {
    if raw == "log" {
        return Ok(("log".into(), UtilitySpec::Log));
    }
    let p = raw
        .strip_prefix("power:")
        .ok_or_else(|| format!("`{raw}` is not `log` or `power:<p>`"))?;
    let p: f64 = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
    let u = UtilitySpec::power(p).map_err(|e| e.to_string())?;
    Ok((format!("power:{p}"), u))
}

fn parse_knots(raw: &str) -> Result<Vec<(f64, f64)>, String> {
    raw.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| format!("knot `{pair}` is not `eta:phi`"))?;
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| format!("`{a}` is not a number"))?;
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|_| format!("`{b}` is not a number"))?;
            if a.is_finite() && b.is_finite() {
                Ok((a, b))
            } else {
                Err(format!("knot `{pair}` is not finite"))
            }
        })
        .collect()
}

fn parse_grid(raw: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("`{raw}` is not `start:stop:count`"));
    }
    let a: f64 = parts[0]
        .parse()
        .map_err(|_| format!("`{}` is not a number", parts[0]))?;
    let b: f64 = parts[1]
        .parse()
        .map_err(|_| format!("`{}` is not a number", parts[1]))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| format!("`{}` is not a count", parts[2]))?;
    if !(a.is_finite() && b.is_finite() && a < b && n >= 2) {
        return Err(format!("`{raw}` needs start < stop and count >= 2"));
    }
    Ok((a, b, n))
}

/// A parsed configuration: canonical values with their origin.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, (String, Origin)>,
}

impl RunConfig {
    /// Parses config text. Duplicate keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig {
            values: BTreeMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let origin = Origin::Line(i + 1);
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| err(origin, format!("expected `key = value`, got `{body}`")))?;
            let k = k.trim();
            if cfg.values.contains_key(k) {
                return Err(err(origin, format!("duplicate key `{k}`")));
            }
            cfg.insert(k, v, origin)?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides on top of the file.
    pub fn with_overrides(mut self, overrides: &[String]) -> Result<Self, ConfigError> {
        for (i, o) in overrides.iter().enumerate() {
            let origin = Origin::Override(i + 1);
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| err(origin, format!("expected `key=value`, got `{o}`")))?;
            self.insert(k.trim(), v, origin)?;
        }
        Ok(self)
    }

    fn insert(&mut self, k: &str, v: &str, origin: Origin) -> Result<(), ConfigError> {
        let spec = lookup(k).ok_or_else(|| err(origin, format!("unknown key `{k}`")))?;
        let value = canonical(spec.kind, v).map_err(|m| err(origin, format!("`{k}`: {m}")))?;
        self.values.insert(k.to_string(), (value, origin));
        Ok(())
    }

    /// Fills every missing key that has a default.
    pub fn resolve(mut self) -> Self {
        for k in KEYS {
            if let Some(d) = k.default {
                self.values.entry(k.name.to_string()).or_insert_with(|| {
                    (
                        canonical(k.kind, d).expect("defaults are valid"),
                        Origin::Default,
                    )
                });
            }
        }
        self
    }

    /// Sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, _))| format!("{k} = {v}\n"))
            .collect()
    }

    /// Canonical values without origins, for comparisons.
    pub fn entries(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .map(|(k, (v, _))| (k.clone(), v.clone()))
            .collect()
    }

    fn raw(&self, k: &'static str) -> Result<(&str, Origin), ConfigError> {
        self.values
            .get(k)
            .map(|(v, o)| (v.as_str(), *o))
            .ok_or_else(|| err(Origin::Missing, format!("missing required key `{k}`")))
    }

    pub fn float(&self, k: &'static str) -> Result<f64, ConfigError> {
        Ok(self.raw(k)?.0.parse().expect("canonical float"))
    }

    pub fn count(&self, k: &'static str) -> Result<usize, ConfigError> {
        Ok(self.raw(k)?.0.parse().expect("canonical count"))
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        Ok(self.raw("run.seed")?.0.parse().expect("canonical seed"))
    }

    pub fn list(&self, k: &'static str) -> Result<Vec<f64>, ConfigError> {
        Ok(self
            .raw(k)?
            .0
            .split(',')
            .map(|s| s.parse().expect("canonical float"))
            .collect())
    }

    pub fn grid(&self, k: &'static str) -> Result<Vec<f64>, ConfigError> {
        let (a, b, n) = parse_grid(self.raw(k)?.0).expect("canonical grid");
        Ok((0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect())
    }

    pub fn utility(&self) -> Result<UtilitySpec, ConfigError> {
        Ok(parse_utility(self.raw("utility")?.0)
            .expect("canonical utility")
            .1)
    }

    pub fn market(&self) -> Result<MarketParams, ConfigError> {
        let mu = self.float("model.mu")?;
        let (_, origin) = self.raw("model.sigma")?;
        MarketParams::new(mu, self.float("model.sigma")?).map_err(|e| err(origin, e.to_string()))
    }

    pub fn endowment(&self) -> Result<EndowmentSpec, ConfigError> {
        let (kind, origin) = self.raw("endowment.kind")?;
        let eta0 = self.float("endowment.eta0")?;
        let spec = match kind {
            "logistic" => EndowmentSpec::logistic(
                eta0,
                self.float("endowment.c0")?,
                self.float("endowment.c1")?,
                self.float("endowment.m")?,
                self.float("endowment.s")?,
            ),
            "table" => EndowmentSpec::table(
                eta0,
                parse_knots(self.raw("endowment.knots")?.0).expect("canonical knots"),
            ),
            _ => EndowmentSpec::constant(eta0, self.float("endowment.value")?),
        };
        spec.map_err(|e| err(origin, e.to_string()))
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        Ok(Model::new(
            self.utility()?,
            self.market()?,
            self.endowment()?,
        ))
    }

    pub fn germ_search(&self) -> Result<GermSearch, ConfigError> {
        Ok(GermSearch {
            nu_max: self.float("germ.nu_max")?,
            kappa_max: self.float("germ.kappa_max")?,
            n_paths: self.count("germ.n_paths")?,
            n_steps: self.count("germ.n_steps")?,
        })
    }

    pub fn dual_search(&self) -> Result<DualSearch, ConfigError> {
        Ok(DualSearch {
            nu_max: self.float("dual.nu_max")?,
            kappa_max: self.float("dual.kappa_max")?,
            n_paths: self.count("dual.n_paths")?,
            pilot_paths: self.count("dual.pilot_paths")?,
            n_steps: self.count("dual.n_steps")?,
        })
    }

    pub fn hjb_grid(&self) -> Result<HjbGrid, ConfigError> {
        let (_, origin) = self.raw("hjb.dt")?;
        HjbGrid::new(
            (self.float("hjb.eta_min")?, self.float("hjb.eta_max")?),
            self.count("hjb.n_eta")?,
            (self.float("hjb.z_min")?.ln(), self.float("hjb.z_max")?.ln()),
            self.count("hjb.n_z")?,
            self.float("hjb.dt")?,
            self.float("hjb.t_max")?,
            self.float("hjb.nu_max")?,
            self.float("hjb.eps_zz")?,
        )
        .map_err(|e| err(origin, format!("hjb grid: {e}")))
    }
}

/// Every key the parser accepts, in table order.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|k| k.name)
}
