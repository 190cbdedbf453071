//! `key = value` run configuration merged with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use netcausal::{Criterion, EstimandSet};

/// Every key accepted in a config file or as `--flag`.
pub const KEYS: &[&str] = &[
    "scenario",
    "h",
    "clusters",
    "cluster_size",
    "edge_prob",
    "alpha",
    "q",
    "covariates",
    "rho",
    "homophily",
    "reps",
    "seed",
    "max_depth",
    "min_size",
    "weights",
    "criterion",
    "honest",
    "training_fraction",
    "level",
    "jobs",
    "out",
    "edges",
    "nodes",
    "directed",
    "pairs",
];

/// Manifest-only keys, ignored on input.
const INFORMATIONAL: &[&str] = &["version", "command"];

#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    Flag,
    Default,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: Origin,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Origin::File { path, line } => {
                write!(f, "{}:{line}: field `{}`: {}", path.display(), self.key, self.message)
            }
            Origin::Flag => write!(f, "field `{}` (--{}): {}", self.key, self.key.replace('_', "-"), self.message),
            Origin::Default => write!(f, "field `{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn canonical(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Raw settings with their origin; later insertions win.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Origin)>,
}

impl Settings {
    pub fn parse_file(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let origin = Origin::File { path: path.to_path_buf(), line: i + 1 };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError {
                    origin,
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let key = canonical(k);
            if INFORMATIONAL.contains(&key.as_str()) {
                continue;
            }
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError { origin, key, message: "unknown key".into() });
            }
            s.values.insert(key, (v.trim().to_string(), origin));
        }
        Ok(s)
    }

    pub fn set_flag(&mut self, key: &str, value: Option<&str>) {
        if let Some(v) = value {
            self.values.insert(canonical(key), (v.trim().to_string(), Origin::Flag));
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn origin(&self, key: &str) -> Origin {
        self.values.get(key).map(|(_, o)| o.clone()).unwrap_or(Origin::Default)
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin(key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Parses `key` (or takes `default`) and applies `check`.
    pub fn get<T>(&self, key: &str, default: T, check: impl Fn(&T) -> Result<(), String>) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let value = match self.raw(key) {
            Some(v) => v.parse::<T>().map_err(|e| self.error(key, format!("cannot parse {v:?}: {e}")))?,
            None => default,
        };
        check(&value).map_err(|m| self.error(key, m))?;
        Ok(value)
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        match self.raw(key) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => Err(self.error(key, "required")),
        }
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn h_values(&self, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        let Some(raw) = self.raw("h") else {
            return Ok(default.to_vec());
        };
        let mut out = Vec::new();
        for part in raw.split(',') {
            let v: f64 = part
                .trim()
                .parse()
                .map_err(|_| self.error("h", format!("cannot parse {:?} as a number", part.trim())))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(self.error("h", format!("effect size {v} must be finite and nonnegative")));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn estimands(&self, default: EstimandSet) -> Result<EstimandSet, ConfigError> {
        match self.raw("weights") {
            Some(v) => EstimandSet::parse(v).map_err(|e| self.error("weights", e.to_string())),
            None => Ok(default),
        }
    }

    pub fn criterion(&self) -> Result<Criterion, ConfigError> {
        match self.raw("criterion") {
            Some(v) => Criterion::parse(v).map_err(|e| self.error("criterion", e.to_string())),
            None => Ok(Criterion::Composite),
        }
    }
}

pub fn in_range(lo: f64, hi: f64, inclusive: bool) -> impl Fn(&f64) -> Result<(), String> {
    move |&v| {
        let ok = if inclusive { v >= lo && v <= hi } else { v > lo && v < hi };
        if ok {
            Ok(())
        } else if inclusive {
            Err(format!("value {v} outside [{lo}, {hi}]"))
        } else {
            Err(format!("value {v} outside ({lo}, {hi})"))
        }
    }
}

pub fn at_least<T: PartialOrd + fmt::Display + Copy>(min: T) -> impl Fn(&T) -> Result<(), String> {
    move |&v| {
        if v >= min {
            Ok(())
        } else {
            Err(format!("value {v} must be at least {min}"))
        }
    }
}

pub fn any<T>(_: &T) -> Result<(), String> {
    Ok(())
}

/// Ordered `key = value` manifest.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
