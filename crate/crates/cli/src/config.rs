//! Configuration files and the merge with command-line flags.
//!
//! A config file holds one `key = value` per line; `#` starts a comment.
//! Keys are the long flag names, with `-` or `_` accepted interchangeably:
//!
//! ```text
//! # smoothing
//! degree = 3
//! penalty-order = 2
//! knots = auto          # or 12, or 10,15 (one per axis)
//! lambda-grid = 20:-5:4 # count:lo:hi in log10; comma-separate per axis
//! fine-pass = 10
//! seed = 1
//! threads = 4
//! ```
//!
//! A flag given on the command line always wins over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sandwich::basis::{default_segments, AxisSpec};
use sandwich::glam::default_grids;
use sandwich::sandwich2d::log_spaced;

use crate::CliError;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
    source: String,
}

fn normalise(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Input(format!("{source}:{}: expected key = value", i + 1))
            })?;
            entries.insert(normalise(k), (i + 1, v.trim().to_string()));
        }
        Ok(Self {
            entries,
            source: source.to_string(),
        })
    }

    /// Reject keys outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<(), CliError> {
        for (k, (line, _)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(CliError::Input(format!(
                    "{}:{line}: unknown key {k:?}",
                    self.source
                )));
            }
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                CliError::Input(format!("{}:{line}: {key}: {e}", self.source))
            }),
        }
    }

    /// Flag if present, else the file's value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }
}

/// Segments per axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Knots {
    /// `min(n/2, 35)` for an axis with `n` points.
    Auto,
    /// One value for every axis, or one per axis.
    Fixed(Vec<usize>),
}

impl FromStr for Knots {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim() == "auto" {
            return Ok(Self::Auto);
        }
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad knot count {p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Self::Fixed)
    }
}

/// `count` log10-spaced values on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        log_spaced(self.count, self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGridSetting(pub Vec<GridAxis>);

impl FromStr for LambdaGridSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let axes = s
            .split(',')
            .map(|part| {
                let f: Vec<&str> = part.trim().split(':').collect();
                if f.len() != 3 {
                    return Err(format!("expected count:lo:hi, got {part:?}"));
                }
                let count = f[0].parse::<usize>().map_err(|e| format!("count: {e}"))?;
                let lo = f[1].parse::<f64>().map_err(|e| format!("lo: {e}"))?;
                let hi = f[2].parse::<f64>().map_err(|e| format!("hi: {e}"))?;
                if count == 0 || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(format!("need count >= 1 and lo <= hi, got {part:?}"));
                }
                Ok(GridAxis { count, lo, hi })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self(axes))
    }
}

/// Spline and search settings shared by the smoothing commands.
#[derive(Debug, Clone)]
pub struct Smoothing {
    pub degree: usize,
    pub penalty_order: usize,
    pub knots: Knots,
    /// `None` selects [`default_grids`] for the dimension.
    pub grid: Option<Vec<GridAxis>>,
    pub fine_pass: Option<usize>,
}

impl Smoothing {
    pub fn specs(&self, dims: &[usize]) -> Result<Vec<AxisSpec>, CliError> {
        let ks: Vec<usize> = match &self.knots {
            Knots::Auto => dims.iter().map(|&n| default_segments(n)).collect(),
            Knots::Fixed(v) if v.len() == 1 => vec![v[0]; dims.len()],
            Knots::Fixed(v) if v.len() == dims.len() => v.clone(),
            Knots::Fixed(v) => {
                return Err(CliError::Input(format!(
                    "{} knot counts given for {} axes",
                    v.len(),
                    dims.len()
                )))
            }
        };
        ks.into_iter()
            .map(|k| {
                AxisSpec::new(self.degree, self.penalty_order, k)
                    .map_err(|e| CliError::Input(e.to_string()))
            })
            .collect()
    }

    pub fn grids(&self, d: usize) -> Result<Vec<Vec<f64>>, CliError> {
        let Some(grid) = &self.grid else {
            return Ok(default_grids(d));
        };
        match grid.len() {
            1 => Ok(vec![grid[0].values(); d]),
            n if n == d => Ok(grid.iter().map(GridAxis::values).collect()),
            n => Err(CliError::Input(format!(
                "{n} lambda-grid axes given for {d} dimensions"
            ))),
        }
    }
}
