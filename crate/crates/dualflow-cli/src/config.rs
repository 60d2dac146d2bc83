//! Run configuration: one TOML file describing the model, the time and state
//! grids, the Monte Carlo budget and the check roster. Unknown keys are
//! rejected so a typo cannot silently fall back to a default, and a parsed
//! config serializes back to an equivalent file.

use std::collections::BTreeMap;

use dualflow::{CoefficientError, CoefficientModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] CoefficientError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub time: TimeSection,
    pub grid: GridSection,
    pub mc: McSection,
    #[serde(default)]
    pub checks: ChecksSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One of `constant`, `affine_affine`, `sqrt_diffusion`, `inverse_drift`.
    pub family: String,
    /// Parameter table for the family; the key set must match exactly.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Horizon of the simulated window.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Number of coarse steps.
    pub n: usize,
    /// Bridge-refinement levels for reference solutions (fine step = Δt/2^r).
    #[serde(default = "default_refinement")]
    pub r: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Largest initial state on the snapshot grid.
    pub x_max: f64,
    /// Number of geometrically spaced grid points.
    pub grid_points: usize,
    /// Smallest positive grid point; also the resolution next to the barrier.
    pub min_point: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_samples: usize,
    pub seed: u64,
    /// Worker threads. Overridden by `DUALFLOW_WORKERS` and by `--workers`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSection {
    /// Which checks `verify` runs, in order.
    #[serde(default = "default_run")]
    pub run: Vec<String>,
    /// (x, y) pairs for the duality-in-law comparison.
    #[serde(default = "default_pairs")]
    pub pairs: Vec<(f64, f64)>,
    /// Support radius of the smooth bump test function.
    #[serde(default = "default_bump_radius")]
    pub bump_radius: f64,
    /// Initial state for the expectation-based checks.
    #[serde(default = "default_start")]
    pub start: f64,
    /// State-window cap for the pathwise bound checks.
    #[serde(default = "default_cap")]
    pub cap: f64,
    /// Uniform bound on |b'| used by the drift-only (Gronwall) factor.
    #[serde(default)]
    pub drift_slope_bound: f64,
    /// Time at which the zero-occupation frequency is measured.
    #[serde(default = "default_occupation_time")]
    pub occupation_time: f64,
    /// Coarse step counts for the weak-rate regression (at least four).
    #[serde(default = "default_rate_steps")]
    pub rate_steps: Vec<usize>,
    /// Random function pairs for the inversion property suite.
    #[serde(default = "default_prop_pairs")]
    pub prop_pairs: u64,
}

pub const KNOWN_CHECKS: [&str; 7] = [
    "monotone_props",
    "siegmund",
    "weak_identity",
    "weak_rate",
    "strong_bound",
    "gronwall",
    "zero_occupation",
];

fn default_refinement() -> u32 {
    6
}
fn default_run() -> Vec<String> {
    KNOWN_CHECKS.iter().map(|s| s.to_string()).collect()
}
fn default_pairs() -> Vec<(f64, f64)> {
    vec![(0.25, 0.25), (0.5, 0.5), (1.0, 1.0)]
}
fn default_bump_radius() -> f64 {
    2.0
}
fn default_start() -> f64 {
    0.5
}
fn default_cap() -> f64 {
    1.0
}
fn default_occupation_time() -> f64 {
    0.5
}
fn default_rate_steps() -> Vec<usize> {
    vec![4, 8, 16, 32]
}
fn default_prop_pairs() -> u64 {
    2000
}

impl Default for ChecksSection {
    fn default() -> Self {
        ChecksSection {
            run: default_run(),
            pairs: default_pairs(),
            bump_radius: default_bump_radius(),
            start: default_start(),
            cap: default_cap(),
            drift_slope_bound: 0.0,
            occupation_time: default_occupation_time(),
            rate_steps: default_rate_steps(),
            prop_pairs: default_prop_pairs(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural validation beyond what serde can express. Everything here
    /// is a usage error (exit code 2), not a runtime failure.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.time;
        if !(t.horizon > 0.0 && t.horizon.is_finite()) {
            return Err(invalid(format!("time.T must be positive and finite, got {}", t.horizon)));
        }
        if t.n == 0 {
            return Err(invalid("time.n must be at least 1"));
        }
        if t.r > 16 {
            return Err(invalid(format!(
                "time.r = {} would refine each step 2^{} times; the supported range is 0..=16",
                t.r, t.r
            )));
        }
        let g = &self.grid;
        if !(g.min_point > 0.0 && g.min_point.is_finite()) {
            return Err(invalid(format!("grid.min_point must be positive, got {}", g.min_point)));
        }
        if !(g.x_max > g.min_point && g.x_max.is_finite()) {
            return Err(invalid(format!(
                "grid.x_max must be finite and exceed grid.min_point, got {}",
                g.x_max
            )));
        }
        if g.grid_points < 2 {
            return Err(invalid("grid.grid_points must be at least 2"));
        }
        if self.mc.n_samples < 2 {
            return Err(invalid(format!(
                "mc.n_samples must be at least 2, got {}",
                self.mc.n_samples
            )));
        }
        if self.mc.workers == Some(0) {
            return Err(invalid("mc.workers must be at least 1"));
        }
        let c = &self.checks;
        for name in &c.run {
            if !KNOWN_CHECKS.contains(&name.as_str()) {
                return Err(invalid(format!(
                    "unknown check {name:?}; known checks: {}",
                    KNOWN_CHECKS.join(", ")
                )));
            }
        }
        let runs = |name: &str| c.run.iter().any(|r| r == name);
        if runs("siegmund") && c.pairs.is_empty() {
            return Err(invalid("checks.pairs must be non-empty when siegmund runs"));
        }
        for &(x, y) in &c.pairs {
            if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0) {
                return Err(invalid(format!("checks.pairs entries must be >= 0, got ({x}, {y})")));
            }
        }
        if !(c.bump_radius > 0.0 && c.bump_radius.is_finite()) {
            return Err(invalid("checks.bump_radius must be positive"));
        }
        if !(c.start >= 0.0 && c.start.is_finite()) {
            return Err(invalid("checks.start must be non-negative"));
        }
        if !(c.cap > 0.0 && c.cap.is_finite()) {
            return Err(invalid("checks.cap must be positive"));
        }
        if !(c.drift_slope_bound >= 0.0 && c.drift_slope_bound.is_finite()) {
            return Err(invalid("checks.drift_slope_bound must be non-negative"));
        }
        if runs("zero_occupation")
            && !(c.occupation_time > 0.0 && c.occupation_time <= t.horizon)
        {
            return Err(invalid(format!(
                "checks.occupation_time must lie in (0, T], got {} with T = {}",
                c.occupation_time, t.horizon
            )));
        }
        if runs("weak_rate") {
            if c.rate_steps.len() < 4 {
                return Err(invalid("checks.rate_steps needs at least four step counts"));
            }
            if c.rate_steps.iter().any(|&n| n == 0) {
                return Err(invalid("checks.rate_steps entries must be at least 1"));
            }
        }
        if c.prop_pairs == 0 {
            return Err(invalid("checks.prop_pairs must be at least 1"));
        }
        Ok(())
    }

    /// Instantiate the coefficient model, checking the parameter key set
    /// exactly against the family's signature.
    pub fn build_model(&self) -> Result<CoefficientModel, ConfigError> {
        let family = self.model.family.as_str();
        let required: &[&str] = match family {
            "constant" => &["sigma", "drift"],
            "affine_affine" => &["alpha", "beta", "gamma", "delta"],
            "sqrt_diffusion" => &["a", "c", "d"],
            "inverse_drift" => &["alpha", "beta", "c"],
            "custom" => {
                return Err(invalid(
                    "family \"custom\" has no parameter encoding; use the library API to supply \
                     coefficient callbacks",
                ))
            }
            other => {
                return Err(invalid(format!(
                    "unknown model family {other:?}; known families: constant, affine_affine, \
                     sqrt_diffusion, inverse_drift"
                )))
            }
        };
        let params = &self.model.params;
        for key in required {
            if !params.contains_key(*key) {
                return Err(invalid(format!(
                    "model family {family:?} needs parameter {key:?} (full set: {})",
                    required.join(", ")
                )));
            }
        }
        for key in params.keys() {
            if !required.contains(&key.as_str()) {
                return Err(invalid(format!(
                    "model family {family:?} does not take parameter {key:?} (full set: {})",
                    required.join(", ")
                )));
            }
        }
        let p = |k: &str| params[k];
        let model = match family {
            "constant" => CoefficientModel::constant(p("sigma"), p("drift"))?,
            "affine_affine" => {
                CoefficientModel::affine(p("alpha"), p("beta"), p("gamma"), p("delta"))?
            }
            "sqrt_diffusion" => CoefficientModel::sqrt_diffusion(p("a"), p("c"), p("d"))?,
            "inverse_drift" => CoefficientModel::inverse_drift(p("alpha"), p("beta"), p("c"))?,
            _ => unreachable!("family validated above"),
        };
        Ok(model)
    }
}
