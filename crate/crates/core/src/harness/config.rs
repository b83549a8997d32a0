//! Scenario configuration: flat `key = value` text with dotted section
//! prefixes, `#` comments, and a canonical rendering used for hashing.
//!
//! ```text
//! snr_db = 10
//! doppler = 1e-4
//! channel.num_paths = 8
//! grid.pilot_spec = ht40
//! detectors = kalman,magnitude
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::detector::DetectorKind;
use crate::estimator::{Objective, PhaseSearchConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {message}")]
    InvalidValue { key: String, value: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// How Eve's channel is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EveChannel {
    /// Independent draw with the same statistics as Alice's link.
    Independent,
    /// Eve sees exactly Alice's channel (only phase and noise differ).
    CloneAlice,
}

/// Which transmitter occupies each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    /// Alice and Eve both transmit every step; the filter tracks Alice only.
    Parallel,
    /// One transmission per step; after the burn-in each step is Eve's with
    /// probability `attack_prob`. Accepted observations update the filter,
    /// rejected ones leave it coasting.
    Schedule { attack_prob: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub snr_db: f64,
    pub normalized_doppler: f64,
    pub num_steps: usize,
    pub num_trials: usize,
    pub nominal_false_alarm: f64,
    pub seed: u64,
    /// Steps `1..=burn_in` are excluded from rates and feed the baseline
    /// calibration.
    pub burn_in: usize,
    pub num_paths: usize,
    pub pdp_decay: f64,
    pub dft_size: usize,
    pub pilot_spec: String,
    /// Bound on the simulated phase-ramp slope.
    pub max_slope: f64,
    pub search: PhaseSearchConfig,
    pub detectors: Vec<DetectorKind>,
    pub eve: EveChannel,
    pub protocol: Protocol,
    pub roc_points: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            normalized_doppler: 1e-4,
            num_steps: 2000,
            num_trials: 200,
            nominal_false_alarm: 0.1,
            seed: 42,
            burn_in: 1000,
            num_paths: 8,
            pdp_decay: 0.5,
            dft_size: 128,
            pilot_spec: "ht40".into(),
            max_slope: 2.0 * std::f64::consts::PI * 4.0 / 128.0,
            search: PhaseSearchConfig::default(),
            detectors: vec![DetectorKind::Kalman, DetectorKind::MagnitudeDiff],
            eve: EveChannel::Independent,
            protocol: Protocol::Parallel,
            roc_points: 101,
        }
    }
}

const KEYS: &[&str] = &[
    "snr_db",
    "doppler",
    "num_steps",
    "num_trials",
    "p_fa",
    "seed",
    "burn_in",
    "channel.num_paths",
    "channel.pdp_decay",
    "grid.dft_size",
    "grid.pilot_spec",
    "grid.max_slope",
    "search.slope_points",
    "search.offset_points",
    "search.refine_iterations",
    "search.refine_tol",
    "search.slope_bound",
    "search.objective",
    "search.log_det",
    "detectors",
    "eve",
    "protocol",
    "attack_prob",
    "roc_points",
];

fn invalid(key: &str, value: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), value: value.into(), message: message.into() }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| invalid(key, value, e.to_string()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn parse_detectors(key: &str, value: &str) -> Result<Vec<DetectorKind>, ConfigError> {
    let mut out = Vec::new();
    for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind = match name {
            "kalman" => DetectorKind::Kalman,
            "magnitude" | "magnitude_diff" => DetectorKind::MagnitudeDiff,
            _ => return Err(invalid(key, value, format!("unknown detector `{name}`"))),
        };
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err(invalid(key, value, "at least one detector is required"));
    }
    Ok(out)
}

impl ScenarioConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "snr_db" => self.snr_db = parse_num(key, value)?,
            "doppler" => self.normalized_doppler = parse_num(key, value)?,
            "num_steps" => self.num_steps = parse_num(key, value)?,
            "num_trials" => self.num_trials = parse_num(key, value)?,
            "p_fa" => self.nominal_false_alarm = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "burn_in" => self.burn_in = parse_num(key, value)?,
            "channel.num_paths" => self.num_paths = parse_num(key, value)?,
            "channel.pdp_decay" => self.pdp_decay = parse_num(key, value)?,
            "grid.dft_size" => self.dft_size = parse_num(key, value)?,
            "grid.pilot_spec" => self.pilot_spec = value.to_string(),
            "grid.max_slope" => self.max_slope = parse_num(key, value)?,
            "search.slope_points" => self.search.slope_grid_points = parse_num(key, value)?,
            "search.offset_points" => self.search.offset_grid_points = parse_num(key, value)?,
            "search.refine_iterations" => self.search.refine_iterations = parse_num(key, value)?,
            "search.refine_tol" => self.search.refine_tolerance = parse_num(key, value)?,
            "search.slope_bound" => self.search.slope_search_bound = parse_num(key, value)?,
            "search.objective" => {
                self.search.objective = match value {
                    "whitened" => Objective::Whitened,
                    "direct" => Objective::Direct,
                    _ => return Err(invalid(key, value, "expected whitened or direct")),
                }
            }
            "search.log_det" => self.search.include_log_det = parse_bool(key, value)?,
            "detectors" => self.detectors = parse_detectors(key, value)?,
            "eve" => {
                self.eve = match value {
                    "independent" => EveChannel::Independent,
                    "clone" => EveChannel::CloneAlice,
                    _ => return Err(invalid(key, value, "expected independent or clone")),
                }
            }
            "protocol" => {
                self.protocol = match (value, self.protocol) {
                    ("parallel", _) => Protocol::Parallel,
                    ("schedule", Protocol::Schedule { attack_prob }) => Protocol::Schedule { attack_prob },
                    ("schedule", Protocol::Parallel) => Protocol::Schedule { attack_prob: 0.5 },
                    _ => return Err(invalid(key, value, "expected parallel or schedule")),
                }
            }
            "attack_prob" => {
                let p: f64 = parse_num(key, value)?;
                self.protocol = Protocol::Schedule { attack_prob: p };
            }
            "roc_points" => self.roc_points = parse_num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a `key = value` string of `KEY=VALUE` form, as used by `--set`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, message: format!("expected key=value, got `{assignment}`") })?;
        self.set(k.trim(), v)
    }

    /// Applies a configuration text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: idx + 1, message: format!("expected key = value, got `{line}`") })?;
            self.set(k.trim(), v).map_err(|e| match e {
                ConfigError::UnknownKey(k) => ConfigError::Syntax { line: idx + 1, message: format!("unknown key `{k}`") },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.num_steps < 2 {
            return bad(format!("num_steps must be >= 2, got {}", self.num_steps));
        }
        if self.burn_in < 2 || self.burn_in >= self.num_steps {
            return bad(format!("burn_in must lie in [2, num_steps), got {}", self.burn_in));
        }
        if self.num_trials == 0 {
            return bad("num_trials must be >= 1".into());
        }
        if !(self.nominal_false_alarm > 0.0 && self.nominal_false_alarm < 1.0) {
            return bad(format!("p_fa must lie in (0, 1), got {}", self.nominal_false_alarm));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if !(self.max_slope >= 0.0) || !self.max_slope.is_finite() {
            return bad("grid.max_slope must be finite and >= 0".into());
        }
        if self.roc_points < 2 {
            return bad("roc_points must be >= 2".into());
        }
        if let Protocol::Schedule { attack_prob } = self.protocol {
            if !(0.0..=1.0).contains(&attack_prob) {
                return bad(format!("attack_prob must lie in [0, 1], got {attack_prob}"));
            }
        }
        self.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::channel::ChannelProfile::new(self.num_paths, self.normalized_doppler, self.pdp_decay)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let grid =
            crate::observation::PilotGrid::parse(&self.pilot_spec, self.dft_size).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if grid.num_pilots() < self.num_paths {
            return bad(format!("{} pilots cannot resolve {} taps", grid.num_pilots(), self.num_paths));
        }
        Ok(())
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let f = |x: f64| format!("{x:?}");
        let mut m = BTreeMap::new();
        m.insert("snr_db", f(self.snr_db));
        m.insert("doppler", f(self.normalized_doppler));
        m.insert("num_steps", self.num_steps.to_string());
        m.insert("num_trials", self.num_trials.to_string());
        m.insert("p_fa", f(self.nominal_false_alarm));
        m.insert("seed", self.seed.to_string());
        m.insert("burn_in", self.burn_in.to_string());
        m.insert("channel.num_paths", self.num_paths.to_string());
        m.insert("channel.pdp_decay", f(self.pdp_decay));
        m.insert("grid.dft_size", self.dft_size.to_string());
        m.insert("grid.pilot_spec", self.pilot_spec.clone());
        m.insert("grid.max_slope", f(self.max_slope));
        m.insert("search.slope_points", self.search.slope_grid_points.to_string());
        m.insert("search.offset_points", self.search.offset_grid_points.to_string());
        m.insert("search.refine_iterations", self.search.refine_iterations.to_string());
        m.insert("search.refine_tol", f(self.search.refine_tolerance));
        m.insert("search.slope_bound", f(self.search.slope_search_bound));
        m.insert(
            "search.objective",
            match self.search.objective {
                Objective::Whitened => "whitened",
                Objective::Direct => "direct",
            }
            .into(),
        );
        m.insert("search.log_det", self.search.include_log_det.to_string());
        m.insert("detectors", self.detectors.iter().map(|d| d.name()).collect::<Vec<_>>().join(","));
        m.insert(
            "eve",
            match self.eve {
                EveChannel::Independent => "independent",
                EveChannel::CloneAlice => "clone",
            }
            .into(),
        );
        match self.protocol {
            Protocol::Parallel => {
                m.insert("protocol", "parallel".into());
            }
            Protocol::Schedule { attack_prob } => {
                m.insert("protocol", "schedule".into());
                m.insert("attack_prob", f(attack_prob));
            }
        }
        m.insert("roc_points", self.roc_points.to_string());
        debug_assert!(m.keys().all(|k| KEYS.contains(k)));
        m
    }

    /// Sorted `key = value` lines; parsing this text reproduces `self`.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// All recognized keys.
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }
}
