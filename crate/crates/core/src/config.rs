//! Flat `key = value` configuration files.
//!
//! ```text
//! # ideal memory, H/V superposition
//! alpha = 0.6
//! beta = 0+0.8i
//! bell_detector.number_resolving = false
//! trials = 100000
//! ```
//!
//! Blank lines and `#` comments are ignored. Complex values use the
//! `re+imi` form. Unknown keys, malformed values and semantic violations are
//! reported as [`Diagnostic`]s; a configuration with no diagnostics is
//! runnable.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::detection::DetectorModel;
use crate::protocol::{MemorySource, ProtocolConfig};

/// Allowed deviation of `|alpha|^2 + |beta|^2` from one.
pub const QUBIT_NORM_TOL: f64 = 1e-10;

/// Every diagnostic produced here blocks a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub key: String,
    /// 1-based line in the source text, when the problem is tied to one.
    pub line: Option<usize>,
    pub message: String,
    pub severity: Severity,
}

impl Diagnostic {
    fn new(key: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { key: key.to_string(), line, message: message.into(), severity: Severity::Error }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "error: line {n}: {}: {}", self.key, self.message),
            None => write!(f, "error: {}: {}", self.key, self.message),
        }
    }
}

pub const KEYS: &[&str] = &[
    "p",
    "phi_a",
    "phi_b",
    "c1",
    "c2",
    "alpha",
    "beta",
    "memory",
    "prep_detector.number_resolving",
    "prep_detector.efficiency",
    "prep_detector.dark_prob",
    "bell_detector.number_resolving",
    "bell_detector.efficiency",
    "bell_detector.dark_prob",
    "eta_storage",
    "eta_retrieval",
    "max_prep_attempts",
    "trials",
    "seed",
];

fn parse<T: FromStr>(value: &str) -> Option<T> {
    value.parse().ok()
}

fn parse_complex(value: &str) -> Option<C64> {
    let compact: String = value.chars().filter(|c| !c.is_whitespace()).collect();
    compact.parse().ok()
}

fn parse_memory(value: &str) -> Option<MemorySource> {
    match value {
        "ideal" => Some(MemorySource::Ideal),
        "heralded" => Some(MemorySource::Heralded),
        "noisy" => Some(MemorySource::Noisy),
        _ => None,
    }
}

fn memory_name(m: MemorySource) -> &'static str {
    match m {
        MemorySource::Ideal => "ideal",
        MemorySource::Heralded => "heralded",
        MemorySource::Noisy => "noisy",
    }
}

fn detector_field(model: &mut DetectorModel, field: &str, value: &str) -> Option<bool> {
    match field {
        "number_resolving" => parse(value).map(|v| model.number_resolving = v),
        "efficiency" => parse(value).map(|v| model.efficiency = v),
        "dark_prob" => parse(value).map(|v| model.dark_prob = v),
        _ => return None,
    }
    .map(|_| true)
    .or(Some(false))
}

/// Sets `key` on `config`. `Err` carries the diagnostic message.
pub fn set_key(config: &mut ProtocolConfig, key: &str, value: &str) -> Result<(), String> {
    let bad = || format!("cannot parse {value:?}");
    let ok = |set: Option<()>| set.ok_or_else(bad);
    match key {
        "p" => ok(parse(value).map(|v| config.p = v)),
        "phi_a" => ok(parse(value).map(|v| config.phi_a = v)),
        "phi_b" => ok(parse(value).map(|v| config.phi_b = v)),
        "c1" => ok(parse(value).map(|v| config.c1 = v)),
        "c2" => ok(parse(value).map(|v| config.c2 = v)),
        "alpha" => ok(parse_complex(value).map(|v| config.alpha = v)),
        "beta" => ok(parse_complex(value).map(|v| config.beta = v)),
        "memory" => parse_memory(value)
            .map(|v| config.memory = v)
            .ok_or_else(|| format!("expected ideal, heralded or noisy, got {value:?}")),
        "eta_storage" => ok(parse(value).map(|v| config.eta_storage = v)),
        "eta_retrieval" => ok(parse(value).map(|v| config.eta_retrieval = v)),
        "max_prep_attempts" => ok(parse(value).map(|v| config.max_prep_attempts = v)),
        "trials" => ok(parse(value).map(|v| config.trials = v)),
        "seed" => ok(parse(value).map(|v| config.seed = v)),
        _ => {
            let model = match key.split_once('.') {
                Some(("prep_detector", f)) => Some((&mut config.prep_detector, f)),
                Some(("bell_detector", f)) => Some((&mut config.bell_detector, f)),
                _ => None,
            };
            match model.and_then(|(m, f)| detector_field(m, f, value)) {
                Some(true) => Ok(()),
                Some(false) => Err(bad()),
                None => Err("unknown key".into()),
            }
        }
    }
}

/// Parses and validates configuration text.
pub fn parse_config_text(text: &str) -> (ProtocolConfig, Vec<Diagnostic>) {
    let (config, mut diagnostics) = read_config_text(text);
    diagnostics.extend(validate(&config));
    (config, diagnostics)
}

/// Parses configuration text without semantic checks; diagnostics cover
/// syntax, unknown keys and unparsable values only. The memory source
/// defaults to `noisy` when `c1` or `c2` is positive and no `memory` key is
/// given.
pub fn read_config_text(text: &str) -> (ProtocolConfig, Vec<Diagnostic>) {
    let mut config = ProtocolConfig::default();
    let mut diagnostics = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            diagnostics.push(Diagnostic::new(line, Some(i + 1), "expected `key = value`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if seen.contains(&key) {
            diagnostics.push(Diagnostic::new(key, Some(i + 1), "duplicate key"));
            continue;
        }
        seen.push(key);
        if let Err(message) = set_key(&mut config, key, value) {
            diagnostics.push(Diagnostic::new(key, Some(i + 1), message));
        }
    }
    if !seen.contains(&"memory") && (config.c1 > 0.0 || config.c2 > 0.0) {
        config.memory = MemorySource::Noisy;
    }
    (config, diagnostics)
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ProtocolConfig, Vec<Diagnostic>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![Diagnostic::new("file", None, format!("{}: {e}", path.display()))])?;
    let (config, diagnostics) = parse_config_text(&text);
    if diagnostics.is_empty() {
        Ok(config)
    } else {
        Err(diagnostics)
    }
}

/// Writes `config` in the text form accepted by [`parse_config_text`].
pub fn to_config_text(config: &ProtocolConfig) -> String {
    let c = |z: C64| format!("{:?}{:+?}i", z.re, z.im);
    let det = |name: &str, m: &DetectorModel| {
        format!(
            "{name}.number_resolving = {}\n{name}.efficiency = {:?}\n{name}.dark_prob = {:?}\n",
            m.number_resolving, m.efficiency, m.dark_prob
        )
    };
    format!(
        "p = {:?}\nphi_a = {:?}\nphi_b = {:?}\nc1 = {:?}\nc2 = {:?}\nalpha = {}\nbeta = {}\nmemory = {}\n{}{}\
         eta_storage = {:?}\neta_retrieval = {:?}\nmax_prep_attempts = {}\ntrials = {}\nseed = {}\n",
        config.p,
        config.phi_a,
        config.phi_b,
        config.c1,
        config.c2,
        c(config.alpha),
        c(config.beta),
        memory_name(config.memory),
        det("prep_detector", &config.prep_detector),
        det("bell_detector", &config.bell_detector),
        config.eta_storage,
        config.eta_retrieval,
        config.max_prep_attempts,
        config.trials,
        config.seed,
    )
}

fn unit_interval(d: &mut Vec<Diagnostic>, key: &str, x: f64) {
    if !(0.0..=1.0).contains(&x) {
        d.push(Diagnostic::new(key, None, format!("{x} is outside [0, 1]")));
    }
}

fn check_detector(d: &mut Vec<Diagnostic>, name: &str, m: &DetectorModel) {
    unit_interval(d, &format!("{name}.efficiency"), m.efficiency);
    if !(0.0..1.0).contains(&m.dark_prob) {
        d.push(Diagnostic::new(&format!("{name}.dark_prob"), None, format!("{} is outside [0, 1)", m.dark_prob)));
    }
}

/// Semantic checks. An empty result means the configuration can be run.
pub fn validate(config: &ProtocolConfig) -> Vec<Diagnostic> {
    let mut d = validate_model(config);
    if config.trials == 0 {
        d.push(Diagnostic::new("trials", None, "must be >= 1"));
    }
    d
}

/// Checks on the physical model only; the trial count is not inspected.
pub fn validate_model(config: &ProtocolConfig) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    if config.p <= 0.0 {
        d.push(Diagnostic::new("p", None, "herald impossible: p must be > 0"));
    } else if !config.p.is_finite() || config.p >= 1.0 {
        d.push(Diagnostic::new("p", None, format!("{} must be < 1", config.p)));
    }
    for (key, x) in [("phi_a", config.phi_a), ("phi_b", config.phi_b)] {
        if !x.is_finite() {
            d.push(Diagnostic::new(key, None, "must be finite"));
        }
    }
    for (key, c) in [("c1", config.c1), ("c2", config.c2)] {
        if !(c >= 0.0 && c.is_finite()) {
            d.push(Diagnostic::new(key, None, format!("{c} must be finite and >= 0")));
        } else if c > 0.0 && config.memory != MemorySource::Noisy {
            d.push(Diagnostic::new(
                key,
                None,
                format!("vacuum admixture requires memory = noisy, not {}", memory_name(config.memory)),
            ));
        }
    }
    let norm = config.alpha.norm_sqr() + config.beta.norm_sqr();
    if !norm.is_finite() || (norm - 1.0).abs() > QUBIT_NORM_TOL {
        d.push(Diagnostic::new("alpha", None, format!("|alpha|^2 + |beta|^2 = {norm}, expected 1")));
    }
    check_detector(&mut d, "prep_detector", &config.prep_detector);
    check_detector(&mut d, "bell_detector", &config.bell_detector);
    unit_interval(&mut d, "eta_storage", config.eta_storage);
    unit_interval(&mut d, "eta_retrieval", config.eta_retrieval);
    if config.max_prep_attempts == 0 {
        d.push(Diagnostic::new("max_prep_attempts", None, "must be >= 1"));
    }
    d
}
