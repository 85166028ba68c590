//! Photodetection: projective click-outcome enumeration, sampling, dark
//! counts and loss.
//!
//! Enumeration is the quantum layer: it splits a normalized state by the
//! exact photon numbers in the detector modes and returns, per detector
//! configuration, its probability and the normalized residual state with
//! the detector modes traced out. Threshold ("bucket") detectors report only
//! clicked/not-clicked, so several configurations share one pattern; they
//! are kept as separate branches with their own residuals.
//!
//! Dark counts live in the classical layer. They are added to click
//! patterns and never touch a residual state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::elements::{check_probability, LinearModeMap};
use crate::error::{Error, Result};
use crate::fock::{MixedState, ModeLabel, OccupationConfig, PureState};

/// Dark-count probability per detector per detection window.
pub const DEFAULT_DARK_PROB: f64 = 1e-5;

/// States fed to enumeration must satisfy `|norm^2 - 1| <= INPUT_NORM_TOL`.
pub const INPUT_NORM_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub number_resolving: bool,
    pub efficiency: f64,
    pub dark_prob: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { number_resolving: true, efficiency: 1.0, dark_prob: DEFAULT_DARK_PROB }
    }
}

impl DetectorModel {
    /// Perfect number-resolving detector without dark counts.
    pub fn resolving() -> Self {
        Self { number_resolving: true, efficiency: 1.0, dark_prob: 0.0 }
    }

    /// Perfect threshold detector without dark counts.
    pub fn bucket() -> Self {
        Self { number_resolving: false, efficiency: 1.0, dark_prob: 0.0 }
    }

    pub fn with_efficiency(mut self, efficiency: f64) -> Self {
        self.efficiency = efficiency;
        self
    }

    pub fn with_dark_prob(mut self, dark_prob: f64) -> Self {
        self.dark_prob = dark_prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("efficiency", self.efficiency)?;
        if !(0.0..1.0).contains(&self.dark_prob) {
            return Err(Error::InvalidParameter {
                name: "dark_prob",
                reason: format!("{} is outside [0, 1)", self.dark_prob),
            });
        }
        Ok(())
    }

    fn reading(&self, photons: u32) -> u32 {
        if self.number_resolving {
            photons
        } else {
            u32::from(photons > 0)
        }
    }
}

/// Detectors that clicked, with their reported count (photon number for a
/// resolving detector, 1 for a threshold detector).
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClickPattern(BTreeMap<ModeLabel, u32>);

impl ClickPattern {
    pub fn new<I>(clicks: I) -> Self
    where
        I: IntoIterator<Item = (ModeLabel, u32)>,
    {
        Self(clicks.into_iter().filter(|&(_, n)| n > 0).collect())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn count(&self, detector: &ModeLabel) -> u32 {
        self.0.get(detector).copied().unwrap_or(0)
    }

    pub fn clicks(&self) -> impl Iterator<Item = (&ModeLabel, u32)> {
        self.0.iter().map(|(m, n)| (m, *n))
    }

    /// Number of detectors that clicked.
    pub fn num_clicked(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One extra click on `detector`. A threshold detector stays at 1.
    pub fn with_click(&self, detector: &ModeLabel, number_resolving: bool) -> Self {
        let mut clicks = self.0.clone();
        let entry = clicks.entry(detector.clone()).or_insert(0);
        *entry = if number_resolving { *entry + 1 } else { 1 };
        Self(clicks)
    }

    /// Same clicked set, every count reduced to 1.
    pub fn coarse(&self) -> Self {
        Self(self.0.keys().map(|m| (m.clone(), 1)).collect())
    }
}

impl fmt::Display for ClickPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (m, n)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}:{n}")?;
        }
        Ok(())
    }
}

impl FromStr for ClickPattern {
    type Err = Error;

    /// Parses `name:count` pairs; names are taken as detector modes.
    fn from_str(s: &str) -> Result<Self> {
        let mut clicks = BTreeMap::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (name, count) =
                item.rsplit_once(':').ok_or_else(|| Error::Parse(format!("click '{item}' is not name:count")))?;
            let count: u32 = count.parse().map_err(|_| Error::Parse(format!("bad click count in '{item}'")))?;
            if count == 0 {
                return Err(Error::Parse(format!("click '{item}' has zero count")));
            }
            if clicks.insert(ModeLabel::detector(name), count).is_some() {
                return Err(Error::Parse(format!("detector '{name}' listed twice")));
            }
        }
        Ok(Self(clicks))
    }
}

impl Serialize for ClickPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClickPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeBranch {
    pub pattern: ClickPattern,
    /// Exact photon numbers that reached the detectors in this branch.
    pub photons: OccupationConfig,
    pub probability: f64,
    pub residual: PureState,
}

/// Every projective outcome of measuring `detectors` on `state`, in
/// canonical order. Probabilities sum to one.
pub fn enumerate_outcomes(
    state: &PureState,
    detectors: &[ModeLabel],
    model: &DetectorModel,
) -> Result<Vec<OutcomeBranch>> {
    model.validate()?;
    if !state.is_normalized(INPUT_NORM_TOL) {
        return Err(Error::Unnormalized(state.norm_sqr()));
    }
    let mut mixture = MixedState::from(state.clone());
    if model.efficiency < 1.0 {
        for d in detectors {
            mixture = mixture.then(|s| apply_loss(s, d, model.efficiency))?;
        }
    }
    let det_set: BTreeSet<ModeLabel> = detectors.iter().cloned().collect();
    let mut out = Vec::new();
    for (weight, s) in mixture.branches() {
        for (photons, rest) in s.partition(&det_set) {
            let probability = weight * rest.norm_sqr();
            if probability == 0.0 {
                continue;
            }
            let pattern = ClickPattern::new(photons.iter().map(|(m, n)| (m.clone(), model.reading(n))));
            out.push(OutcomeBranch { pattern, photons, probability, residual: rest.normalize()?.0 });
        }
    }
    out.sort_by(|a, b| (&a.pattern, &a.photons).cmp(&(&b.pattern, &b.photons)));
    Ok(out)
}

/// Draws one outcome with probability given by [`enumerate_outcomes`].
pub fn sample_outcome<R: Rng + ?Sized>(
    state: &PureState,
    detectors: &[ModeLabel],
    model: &DetectorModel,
    rng: &mut R,
) -> Result<OutcomeBranch> {
    let mut branches = enumerate_outcomes(state, detectors, model)?;
    let i = sample_index(branches.iter().map(|b| b.probability), rng);
    Ok(branches.swap_remove(i))
}

/// Inverse-CDF draw over non-negative weights (need not sum to one).
pub fn sample_index<R, I>(weights: I, rng: &mut R) -> usize
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = f64>,
{
    let weights: Vec<f64> = weights.into_iter().collect();
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Independently for each detector, adds a click with probability
/// `model.dark_prob`. Detectors are visited in the given order.
pub fn apply_dark_counts<R: Rng + ?Sized>(
    pattern: &ClickPattern,
    detectors: &[ModeLabel],
    model: &DetectorModel,
    rng: &mut R,
) -> ClickPattern {
    let mut out = pattern.clone();
    if model.dark_prob <= 0.0 {
        return out;
    }
    for d in detectors {
        if rng.random_bool(model.dark_prob.min(1.0)) {
            out = out.with_click(d, model.number_resolving);
        }
    }
    out
}

/// Exact distribution of the pattern after dark counts, merged by pattern.
pub fn dark_count_distribution(
    pattern: &ClickPattern,
    detectors: &[ModeLabel],
    model: &DetectorModel,
) -> Vec<(f64, ClickPattern)> {
    let q = model.dark_prob;
    if q <= 0.0 {
        return vec![(1.0, pattern.clone())];
    }
    let mut acc: BTreeMap<ClickPattern, f64> = BTreeMap::new();
    let n = detectors.len();
    for mask in 0u32..(1 << n) {
        let mut p = 1.0;
        let mut pat = pattern.clone();
        for (i, d) in detectors.iter().enumerate() {
            if mask & (1 << i) != 0 {
                p *= q;
                pat = pat.with_click(d, model.number_resolving);
            } else {
                p *= 1.0 - q;
            }
        }
        if p > 0.0 {
            *acc.entry(pat).or_default() += p;
        }
    }
    acc.into_iter().map(|(pat, p)| (p, pat)).collect()
}

/// Sends `mode` through a beamsplitter of transmissivity `eta` into a fresh
/// loss mode, then traces the loss mode out. Branches are ordered by the
/// number of lost quanta.
pub fn apply_loss(state: &PureState, mode: &ModeLabel, eta: f64) -> Result<MixedState> {
    check_probability("eta", eta)?;
    if eta >= 1.0 || !state.occupies(mode) {
        return MixedState::pure(state);
    }
    let occupied = state.modes();
    let mut reservoir = ModeLabel::loss(mode.name());
    let mut k = 1;
    while occupied.contains(&reservoir) {
        reservoir = ModeLabel::loss(&format!("{}#{k}", mode.name()));
        k += 1;
    }
    let coupled = state.apply_mode_map(&LinearModeMap::loss_coupler(mode, &reservoir, eta)?)?;
    let groups = coupled.partition(&BTreeSet::from([reservoir]));
    MixedState::from_unnormalized(groups.into_values().map(|s| (1.0, s)))
}
