//! Sparse bosonic Fock-space algebra over named modes.
//!
//! A [`PureState`] is a finite map from occupation configurations to complex
//! amplitudes. Every operation returns a new state; nothing is mutated in
//! place, so states can be shared freely between branches and threads.
//!
//! Basis terms are kept in canonical order: modes inside a configuration are
//! sorted by `(kind, name)` and configurations are compared lexicographically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::de::Deserializer;
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::elements::LinearModeMap;
use crate::error::{Error, Result};

/// Per-mode occupation bound used unless a state is built with another one.
pub const DEFAULT_MAX_OCCUPATION: u32 = 4;

/// Amplitudes with modulus below this are dropped.
pub const PRUNE_EPS: f64 = 1e-15;

/// Tolerance on `norm^2 - 1` for states handed to measurement.
pub const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeKind {
    Ensemble,
    Photon,
    Detector,
    Loss,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Ensemble => "ensemble",
            ModeKind::Photon => "photon",
            ModeKind::Detector => "detector",
            ModeKind::Loss => "loss",
        }
    }
}

impl FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(ModeKind::Ensemble),
            "photon" => Ok(ModeKind::Photon),
            "detector" => Ok(ModeKind::Detector),
            "loss" => Ok(ModeKind::Loss),
            other => Err(Error::Parse(format!("unknown mode kind '{other}'"))),
        }
    }
}

/// Name of a bosonic mode: a collective ensemble excitation, a photonic
/// spatial/polarization channel, a detector input, or a loss reservoir.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeLabel {
    kind: ModeKind,
    name: Arc<str>,
}

impl ModeLabel {
    pub fn new(kind: ModeKind, name: &str) -> Self {
        Self { kind, name: Arc::from(name) }
    }

    pub fn ensemble(name: &str) -> Self {
        Self::new(ModeKind::Ensemble, name)
    }

    pub fn photon(name: &str) -> Self {
        Self::new(ModeKind::Photon, name)
    }

    pub fn detector(name: &str) -> Self {
        Self::new(ModeKind::Detector, name)
    }

    pub fn loss(name: &str) -> Self {
        Self::new(ModeKind::Loss, name)
    }

    pub fn kind(&self) -> ModeKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `kind:name`, the form used as a key in the JSON text encoding.
    pub fn qualified(&self) -> String {
        format!("{}:{}", self.kind.as_str(), self.name)
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for ModeLabel {
    type Err = Error;

    /// Parses the qualified `kind:name` form.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, name) =
            s.split_once(':').ok_or_else(|| Error::Parse(format!("mode '{s}' is not of the form kind:name")))?;
        if name.is_empty() {
            return Err(Error::Parse(format!("mode '{s}' has an empty name")));
        }
        Ok(Self::new(kind.parse()?, name))
    }
}

/// Occupation numbers of the modes that hold at least one quantum. Absent
/// modes are empty; explicit zeros are never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccupationConfig(Vec<(ModeLabel, u32)>);

impl OccupationConfig {
    pub fn vacuum() -> Self {
        Self(Vec::new())
    }

    /// Builds a configuration, summing repeated modes and dropping zeros.
    pub fn from_counts<I>(counts: I) -> Self
    where
        I: IntoIterator<Item = (ModeLabel, u32)>,
    {
        let mut acc: BTreeMap<ModeLabel, u32> = BTreeMap::new();
        for (mode, n) in counts {
            *acc.entry(mode).or_default() += n;
        }
        Self(acc.into_iter().filter(|&(_, n)| n > 0).collect())
    }

    pub fn single(mode: ModeLabel, count: u32) -> Self {
        Self::from_counts([(mode, count)])
    }

    pub fn count(&self, mode: &ModeLabel) -> u32 {
        self.0.binary_search_by(|(m, _)| m.cmp(mode)).map(|i| self.0[i].1).unwrap_or(0)
    }

    pub fn with_count(&self, mode: &ModeLabel, count: u32) -> Self {
        let mut entries = self.0.clone();
        match entries.binary_search_by(|(m, _)| m.cmp(mode)) {
            Ok(i) if count == 0 => {
                entries.remove(i);
            }
            Ok(i) => entries[i].1 = count,
            Err(_) if count == 0 => {}
            Err(i) => entries.insert(i, (mode.clone(), count)),
        }
        Self(entries)
    }

    fn incremented(&self, mode: &ModeLabel) -> Self {
        self.with_count(mode, self.count(mode) + 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModeLabel, u32)> {
        self.0.iter().map(|(m, n)| (m, *n))
    }

    pub fn total(&self) -> u32 {
        self.0.iter().map(|(_, n)| n).sum()
    }

    pub fn is_vacuum(&self) -> bool {
        self.0.is_empty()
    }

    /// Splits into `(modes in set, all other modes)`.
    pub fn split(&self, modes: &BTreeSet<ModeLabel>) -> (Self, Self) {
        let (inside, outside): (Vec<_>, Vec<_>) = self.0.iter().cloned().partition(|(m, _)| modes.contains(m));
        (Self(inside), Self(outside))
    }

    /// Product of `n!` over all occupied modes.
    fn factorial_product(&self) -> f64 {
        self.0.iter().map(|&(_, n)| factorial(n)).product()
    }

    fn merged(&self, other: &Self) -> Self {
        Self::from_counts(self.0.iter().chain(other.0.iter()).cloned())
    }
}

impl fmt::Display for OccupationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("|0>");
        }
        f.write_str("|")?;
        for (i, (m, n)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{n}_{m}")?;
        }
        f.write_str(">")
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Sparse pure state: occupation configurations with complex amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    terms: BTreeMap<OccupationConfig, C64>,
    max_occupation: u32,
}

impl Default for PureState {
    fn default() -> Self {
        Self::vacuum()
    }
}

impl PureState {
    pub fn vacuum() -> Self {
        Self::basis(OccupationConfig::vacuum())
    }

    /// The zero vector (no terms).
    pub fn zero() -> Self {
        Self { terms: BTreeMap::new(), max_occupation: DEFAULT_MAX_OCCUPATION }
    }

    pub fn basis(config: OccupationConfig) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(config, C64::new(1.0, 0.0));
        Self { terms, max_occupation: DEFAULT_MAX_OCCUPATION }
    }

    /// Sums repeated configurations, prunes negligible amplitudes, and
    /// checks the default truncation bound.
    pub fn from_terms<I>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (OccupationConfig, C64)>,
    {
        Self::from_terms_bounded(terms, DEFAULT_MAX_OCCUPATION)
    }

    pub fn from_terms_bounded<I>(terms: I, max_occupation: u32) -> Result<Self>
    where
        I: IntoIterator<Item = (OccupationConfig, C64)>,
    {
        let mut acc: BTreeMap<OccupationConfig, C64> = BTreeMap::new();
        for (config, amp) in terms {
            if let Some((mode, n)) = config.iter().find(|&(_, n)| n > max_occupation) {
                return Err(Error::TruncationOverflow { mode: mode.clone(), count: n, max: max_occupation });
            }
            *acc.entry(config).or_default() += amp;
        }
        Ok(Self { terms: acc, max_occupation }.pruned(PRUNE_EPS))
    }

    fn from_map(terms: BTreeMap<OccupationConfig, C64>, max_occupation: u32) -> Self {
        Self { terms, max_occupation }.pruned(PRUNE_EPS)
    }

    pub fn with_max_occupation(mut self, max_occupation: u32) -> Self {
        self.max_occupation = max_occupation;
        self
    }

    pub fn max_occupation(&self) -> u32 {
        self.max_occupation
    }

    pub fn terms(&self) -> impl Iterator<Item = (&OccupationConfig, C64)> {
        self.terms.iter().map(|(c, a)| (c, *a))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn amplitude(&self, config: &OccupationConfig) -> C64 {
        self.terms.get(config).copied().unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() <= tol
    }

    /// True when every term is the empty configuration.
    pub fn is_vacuum(&self) -> bool {
        !self.terms.is_empty() && self.terms.keys().all(OccupationConfig::is_vacuum)
    }

    /// Drops every term with `|amplitude| < eps`.
    pub fn pruned(mut self, eps: f64) -> Self {
        self.terms.retain(|_, a| a.norm() >= eps);
        self
    }

    pub fn normalize(&self) -> Result<(PureState, f64)> {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroState);
        }
        Ok((self.scaled(C64::new(1.0 / norm, 0.0)), norm))
    }

    pub fn scaled(&self, factor: C64) -> PureState {
        let terms = self.terms.iter().map(|(c, a)| (c.clone(), a * factor)).collect();
        Self::from_map(terms, self.max_occupation)
    }

    /// Vector sum; the larger truncation bound wins.
    pub fn plus(&self, other: &PureState) -> PureState {
        let mut terms = self.terms.clone();
        for (c, a) in &other.terms {
            *terms.entry(c.clone()).or_default() += a;
        }
        Self::from_map(terms, self.max_occupation.max(other.max_occupation))
    }

    /// Multiplies each amplitude by `f(config)`.
    pub fn map_amplitudes<F>(&self, mut f: F) -> PureState
    where
        F: FnMut(&OccupationConfig) -> C64,
    {
        let terms = self.terms.iter().map(|(c, a)| (c.clone(), a * f(c))).collect();
        Self::from_map(terms, self.max_occupation)
    }

    pub fn modes(&self) -> BTreeSet<ModeLabel> {
        self.terms.keys().flat_map(|c| c.iter().map(|(m, _)| m.clone())).collect()
    }

    pub fn occupies(&self, mode: &ModeLabel) -> bool {
        self.terms.keys().any(|c| c.count(mode) > 0)
    }

    /// Applies `a^dagger` on `mode`: `|.., n, ..> -> sqrt(n+1) |.., n+1, ..>`.
    pub fn apply_creation(&self, mode: &ModeLabel) -> Result<PureState> {
        let mut terms = BTreeMap::new();
        for (config, amp) in &self.terms {
            let n = config.count(mode) + 1;
            if n > self.max_occupation {
                return Err(Error::TruncationOverflow { mode: mode.clone(), count: n, max: self.max_occupation });
            }
            terms.insert(config.with_count(mode, n), amp * f64::from(n).sqrt());
        }
        Ok(Self::from_map(terms, self.max_occupation))
    }

    /// `<self|other>`, conjugate-linear in `self`.
    pub fn inner(&self, other: &PureState) -> C64 {
        let (small, large, conj_small) =
            if self.terms.len() <= other.terms.len() { (self, other, true) } else { (other, self, false) };
        small
            .terms
            .iter()
            .filter_map(|(c, a)| large.terms.get(c).map(|b| (a, b)))
            .map(|(a, b)| if conj_small { a.conj() * b } else { b.conj() * a })
            .sum()
    }

    /// Substitutes every transformed creation operator by its image and
    /// re-expands into canonical basis terms.
    pub fn apply_mode_map(&self, map: &LinearModeMap) -> Result<PureState> {
        let mut out: BTreeMap<OccupationConfig, C64> = BTreeMap::new();
        for (config, amp) in &self.terms {
            let mut passthrough = Vec::new();
            let mut transformed = Vec::new();
            for (mode, n) in config.iter() {
                match map.image(mode) {
                    Some(image) => transformed.push((image, n)),
                    None if map.is_output(mode) => return Err(Error::UnknownMode(mode.clone())),
                    None => passthrough.push((mode.clone(), n)),
                }
            }
            // Work with monomial coefficients: |n> = (a^dagger)^n / sqrt(n!) |0>.
            let mut poly: BTreeMap<OccupationConfig, C64> = BTreeMap::new();
            poly.insert(OccupationConfig::from_counts(passthrough), amp / config.factorial_product().sqrt());
            for (image, n) in transformed {
                for _ in 0..n {
                    let mut next: BTreeMap<OccupationConfig, C64> = BTreeMap::new();
                    for (mono, coef) in &poly {
                        for (target, c) in image {
                            let grown = mono.incremented(target);
                            let count = grown.count(target);
                            if count > self.max_occupation {
                                return Err(Error::TruncationOverflow {
                                    mode: target.clone(),
                                    count,
                                    max: self.max_occupation,
                                });
                            }
                            *next.entry(grown).or_default() += coef * c;
                        }
                    }
                    poly = next;
                }
            }
            for (mono, coef) in poly {
                let amp = coef * mono.factorial_product().sqrt();
                *out.entry(mono).or_default() += amp;
            }
        }
        Ok(Self::from_map(out, self.max_occupation))
    }

    /// Renames `from` to `to` in every term. `to` must be unoccupied.
    pub fn relabel(&self, from: &ModeLabel, to: &ModeLabel) -> Result<PureState> {
        if from == to {
            return Ok(self.clone());
        }
        if self.occupies(to) {
            return Err(Error::OccupiedTarget(to.clone()));
        }
        let terms = self
            .terms
            .iter()
            .map(|(c, a)| {
                let n = c.count(from);
                (c.with_count(from, 0).with_count(to, n), *a)
            })
            .collect();
        Ok(Self::from_map(terms, self.max_occupation))
    }

    /// Tensor product of states on disjoint mode sets.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let mine = self.modes();
        if let Some(shared) = other.modes().into_iter().find(|m| mine.contains(m)) {
            return Err(Error::DuplicateMode(shared));
        }
        let mut terms = BTreeMap::new();
        for (c1, a1) in &self.terms {
            for (c2, a2) in &other.terms {
                terms.insert(c1.merged(c2), a1 * a2);
            }
        }
        Ok(Self::from_map(terms, self.max_occupation.max(other.max_occupation)))
    }

    /// Groups terms by their occupation of `modes`. Each value holds the
    /// (unnormalized) remainder with those modes removed.
    pub fn partition(&self, modes: &BTreeSet<ModeLabel>) -> BTreeMap<OccupationConfig, PureState> {
        let mut groups: BTreeMap<OccupationConfig, BTreeMap<OccupationConfig, C64>> = BTreeMap::new();
        for (config, amp) in &self.terms {
            let (key, rest) = config.split(modes);
            *groups.entry(key).or_default().entry(rest).or_default() += amp;
        }
        groups.into_iter().map(|(k, terms)| (k, Self::from_map(terms, self.max_occupation))).collect()
    }

    /// The JSON text form with 17 significant digits per float.
    pub fn to_json_text(&self) -> String {
        serde_json::to_string(self).expect("finite amplitudes serialize")
    }

    pub fn from_json_text(text: &str) -> Result<PureState> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

impl fmt::Display for PureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (c, a)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "({:.6}{:+.6}i){c}", a.re, a.im)?;
        }
        Ok(())
    }
}

pub fn inner_product(a: &PureState, b: &PureState) -> C64 {
    a.inner(b)
}

pub fn apply_creation(state: &PureState, mode: &ModeLabel) -> Result<PureState> {
    state.apply_creation(mode)
}

pub fn apply_mode_map(state: &PureState, map: &LinearModeMap) -> Result<PureState> {
    state.apply_mode_map(map)
}

pub fn normalize(state: &PureState) -> Result<(PureState, f64)> {
    state.normalize()
}

/// Probabilistic mixture of normalized pure states.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedState {
    branches: Vec<(f64, PureState)>,
}

impl MixedState {
    /// Single-branch mixture of the normalized input.
    pub fn pure(state: &PureState) -> Result<MixedState> {
        Ok(Self { branches: vec![(1.0, state.normalize()?.0)] })
    }

    /// Validates weights (non-negative, summing to 1) and branch norms.
    pub fn from_branches(branches: Vec<(f64, PureState)>) -> Result<MixedState> {
        let total: f64 = branches.iter().map(|(w, _)| w).sum();
        if branches.iter().any(|(w, _)| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "weight",
                reason: "branch weights must be finite and non-negative".into(),
            });
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidParameter {
                name: "weight",
                reason: format!("branch weights sum to {total}, not 1"),
            });
        }
        if let Some((_, s)) = branches.iter().find(|(_, s)| !s.is_normalized(NORMALIZATION_TOL)) {
            return Err(Error::Unnormalized(s.norm_sqr()));
        }
        Ok(Self { branches })
    }

    /// Builds a mixture from `(weight, unnormalized state)` pairs: each
    /// effective weight is `weight * norm^2`, then weights are rescaled to sum
    /// to one. Null branches are dropped.
    pub fn from_unnormalized<I>(branches: I) -> Result<MixedState>
    where
        I: IntoIterator<Item = (f64, PureState)>,
    {
        let mut out = Vec::new();
        for (w, s) in branches {
            let n2 = s.norm_sqr();
            if w <= 0.0 || n2 <= 0.0 {
                continue;
            }
            out.push((w * n2, s.normalize()?.0));
        }
        let total: f64 = out.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return Err(Error::ZeroState);
        }
        for (w, _) in &mut out {
            *w /= total;
        }
        Ok(Self { branches: out })
    }

    pub fn branches(&self) -> &[(f64, PureState)] {
        &self.branches
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.branches.iter().map(|(w, _)| w).sum()
    }

    /// Applies a branch-wise channel and flattens the nested mixture.
    pub fn then<F>(&self, mut f: F) -> Result<MixedState>
    where
        F: FnMut(&PureState) -> Result<MixedState>,
    {
        let mut out = Vec::new();
        for (w, s) in &self.branches {
            for (w2, s2) in f(s)?.branches {
                out.push((w * w2, s2));
            }
        }
        Ok(Self { branches: out })
    }

    /// Applies a branch-wise pure map (e.g. a unitary).
    pub fn map_pure<F>(&self, mut f: F) -> Result<MixedState>
    where
        F: FnMut(&PureState) -> Result<PureState>,
    {
        let branches = self.branches.iter().map(|(w, s)| Ok((*w, f(s)?))).collect::<Result<Vec<_>>>()?;
        Ok(Self { branches })
    }

    pub fn to_json_text(&self) -> String {
        serde_json::to_string(self).expect("finite amplitudes serialize")
    }

    pub fn from_json_text(text: &str) -> Result<MixedState> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

impl From<PureState> for MixedState {
    /// Wraps an already-normalized state; no check is performed.
    fn from(state: PureState) -> Self {
        Self { branches: vec![(1.0, state)] }
    }
}

// JSON text form ------------------------------------------------------------

pub(crate) fn sig17<E: serde::ser::Error>(x: f64) -> std::result::Result<Box<RawValue>, E> {
    if !x.is_finite() {
        return Err(E::custom(format!("non-finite value {x}")));
    }
    // `+ 0.0` maps -0.0 to 0.0 so equal states print identically
    RawValue::from_string(format!("{:.16e}", x + 0.0)).map_err(E::custom)
}

#[derive(Serialize)]
struct TermOut {
    occupancy: BTreeMap<String, u32>,
    re: Box<RawValue>,
    im: Box<RawValue>,
}

#[derive(Deserialize)]
struct TermIn {
    occupancy: BTreeMap<String, u32>,
    re: f64,
    im: f64,
}

impl Serialize for PureState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.terms.len()))?;
        for (config, amp) in &self.terms {
            seq.serialize_element(&TermOut {
                occupancy: config.iter().map(|(m, n)| (m.qualified(), n)).collect(),
                re: sig17(amp.re)?,
                im: sig17(amp.im)?,
            })?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for PureState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let terms = Vec::<TermIn>::deserialize(deserializer)?;
        let mut parsed = Vec::with_capacity(terms.len());
        let mut bound = DEFAULT_MAX_OCCUPATION;
        for t in terms {
            let mut counts = Vec::with_capacity(t.occupancy.len());
            for (key, n) in t.occupancy {
                let mode: ModeLabel = key.parse().map_err(D::Error::custom)?;
                bound = bound.max(n);
                counts.push((mode, n));
            }
            parsed.push((OccupationConfig::from_counts(counts), C64::new(t.re, t.im)));
        }
        PureState::from_terms_bounded(parsed, bound).map_err(D::Error::custom)
    }
}

#[derive(Serialize)]
struct BranchOut<'a> {
    weight: Box<RawValue>,
    state: &'a PureState,
}

#[derive(Deserialize)]
struct BranchIn {
    weight: f64,
    state: PureState,
}

impl Serialize for MixedState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.branches.len()))?;
        for (w, s) in &self.branches {
            seq.serialize_element(&BranchOut { weight: sig17::<S::Error>(*w)?, state: s })?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for MixedState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let branches = Vec::<BranchIn>::deserialize(deserializer)?;
        MixedState::from_branches(branches.into_iter().map(|b| (b.weight, b.state)).collect()).map_err(D::Error::custom)
    }
}
