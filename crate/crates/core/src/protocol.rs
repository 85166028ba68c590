//! The memory protocol end to end.
//!
//! 1. Preparation: each ensemble pair `(M1, M2)` is pumped until exactly one
//!    of the two detectors behind a 50/50 beamsplitter on the Stokes modes
//!    heralds a shared excitation `(S_M1 + e^{i phi} S_M2)|0>/sqrt2`.
//! 2. Storage: A1 and B1 are read out into one anti-Stokes channel (A1's
//!    photon rotated to vertical), combined with the input photon
//!    `alpha h + beta v` in a Bell analyzer, and the four detectors measured.
//!    A coincidence of one "up" and one "down" detector leaves the input
//!    qubit on `(S_A2, S_B2)`, up to a phase flip.
//! 3. Readout: A2 and B2 are converted back into a polarization photon.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::LazyLock;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{fidelity, postselect_photon, pure_fidelity};
use crate::detection::{
    apply_dark_counts, dark_count_distribution, enumerate_outcomes, sample_index, ClickPattern, DetectorModel,
    OutcomeBranch,
};
use crate::elements::{analyzer_detectors, retrieve_excitation, LinearModeMap, PolPair};
use crate::error::{Error, Result};
use crate::fock::{MixedState, ModeLabel, OccupationConfig, PureState};

/// Mode names used by the protocol.
pub struct ProtocolModes {
    pub a1: ModeLabel,
    pub a2: ModeLabel,
    pub b1: ModeLabel,
    pub b2: ModeLabel,
    /// Shared anti-Stokes channel fed by A1 (vertical, after rotation) and B1.
    pub anti_stokes: PolPair,
    pub input: PolPair,
    pub output: PolPair,
    pub stokes: [ModeLabel; 2],
    pub herald: [ModeLabel; 2],
}

pub static MODES: LazyLock<ProtocolModes> = LazyLock::new(|| ProtocolModes {
    a1: ModeLabel::ensemble("S_A1"),
    a2: ModeLabel::ensemble("S_A2"),
    b1: ModeLabel::ensemble("S_B1"),
    b2: ModeLabel::ensemble("S_B2"),
    anti_stokes: PolPair::photon("as"),
    input: PolPair::photon("in"),
    output: PolPair::photon("out"),
    stokes: [ModeLabel::photon("stokes.1"), ModeLabel::photon("stokes.2")],
    herald: [ModeLabel::detector("D1"), ModeLabel::detector("D2")],
});

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemorySource {
    /// Exact product state of two ideal pairs.
    Ideal,
    /// Both pairs prepared by the repeat-until-herald loop.
    Heralded,
    /// Ideal pairs with vacuum admixture `c1`, `c2`.
    Noisy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Per-attempt Raman emission probability of one ensemble.
    pub p: f64,
    pub phi_a: f64,
    pub phi_b: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: C64,
    pub beta: C64,
    pub memory: MemorySource,
    pub prep_detector: DetectorModel,
    pub bell_detector: DetectorModel,
    /// Retrieval efficiency of A1/B1 during storage.
    pub eta_storage: f64,
    /// Retrieval efficiency of A2/B2 during readout.
    pub eta_retrieval: f64,
    pub max_prep_attempts: u64,
    pub trials: u64,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            p: 0.01,
            phi_a: 0.0,
            phi_b: 0.0,
            c1: 0.0,
            c2: 0.0,
            alpha: C64::new(FRAC_1_SQRT_2, 0.0),
            beta: C64::new(FRAC_1_SQRT_2, 0.0),
            memory: MemorySource::Ideal,
            prep_detector: DetectorModel::default(),
            bell_detector: DetectorModel::default(),
            eta_storage: 1.0,
            eta_retrieval: 1.0,
            max_prep_attempts: 1_000_000,
            trials: 10_000,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    /// Ideal memory, perfect dark-count-free detectors of the given kind.
    pub fn ideal(number_resolving: bool) -> Self {
        let model = if number_resolving { DetectorModel::resolving() } else { DetectorModel::bucket() };
        Self { prep_detector: model, bell_detector: model, ..Self::default() }
    }

    pub fn with_qubit(mut self, alpha: C64, beta: C64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn with_phases(mut self, phi_a: f64, phi_b: f64) -> Self {
        self.phi_a = phi_a;
        self.phi_b = phi_b;
        self
    }

    pub fn with_noise(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self.memory = MemorySource::Noisy;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Ideal,
    Heralded,
    Noisy { c1: f64, c2: f64 },
}

/// Joint state of the four ensembles.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    pub state: MixedState,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternClass {
    SuccessIdentity,
    SuccessPhaseFlip,
    Reject,
}

impl PatternClass {
    pub const ALL: [PatternClass; 3] =
        [PatternClass::SuccessIdentity, PatternClass::SuccessPhaseFlip, PatternClass::Reject];

    pub fn is_success(self) -> bool {
        self != PatternClass::Reject
    }
}

/// `(S_m1 + e^{i phi} S_m2)|0>/sqrt2`.
pub fn pair_state(m1: &ModeLabel, m2: &ModeLabel, phi: f64) -> PureState {
    let s = FRAC_1_SQRT_2;
    PureState::from_terms([
        (OccupationConfig::single(m1.clone(), 1), C64::new(s, 0.0)),
        (OccupationConfig::single(m2.clone(), 1), C64::from_polar(s, phi)),
    ])
    .expect("single excitations are within the truncation bound")
}

/// Multiplies the amplitude by `-1` per excitation in `mode`.
fn phase_flip(state: &PureState, mode: &ModeLabel) -> PureState {
    state.map_amplitudes(|c| if c.count(mode) % 2 == 1 { C64::new(-1.0, 0.0) } else { C64::new(1.0, 0.0) })
}

/// The four-ensemble memory. With `c1 = c2 = 0` this is the single product
/// state of two ideal pairs; otherwise each pair is `Psi` with weight 1 or
/// vacuum with weight `c`, giving up to four branches weighted
/// `{c1 c2, c1, c2, 1} / ((1 + c1)(1 + c2))`.
pub fn build_memory_state(c1: f64, c2: f64, phi_a: f64, phi_b: f64) -> Result<MemoryState> {
    for (name, c) in [("c1", c1), ("c2", c2)] {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter { name, reason: format!("{c} must be finite and >= 0") });
        }
    }
    let m = &*MODES;
    let psi_a = pair_state(&m.a1, &m.a2, phi_a);
    let psi_b = pair_state(&m.b1, &m.b2, phi_b);
    let vac = PureState::vacuum();
    let norm = (1.0 + c1) * (1.0 + c2);
    let candidates = [(c1 * c2, vac.clone()), (c1, psi_b.clone()), (c2, psi_a.clone()), (1.0, psi_a.tensor(&psi_b)?)];
    let branches: Vec<_> = candidates.into_iter().filter(|(w, _)| *w > 0.0).map(|(w, s)| (w / norm, s)).collect();
    let provenance = if c1 == 0.0 && c2 == 0.0 { Provenance::Ideal } else { Provenance::Noisy { c1, c2 } };
    Ok(MemoryState { state: MixedState::from_branches(branches)?, provenance })
}

/// Herald rule: exactly one detector clicked and, when it resolves photon
/// number, it saw exactly one photon.
fn herald_detector<'a>(pattern: &'a ClickPattern, model: &DetectorModel) -> Option<&'a ModeLabel> {
    let mut clicks = pattern.clicks();
    match (clicks.next(), clicks.next()) {
        (Some((d, n)), None) if !model.number_resolving || n == 1 => Some(d),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeraldedPair {
    pub state: PureState,
    pub attempts: u64,
    pub detector: ModeLabel,
}

/// Per-attempt outcome table of one ensemble pair's preparation stage.
///
/// Each attempt starts from the vacuum (re-pumped), so every attempt draws
/// from the same projective distribution; the table is enumerated once.
#[derive(Clone, Debug)]
pub struct PairSource {
    m1: ModeLabel,
    m2: ModeLabel,
    model: DetectorModel,
    outcomes: Vec<OutcomeBranch>,
}

impl PairSource {
    pub fn new(m1: &ModeLabel, m2: &ModeLabel, p: f64, phi: f64, model: &DetectorModel) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter { name: "p", reason: format!("{p} is outside (0, 1)") });
        }
        let modes = &*MODES;
        let [s1, s2] = &modes.stokes;
        let [d1, d2] = &modes.herald;
        let emitter = |ens: &ModeLabel, stokes: &ModeLabel, phase: f64| {
            PureState::from_terms([
                (OccupationConfig::vacuum(), C64::new((1.0 - p).sqrt(), 0.0)),
                (
                    OccupationConfig::from_counts([(ens.clone(), 1), (stokes.clone(), 1)]),
                    C64::from_polar(p.sqrt(), phase),
                ),
            ])
        };
        let attempt = emitter(m1, s1, 0.0)?
            .tensor(&emitter(m2, s2, phi)?)?
            .apply_mode_map(&LinearModeMap::beamsplitter(s1, s2)?)?
            .relabel(s1, d1)?
            .relabel(s2, d2)?;
        let outcomes = enumerate_outcomes(&attempt, &modes.herald, model)?;
        Ok(Self { m1: m1.clone(), m2: m2.clone(), model: *model, outcomes })
    }

    /// The two ensembles `(M1, M2)`; the herald phase sits on `M2`.
    pub fn ensembles(&self) -> (&ModeLabel, &ModeLabel) {
        (&self.m1, &self.m2)
    }

    /// Projective outcomes of one attempt, before dark counts.
    pub fn outcomes(&self) -> &[OutcomeBranch] {
        &self.outcomes
    }

    /// Residual after a herald at `detector`, with the D2 sign repaired.
    fn corrected(&self, residual: &PureState, detector: &ModeLabel) -> PureState {
        if *detector == MODES.herald[1] {
            phase_flip(residual, &self.m2)
        } else {
            residual.clone()
        }
    }

    /// One pump/detect round. `Some` on a herald.
    pub fn attempt<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(PureState, ModeLabel)> {
        let i = sample_index(self.outcomes.iter().map(|b| b.probability), rng);
        let branch = &self.outcomes[i];
        let pattern = apply_dark_counts(&branch.pattern, &MODES.herald, &self.model, rng);
        let detector = herald_detector(&pattern, &self.model)?.clone();
        Some((self.corrected(&branch.residual, &detector), detector))
    }

    pub fn prepare<R: Rng + ?Sized>(&self, max_attempts: u64, rng: &mut R) -> Result<HeraldedPair> {
        for attempts in 1..=max_attempts {
            if let Some((state, detector)) = self.attempt(rng) {
                return Ok(HeraldedPair { state, attempts, detector });
            }
        }
        Err(Error::MaxAttemptsExceeded(max_attempts))
    }

    /// Exact `(probability, corrected residual)` of every heralding event
    /// of a single attempt, dark counts included.
    fn herald_events(&self) -> Vec<(f64, PureState)> {
        let mut events = Vec::new();
        for b in &self.outcomes {
            for (q, pattern) in dark_count_distribution(&b.pattern, &MODES.herald, &self.model) {
                if let Some(d) = herald_detector(&pattern, &self.model) {
                    events.push((b.probability * q, self.corrected(&b.residual, d)));
                }
            }
        }
        events
    }

    pub fn herald_probability(&self) -> f64 {
        self.herald_events().iter().map(|(p, _)| p).sum()
    }

    /// Fraction of heralds whose pair does not hold exactly one excitation
    /// (double emission, or a dark count on vacuum).
    pub fn false_herald_fraction(&self) -> f64 {
        let events = self.herald_events();
        let total: f64 = events.iter().map(|(p, _)| p).sum();
        let wrong: f64 = events.iter().filter(|(_, s)| s.terms().any(|(c, _)| c.total() != 1)).map(|(p, _)| p).sum();
        wrong / total
    }

    /// State of the pair conditioned on a herald. Branches that agree up to
    /// a global phase are merged.
    pub fn heralded_mixture(&self) -> Result<MixedState> {
        let mut merged: Vec<(f64, PureState)> = Vec::new();
        for (p, s) in self.herald_events() {
            match merged.iter_mut().find(|(_, t)| 1.0 - t.inner(&s).norm_sqr() < 1e-12) {
                Some((w, _)) => *w += p,
                None => merged.push((p, s)),
            }
        }
        MixedState::from_unnormalized(merged)
    }
}

/// Repeat-until-herald preparation of `(S_m1 + e^{i phi} S_m2)|0>/sqrt2`.
pub fn prepare_entangled_pair<R: Rng + ?Sized>(
    m1: &ModeLabel,
    m2: &ModeLabel,
    p: f64,
    phi: f64,
    model: &DetectorModel,
    max_attempts: u64,
    rng: &mut R,
) -> Result<HeraldedPair> {
    PairSource::new(m1, m2, p, phi, model)?.prepare(max_attempts, rng)
}

/// Coincidence classification of the analyzer detectors.
pub fn classify_pattern(pattern: &ClickPattern) -> PatternClass {
    let clicks: Vec<_> = pattern.clicks().collect();
    let [(first, 1), (second, 1)] = clicks.as_slice() else {
        return PatternClass::Reject;
    };
    match (first.name(), second.name()) {
        ("D_h^d", "D_h^u") | ("D_v^d", "D_v^u") => PatternClass::SuccessIdentity,
        ("D_h^u", "D_v^d") | ("D_h^d", "D_v^u") => PatternClass::SuccessPhaseFlip,
        _ => PatternClass::Reject,
    }
}

/// Pauli correction of the stored qubit: phase flip on `S_B2` for
/// [`PatternClass::SuccessPhaseFlip`].
pub fn apply_correction(stored: &PureState, class: PatternClass) -> Result<PureState> {
    match class {
        PatternClass::SuccessIdentity => Ok(stored.clone()),
        PatternClass::SuccessPhaseFlip => Ok(phase_flip(stored, &MODES.b2)),
        PatternClass::Reject => Err(Error::RejectClass),
    }
}

/// `alpha |1_h> + beta |1_v>` on the given modes (vacuum elsewhere).
pub fn qubit_state(alpha: C64, beta: C64, zero: &ModeLabel, one: &ModeLabel) -> PureState {
    PureState::from_terms([
        (OccupationConfig::single(zero.clone(), 1), alpha),
        (OccupationConfig::single(one.clone(), 1), beta),
    ])
    .expect("single excitations are within the truncation bound")
}

/// Ideal stored qubit `(alpha S_A2 + beta S_B2)|0>`.
pub fn target_stored(alpha: C64, beta: C64) -> PureState {
    qubit_state(alpha, beta, &MODES.a2, &MODES.b2)
}

/// Ideal output photon `alpha |1_h> + beta |1_v>` on the readout modes.
pub fn target_photon(alpha: C64, beta: C64) -> PureState {
    qubit_state(alpha, beta, &MODES.output.h, &MODES.output.v)
}

/// Photonic state entering the analyzer for one memory branch: A1 retrieved
/// and rotated to vertical, B1 retrieved horizontal, input photon added.
pub fn pre_analyzer_state(memory: &PureState, alpha: C64, beta: C64, eta_storage: f64) -> Result<MixedState> {
    let m = &*MODES;
    let swap = LinearModeMap::polarization_swap(&m.anti_stokes.h, &m.anti_stokes.v)?;
    retrieve_excitation(memory, &m.a1, &m.anti_stokes.h, eta_storage)?
        .map_pure(|s| s.apply_mode_map(&swap))?
        .then(|s| retrieve_excitation(s, &m.b1, &m.anti_stokes.h, eta_storage))?
        .map_pure(|s| {
            let h = s.apply_creation(&m.input.h)?.scaled(alpha);
            let v = s.apply_creation(&m.input.v)?.scaled(beta);
            Ok(h.plus(&v))
        })
}

/// State at the detectors for one memory branch.
pub fn post_analyzer_state(memory: &PureState, alpha: C64, beta: C64, eta_storage: f64) -> Result<MixedState> {
    let analyzer = LinearModeMap::bell_analyzer(&MODES.anti_stokes, &MODES.input)?;
    pre_analyzer_state(memory, alpha, beta, eta_storage)?.map_pure(|s| s.apply_mode_map(&analyzer))
}

/// One sampled run of the storage stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StorageOutcome {
    pub memory_branch: usize,
    pub pattern: ClickPattern,
    pub class: PatternClass,
    /// Residual ensemble state, before any correction.
    pub stored: PureState,
}

/// One exactly enumerated storage event.
#[derive(Clone, Debug, PartialEq)]
pub struct StorageBranch {
    pub memory_branch: usize,
    pub probability: f64,
    /// Pattern after dark counts.
    pub pattern: ClickPattern,
    /// Photon numbers that actually reached the detectors.
    pub photons: OccupationConfig,
    pub class: PatternClass,
    pub stored: PureState,
}

fn check_qubit(alpha: C64, beta: C64) -> Result<()> {
    let n = alpha.norm_sqr() + beta.norm_sqr();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter { name: "alpha", reason: format!("|alpha|^2 + |beta|^2 = {n}") });
    }
    Ok(())
}

/// `(weight, outcomes)` for each loss branch of one memory branch.
type LossTables = Vec<(f64, Vec<OutcomeBranch>)>;

/// Outcome tables of the storage measurement for one memory state, built
/// once and sampled per trial.
#[derive(Clone, Debug)]
pub struct StorageSampler {
    model: DetectorModel,
    detectors: Vec<ModeLabel>,
    /// Per memory branch: its weight and `(weight, outcomes)` per loss branch.
    tables: Vec<(f64, LossTables)>,
}

impl StorageSampler {
    pub fn new(memory: &MemoryState, alpha: C64, beta: C64, model: &DetectorModel, eta_storage: f64) -> Result<Self> {
        check_qubit(alpha, beta)?;
        let detectors = analyzer_detectors();
        let tables = memory
            .state
            .branches()
            .iter()
            .map(|(w, state)| {
                let losses = post_analyzer_state(state, alpha, beta, eta_storage)?
                    .branches()
                    .iter()
                    .map(|(wl, s)| Ok((*wl, enumerate_outcomes(s, &detectors, model)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((*w, losses))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model: *model, detectors, tables })
    }

    /// Draws the memory branch, the loss branch, the projective outcome and
    /// the dark counts, in that order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StorageOutcome {
        let memory_branch = sample_index(self.tables.iter().map(|(w, _)| *w), rng);
        let losses = &self.tables[memory_branch].1;
        let outcomes = &losses[sample_index(losses.iter().map(|(w, _)| *w), rng)].1;
        let outcome = &outcomes[sample_index(outcomes.iter().map(|b| b.probability), rng)];
        let pattern = apply_dark_counts(&outcome.pattern, &self.detectors, &self.model, rng);
        StorageOutcome { memory_branch, class: classify_pattern(&pattern), pattern, stored: outcome.residual.clone() }
    }
}

/// Samples a memory branch, the storage measurement and its dark counts.
pub fn store_photon<R: Rng + ?Sized>(
    memory: &MemoryState,
    alpha: C64,
    beta: C64,
    model: &DetectorModel,
    eta_storage: f64,
    rng: &mut R,
) -> Result<StorageOutcome> {
    Ok(StorageSampler::new(memory, alpha, beta, model, eta_storage)?.sample(rng))
}

/// Every storage event with its exact probability (dark counts included).
pub fn storage_outcomes(
    memory: &MemoryState,
    alpha: C64,
    beta: C64,
    model: &DetectorModel,
    eta_storage: f64,
) -> Result<Vec<StorageBranch>> {
    check_qubit(alpha, beta)?;
    let detectors = analyzer_detectors();
    let mut out = Vec::new();
    for (memory_branch, (w_mem, state)) in memory.state.branches().iter().enumerate() {
        for (w_loss, s) in post_analyzer_state(state, alpha, beta, eta_storage)?.branches() {
            for b in enumerate_outcomes(s, &detectors, model)? {
                for (q, pattern) in dark_count_distribution(&b.pattern, &detectors, model) {
                    out.push(StorageBranch {
                        memory_branch,
                        probability: w_mem * w_loss * b.probability * q,
                        class: classify_pattern(&pattern),
                        pattern,
                        photons: b.photons.clone(),
                        stored: b.residual.clone(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Converts the stored qubit back into a photon: `S_A2 -> out.h`,
/// `S_B2 -> out.v`, each retrieval with efficiency `eta`.
pub fn read_out(stored: &PureState, eta: f64) -> Result<MixedState> {
    let m = &*MODES;
    if let Some(bad) = stored.modes().into_iter().find(|x| *x != m.a2 && *x != m.b2) {
        return Err(Error::UnsupportedMode(bad));
    }
    let swap = LinearModeMap::polarization_swap(&m.output.h, &m.output.v)?;
    retrieve_excitation(stored, &m.b2, &m.output.h, eta)?
        .map_pure(|s| s.apply_mode_map(&swap))?
        .then(|s| retrieve_excitation(s, &m.a2, &m.output.h, eta))
}

/// One end-to-end protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    /// Preparation attempts per pair; zero when the memory was not prepared
    /// by the herald loop.
    pub prep_attempts_a: u64,
    pub prep_attempts_b: u64,
    pub memory_branch: usize,
    pub pattern: ClickPattern,
    pub class: PatternClass,
    /// Residual ensemble state, corrected when the class is a success.
    pub stored: PureState,
    pub stored_is_vacuum: bool,
    /// Fidelity of the corrected stored state with `alpha S_A2 + beta S_B2`.
    pub stored_fidelity: Option<f64>,
    /// Fidelity of the read-out photon with `alpha h + beta v`.
    pub readout_fidelity: Option<f64>,
    /// Readout fidelity conditioned on a photon being emitted.
    pub postselected_fidelity: Option<f64>,
}

/// Deterministic per-trial random stream: ChaCha20 keyed by `seed`, stream
/// number `trial`. Trial `k` sees the same numbers regardless of execution
/// order.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Cached, validated setup for running many trials of one configuration.
#[derive(Clone, Debug)]
pub struct Simulator {
    config: ProtocolConfig,
    memory: Option<MemoryState>,
    /// Present exactly when `memory` is.
    storage: Option<StorageSampler>,
    sources: Option<(PairSource, PairSource)>,
}

impl Simulator {
    pub fn new(config: &ProtocolConfig) -> Result<Self> {
        if let Some(d) = crate::config::validate_model(config).into_iter().next() {
            return Err(Error::InvalidParameter { name: "config", reason: format!("{}: {}", d.key, d.message) });
        }
        let m = &*MODES;
        let (memory, sources) = match config.memory {
            MemorySource::Ideal => (Some(build_memory_state(0.0, 0.0, config.phi_a, config.phi_b)?), None),
            MemorySource::Noisy => (Some(build_memory_state(config.c1, config.c2, config.phi_a, config.phi_b)?), None),
            MemorySource::Heralded => {
                let a = PairSource::new(&m.a1, &m.a2, config.p, config.phi_a, &config.prep_detector)?;
                let b = PairSource::new(&m.b1, &m.b2, config.p, config.phi_b, &config.prep_detector)?;
                (None, Some((a, b)))
            }
        };
        let storage = memory
            .as_ref()
            .map(|m| StorageSampler::new(m, config.alpha, config.beta, &config.bell_detector, config.eta_storage))
            .transpose()?;
        Ok(Self { config: config.clone(), memory, storage, sources })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    /// The memory state a trial starts from, as an exact mixture. For the
    /// heralded source this is the product of the two conditional pair
    /// mixtures.
    pub fn memory_state(&self) -> Result<MemoryState> {
        if let Some(mem) = &self.memory {
            return Ok(mem.clone());
        }
        let (a, b) = self.sources.as_ref().expect("heralded simulator has pair sources");
        let (ma, mb) = (a.heralded_mixture()?, b.heralded_mixture()?);
        let mut branches = Vec::new();
        for (wa, sa) in ma.branches() {
            for (wb, sb) in mb.branches() {
                branches.push((wa * wb, sa.tensor(sb)?));
            }
        }
        Ok(MemoryState { state: MixedState::from_unnormalized(branches)?, provenance: Provenance::Heralded })
    }

    pub fn run_trial<R: Rng + ?Sized>(&self, trial: u64, rng: &mut R) -> Result<TrialRecord> {
        let cfg = &self.config;
        let (outcome, attempts_a, attempts_b) = match (&self.storage, &self.sources) {
            (Some(storage), _) => (storage.sample(rng), 0, 0),
            (None, Some((a, b))) => {
                let pa = a.prepare(cfg.max_prep_attempts, rng)?;
                let pb = b.prepare(cfg.max_prep_attempts, rng)?;
                let state = MixedState::from(pa.state.tensor(&pb.state)?);
                let memory = MemoryState { state, provenance: Provenance::Heralded };
                let outcome = store_photon(&memory, cfg.alpha, cfg.beta, &cfg.bell_detector, cfg.eta_storage, rng)?;
                (outcome, pa.attempts, pb.attempts)
            }
            (None, None) => unreachable!("simulator always has a memory source"),
        };
        let mut record = TrialRecord {
            trial,
            prep_attempts_a: attempts_a,
            prep_attempts_b: attempts_b,
            memory_branch: outcome.memory_branch,
            pattern: outcome.pattern,
            class: outcome.class,
            stored_is_vacuum: outcome.stored.is_vacuum(),
            stored: outcome.stored,
            stored_fidelity: None,
            readout_fidelity: None,
            postselected_fidelity: None,
        };
        if record.class.is_success() {
            let corrected = apply_correction(&record.stored, record.class)?;
            let photon = read_out(&corrected, cfg.eta_retrieval)?;
            let target = target_photon(cfg.alpha, cfg.beta);
            record.stored_fidelity = Some(pure_fidelity(&target_stored(cfg.alpha, cfg.beta), &corrected)?);
            record.readout_fidelity = Some(fidelity(&target, &photon)?);
            record.postselected_fidelity = postselect_photon(&photon).map(|ps| fidelity(&target, &ps)).transpose()?;
            record.stored = corrected;
        }
        Ok(record)
    }

    /// Runs trials `0..config.trials` in parallel; records come back in
    /// trial order.
    pub fn run(&self) -> Result<Vec<TrialRecord>> {
        (0..self.config.trials)
            .into_par_iter()
            .map(|k| self.run_trial(k, &mut trial_rng(self.config.seed, k)))
            .collect()
    }
}

/// A single trial with a caller-supplied random source.
pub fn run_trial<R: Rng + ?Sized>(config: &ProtocolConfig, rng: &mut R) -> Result<TrialRecord> {
    Simulator::new(config)?.run_trial(0, rng)
}
