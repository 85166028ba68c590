//! Fidelities, exact outcome statistics and Monte Carlo aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fock::{MixedState, PureState, NORMALIZATION_TOL};
use crate::protocol::{
    apply_correction, read_out, storage_outcomes, target_photon, target_stored, PatternClass, ProtocolConfig,
    Simulator, TrialRecord,
};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959963984540054;
/// Categories with smaller expected counts are pooled before a chi-square test.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

/// `<psi|rho|psi>` for a normalized pure target, clamped to `[0, 1]`
/// against rounding.
pub fn fidelity(target: &PureState, rho: &MixedState) -> Result<f64> {
    if !target.is_normalized(NORMALIZATION_TOL) {
        return Err(Error::Unnormalized(target.norm_sqr()));
    }
    let f: f64 = rho.branches().iter().map(|(w, s)| w * target.inner(s).norm_sqr()).sum();
    Ok(f.clamp(0.0, 1.0))
}

/// `|<psi|phi>|^2` for a normalized pure target.
pub fn pure_fidelity(target: &PureState, state: &PureState) -> Result<f64> {
    fidelity(target, &MixedState::from(state.clone()))
}

/// Conditions a photonic state on at least one photon being present.
/// `None` when the state is entirely vacuum.
pub fn postselect_photon(rho: &MixedState) -> Option<MixedState> {
    let branches = rho
        .branches()
        .iter()
        .map(|(w, s)| (*w, s.map_amplitudes(|c| if c.is_vacuum() { 0.0.into() } else { 1.0.into() })));
    MixedState::from_unnormalized(branches.collect::<Vec<_>>()).ok()
}

/// Probability of each pattern class.
pub fn exact_success_probability(config: &ProtocolConfig) -> Result<BTreeMap<PatternClass, f64>> {
    Ok(exact_report(config)?.class_probabilities)
}

/// Exact outcome statistics of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub class_probabilities: BTreeMap<PatternClass, f64>,
    /// Keyed by the pattern's text form; the empty string is "no click".
    pub pattern_probabilities: BTreeMap<String, f64>,
    pub acceptance: f64,
    /// Mean fidelity of the corrected stored state, given acceptance.
    pub stored_fidelity_on_accept: Option<f64>,
    /// Mean fidelity of the read-out photon, given acceptance.
    pub readout_fidelity_on_accept: Option<f64>,
    /// Readout fidelity given acceptance and an emitted photon.
    pub postselected_fidelity: Option<f64>,
    /// Probability of an emitted photon, given acceptance.
    pub nonvacuum_readout_on_accept: Option<f64>,
}

pub fn exact_report(config: &ProtocolConfig) -> Result<ExactReport> {
    let sim = Simulator::new(config)?;
    let memory = sim.memory_state()?;
    let branches = storage_outcomes(&memory, config.alpha, config.beta, &config.bell_detector, config.eta_storage)?;
    let stored_target = target_stored(config.alpha, config.beta);
    let photon_target = target_photon(config.alpha, config.beta);

    let mut class_probabilities: BTreeMap<PatternClass, f64> = PatternClass::ALL.iter().map(|c| (*c, 0.0)).collect();
    let mut pattern_probabilities: BTreeMap<String, f64> = BTreeMap::new();
    let (mut stored_acc, mut readout_acc, mut ps_acc, mut nonvac_acc) = (0.0, 0.0, 0.0, 0.0);
    for b in &branches {
        *class_probabilities.entry(b.class).or_default() += b.probability;
        *pattern_probabilities.entry(b.pattern.to_string()).or_default() += b.probability;
        if !b.class.is_success() {
            continue;
        }
        let corrected = apply_correction(&b.stored, b.class)?;
        let photon = read_out(&corrected, config.eta_retrieval)?;
        stored_acc += b.probability * pure_fidelity(&stored_target, &corrected)?;
        readout_acc += b.probability * fidelity(&photon_target, &photon)?;
        let nonvac: f64 = photon.branches().iter().map(|(w, s)| w * nonvacuum_weight(s)).sum();
        if let Some(ps) = postselect_photon(&photon) {
            nonvac_acc += b.probability * nonvac;
            ps_acc += b.probability * nonvac * fidelity(&photon_target, &ps)?;
        }
    }
    let acceptance =
        class_probabilities[&PatternClass::SuccessIdentity] + class_probabilities[&PatternClass::SuccessPhaseFlip];
    let given = |x: f64, total: f64| (total > 0.0).then(|| x / total);
    Ok(ExactReport {
        class_probabilities,
        pattern_probabilities,
        acceptance,
        stored_fidelity_on_accept: given(stored_acc, acceptance),
        readout_fidelity_on_accept: given(readout_acc, acceptance),
        postselected_fidelity: given(ps_acc, nonvac_acc),
        nonvacuum_readout_on_accept: given(nonvac_acc, acceptance),
    })
}

fn nonvacuum_weight(s: &PureState) -> f64 {
    s.terms().filter(|(c, _)| !c.is_vacuum()).map(|(_, a)| a.norm_sqr()).sum()
}

/// Binomial proportion with its Wilson score interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub interval_method: String,
    pub confidence: f64,
}

impl Proportion {
    /// 95% Wilson score interval.
    pub fn wilson(successes: u64, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::EmptyInput);
        }
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = Z_95 * Z_95;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Ok(Self {
            successes,
            trials,
            estimate: p,
            lower: (centre - half).max(0.0),
            upper: (centre + half).min(1.0),
            interval_method: "wilson".into(),
            confidence: 0.95,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Mean of a sample with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMean {
    pub count: u64,
    pub mean: f64,
    pub std_error: f64,
}

impl SampleMean {
    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Some(Self { count: v.len() as u64, mean, std_error: (var / n).sqrt() })
    }
}

/// Summary of a Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub trials: u64,
    pub class_counts: BTreeMap<PatternClass, u64>,
    pub pattern_counts: BTreeMap<String, u64>,
    pub acceptance: Proportion,
    pub class_rates: BTreeMap<PatternClass, Proportion>,
    pub stored_fidelity_on_accept: Option<SampleMean>,
    pub readout_fidelity_on_accept: Option<SampleMean>,
    pub postselected_fidelity: Option<SampleMean>,
    /// Mean attempts per pair over heralded trials.
    pub mean_prep_attempts: Option<SampleMean>,
}

pub fn aggregate(records: &[TrialRecord]) -> Result<RunStatistics> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let trials = records.len() as u64;
    let mut class_counts: BTreeMap<PatternClass, u64> = PatternClass::ALL.iter().map(|c| (*c, 0)).collect();
    let mut pattern_counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in records {
        *class_counts.entry(r.class).or_default() += 1;
        *pattern_counts.entry(r.pattern.to_string()).or_default() += 1;
    }
    let accepted = trials - class_counts[&PatternClass::Reject];
    let class_rates =
        class_counts.iter().map(|(c, n)| Ok((*c, Proportion::wilson(*n, trials)?))).collect::<Result<_>>()?;
    let attempts = records
        .iter()
        .filter(|r| r.prep_attempts_a > 0)
        .flat_map(|r| [r.prep_attempts_a as f64, r.prep_attempts_b as f64]);
    Ok(RunStatistics {
        trials,
        acceptance: Proportion::wilson(accepted, trials)?,
        class_rates,
        class_counts,
        pattern_counts,
        stored_fidelity_on_accept: SampleMean::of(records.iter().filter_map(|r| r.stored_fidelity)),
        readout_fidelity_on_accept: SampleMean::of(records.iter().filter_map(|r| r.readout_fidelity)),
        postselected_fidelity: SampleMean::of(records.iter().filter_map(|r| r.postselected_fidelity)),
        mean_prep_attempts: SampleMean::of(attempts),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub degrees_of_freedom: u64,
    /// Number of categories after pooling.
    pub categories: usize,
    pub p_value: f64,
    pub critical_value: f64,
    pub significance: f64,
    pub passed: bool,
}

/// Pearson goodness-of-fit of `observed` counts against `expected`
/// probabilities. Categories with expected count below
/// [`MIN_EXPECTED_COUNT`] are pooled into one; if the pool itself is still
/// below the threshold it is merged into the smallest remaining category.
/// Observed keys missing from `expected` count as expectation zero.
pub fn chi_square_test(
    observed: &BTreeMap<String, u64>,
    expected: &BTreeMap<String, f64>,
    significance: f64,
) -> Result<ChiSquareResult> {
    let n: u64 = observed.values().sum();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let nf = n as f64;
    let keys: std::collections::BTreeSet<&String> = observed.keys().chain(expected.keys()).collect();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for k in keys {
        let o = observed.get(k).copied().unwrap_or(0) as f64;
        let e = expected.get(k).copied().unwrap_or(0.0) * nf;
        if e < MIN_EXPECTED_COUNT {
            pool_o += o;
            pool_e += e;
        } else {
            cells.push((o, e));
        }
    }
    if pool_e > 0.0 || pool_o > 0.0 {
        if pool_e >= MIN_EXPECTED_COUNT || cells.is_empty() {
            cells.push((pool_o, pool_e));
        } else {
            let smallest = cells.iter_mut().min_by(|a, b| a.1.total_cmp(&b.1)).expect("cells is non-empty");
            smallest.0 += pool_o;
            smallest.1 += pool_e;
        }
    }
    let statistic: f64 = cells
        .iter()
        .map(|(o, e)| {
            if *e > 0.0 {
                (o - e).powi(2) / e
            } else if *o > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    let categories = cells.len();
    let dof = categories.saturating_sub(1) as u64;
    if dof == 0 {
        let passed = statistic.is_finite();
        return Ok(ChiSquareResult {
            statistic,
            degrees_of_freedom: 0,
            categories,
            p_value: if passed { 1.0 } else { 0.0 },
            critical_value: 0.0,
            significance,
            passed,
        });
    }
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::InvalidParameter { name: "degrees_of_freedom", reason: e.to_string() })?;
    let critical_value = dist.inverse_cdf(1.0 - significance);
    let p_value = if statistic.is_finite() { dist.sf(statistic) } else { 0.0 };
    Ok(ChiSquareResult {
        statistic,
        degrees_of_freedom: dof,
        categories,
        p_value,
        critical_value,
        significance,
        passed: statistic <= critical_value,
    })
}
