//! Linear-optical elements as substitution rules on creation operators,
//! plus the ensemble-to-photon transfer used for storage and readout.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::detection::apply_loss;
use crate::error::{Error, Result};
use crate::fock::{MixedState, ModeLabel, PureState, PRUNE_EPS};

/// Tolerance on the Gram matrix of a map's coefficient rows.
pub const UNITARITY_TOL: f64 = 1e-12;

/// Horizontal/vertical polarization modes of one spatial channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PolPair {
    pub h: ModeLabel,
    pub v: ModeLabel,
}

impl PolPair {
    pub fn new(h: ModeLabel, v: ModeLabel) -> Self {
        Self { h, v }
    }

    /// Photon modes `<port>.h` and `<port>.v`.
    pub fn photon(port: &str) -> Self {
        Self::new(ModeLabel::photon(&format!("{port}.h")), ModeLabel::photon(&format!("{port}.v")))
    }
}

/// Detector pair behind the transmitted ("up") analyzer port.
pub fn detectors_up() -> PolPair {
    PolPair::new(ModeLabel::detector("D_h^u"), ModeLabel::detector("D_v^u"))
}

/// Detector pair behind the reflected ("down") analyzer port.
pub fn detectors_down() -> PolPair {
    PolPair::new(ModeLabel::detector("D_h^d"), ModeLabel::detector("D_v^d"))
}

/// The four analyzer detectors in canonical (sorted) order.
pub fn analyzer_detectors() -> Vec<ModeLabel> {
    let (u, d) = (detectors_up(), detectors_down());
    let mut all = vec![u.h, u.v, d.h, d.v];
    all.sort();
    all
}

/// Substitution rule `a_in^dagger -> sum_k c_k b_k^dagger` on a set of input
/// modes. Modes that are not inputs pass through unchanged.
///
/// Rows are required to be orthonormal, so the map is an isometry on the
/// transformed subspace (unitary when inputs and outputs coincide).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModeMap {
    rules: BTreeMap<ModeLabel, Vec<(ModeLabel, C64)>>,
    outputs: BTreeSet<ModeLabel>,
}

impl LinearModeMap {
    pub fn new<I>(rules: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ModeLabel, Vec<(ModeLabel, C64)>)>,
    {
        let mut table = BTreeMap::new();
        for (input, row) in rules {
            let mut merged: BTreeMap<ModeLabel, C64> = BTreeMap::new();
            for (out, c) in row {
                *merged.entry(out).or_default() += c;
            }
            let row: Vec<_> = merged.into_iter().filter(|(_, c)| c.norm() >= PRUNE_EPS).collect();
            if table.insert(input.clone(), row).is_some() {
                return Err(Error::DuplicateMode(input));
            }
        }
        check_orthonormal(&table)?;
        let outputs = table.values().flat_map(|r| r.iter().map(|(m, _)| m.clone())).collect();
        Ok(Self { rules: table, outputs })
    }

    /// 50/50 beamsplitter: `m1 -> (m1 + m2)/sqrt2`, `m2 -> (m1 - m2)/sqrt2`.
    pub fn beamsplitter(m1: &ModeLabel, m2: &ModeLabel) -> Result<Self> {
        distinct(&[m1, m2])?;
        Self::new(hadamard_rules(m1, m2))
    }

    /// Half-wave plate at 22.5 degrees: `h -> (h + v)/sqrt2`, `v -> (h - v)/sqrt2`.
    pub fn halfwave(h: &ModeLabel, v: &ModeLabel) -> Result<Self> {
        distinct(&[h, v])?;
        Self::new(hadamard_rules(h, v))
    }

    /// Exchanges the two polarizations.
    pub fn polarization_swap(h: &ModeLabel, v: &ModeLabel) -> Result<Self> {
        distinct(&[h, v])?;
        let one = C64::new(1.0, 0.0);
        Self::new([(h.clone(), vec![(v.clone(), one)]), (v.clone(), vec![(h.clone(), one)])])
    }

    /// Polarizing beamsplitter: transmits horizontal, reflects vertical.
    ///
    /// `in_a.h -> out_t.h`, `in_a.v -> out_r.v`, `in_b.h -> out_r.h`,
    /// `in_b.v -> out_t.v`.
    pub fn pbs(in_a: &PolPair, in_b: &PolPair, out_t: &PolPair, out_r: &PolPair) -> Result<Self> {
        distinct(&[&in_a.h, &in_a.v, &in_b.h, &in_b.v, &out_t.h, &out_t.v, &out_r.h, &out_r.v])?;
        let one = C64::new(1.0, 0.0);
        Self::new([
            (in_a.h.clone(), vec![(out_t.h.clone(), one)]),
            (in_a.v.clone(), vec![(out_r.v.clone(), one)]),
            (in_b.h.clone(), vec![(out_r.h.clone(), one)]),
            (in_b.v.clone(), vec![(out_t.v.clone(), one)]),
        ])
    }

    /// Bell-state analyzer (PBS followed by a half-wave plate on each output
    /// port) onto the detectors `D_{h,v}^{u,d}`:
    ///
    /// ```text
    /// anti_stokes.h -> (D_h^u + D_v^u)/sqrt2    input.h -> (D_h^d + D_v^d)/sqrt2
    /// anti_stokes.v -> (D_h^d - D_v^d)/sqrt2    input.v -> (D_h^u - D_v^u)/sqrt2
    /// ```
    pub fn bell_analyzer(anti_stokes: &PolPair, input: &PolPair) -> Result<Self> {
        let (up, down) = (detectors_up(), detectors_down());
        distinct(&[&anti_stokes.h, &anti_stokes.v, &input.h, &input.v, &up.h, &up.v, &down.h, &down.v])?;
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        Self::new([
            (anti_stokes.h.clone(), vec![(up.h.clone(), s), (up.v.clone(), s)]),
            (anti_stokes.v.clone(), vec![(down.h.clone(), s), (down.v.clone(), -s)]),
            (input.h.clone(), vec![(down.h.clone(), s), (down.v.clone(), s)]),
            (input.v.clone(), vec![(up.h.clone(), s), (up.v.clone(), -s)]),
        ])
    }

    /// Couples `mode` to a loss reservoir with transmissivity `eta`.
    pub fn loss_coupler(mode: &ModeLabel, reservoir: &ModeLabel, eta: f64) -> Result<Self> {
        distinct(&[mode, reservoir])?;
        check_probability("eta", eta)?;
        Self::new([(
            mode.clone(),
            vec![(mode.clone(), C64::new(eta.sqrt(), 0.0)), (reservoir.clone(), C64::new((1.0 - eta).sqrt(), 0.0))],
        )])
    }

    pub fn rules(&self) -> impl Iterator<Item = (&ModeLabel, &[(ModeLabel, C64)])> {
        self.rules.iter().map(|(m, r)| (m, r.as_slice()))
    }

    pub fn image(&self, mode: &ModeLabel) -> Option<&[(ModeLabel, C64)]> {
        self.rules.get(mode).map(Vec::as_slice)
    }

    pub fn is_output(&self, mode: &ModeLabel) -> bool {
        self.outputs.contains(mode)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ModeLabel> {
        self.rules.keys()
    }

    pub fn outputs(&self) -> &BTreeSet<ModeLabel> {
        &self.outputs
    }

    pub fn coefficient(&self, input: &ModeLabel, output: &ModeLabel) -> C64 {
        self.image(input).and_then(|row| row.iter().find(|(m, _)| m == output)).map(|(_, c)| *c).unwrap_or_default()
    }

    /// The map equivalent to applying `self` and then `then`.
    pub fn compose(&self, then: &LinearModeMap) -> Result<LinearModeMap> {
        let mut rules: Vec<(ModeLabel, Vec<(ModeLabel, C64)>)> = Vec::new();
        for (input, row) in &self.rules {
            let mut image = Vec::new();
            for (mid, c) in row {
                match then.image(mid) {
                    Some(next) => image.extend(next.iter().map(|(m, c2)| (m.clone(), c * c2))),
                    None => image.push((mid.clone(), *c)),
                }
            }
            rules.push((input.clone(), image));
        }
        for (input, row) in &then.rules {
            if !self.rules.contains_key(input) && !self.outputs.contains(input) {
                rules.push((input.clone(), row.clone()));
            }
        }
        LinearModeMap::new(rules)
    }

    /// Largest coefficient difference between two maps over all
    /// input/output pairs.
    pub fn max_coefficient_diff(&self, other: &LinearModeMap) -> f64 {
        let inputs: BTreeSet<_> = self.rules.keys().chain(other.rules.keys()).collect();
        let outputs: BTreeSet<_> = self.outputs.iter().chain(other.outputs.iter()).collect();
        let mut worst = 0.0f64;
        for i in &inputs {
            for o in &outputs {
                worst = worst.max((self.coefficient(i, o) - other.coefficient(i, o)).norm());
            }
        }
        worst
    }

    /// Dense `inputs x outputs` coefficient matrix in canonical order.
    pub fn coefficient_matrix(&self) -> (Vec<ModeLabel>, Vec<ModeLabel>, Vec<Vec<C64>>) {
        let inputs: Vec<_> = self.rules.keys().cloned().collect();
        let outputs: Vec<_> = self.outputs.iter().cloned().collect();
        let matrix = inputs.iter().map(|i| outputs.iter().map(|o| self.coefficient(i, o)).collect()).collect();
        (inputs, outputs, matrix)
    }
}

fn hadamard_rules(a: &ModeLabel, b: &ModeLabel) -> [(ModeLabel, Vec<(ModeLabel, C64)>); 2] {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    [(a.clone(), vec![(a.clone(), s), (b.clone(), s)]), (b.clone(), vec![(a.clone(), s), (b.clone(), -s)])]
}

fn distinct(modes: &[&ModeLabel]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for m in modes {
        if !seen.insert(*m) {
            return Err(Error::DuplicateMode((*m).clone()));
        }
    }
    Ok(())
}

fn check_orthonormal(rules: &BTreeMap<ModeLabel, Vec<(ModeLabel, C64)>>) -> Result<()> {
    let rows: Vec<(&ModeLabel, BTreeMap<&ModeLabel, C64>)> =
        rules.iter().map(|(m, row)| (m, row.iter().map(|(o, c)| (o, *c)).collect())).collect();
    for (i, (mi, ri)) in rows.iter().enumerate() {
        for (mj, rj) in &rows[i..] {
            let dot: C64 = ri.iter().filter_map(|(o, ci)| rj.get(o).map(|cj| ci.conj() * cj)).sum();
            let expected = if mi == mj { 1.0 } else { 0.0 };
            if (dot - expected).norm() > UNITARITY_TOL {
                return Err(Error::NonUnitary(format!(
                    "<{mi}|{mj}> = {:.3e}{:+.3e}i, expected {expected}",
                    dot.re, dot.im
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("{value} is outside [0, 1]") })
    }
}

/// Converts the collective excitation of `ensemble` into a photon in
/// `photon` (anti-Stokes emission). With `eta < 1` the photon then passes a
/// loss channel of transmissivity `eta`.
pub fn retrieve_excitation(
    state: &PureState,
    ensemble: &ModeLabel,
    photon: &ModeLabel,
    eta: f64,
) -> Result<MixedState> {
    check_probability("eta", eta)?;
    if state.occupies(photon) {
        return Err(Error::OccupiedTarget(photon.clone()));
    }
    let moved = state.relabel(ensemble, photon)?;
    if eta < 1.0 {
        apply_loss(&moved, photon, eta)
    } else {
        MixedState::pure(&moved)
    }
}

/// Serializable element description for experiment configs:
/// `{kind, modes, coefficients}`.
///
/// Named kinds take their constructor arguments in `modes`:
/// `beamsplitter`, `halfwave`, `polarization_swap` (2 modes), `pbs`
/// (`in_a.h, in_a.v, in_b.h, in_b.v, out_t.h, out_t.v, out_r.h, out_r.v`),
/// `bell_analyzer` (`anti_stokes.h, anti_stokes.v, input.h, input.v`).
/// For these `coefficients` is optional and, when present, must match the
/// constructed matrix. Kind `linear` is a square map on `modes` whose row
/// `i` is the image of `modes[i]`; coefficients are `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementDef {
    pub kind: String,
    pub modes: Vec<String>,
    #[serde(default)]
    pub coefficients: Vec<Vec<[f64; 2]>>,
}

impl ElementDef {
    /// Describes `map` as element `kind` over `modes`, recording the dense
    /// coefficient matrix (rows: inputs, columns: outputs, canonical order;
    /// for `linear`, both follow `modes`).
    pub fn describe(kind: &str, modes: &[ModeLabel], map: &LinearModeMap) -> Self {
        let coefficients = if kind == "linear" {
            modes.iter().map(|i| modes.iter().map(|o| pair(map.coefficient(i, o))).collect()).collect()
        } else {
            let (_, _, matrix) = map.coefficient_matrix();
            matrix.into_iter().map(|row| row.into_iter().map(pair).collect()).collect()
        };
        Self { kind: kind.to_string(), modes: modes.iter().map(ModeLabel::qualified).collect(), coefficients }
    }

    pub fn build(&self) -> Result<LinearModeMap> {
        let modes = self.modes.iter().map(|s| s.parse::<ModeLabel>()).collect::<Result<Vec<_>>>()?;
        let want = |n: usize| -> Result<()> {
            if modes.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("element '{}' needs {n} modes, got {}", self.kind, modes.len())))
            }
        };
        let pp = |i: usize| PolPair::new(modes[i].clone(), modes[i + 1].clone());
        let map = match self.kind.as_str() {
            "beamsplitter" => {
                want(2)?;
                LinearModeMap::beamsplitter(&modes[0], &modes[1])?
            }
            "halfwave" => {
                want(2)?;
                LinearModeMap::halfwave(&modes[0], &modes[1])?
            }
            "polarization_swap" => {
                want(2)?;
                LinearModeMap::polarization_swap(&modes[0], &modes[1])?
            }
            "pbs" => {
                want(8)?;
                LinearModeMap::pbs(&pp(0), &pp(2), &pp(4), &pp(6))?
            }
            "bell_analyzer" => {
                want(4)?;
                LinearModeMap::bell_analyzer(&pp(0), &pp(2))?
            }
            "linear" => {
                let n = modes.len();
                if self.coefficients.len() != n || self.coefficients.iter().any(|r| r.len() != n) {
                    return Err(Error::Parse(format!("linear element needs a {n}x{n} coefficient matrix")));
                }
                let rules = modes.iter().zip(&self.coefficients).map(|(input, row)| {
                    let image = modes.iter().zip(row).map(|(o, c)| (o.clone(), C64::new(c[0], c[1])));
                    (input.clone(), image.collect())
                });
                return LinearModeMap::new(rules.collect::<Vec<_>>());
            }
            other => return Err(Error::Parse(format!("unknown element kind '{other}'"))),
        };
        if !self.coefficients.is_empty() {
            let expected = ElementDef::describe(&self.kind, &modes, &map).coefficients;
            let matches = expected.len() == self.coefficients.len()
                && expected.iter().zip(&self.coefficients).all(|(a, b)| {
                    a.len() == b.len()
                        && a.iter()
                            .zip(b)
                            .all(|(x, y)| (x[0] - y[0]).abs() <= UNITARITY_TOL && (x[1] - y[1]).abs() <= UNITARITY_TOL)
                });
            if !matches {
                return Err(Error::Parse(format!("coefficients given for '{}' do not match the element", self.kind)));
            }
        }
        Ok(map)
    }
}

fn pair(c: C64) -> [f64; 2] {
    [c.re, c.im]
}
