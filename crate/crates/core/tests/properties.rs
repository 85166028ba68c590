//! Seeded randomized checks of the structural invariants.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use polmem::analysis::{exact_report, fidelity, pure_fidelity};
use polmem::detection::{enumerate_outcomes, ClickPattern, DetectorModel};
use polmem::elements::{analyzer_detectors, LinearModeMap};
use polmem::fock::{MixedState, ModeLabel, OccupationConfig, PureState};
use polmem::protocol::{
    apply_correction, build_memory_state, post_analyzer_state, read_out, storage_outcomes, target_photon,
    target_stored, PairSource, PatternClass, ProtocolConfig, MODES,
};
use polmem::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_qubit(rng: &mut ChaCha8Rng) -> (C64, C64) {
    let theta = rng.random_range(0.0..PI);
    let phase = rng.random_range(0.0..2.0 * PI);
    (C64::new((theta / 2.0).cos(), 0.0), C64::from_polar((theta / 2.0).sin(), phase))
}

fn random_state(rng: &mut ChaCha8Rng, modes: &[ModeLabel], max_photons: u32, terms: usize) -> PureState {
    let raw = (0..terms).map(|_| {
        let n = rng.random_range(0..=max_photons);
        let counts = (0..n).map(|_| (modes[rng.random_range(0..modes.len())].clone(), 1));
        (OccupationConfig::from_counts(counts), C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    });
    PureState::from_terms(raw.collect::<Vec<_>>()).unwrap().normalize().unwrap().0
}

fn analyzer_inputs() -> Vec<ModeLabel> {
    let m = &*MODES;
    vec![m.anti_stokes.h.clone(), m.anti_stokes.v.clone(), m.input.h.clone(), m.input.v.clone()]
}

#[test]
fn analyzer_preserves_norm_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let map = LinearModeMap::bell_analyzer(&MODES.anti_stokes, &MODES.input).unwrap();
    let mut modes = analyzer_inputs();
    modes.push(MODES.a2.clone());
    for _ in 0..300 {
        let s = random_state(&mut rng, &modes, 3, 6);
        let t = random_state(&mut rng, &modes, 3, 6);
        let (s2, t2) = (s.apply_mode_map(&map).unwrap(), t.apply_mode_map(&map).unwrap());
        assert!((s2.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((s.inner(&t) - s2.inner(&t2)).norm() < 1e-12);
    }
}

#[test]
fn outcome_probabilities_are_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = LinearModeMap::bell_analyzer(&MODES.anti_stokes, &MODES.input).unwrap();
    let mut modes = analyzer_inputs();
    modes.push(MODES.b2.clone());
    let detectors = analyzer_detectors();
    for i in 0..200 {
        let s = random_state(&mut rng, &modes, 3, 5).apply_mode_map(&map).unwrap();
        let model = if i % 2 == 0 { DetectorModel::resolving() } else { DetectorModel::bucket() };
        let model = model.with_efficiency(rng.random_range(0.5..=1.0));
        let total: f64 = enumerate_outcomes(&s, &detectors, &model).unwrap().iter().map(|b| b.probability).sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }
}

#[test]
fn bucket_is_a_coarse_graining_of_resolving() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let map = LinearModeMap::bell_analyzer(&MODES.anti_stokes, &MODES.input).unwrap();
    let modes = analyzer_inputs();
    let detectors = analyzer_detectors();
    for _ in 0..200 {
        let s = random_state(&mut rng, &modes, 4, 6).apply_mode_map(&map).unwrap();
        let mut merged: BTreeMap<ClickPattern, f64> = BTreeMap::new();
        for b in enumerate_outcomes(&s, &detectors, &DetectorModel::resolving()).unwrap() {
            *merged.entry(b.pattern.coarse()).or_default() += b.probability;
        }
        let mut bucket: BTreeMap<ClickPattern, f64> = BTreeMap::new();
        for b in enumerate_outcomes(&s, &detectors, &DetectorModel::bucket()).unwrap() {
            *bucket.entry(b.pattern).or_default() += b.probability;
        }
        assert_eq!(merged.keys().collect::<Vec<_>>(), bucket.keys().collect::<Vec<_>>());
        for (k, p) in &merged {
            assert!((p - bucket[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn hong_ou_mandel_is_exact() {
    let (a, b) = (ModeLabel::photon("a"), ModeLabel::photon("b"));
    let one_one = PureState::basis(OccupationConfig::from_counts([(a.clone(), 1), (b.clone(), 1)]));
    let out = one_one.apply_mode_map(&LinearModeMap::beamsplitter(&a, &b).unwrap()).unwrap();
    let expected = PureState::from_terms([
        (OccupationConfig::single(a.clone(), 2), C64::new(FRAC_1_SQRT_2, 0.0)),
        (OccupationConfig::single(b.clone(), 2), C64::new(-FRAC_1_SQRT_2, 0.0)),
    ])
    .unwrap();
    assert_eq!(out.len(), 2);
    for (c, amp) in expected.terms() {
        assert!((out.amplitude(c) - amp).norm() < 1e-15);
    }
}

#[test]
fn every_accepted_branch_is_corrected_to_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mem = build_memory_state(0.0, 0.0, 0.0, 0.0).unwrap();
    for _ in 0..30 {
        let (alpha, beta) = random_qubit(&mut rng);
        let target = target_stored(alpha, beta);
        for b in storage_outcomes(&mem, alpha, beta, &DetectorModel::resolving(), 1.0).unwrap() {
            if b.class.is_success() {
                let fixed = apply_correction(&b.stored, b.class).unwrap();
                assert!((pure_fidelity(&target, &fixed).unwrap() - 1.0).abs() < 1e-10);
                let photon = read_out(&fixed, 1.0).unwrap();
                assert!((fidelity(&target_photon(alpha, beta), &photon).unwrap() - 1.0).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn class_probabilities_do_not_depend_on_the_qubit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (alpha, beta) = random_qubit(&mut rng);
        let phi = rng.random_range(0.0..2.0 * PI);
        for resolving in [true, false] {
            let cfg = ProtocolConfig::ideal(resolving).with_qubit(alpha, beta).with_phases(phi, phi);
            let r = exact_report(&cfg).unwrap();
            let per_class = if resolving { 0.125 } else { 0.25 };
            assert!((r.class_probabilities[&PatternClass::SuccessIdentity] - per_class).abs() < 1e-10);
            assert!((r.class_probabilities[&PatternClass::SuccessPhaseFlip] - per_class).abs() < 1e-10);
        }
    }
}

#[test]
fn acceptance_falls_along_the_symmetric_noise_line() {
    // (1/4 + c/2)/(1 + c)^2 for resolving detectors
    let mut last = f64::INFINITY;
    for c in [0.0, 0.01, 0.05, 0.1, 0.3, 1.0, 3.0] {
        let r = exact_report(&ProtocolConfig::ideal(true).with_noise(c, c)).unwrap();
        let expected = (0.25 + c / 2.0) / (1.0 + c).powi(2);
        assert!((r.acceptance - expected).abs() < 1e-12, "c={c}");
        assert!(r.acceptance < last);
        last = r.acceptance;
        assert!((r.postselected_fidelity.unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn noisy_memory_weights_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let (c1, c2) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let mem = build_memory_state(c1, c2, 0.0, 0.0).unwrap();
        assert!((mem.state.total_weight() - 1.0).abs() < 1e-12);
        assert!(mem.state.branches().iter().all(|(_, s)| s.is_normalized(1e-12)));
    }
}

#[test]
fn heralded_pair_is_independent_of_p() {
    let m = &*MODES;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..40 {
        let p = rng.random_range(1e-4..0.5);
        let phi = rng.random_range(0.0..2.0 * PI);
        let src = PairSource::new(&m.a1, &m.a2, p, phi, &DetectorModel::resolving()).unwrap();
        let mix = src.heralded_mixture().unwrap();
        assert_eq!(mix.len(), 1);
        let target = polmem::protocol::pair_state(&m.a1, &m.a2, phi);
        assert!((pure_fidelity(&target, &mix.branches()[0].1).unwrap() - 1.0).abs() < 1e-12);
        assert!((src.herald_probability() - 2.0 * p * (1.0 - p)).abs() < 1e-14);
    }
}

#[test]
fn lossy_storage_keeps_total_probability() {
    let mem = build_memory_state(0.1, 0.2, 0.3, 0.4).unwrap();
    let model = DetectorModel::bucket().with_efficiency(0.8).with_dark_prob(1e-3);
    let s = FRAC_1_SQRT_2;
    let branches = storage_outcomes(&mem, C64::new(s, 0.0), C64::new(0.0, s), &model, 0.9).unwrap();
    let total: f64 = branches.iter().map(|b| b.probability).sum();
    assert!((total - 1.0).abs() < 1e-10);
    let mix = post_analyzer_state(&mem.state.branches()[3].1, C64::new(s, 0.0), C64::new(0.0, s), 0.9).unwrap();
    assert!((mix.total_weight() - 1.0).abs() < 1e-12);
}

#[test]
fn mixed_state_text_form_round_trips() {
    let mem = build_memory_state(0.05, 0.07, 0.3, 1.1).unwrap();
    let text = mem.state.to_json_text();
    assert_eq!(MixedState::from_json_text(&text).unwrap(), mem.state);
}
