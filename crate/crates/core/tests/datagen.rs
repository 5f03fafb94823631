use std::f64::consts::PI;
use std::fs;

use msnas_core::datagen::{
    event_rng, generate_dataset, generate_events, invariant_mass, load_dataset, normalize_event, sample_event,
    save_dataset, split_ranges, DataError, Dataset, GeneratorConfig, Split, FLOATS_PER_EVENT, IMAGE_PIXELS, TAU_MASS,
};
use proptest::prelude::*;

fn config(n: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_events: n,
        seed,
        ..GeneratorConfig::default()
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Mean of a Cauchy(m0, g) truncated to [a, b], by midpoint quadrature.
fn truncated_cauchy_mean(m0: f64, g: f64, a: f64, b: f64) -> f64 {
    let n = 200_000;
    let h = (b - a) / n as f64;
    let (mut z, mut first) = (0.0, 0.0);
    for i in 0..n {
        let x = a + h * (i as f64 + 0.5);
        let w = 1.0 / (1.0 + ((x - m0) / g).powi(2));
        z += w;
        first += w * x;
    }
    first / z
}

#[test]
fn higgs_truth_pairs_reconstruct_parent_mass() {
    let cfg = config(0, 11);
    for i in 0..500 {
        let ev = sample_event(&mut event_rng(11, i), &cfg, 1).unwrap();
        let pair: Vec<_> = ev.taus.iter().map(|t| t.truth.to_cartesian(TAU_MASS)).collect();
        let m = invariant_mass(&pair).unwrap();
        assert!((m - 125.0).abs() <= 1e-6 * 125.0, "event {i}: {m}");
    }
}

#[test]
fn truth_mass_equals_sampled_parent_mass() {
    let cfg = config(0, 12);
    for i in 0..500 {
        let ev = sample_event(&mut event_rng(12, i), &cfg, 0).unwrap();
        let pair: Vec<_> = ev.taus.iter().map(|t| t.truth.to_cartesian(TAU_MASS)).collect();
        let m = invariant_mass(&pair).unwrap();
        assert!((m - ev.parent_mass).abs() <= 1e-6 * ev.parent_mass);
        assert!((60.0..=120.0).contains(&ev.parent_mass));
    }
}

#[test]
fn z_truth_mass_mean() {
    let cfg = config(0, 5);
    let oracle = truncated_cauchy_mean(91.19, 2.5, 60.0, 120.0);
    assert!((oracle - 91.19).abs() < 0.5);
    let n = 10_000;
    let mean: f64 = (0..n)
        .map(|i| {
            let ev = sample_event(&mut event_rng(5, i), &cfg, 0).unwrap();
            let pair: Vec<_> = ev.taus.iter().map(|t| t.truth.to_cartesian(TAU_MASS)).collect();
            invariant_mass(&pair).unwrap()
        })
        .sum::<f64>()
        / n as f64;
    assert!((mean - 91.19).abs() < 0.5, "mean {mean}");
    assert!((mean - oracle).abs() < 0.5, "mean {mean} vs {oracle}");
}

#[test]
fn image_energy_tracks_visible_pt() {
    let cfg = config(0, 21);
    // each of the 768 pixels carries |N(0, σ)| noise with mean σ·√(2/π)
    let pixels = 3.0 * IMAGE_PIXELS as f64;
    let budget = pixels * cfg.pixel_noise * (2.0 / PI).sqrt();
    let noise_sd = (pixels * cfg.pixel_noise.powi(2) * (1.0 - 2.0 / PI)).sqrt();
    let (mut totals, mut visible) = (Vec::new(), Vec::new());
    for i in 0..1000 {
        let ev = sample_event(&mut event_rng(21, i), &cfg, (i % 2) as u8).unwrap();
        for tau in &ev.taus {
            let total: f64 = tau.images.iter().flatten().map(|&v| v as f64).sum();
            assert!(tau.images.iter().flatten().all(|&v| v >= 0.0));
            let excess = total - tau.visible_pt - budget;
            assert!(excess.abs() < 8.0 * noise_sd + 1e-3 * tau.visible_pt, "excess {excess}");
            totals.push(total);
            visible.push(tau.visible_pt);
        }
    }
    let mean_excess = totals.iter().zip(&visible).map(|(t, v)| t - v - budget).sum::<f64>() / totals.len() as f64;
    assert!(mean_excess.abs() < 5.0 * noise_sd / (totals.len() as f64).sqrt() + 0.05);
    assert!(pearson(&totals, &visible) > 0.95);
}

/// Moments `(E[f], E[f²])` of the visible-fraction mixture.
fn visible_fraction_moments(cfg: &GeneratorConfig) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for (p, &(a, b)) in cfg.modes.probabilities.iter().zip(&cfg.modes.visible_beta) {
        let mean = a / (a + b);
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        m1 += p * mean;
        m2 += p * (var + mean * mean);
    }
    (m1, m2)
}

#[test]
fn jet_pt_correlates_with_truth_pt() {
    let cfg = config(0, 31);
    let (f1, f2) = visible_fraction_moments(&cfg);
    let s2 = 1.0 + cfg.jet_pt_smear.powi(2);
    for label in [0u8, 1] {
        let (mut jet, mut truth) = (Vec::new(), Vec::new());
        for i in 0..1000 {
            let ev = sample_event(&mut event_rng(31, i), &cfg, label).unwrap();
            for tau in &ev.taus {
                jet.push(tau.jet.pt);
                truth.push(tau.truth.pt);
            }
        }
        // jet = truth · f · s with f, s independent of truth
        let n = truth.len() as f64;
        let t1 = truth.iter().sum::<f64>() / n;
        let t2 = truth.iter().map(|t| t * t).sum::<f64>() / n;
        let var_t = t2 - t1 * t1;
        let expected = f1 * var_t / (var_t * (f2 * s2 * t2 - f1 * f1 * t1 * t1)).sqrt();
        let r = pearson(&jet, &truth);
        assert!(r > 0.75, "label {label}: r = {r}");
        assert!((r - expected).abs() < 0.04, "label {label}: r = {r}, expected {expected}");
    }
}

#[test]
fn dataset_labels_and_splits() {
    let ds = Dataset::generate(&config(10_000, 3)).unwrap();
    let n_h = (0..ds.len()).filter(|&r| ds.event(r).label() == 1.0).count();
    assert!((n_h as i64 - 5000).abs() <= 150);
    assert_eq!(ds.range(Split::Train).len(), 6000);
    assert_eq!(ds.range(Split::Val).len(), 2000);
    assert_eq!(ds.range(Split::Test).len(), 2000);
    // both classes reach every split
    for split in [Split::Train, Split::Val, Split::Test] {
        let rows = ds.rows(split);
        let h = rows.iter().filter(|&&r| ds.event(r).label() == 1.0).count() as f64 / rows.len() as f64;
        assert!((h - 0.5).abs() < 0.05, "{split:?}: {h}");
    }
    let s = split_ranges(10_000, [0.6, 0.2, 0.2]);
    assert_eq!(s.train, 0..6000);
}

#[test]
fn generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(100, 7);
    generate_dataset(&cfg, &dir.path().join("a")).unwrap();
    generate_dataset(&cfg, &dir.path().join("b")).unwrap();
    for f in ["events.bin", "meta.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    assert_eq!(fs::read(dir.path().join("a/events.bin")).unwrap().len(), 100 * FLOATS_PER_EVENT * 4);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let written = generate_dataset(&config(40, 9), dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(written, loaded);
    let again = dir.path().join("again");
    save_dataset(&loaded, &again).unwrap();
    assert_eq!(
        fs::read(dir.path().join("events.bin")).unwrap(),
        fs::read(again.join("events.bin")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("meta.json")).unwrap(),
        fs::read(again.join("meta.json")).unwrap()
    );
}

#[test]
fn corrupted_files_give_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&config(10, 1), dir.path()).unwrap();
    let bin = dir.path().join("events.bin");
    let meta = dir.path().join("meta.json");
    let bytes = fs::read(&bin).unwrap();
    let meta_text = fs::read_to_string(&meta).unwrap();

    fs::write(&bin, &bytes[..bytes.len() - 10]).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, DataError::TruncatedPayload { .. }));
    assert!(err.to_string().contains("truncated payload"));

    let mut doubled = bytes.clone();
    doubled.extend_from_slice(&bytes);
    fs::write(&bin, &doubled).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(DataError::CountMismatch { .. })));

    let mut flipped = bytes.clone();
    flipped[100] ^= 1;
    fs::write(&bin, &flipped).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(DataError::ChecksumMismatch { .. })));

    fs::write(&bin, &bytes).unwrap();
    fs::write(&meta, meta_text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(DataError::VersionMismatch { found: 99, .. })
    ));

    fs::remove_file(&meta).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, DataError::Io { .. }));
    assert!(err.to_string().contains("meta.json"));
}

#[test]
fn normalized_event_matches_stored_values() {
    let ds = Dataset::generate(&config(4, 2)).unwrap();
    let ev = ds.event(0);
    let norm = normalize_event(&ev).unwrap();
    assert!((norm.jets[0][0] as f64 - (0.1 + ev.jet(0)[0] as f64).ln()).abs() < 1e-6);
    assert_eq!(norm.jets[1][1..], ev.jet(1)[1..]);
    assert_eq!(norm.truth[0][2], ev.truth(0)[2]);
    assert_eq!(norm.label, ev.label());
}

#[test]
fn events_depend_only_on_seed_and_index() {
    let a = generate_events(&config(5, 4)).unwrap();
    let cfg = config(0, 4);
    let b = sample_event(&mut event_rng(4, 3), &cfg, a[3].label).unwrap();
    assert_eq!(a[3], b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn event_invariants(seed in any::<u64>(), index in 0u64..1_000_000, label in 0u8..2) {
        let cfg = config(0, seed);
        let ev = sample_event(&mut event_rng(seed, index), &cfg, label).unwrap();
        prop_assert_eq!(ev.label, label);
        prop_assert!(ev.taus[0].jet.pt >= ev.taus[1].jet.pt);
        for tau in &ev.taus {
            prop_assert!(tau.visible_fraction > 0.0 && tau.visible_fraction < 1.0);
            prop_assert!(tau.truth.pt > 0.0);
            prop_assert!(tau.truth.pt >= tau.visible_pt);
            prop_assert!(tau.jet.pt > 0.0 && tau.jet.m >= 0.1);
            prop_assert!(tau.jet.phi > -PI && tau.jet.phi <= PI);
            prop_assert!(tau.truth.phi > -PI && tau.truth.phi <= PI);
            prop_assert!(tau.images.iter().flatten().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }
}
