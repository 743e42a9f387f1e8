use macroreal_core::analysis::*;
use macroreal_core::fixtures::REPRESENTATIVE_COUNTS_CSV;
use macroreal_core::protocol::{Run, Sign, SubRun, PROTOCOL};
use macroreal_core::quantum::{qm_lgi, SetupParams};
use macroreal_core::sim::{Channel, IterationCounts, SourceConfig, TimestampStream};
use macroreal_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn stream(channel: Channel, times: Vec<u64>) -> TimestampStream {
    TimestampStream::from_unsorted(channel, times)
}

fn brute_force(a: &TimestampStream, b: &TimestampStream, bw: i64, lo: i64, hi: i64) -> Vec<u64> {
    let bins = ((hi - lo) + bw - 1) / bw;
    let mut counts = vec![0u64; bins as usize];
    for &x in &a.times {
        for &y in &b.times {
            let d = y as i64 - x as i64;
            if d >= lo && d < lo + bins * bw {
                counts[((d - lo) / bw) as usize] += 1;
            }
        }
    }
    counts
}

fn representative() -> CountsDataset {
    CountsDataset::from_csv(REPRESENTATIVE_COUNTS_CSV.as_bytes()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn histogram_equals_brute_force(
        a in prop::collection::vec(0u64..2_000_000, 0..1000),
        b in prop::collection::vec(0u64..2_000_000, 0..1000),
        bw in 1i64..500,
        lo in -100_000i64..0,
        span in 1_500i64..200_000,
    ) {
        let (a, b) = (stream(Channel::Herald, a), stream(Channel::Plus, b));
        let h = histogram(&a, &b, bw, (lo, lo + span)).unwrap();
        prop_assert_eq!(h.counts, brute_force(&a, &b, bw, lo, lo + span));
    }

    #[test]
    fn common_shift_leaves_corrected_counts_unchanged(shift in 0u64..1_000_000_000, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, 300.0).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..2000 {
            let t = rng.random_range(0..1_000_000_000u64);
            a.push(t);
            b.push((t as f64 + 10_000.0 + jitter.sample(&mut rng)) as u64);
            b.push(rng.random_range(0..1_000_000_000u64));
        }
        let (a0, b0) = (stream(Channel::Herald, a.clone()), stream(Channel::Plus, b.clone()));
        let a1 = stream(Channel::Herald, a.iter().map(|t| t + shift).collect());
        let b1 = stream(Channel::Plus, b.iter().map(|t| t + shift).collect());
        let h0 = histogram(&a0, &b0, 100, (0, 20_000)).unwrap();
        let h1 = histogram(&a1, &b1, 100, (0, 20_000)).unwrap();
        prop_assert_eq!(&h0, &h1);
        let w = select_window(&h0).unwrap();
        prop_assert_eq!(
            corrected_coincidences(&a0, &b0, &w).unwrap(),
            corrected_coincidences(&a1, &b1, &w).unwrap()
        );
    }

    #[test]
    fn tables_from_counts_are_closed(
        counts in prop::collection::vec((0.0..1e5f64, 0.0..1e5f64), 9),
    ) {
        let data = CountsDataset::new(PROTOCOL.iter().zip(&counts).map(|(s, c)| (*s, vec![*c])));
        if let Ok(t) = joint_probs_from_runs(&data) {
            for table in [&t.p23, &t.p13, &t.p123, &t.p12, &t.p3] {
                prop_assert!((table.total() - 1.0).abs() < 1e-9);
                prop_assert!(table.entries.values().all(|&x| (0.0..=1.0).contains(&x)));
            }
            for a in Sign::BOTH {
                for b in Sign::BOTH {
                    let direct = t.p123.get(&[a, b, Sign::Plus]) + t.p123.get(&[a, b, Sign::Minus]);
                    prop_assert_eq!(t.p12.pp(a, b), direct);
                }
            }
        }
    }
}

#[test]
fn independent_streams_give_accidental_flatline() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let duration = 1_000_000_000_000u64;
    let (ra, rb) = (2e4, 3e4);
    let a = stream(Channel::Herald, (0..20_000).map(|_| rng.random_range(0..duration)).collect());
    let b = stream(Channel::Plus, (0..30_000).map(|_| rng.random_range(0..duration)).collect());
    let h = histogram(&a, &b, 1000, (-500_000, 500_000)).unwrap();
    let expected = ra * rb * 1000e-12;
    let mean = h.total() as f64 / h.counts.len() as f64;
    let sigma = (expected / h.counts.len() as f64).sqrt();
    assert!((mean - expected).abs() < 4.0 * sigma, "{mean} vs {expected}");
    assert!(matches!(select_window(&h), Err(Error::NoPeak { .. })));
}

fn gaussian_histogram(center: f64, sigma_bins: f64, height: f64, bins: usize) -> CoincidenceHistogram {
    let counts = (0..bins)
        .map(|k| {
            let x = k as f64 + 0.5 - center;
            (height * (-0.5 * (x / sigma_bins).powi(2)).exp()).round() as u64
        })
        .collect();
    CoincidenceHistogram {
        bin_width: 1,
        origin: 0,
        counts,
    }
}

#[test]
fn fwhm_of_gaussian_peak() {
    for sigma in [3.0, 5.5, 12.0] {
        for center in [150.0, 200.3, 260.7] {
            let w = select_window(&gaussian_histogram(center, sigma, 1e5, 500)).unwrap();
            assert!(
                (w.width_bins() - 2.355 * sigma).abs() <= 1.0,
                "sigma {sigma}: width {}",
                w.width_bins()
            );
            assert!((w.center() - center).abs() <= 1.0, "center {} vs {center}", w.center());
        }
    }
}

#[test]
fn zero_background_keeps_raw_count() {
    let a: Vec<u64> = (0..500).map(|k| 1_000_000 * k + 10).collect();
    let b: Vec<u64> = a.iter().map(|t| t + 5_000).collect();
    let (a, b) = (stream(Channel::Herald, a), stream(Channel::Plus, b));
    let h = histogram(&a, &b, 100, (-50_000, 50_000)).unwrap();
    let w = select_window(&h).unwrap();
    assert_eq!(w.flatline_mean, 0.0);
    let c = corrected_coincidences(&a, &b, &w).unwrap();
    assert_eq!((c.value, c.raw, c.clamped), (500.0, 500, false));
}

#[test]
fn accidental_subtraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let duration = 10_000_000_000u64;
    let jitter = Normal::new(0.0, 400.0).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for _ in 0..1000 {
        let t = rng.random_range(0..duration - 200_000);
        a.push(t);
        b.push((t as f64 + 100_000.0 + jitter.sample(&mut rng)).round() as u64);
    }
    let a_acc: Vec<u64> = (0..60_000).map(|_| rng.random_range(0..duration)).collect();
    let b_acc: Vec<u64> = (0..60_000).map(|_| rng.random_range(0..duration)).collect();
    let a = stream(Channel::Herald, a.into_iter().chain(a_acc.iter().copied()).collect());
    let b_all = stream(Channel::Plus, b.into_iter().chain(b_acc.iter().copied()).collect());
    let h = histogram(&a, &b_all, 100, (50_000, 150_000)).unwrap();
    let w = select_window(&h).unwrap();
    // The FWHM window keeps ≈76% of a Gaussian peak.
    let c = corrected_coincidences(&a, &b_all, &w).unwrap();
    let kept = 1000.0 * statrs_erf(w.width_bins() * 100.0 / 2.0 / (400.0 * 2f64.sqrt()));
    assert!(
        (c.value - kept).abs() < 4.0 * (c.raw as f64).sqrt(),
        "corrected {} vs {kept} (raw {})",
        c.value,
        c.raw
    );

    // Accidentals alone, evaluated in the same window.
    let a_only = stream(Channel::Herald, a_acc);
    let b_only = stream(Channel::Plus, b_acc);
    let noise = corrected_coincidences(&a_only, &b_only, &w).unwrap();
    assert!(noise.value <= 4.0 * (noise.raw as f64).sqrt() + 1e-9);
}

fn statrs_erf(x: f64) -> f64 {
    statrs::function::erf::erf(x)
}

#[test]
fn representative_dataset_tables() {
    let t = joint_probs_from_runs(&representative()).unwrap();
    use Sign::{Minus as M, Plus as P};
    // Table entries are printed to three decimals.
    let close = |a: f64, b: f64| (a - b).abs() < 1e-3;
    assert!(close(t.p23.pp(P, P), 0.414) && close(t.p23.pp(P, M), 0.107));
    assert!(close(t.p23.pp(M, P), 0.122) && close(t.p23.pp(M, M), 0.357));
    assert!(close(t.p13.pp(P, P), 0.211) && close(t.p13.pp(M, P), 0.327));
    assert!(close(t.p12.pp(P, P), 0.406) && close(t.p12.pp(P, M), 0.106));
    assert!(close(t.p12.pp(M, P), 0.113) && close(t.p12.pp(M, M), 0.376));
    assert!(close(t.p3.get(&[P]), 0.540));
    let v = evaluate_inequalities(&t);
    assert!((v.lgi - 1.32).abs() < 5e-3, "LGI {}", v.lgi);
    assert!((v.wlgi - 0.09).abs() < 5e-3, "WLGI {}", v.wlgi);
    assert!((v.nsit12 - 0.002).abs() < 1e-3);
    assert!((v.nsit23 - 0.004).abs() < 1e-3);
    assert!((v.nsit13 - 0.002).abs() < 1e-3);
}

#[test]
fn single_iteration_fixture_reports_points_without_delta() {
    let data = representative();
    let prov = Provenance {
        input: "fixture".into(),
        iterations: data.iteration_counts(),
        analysis: AnalysisConfig::default(),
        source: None,
        setup: None,
    };
    let r = analyze_counts(&data, &AnalysisConfig::default(), Vec::new(), prov).unwrap();
    assert!(r.lgi.delta.is_none());
    assert!(r.warnings.iter().any(|w| w.contains("no error estimate")));
    assert!(error_distributions(&data, &AnalysisConfig::default()).is_err());
}

#[test]
fn uniform_counts_give_trivial_values() {
    let data = CountsDataset::new(PROTOCOL.iter().map(|s| (*s, vec![(10.0, 10.0)])));
    let v = evaluate_inequalities(&joint_probs_from_runs(&data).unwrap());
    assert!(v.lgi.abs() < 1e-15);
    assert!((v.wlgi + 0.25).abs() < 1e-15);
    assert!(v.nsit12 < 1e-15 && v.nsit23 < 1e-15 && v.nsit13 < 1e-15);
}

#[test]
fn missing_run_is_named() {
    let data = CountsDataset::new(
        PROTOCOL.iter().filter(|s| s.run != Run::Two).map(|s| (*s, vec![(1.0, 1.0)])),
    );
    let e = joint_probs_from_runs(&data).unwrap_err();
    assert!(e.to_string().contains("run 2"), "{e}");
}

#[test]
fn bootstrap_matches_central_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..12.0)).collect();
    let m = samples.iter().sum::<f64>() / samples.len() as f64;
    let s = (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / samples.len() as f64).sqrt();
    let r = bootstrap_sdm(&samples, 50, 100_000, 4).unwrap();
    let expected = s / 50f64.sqrt();
    assert!((r.sd - expected).abs() < 0.05 * expected, "{} vs {expected}", r.sd);
    assert!((r.mean - m).abs() < 4.0 * expected / (1e5f64).sqrt() + 1e-3);
}

#[test]
fn bootstrap_is_deterministic() {
    let xs: Vec<f64> = (0..40).map(|k| (k as f64).sqrt()).collect();
    assert_eq!(bootstrap_sdm(&xs, 20, 3000, 9).unwrap(), bootstrap_sdm(&xs, 20, 3000, 9).unwrap());
}

fn noisy_dataset(iters: [usize; 4], seed: u64) -> CountsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CountsDataset::new(PROTOCOL.iter().map(|s| {
        let n = iters[s.run.number() as usize - 1];
        let base = (2000.0 + 500.0 * s.index as f64, 1500.0 + 300.0 * s.index as f64);
        let v = (0..n)
            .map(|_| {
                (
                    base.0 + 80.0 * rng.random::<f64>() - 40.0,
                    base.1 + 60.0 * rng.random::<f64>() - 30.0,
                )
            })
            .collect();
        (*s, v)
    }))
}

#[test]
fn identical_iterations_have_no_spread() {
    let data = CountsDataset::new(PROTOCOL.iter().map(|s| (*s, vec![(100.0, 50.0); 5])));
    let e = error_distributions(&data, &AnalysisConfig::default()).unwrap();
    for est in [&e.lgi, &e.wlgi, &e.nsit12, &e.nsit23, &e.nsit13] {
        assert!(est.delta.unwrap() < 1e-12);
    }
}

#[test]
fn sampled_pairing_matches_exhaustive() {
    let data = noisy_dataset([150, 300, 150, 300], 5);
    let lists: Vec<&[(f64, f64)]> = Run::Two.sub_runs().map(|s| data.iterations(&s)).collect();
    let weights = [(1.0, -1.0), (-1.0, 1.0)];
    let exact = combination_spread(&lists, &weights, CombinationMode::Exhaustive, 0, 1, 0).unwrap();
    assert_eq!(exact.combinations, 300 * 300);
    let sampled = combination_spread(&lists, &weights, CombinationMode::Sampled, 0, 100_000, 3).unwrap();
    assert!((sampled.sigma - exact.sigma).abs() < 0.03 * exact.sigma);
}

#[test]
fn sampled_four_way_matches_exhaustive_at_twenty_iterations() {
    let data = noisy_dataset([20, 20, 20, 20], 8);
    let cfg = |mode| AnalysisConfig {
        combination: mode,
        ..AnalysisConfig::default()
    };
    let exact = error_distributions(&data, &cfg(CombinationMode::Exhaustive)).unwrap();
    let sampled = error_distributions(&data, &cfg(CombinationMode::Sampled)).unwrap();
    for (k, s) in &exact.spreads {
        let t = sampled.spreads[k].sigma;
        assert!(s.exhaustive && !sampled.spreads[k].exhaustive);
        assert!((t - s.sigma).abs() < 0.03 * s.sigma, "{k}: {t} vs {}", s.sigma);
    }
}

#[test]
fn delta_is_sum_of_term_sigmas() {
    let data = noisy_dataset([10, 12, 8, 9], 2);
    let e = error_distributions(&data, &AnalysisConfig::default()).unwrap();
    for est in [&e.lgi, &e.wlgi] {
        assert_eq!(est.sigmas.len(), 3);
        assert!((est.delta.unwrap() - est.sigmas.values().sum::<f64>()).abs() < 1e-15);
    }
    assert_eq!(e.nsit23.sigmas.len(), 2);
}

#[test]
fn too_few_iterations_is_an_error() {
    let data = noisy_dataset([1, 5, 5, 5], 1);
    assert!(matches!(
        error_distributions(&data, &AnalysisConfig::default()),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn noiseless_simulation_recovers_the_prediction() {
    let setup = SetupParams::nominal();
    let src = SourceConfig::ideal(2e5, 1.0, 21);
    let counts = IterationCounts {
        interference: 12,
        non_interference: 8,
    };
    let cfg = AnalysisConfig {
        draws: 100_000,
        ..AnalysisConfig::default()
    };
    let (r, _) = analyze_simulation(&src, &setup, &counts, &cfg).unwrap();
    let delta = r.lgi.delta.unwrap();
    assert!((r.lgi.mean - qm_lgi(&setup)).abs() < 3.0 * delta, "{} ± {delta}", r.lgi.mean);
    for n in [&r.nsit12, &r.nsit23, &r.nsit13] {
        assert!(n.mean < 0.01, "NSIT {}", n.mean);
    }
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
}

#[test]
fn pipeline_is_deterministic() {
    let src = SourceConfig {
        seed: 4,
        duration: 0.2,
        ..SourceConfig::default()
    };
    let counts = IterationCounts {
        interference: 4,
        non_interference: 3,
    };
    let cfg = AnalysisConfig {
        draws: 20_000,
        ..AnalysisConfig::default()
    };
    let setup = SetupParams::nominal();
    let a = analyze_simulation(&src, &setup, &counts, &cfg).unwrap();
    let b = analyze_simulation(&src, &setup, &counts, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn per_iteration_values_use_the_shortest_sub_run() {
    let data = noisy_dataset([3, 5, 4, 6], 3);
    let v = per_iteration_values(&data).unwrap();
    assert_eq!(v.len(), 3);
    let _ = SubRun::parse("1.1").unwrap();
}
