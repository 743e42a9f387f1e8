use macroreal_core::fixtures::BUNDLED_COUNTS_CSV;
use macroreal_core::multiphoton::*;
use macroreal_core::protocol::Sign;
use macroreal_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_fit_params(n: f64) -> GammaFitParams {
    GammaFitParams {
        alpha_sq: 0.48,
        t: [0.74, 0.77, 0.81, 0.65],
        eta1: 0.56,
        eta2: 0.64,
        n,
        gamma: 0.0023,
    }
}

fn draw(rng: &mut ChaCha8Rng) -> GammaFitParams {
    let mut u = |k: usize| {
        let (lo, hi) = FIT_BOX[k];
        rng.random_range(lo..=hi)
    };
    GammaFitParams {
        alpha_sq: u(0),
        t: [u(1), u(2), u(3), u(4)],
        eta1: u(5),
        eta2: u(6),
        gamma: u(7),
        n: 10f64.powf(rng.random_range(4.5..6.5)),
    }
}

#[test]
fn two_photon_tables_sum_to_one_and_are_swap_symmetric() {
    let t = two_photon_joint_probs().unwrap();
    for table in [&t.p23, &t.p13, &t.p123, &t.p12, &t.p3] {
        assert!((table.total() - 1.0).abs() < 1e-15);
    }
    for table in [&t.p23, &t.p13, &t.p12] {
        for a in Sign::BOTH {
            for b in Sign::BOTH {
                assert_eq!(table.pp(a, b), table.pp(a.flip(), b.flip()));
            }
        }
    }
    let v = two_photon_values().unwrap();
    assert_eq!(v.lgi, 3.0);
    assert_eq!(v.wlgi, 0.5);
}

#[test]
fn modified_bounds_are_affine_and_increasing() {
    let grid: Vec<f64> = (0..50).map(|k| k as f64 / 50.0).collect();
    let b: Vec<ModifiedBounds> = grid.iter().map(|&g| modified_bounds(g).unwrap()).collect();
    for (g, m) in grid.iter().zip(&b) {
        assert!((m.lgi_bound - (1.0 + 2.0 * g)).abs() < 1e-12);
        assert!((m.wlgi_bound - g / 2.0).abs() < 1e-12);
    }
    assert!(b.windows(2).all(|w| w[1].lgi_bound > w[0].lgi_bound && w[1].wlgi_bound > w[0].wlgi_bound));
}

#[test]
fn coincidences_never_exceed_singles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let c = predicted_counts(&draw(&mut rng));
        for set in 0..4 {
            let v = &c.0[3 * set..3 * set + 3];
            assert!(v[2] <= v[0].min(v[1]) + 1e-9, "{v:?}");
        }
    }
}

#[test]
fn unit_deviation_contributes_one() {
    let e = predicted_counts(&reference_fit_params(2e5));
    let mut o = e;
    o.0[4] += e.0[4].sqrt();
    assert!((chi_squared(&o, &e).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn bundled_counts_parse() {
    let c = CountVector12::from_csv(BUNDLED_COUNTS_CSV.as_bytes()).unwrap();
    assert_eq!(c, BUNDLED_COUNTS);
}

#[test]
fn missing_column_is_reported() {
    let e = CountVector12::from_csv("set_label,C1,C12\n++,1,2\n".as_bytes()).unwrap_err();
    assert!(matches!(e, Error::Malformed(m) if m.contains("C2")));
}

#[test]
fn round_trip_with_known_efficiencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(2023);
    for k in 0..20 {
        let truth = draw(&mut rng);
        let obs = predicted_counts(&truth);
        let opts = FitOptions {
            seed: k,
            ..FitOptions::default()
        }
        .with_efficiencies(truth.eta1, truth.eta2);
        let fit = fit_gamma(&obs, &opts).unwrap();
        assert!(
            (fit.params.gamma - truth.gamma).abs() < 1e-3,
            "draw {k}: gamma {} vs {} (chi2 {})",
            fit.params.gamma,
            truth.gamma,
            fit.chi2
        );
    }
}

#[test]
fn round_trip_at_reference_gamma() {
    let truth = reference_fit_params(2e5);
    let obs = predicted_counts(&truth);
    let fit = fit_gamma(&obs, &FitOptions::default().with_efficiencies(0.56, 0.64)).unwrap();
    assert!((fit.params.gamma - 0.0023).abs() < 1e-4);
    assert!(fit.chi2 < 1e-6);
    assert_eq!(fit.free.len(), 7);
}

#[test]
fn round_trip_without_two_photon_events() {
    let truth = GammaFitParams {
        gamma: 0.0,
        ..reference_fit_params(2e5)
    };
    let obs = predicted_counts(&truth);
    // Coincidence cells are zero, so the fit must keep their predictions
    // positive while driving γ to the boundary.
    let fit = fit_gamma(&obs, &FitOptions::default().with_efficiencies(0.56, 0.64)).unwrap();
    assert!(fit.params.gamma <= 1e-4, "gamma {}", fit.params.gamma);
}

#[test]
fn free_fit_cannot_pin_gamma() {
    // With every parameter free the count equations have flat directions
    // through γ, η₁, η₂ and N: distinct γ values fit noiseless data exactly.
    let obs = predicted_counts(&reference_fit_params(2e5));
    let opts = FitOptions {
        restarts: 12,
        ..FitOptions::default()
    };
    let profile = gamma_profile(&obs, &[0.0018, 0.0023, 0.0035], &opts).unwrap();
    for p in &profile {
        assert!(p.chi2 < 1e-4, "gamma {}: chi2 {}", p.gamma, p.chi2);
    }
}

#[test]
fn bundled_table_is_inconsistent_with_the_count_model() {
    // Sets 1 and 3 share the second splitter, so the model forces equal
    // singles ratios C₂/C₁; the table's are 3.87 and 5.12.
    let c = BUNDLED_COUNTS.0;
    assert!((c[1] / c[0] - 3.874).abs() < 1e-3);
    assert!((c[7] / c[6] - 5.116).abs() < 1e-3);
    let fit = fit_gamma(&BUNDLED_COUNTS, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert!((170.0..177.0).contains(&fit.chi2), "chi2 {}", fit.chi2);
}

#[test]
fn printed_fit_parameters_do_not_reproduce_the_table() {
    // Best N for the printed parameters: Pearson χ² is minimized at
    // N* = N₀·sqrt(Σ o²/e₀ / Σ e₀).
    let e0 = predicted_counts(&reference_fit_params(1.0));
    let (a, b): (f64, f64) = BUNDLED_COUNTS
        .0
        .iter()
        .zip(&e0.0)
        .map(|(o, e)| (o * o / e, *e))
        .fold((0.0, 0.0), |s, x| (s.0 + x.0, s.1 + x.1));
    let n = (a / b).sqrt();
    let chi2 = chi_squared(&BUNDLED_COUNTS, &predicted_counts(&reference_fit_params(n))).unwrap();
    let nearby = chi_squared(&BUNDLED_COUNTS, &predicted_counts(&reference_fit_params(n * 1.01))).unwrap();
    assert!(chi2 <= nearby);
    assert!(chi2 > 1000.0, "chi2 {chi2}");
}
