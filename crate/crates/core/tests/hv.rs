use macroreal_core::hv::*;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exhaustive maximum over a 0.01 grid of the weights on `support`, keeping
/// grid points that satisfy the efficiency constraints exactly and leave
/// every denominator positive.
fn grid_oracle(ineq: Inequality, eta: f64, support: &[usize]) -> Option<f64> {
    let mut best: Option<f64> = None;
    let steps = 100;
    let mut idx = vec![0usize; support.len()];
    loop {
        let mut w = [0.0; DIM];
        for (k, &i) in idx.iter().enumerate() {
            w[support[k]] = i as f64 / steps as f64;
        }
        let hw = HVWeights::from_flat(&w);
        if hw.infeasibility(eta) < 1e-9 {
            if let Ok(v) = detectors_value(ineq, &hw) {
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        let mut j = 0;
        loop {
            if j == idx.len() {
                return best;
            }
            idx[j] += 1;
            if idx[j] <= steps {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

#[test]
fn optimizer_matches_grid_oracle_on_small_supports() {
    use Block::*;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut cases: Vec<(Inequality, f64, Vec<usize>)> = vec![
        (Inequality::Lgi, 0.5, vec![flat(A, 7), flat(B, 5), flat(C, 1)]),
        (Inequality::Wlgi, 0.5, vec![flat(A, 7), flat(B, 5), flat(C, 1)]),
        (Inequality::Lgi, 0.9, vec![flat(P, 2), flat(C, 4), flat(D, 7)]),
        (Inequality::Wlgi, 0.9, vec![flat(P, 2), flat(C, 1), flat(D, 7)]),
        (Inequality::Lgi, 0.6, vec![flat(D, 1), flat(D, 5)]),
    ];
    for k in 0..40 {
        let ineq = if k % 2 == 0 { Inequality::Lgi } else { Inequality::Wlgi };
        let eta = [0.5, 0.6, 0.8, 0.9][k % 4];
        let support = sample(&mut rng, DIM, 1 + k % 3).into_vec();
        cases.push((ineq, eta, support));
    }
    let mut compared = 0;
    for (ineq, eta, support) in cases {
        let Some(oracle) = grid_oracle(ineq, eta, &support) else {
            continue;
        };
        let (found, w) = maximize_on_support(ineq, eta, &support, &SearchOptions::default())
            .unwrap()
            .expect("grid found a feasible point");
        assert!(w.infeasibility(eta) < 1e-9);
        assert!(
            (found - oracle).abs() <= 2e-2,
            "{ineq} eta={eta} support={support:?}: optimizer {found} vs grid {oracle}"
        );
        compared += 1;
    }
    assert!(compared >= 5, "only {compared} supports had feasible grid points");
}

#[test]
fn witnesses_are_feasible() {
    for eta in [0.3, 0.5, 0.7, 0.85, 1.0] {
        for ineq in [Inequality::Lgi, Inequality::Wlgi] {
            let c = maximize_detectors(
                ineq,
                eta,
                &SearchOptions {
                    random_starts: 8,
                    ..SearchOptions::default()
                },
            )
            .unwrap();
            assert!(c.witness.infeasibility(eta) < 1e-9, "{ineq} eta={eta}");
            let v = detectors_value(ineq, &c.witness).unwrap();
            assert!((v - c.bound).abs() < 1e-9);
        }
    }
}

#[test]
fn optimizer_never_falls_below_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let opts = SearchOptions {
        random_starts: 8,
        ..SearchOptions::default()
    };
    for _ in 0..50 {
        let eta: f64 = rand::Rng::random_range(&mut rng, 0.05..=1.0);
        for ineq in [Inequality::Lgi, Inequality::Wlgi] {
            let c = maximize_detectors(ineq, eta, &opts).unwrap();
            assert!(c.bound >= c.formula_value - 1e-4, "{ineq} eta={eta}: {}", c.bound);
        }
    }
}

#[test]
fn closed_forms_exceeded_by_feasible_witnesses() {
    use Block::*;
    // Fully feasible, every denominator at least 0.8.
    let lgi = HVWeights::zero().with(P, 2, 0.1).with(C, 4, 0.1).with(D, 7, 0.8);
    assert!(lgi.infeasibility(0.9) < 1e-12);
    assert!(min_denominator(Inequality::Lgi, &lgi) >= 0.8 - 1e-12);
    let v = lgi_detectors_value(&lgi).unwrap();
    assert!((v - (1.0 + 1.0 - 0.7 + 1.0 / 9.0 + 0.0 + 0.0)).abs() < 1e-12);
    assert!(v > closed_form_bound(Inequality::Lgi, 0.9) + 0.08);

    let wlgi = HVWeights::zero().with(P, 2, 0.1).with(C, 1, 0.1).with(D, 7, 0.8);
    assert!(wlgi.infeasibility(0.9) < 1e-12);
    assert!((wlgi_detectors_value(&wlgi).unwrap() - 0.2).abs() < 1e-12);
}

#[test]
fn uniform_d_block_matches_direct_enumeration() {
    let mut w = HVWeights::zero();
    for i in 1..=8 {
        w = w.with(Block::D, i, 1.0 / 8.0);
    }
    // Every run then sees all eight triples equally often.
    let (mut c12, mut c23, mut c13) = (0.0, 0.0, 0.0);
    for i in 1..=8 {
        let [a, b, c] = triple(i).map(|s| s.value());
        c12 += a * b / 8.0;
        c23 += b * c / 8.0;
        c13 += a * c / 8.0;
    }
    let expected = c12 + c23 - c13 + c12 + c23 - c13;
    assert!((lgi_detectors_value(&w).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn blocker_bound_is_constant_in_eta() {
    for ineq in [Inequality::Lgi, Inequality::Wlgi] {
        let vals: Vec<f64> = [0.01, 0.5, 1.0]
            .iter()
            .map(|&e| blocker_setup_bound(ineq, e).unwrap().bound)
            .collect();
        assert!(vals.windows(2).all(|w| w[0] == w[1]));
    }
    assert_eq!(blocker_setup_bound(Inequality::Lgi, 0.3).unwrap().bound, 1.0);
    assert_eq!(blocker_setup_bound(Inequality::Wlgi, 0.3).unwrap().bound, 0.0);
}

#[test]
fn closed_form_bounds_decrease_above_two_thirds() {
    for ineq in [Inequality::Lgi, Inequality::Wlgi] {
        let grid: Vec<f64> = (0..=100)
            .map(|k| closed_form_bound(ineq, 2.0 / 3.0 + k as f64 / 300.0))
            .collect();
        assert!(grid.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn critical_lgi_efficiency() {
    let eta = critical_efficiency(Inequality::Lgi);
    assert!((eta - 0.8508).abs() < 1e-3);
    assert!((2.0 / eta - eta - 1.5).abs() < 1e-6);
    let eta = critical_efficiency(Inequality::Wlgi);
    assert!(((1.0 - eta) / (2.0 * eta - 1.0) - 0.4034).abs() < 1e-6);
}

#[test]
fn invalid_eta_rejected() {
    assert!(maximize_lgi_detectors(0.0).is_err());
    assert!(maximize_wlgi_detectors(1.5).is_err());
    assert!(blocker_setup_bound(Inequality::Lgi, -0.1).is_err());
}
