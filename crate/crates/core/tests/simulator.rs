mod common;

use cbsprob::solvers::CompanionSolver;
use cbsprob::{analyze, simulate, Pmf, ReservationParams};
use common::random_pmf;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn numeric_solution_lower_bounds_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..20 {
        let pmf = random_pmf(&mut rng, 2, 40);
        let params = ReservationParams::new(20, 10, 10, 2).unwrap();
        let solved = analyze(&pmf, &params, &CompanionSolver).unwrap().state.pi0;
        let sim = simulate(&pmf, &params, 200_000, 20_000, case).unwrap();
        assert!(
            solved <= sim.p_meet_hat + 3.0 * sim.ci99_halfwidth,
            "case {case}: {solved} > {}",
            sim.p_meet_hat
        );
    }
}

#[test]
fn unresampled_chain_matches_simulation() {
    // Δ = 1 µs: the chain is the exact model of the simulated recursion.
    let pmf = Pmf::from_pairs(&[(2, 0.3), (5, 0.4), (9, 0.2), (13, 0.1)]).unwrap();
    let params = ReservationParams::new(6, 6, 6, 1).unwrap();
    let solved = analyze(&pmf, &params, &CompanionSolver).unwrap().state.pi0;
    let sim = simulate(&pmf, &params, 1_000_000, 100_000, 4).unwrap();
    assert!((solved - sim.p_meet_hat).abs() < 3.0 * sim.ci99_halfwidth, "{solved} vs {}", sim.p_meet_hat);
}

#[test]
fn transient_reservation_decays_with_horizon() {
    // Mean demand 2 (null recurrent) and 2.01 (transient) against a
    // supply of 2.
    let params = ReservationParams::new(2, 2, 2, 1).unwrap();
    for late in [0.5, 0.505] {
        let pmf = Pmf::from_pairs(&[(1, 1.0 - late), (3, late)]).unwrap();
        // Averaged over seeds: a single short path can drift away early.
        let mean = |jobs: u64| {
            (0..5)
                .map(|seed| simulate(&pmf, &params, jobs, jobs / 10, seed).unwrap().p_meet_hat)
                .sum::<f64>()
                / 5.0
        };
        let (short, long) = (mean(10_000), mean(1_000_000));
        assert!(long < short, "{long} ≥ {short}");
    }
}

#[test]
fn histogram_counts_measured_jobs() {
    let pmf = Pmf::from_pairs(&[(1, 0.5), (4, 0.5)]).unwrap();
    let params = ReservationParams::new(4, 2, 1, 1).unwrap();
    let r = simulate(&pmf, &params, 50_000, 7_000, 2).unwrap();
    assert_eq!(r.delay_histogram.values().sum::<u64>(), 43_000);
    // Never fewer server periods than the task period spans.
    assert!(r.delay_histogram.keys().all(|&k| k >= 2));
    assert!((0.0..=1.0).contains(&r.p_meet_hat));
}
