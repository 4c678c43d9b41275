//! Shared generators and reference computations for the integration tests.
#![allow(dead_code)]

use cbsprob::{Chain, Classification, Pmf};
use rand::Rng;

/// A random chain with `n ≤ max_n`, `1 ≤ H ≤ max_h` and `H < n`, positive
/// recurrent with drift at least `min_drift`.
pub fn random_chain(rng: &mut impl Rng, max_n: usize, max_h: usize, min_drift: f64) -> Chain {
    loop {
        let n = rng.random_range(2..=max_n);
        let h = rng.random_range(1..=max_h.min(n - 1));
        let decay: f64 = rng.random_range(0.05..0.6);
        let a: Vec<f64> = (0..=n)
            .map(|j| {
                // Some zero coefficients, but never a_0 or a_n.
                if j != 0 && j != n && rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.05..1.0) * (-(decay * j as f64)).exp()
                }
            })
            .collect();
        let chain = Chain::from_coefficients(normalized(a), h).unwrap();
        if chain.classify() == Classification::PositiveRecurrent && chain.drift_d1() >= min_drift {
            return chain;
        }
    }
}

/// A random chain that is transient or null recurrent.
pub fn random_divergent_chain(rng: &mut impl Rng, max_n: usize, max_h: usize) -> Chain {
    loop {
        let n = rng.random_range(2..=max_n);
        let h = rng.random_range(1..=max_h.min(n - 1));
        let a: Vec<f64> = (0..=n).map(|_| rng.random_range(0.05..1.0)).collect();
        let chain = Chain::from_coefficients(normalized(a), h).unwrap();
        if chain.drift_d1() <= 0.0 {
            return chain;
        }
    }
}

fn normalized(a: Vec<f64>) -> Vec<f64> {
    let total: f64 = a.iter().sum();
    a.into_iter().map(|x| x / total).collect()
}

/// Random PMF on `lo..=hi` µs with a random subset of support points.
pub fn random_pmf(rng: &mut impl Rng, lo: u64, hi: u64) -> Pmf {
    let mut pairs = vec![(lo, rng.random_range(0.01..1.0)), (hi, rng.random_range(0.01..1.0))];
    for v in lo + 1..hi {
        if rng.random_bool(0.4) {
            pairs.push((v, rng.random_range(0.0..1.0)));
        }
    }
    Pmf::from_pairs(&pairs).unwrap()
}

/// Stationary distribution of the chain truncated to `states` states (mass
/// beyond the last state is kept there) by power iteration from uniform.
pub fn power_iteration(chain: &Chain, states: usize) -> Vec<f64> {
    let n = chain.n();
    let h = chain.h();
    // Sparse rows: state i reaches i + k − H for k with a_k > 0, or state 0.
    let rows: Vec<Vec<(usize, f64)>> = (0..states)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for j in 0..=(i + n).saturating_sub(h) {
                let p = chain.transition(i, j);
                if p > 0.0 {
                    row.push((j.min(states - 1), p));
                }
            }
            row
        })
        .collect();
    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0; states];
    for it in 0..2_000_000 {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in rows.iter().enumerate() {
            for &(j, p) in row {
                next[j] += pi[i] * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>();
        std::mem::swap(&mut pi, &mut next);
        if change < 1e-15 && it > 100 {
            break;
        }
    }
    pi
}

/// Exact `π(0)` of a chain with `H = 1`: `1 − Σ_j (j−1)·a_j / a_0`.
pub fn h1_closed_form(a: &[f64]) -> f64 {
    1.0 - a.iter().enumerate().skip(2).map(|(j, x)| (j - 1) as f64 * x).sum::<f64>() / a[0]
}
