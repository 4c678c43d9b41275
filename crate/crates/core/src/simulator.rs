//! Monte Carlo replay of the backlog recursion on raw (un-resampled)
//! execution times.
//!
//! `v_0 = c_0`, `v_{k+1} = max(0, v_k − N·Q_s) + c_{k+1}`; job `k` meets its
//! deadline `T` when `⌈v_k/Q_s⌉·T_s ≤ N·T_s`, i.e. when `v_k ≤ N·Q_s`.

use crate::distributions::Pmf;
use crate::model::ReservationParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use thiserror::Error;

/// Two-sided 99% normal quantile.
const Z99: f64 = 2.576;
const BATCHES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("jobs ({jobs}) must exceed warmup ({warmup})")]
    TooFewJobs { jobs: u64, warmup: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub jobs_simulated: u64,
    pub warmup_discarded: u64,
    pub p_meet_hat: f64,
    /// Wider of the binomial and batch-means 99% half-widths.
    pub ci99_halfwidth: f64,
    pub ci99_binomial: f64,
    pub ci99_batch_means: f64,
    /// Response-time bound in server periods → number of jobs.
    pub delay_histogram: BTreeMap<u64, u64>,
    pub seed: u64,
}

/// Default warm-up: 10% of the jobs.
pub fn default_warmup(jobs: u64) -> u64 {
    jobs / 10
}

/// Inverse-CDF sampler over a PMF's support.
struct Sampler {
    values: Vec<u64>,
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(pmf: &Pmf) -> Self {
        let mut values = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (v, m) in pmf.support() {
            acc += m;
            values.push(v);
            cumulative.push(acc);
        }
        // Guard against the last cumulative value falling short of 1.
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Sampler { values, cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.values[idx.min(self.values.len() - 1)]
    }
}

fn binomial_halfwidth(p: f64, m: u64) -> f64 {
    Z99 * (p * (1.0 - p) / m as f64).sqrt()
}

/// 99% half-width from the spread of `BATCHES` batch means, using the
/// Student-t quantile for `BATCHES − 1` degrees of freedom.
fn batch_means_halfwidth(hits: &[bool]) -> f64 {
    let size = hits.len() / BATCHES;
    if size == 0 {
        return 0.0;
    }
    let means: Vec<f64> = (0..BATCHES)
        .map(|b| hits[b * size..(b + 1) * size].iter().filter(|&&h| h).count() as f64 / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (BATCHES - 1) as f64)
        .map(|d| d.inverse_cdf(0.995))
        .unwrap_or(Z99);
    t * (var / BATCHES as f64).sqrt()
}

/// Simulates `jobs` consecutive jobs and estimates the probability of
/// meeting the deadline `T` from the jobs after the first `warmup`.
pub fn simulate(
    pmf: &Pmf,
    params: &ReservationParams,
    jobs: u64,
    warmup: u64,
    seed: u64,
) -> Result<SimulationResult, SimulationError> {
    if jobs <= warmup {
        return Err(SimulationError::TooFewJobs { jobs, warmup });
    }
    let sampler = Sampler::new(pmf);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let supply = params.supply();
    let n = params.n();
    let q = params.budget;
    let measured = (jobs - warmup) as usize;
    let mut hits = Vec::with_capacity(measured);
    let mut histogram = BTreeMap::new();
    let mut backlog: u64 = 0;
    for k in 0..jobs {
        let c = sampler.sample(&mut rng);
        backlog = if k == 0 { c } else { backlog.saturating_sub(supply) + c };
        if k >= warmup {
            // Server periods until the backlog is served, never fewer than N.
            let periods = backlog.div_ceil(q).max(n);
            *histogram.entry(periods).or_insert(0) += 1;
            hits.push(backlog <= supply);
        }
    }
    let p = hits.iter().filter(|&&h| h).count() as f64 / measured as f64;
    let binomial = binomial_halfwidth(p, measured as u64);
    let batch = batch_means_halfwidth(&hits);
    Ok(SimulationResult {
        jobs_simulated: jobs,
        warmup_discarded: warmup,
        p_meet_hat: p,
        ci99_halfwidth: binomial.max(batch),
        ci99_binomial: binomial,
        ci99_batch_means: batch,
        delay_histogram: histogram,
        seed,
    })
}
