//! Execution-time distributions on an integer microsecond grid.
//!
//! A [`Pmf`] stores masses densely from its smallest supported value upward,
//! one slot per `granularity` microseconds. Raw distributions (from traces or
//! discretized densities) use a granularity of 1; [`Pmf::resample`] produces a
//! coarser, stochastically dominating distribution whose support sits on
//! multiples of the resampling step.

mod io;

pub use io::{format_pmf, parse_pmf, parse_trace, read_pmf, read_trace, write_pmf, PMF_FORMAT_HEADER};

use statrs::distribution::{Beta, ContinuousCDF};
use std::collections::BTreeMap;
use thiserror::Error;

/// Tolerance used when comparing cumulative sums of two distributions.
pub const CDF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("beta shape parameters must be positive (alpha={alpha}, beta={beta})")]
    InvalidShape { alpha: f64, beta: f64 },
    #[error("invalid discretization grid: {0}")]
    InvalidGrid(String),
    #[error("resampling step must be at least 1 µs")]
    InvalidDelta,
    #[error("probability masses must be finite and nonnegative (found {0})")]
    InvalidMass(f64),
    #[error("distribution has no positive mass")]
    NoMass,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("probabilities sum to {sum}, which is not within 1e-6 of 1")]
    NotNormalized { sum: f64 },
    #[error("{0}")]
    Io(String),
}

/// Probability mass function of a job's execution time.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    origin: u64,
    granularity: u64,
    masses: Vec<f64>,
}

impl Pmf {
    /// Builds a PMF whose `i`-th mass sits at `origin + i * granularity`.
    ///
    /// Leading and trailing zero masses are trimmed and the masses are
    /// renormalized to sum to one.
    pub fn new(origin: u64, granularity: u64, masses: Vec<f64>) -> Result<Self, DistributionError> {
        if granularity == 0 {
            return Err(DistributionError::InvalidGrid("granularity must be positive".into()));
        }
        if let Some(&bad) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(DistributionError::InvalidMass(bad));
        }
        let first = masses.iter().position(|&m| m > 0.0).ok_or(DistributionError::NoMass)?;
        let last = masses.iter().rposition(|&m| m > 0.0).unwrap_or(first);
        let mut masses = masses[first..=last].to_vec();
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= total);
        Ok(Pmf {
            origin: origin + first as u64 * granularity,
            granularity,
            masses,
        })
    }

    /// Builds a 1 µs-grid PMF from `(value, probability)` pairs. Repeated
    /// values accumulate.
    pub fn from_pairs(pairs: &[(u64, f64)]) -> Result<Self, DistributionError> {
        let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
        for &(value, mass) in pairs {
            if !mass.is_finite() || mass < 0.0 {
                return Err(DistributionError::InvalidMass(mass));
            }
            *merged.entry(value).or_default() += mass;
        }
        let (&lo, _) = merged.first_key_value().ok_or(DistributionError::NoMass)?;
        let (&hi, _) = merged.last_key_value().ok_or(DistributionError::NoMass)?;
        let mut masses = vec![0.0; (hi - lo + 1) as usize];
        for (value, mass) in merged {
            masses[(value - lo) as usize] = mass;
        }
        Pmf::new(lo, 1, masses)
    }

    /// Point mass at `value`.
    pub fn point(value: u64) -> Self {
        Pmf {
            origin: value,
            granularity: 1,
            masses: vec![1.0],
        }
    }

    /// Empirical frequency distribution of observed execution times.
    pub fn from_trace(samples: &[u64]) -> Result<Self, DistributionError> {
        let lo = *samples.iter().min().ok_or(DistributionError::EmptyTrace)?;
        let hi = *samples.iter().max().ok_or(DistributionError::EmptyTrace)?;
        let mut counts = vec![0.0; (hi - lo + 1) as usize];
        for &s in samples {
            counts[(s - lo) as usize] += 1.0;
        }
        Pmf::new(lo, 1, counts)
    }

    /// Discretizes a beta(`alpha`, `beta`) density stretched over
    /// `[0, support_max]` µs. The mass assigned to `k * grid` is the beta CDF
    /// increment over `((k - 1) * grid, k * grid]`.
    pub fn from_beta(alpha: f64, beta: f64, support_max: u64, grid: u64) -> Result<Self, DistributionError> {
        if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(DistributionError::InvalidShape { alpha, beta });
        }
        if support_max == 0 || grid == 0 || !support_max.is_multiple_of(grid) {
            return Err(DistributionError::InvalidGrid(format!(
                "grid {grid} must be positive and divide support_max {support_max}"
            )));
        }
        let dist = Beta::new(alpha, beta).map_err(|_| DistributionError::InvalidShape { alpha, beta })?;
        // Lower half from the CDF, upper half from the survival function, so
        // that tail increments keep their relative precision.
        let split = (alpha + 1.0) / (alpha + beta + 2.0);
        let scale = support_max as f64;
        let increment = |lo: f64, hi: f64| {
            if hi <= split {
                (dist.cdf(hi) - dist.cdf(lo)).max(0.0)
            } else {
                (dist.sf(lo) - dist.sf(hi)).max(0.0)
            }
        };
        let bins = (support_max / grid) as usize;
        let masses = (1..=bins)
            .map(|k| {
                let lo = ((k - 1) as u64 * grid) as f64 / scale;
                let hi = (k as u64 * grid) as f64 / scale;
                increment(lo, hi)
            })
            .collect();
        Pmf::new(grid, grid, masses)
    }

    /// Smallest value with nonzero mass.
    pub fn min_value(&self) -> u64 {
        self.origin
    }

    /// Largest value with nonzero mass.
    pub fn max_value(&self) -> u64 {
        self.origin + (self.masses.len() as u64 - 1) * self.granularity
    }

    pub fn granularity(&self) -> u64 {
        self.granularity
    }

    /// Number of grid slots between the smallest and largest value.
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Mass at exactly `value` µs.
    pub fn mass_at(&self, value: u64) -> f64 {
        if value < self.origin || !(value - self.origin).is_multiple_of(self.granularity) {
            return 0.0;
        }
        self.masses
            .get(((value - self.origin) / self.granularity) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// Iterates over `(value, mass)` for every slot, including interior zeros.
    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .map(move |(i, &m)| (self.origin + i as u64 * self.granularity, m))
    }

    /// Iterates over the values that carry positive mass.
    pub fn support(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.iter().filter(|&(_, m)| m > 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(v, m)| v as f64 * m).sum()
    }

    /// Value with the largest mass (lowest such value on ties).
    pub fn mode(&self) -> u64 {
        let mut best = (self.origin, f64::NEG_INFINITY);
        for (v, m) in self.iter() {
            if m > best.1 {
                best = (v, m);
            }
        }
        best.0
    }

    /// `F_U(c)`: probability that the execution time is at most `c`.
    pub fn cdf(&self, c: u64) -> f64 {
        if c < self.origin {
            return 0.0;
        }
        if c >= self.max_value() {
            return 1.0;
        }
        let idx = ((c - self.origin) / self.granularity) as usize;
        self.masses[..=idx].iter().sum::<f64>().min(1.0)
    }

    /// Precomputed cumulative view for repeated CDF queries.
    pub fn cdf_view(&self) -> CdfView {
        let mut acc = 0.0;
        let cumulative = self
            .masses
            .iter()
            .map(|m| {
                acc += m;
                acc.min(1.0)
            })
            .collect();
        CdfView {
            origin: self.origin,
            granularity: self.granularity,
            cumulative,
        }
    }

    /// Whether every value with positive mass is a multiple of `step`.
    pub fn is_on_grid(&self, step: u64) -> bool {
        step > 0 && self.support().all(|(v, _)| v % step == 0)
    }

    /// Conservative resampling: every mass moves up to the next multiple of
    /// `delta` (values already on the grid stay put).
    pub fn resample(&self, delta: u64) -> Result<Pmf, DistributionError> {
        if delta == 0 {
            return Err(DistributionError::InvalidDelta);
        }
        if delta == 1 || (self.granularity.is_multiple_of(delta) && self.origin.is_multiple_of(delta)) {
            return Ok(self.clone());
        }
        let first_bucket = self.origin.div_ceil(delta);
        let last_bucket = self.max_value().div_ceil(delta);
        let mut masses = vec![0.0; (last_bucket - first_bucket + 1) as usize];
        for (v, m) in self.iter() {
            masses[(v.div_ceil(delta) - first_bucket) as usize] += m;
        }
        Pmf::new(first_bucket * delta, delta, masses)
    }

    /// Drops masses below `threshold` and renormalizes. This gives up the
    /// conservativeness of the analysis, so it is only applied on request.
    pub fn truncate_below(&self, threshold: f64) -> Result<Pmf, DistributionError> {
        let masses = self
            .masses
            .iter()
            .map(|&m| if m < threshold { 0.0 } else { m })
            .collect();
        Pmf::new(self.origin, self.granularity, masses)
    }

    /// First-order stochastic dominance `self ⪰ other`: the CDF of `self`
    /// never exceeds the CDF of `other`.
    pub fn dominates(&self, other: &Pmf) -> bool {
        dominates(self, other)
    }
}

/// Cumulative sums of a [`Pmf`], queryable at any value.
#[derive(Debug, Clone)]
pub struct CdfView {
    origin: u64,
    granularity: u64,
    cumulative: Vec<f64>,
}

impl CdfView {
    pub fn at(&self, c: u64) -> f64 {
        if c < self.origin {
            return 0.0;
        }
        let idx = ((c - self.origin) / self.granularity) as usize;
        if idx + 1 >= self.cumulative.len() {
            1.0
        } else {
            self.cumulative[idx]
        }
    }
}

/// `F_U(c)` for `pmf`.
pub fn cdf(pmf: &Pmf, c: u64) -> f64 {
    pmf.cdf(c)
}

/// Resamples `pmf` onto multiples of `delta`.
pub fn resample(pmf: &Pmf, delta: u64) -> Result<Pmf, DistributionError> {
    pmf.resample(delta)
}

/// `a ⪰ b` in the first-order stochastic sense.
pub fn dominates(a: &Pmf, b: &Pmf) -> bool {
    // Both CDFs are step functions, so comparing at every support point of
    // either distribution is exhaustive.
    let mut points: Vec<u64> = a.support().chain(b.support()).map(|(v, _)| v).collect();
    points.sort_unstable();
    points.dedup();
    let (ca, cb) = (a.cdf_view(), b.cdf_view());
    points.into_iter().all(|x| ca.at(x) <= cb.at(x) + CDF_TOLERANCE)
}
