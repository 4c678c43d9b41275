//! The collapsed backlog chain of a CBS-served periodic task.
//!
//! Everything here is in Δ units. With `u[m]` the resampled mass at `m·Δ`
//! and `W = N·Q_s/Δ`, state 0 collects every backlog `v ≤ W` and state
//! `i ≥ 1` stands for `v = W + i`. Row `i` of the transition matrix is
//! `p(i, 0) = F(W − i)` and `p(i, j) = u[W + j − i]` for `j ≥ 1`, which in
//! terms of the row coefficients `a_j = u[m_min + j]` and `H = W − m_min`
//! becomes `p(i, j) = a_{j − i + H}`.

use crate::distributions::Pmf;
use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

/// Tolerance for the row-stochasticity of the chain coefficients.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("server_period must divide period (period={period}, server_period={server_period})")]
    ServerPeriodNotDivisor { period: u64, server_period: u64 },
    #[error("budget must lie in (0, server_period] (budget={budget}, server_period={server_period})")]
    BudgetOutOfRange { budget: u64, server_period: u64 },
    #[error("delta must divide budget (delta={delta}, budget={budget})")]
    DeltaNotDivisor { delta: u64, budget: u64 },
    #[error("delta must be at least 1 µs")]
    ZeroDelta,
    #[error("periods must be positive")]
    ZeroPeriod,
    #[error("execution-time distribution is not on the {delta} µs grid; resample it first")]
    OffGrid { delta: u64 },
    #[error("divergent reservation: minimum demand exceeds supply")]
    Divergent,
    #[error("invalid chain coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("gamma index {k} exceeds chain order {n}")]
    GammaIndex { k: usize, n: usize },
}

/// Reservation `(Q_s, T_s)` serving a task of period `T`, analysed on a Δ grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReservationParams {
    pub period: u64,
    pub server_period: u64,
    pub budget: u64,
    pub delta: u64,
}

impl ReservationParams {
    pub fn new(period: u64, server_period: u64, budget: u64, delta: u64) -> Result<Self, ModelError> {
        if period == 0 || server_period == 0 {
            return Err(ModelError::ZeroPeriod);
        }
        if !period.is_multiple_of(server_period) {
            return Err(ModelError::ServerPeriodNotDivisor { period, server_period });
        }
        if budget == 0 || budget > server_period {
            return Err(ModelError::BudgetOutOfRange { budget, server_period });
        }
        if delta == 0 {
            return Err(ModelError::ZeroDelta);
        }
        if !budget.is_multiple_of(delta) {
            return Err(ModelError::DeltaNotDivisor { delta, budget });
        }
        Ok(ReservationParams {
            period,
            server_period,
            budget,
            delta,
        })
    }

    /// Server periods per task period.
    pub fn n(&self) -> u64 {
        self.period / self.server_period
    }

    pub fn bandwidth(&self) -> f64 {
        self.budget as f64 / self.server_period as f64
    }

    /// Supply per task period, `N·Q_s`, in µs.
    pub fn supply(&self) -> u64 {
        self.n() * self.budget
    }

    /// Supply per task period in Δ units.
    pub fn w_units(&self) -> u64 {
        self.supply() / self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    PositiveRecurrent,
    TransientOrNull,
}

/// Scalar row structure of the collapsed chain.
///
/// Invariants: `1 ≤ H < n`, `a_0 > 0`, `a_n > 0`, `Σ a_j = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    a: Vec<f64>,
    alpha: Vec<f64>,
    h: usize,
    w_units: u64,
    params: ReservationParams,
}

/// Outcome of [`build_chain`].
#[derive(Debug, Clone, PartialEq)]
pub enum ChainBuild {
    /// Every job completes within its own period; `π(0) = 1`.
    AlwaysMeets,
    Chain(Chain),
}

impl ChainBuild {
    pub fn chain(&self) -> Option<&Chain> {
        match self {
            ChainBuild::AlwaysMeets => None,
            ChainBuild::Chain(c) => Some(c),
        }
    }
}

/// Builds the chain for a PMF already on the `params.delta` grid.
pub fn build_chain(pmf: &Pmf, params: &ReservationParams) -> Result<ChainBuild, ModelError> {
    let delta = params.delta;
    if !pmf.is_on_grid(delta) {
        return Err(ModelError::OffGrid { delta });
    }
    let w = params.w_units();
    let m_min = pmf.min_value() / delta;
    let m_max = pmf.max_value() / delta;
    if m_max <= w {
        return Ok(ChainBuild::AlwaysMeets);
    }
    if m_min >= w {
        return Err(ModelError::Divergent);
    }
    let a: Vec<f64> = (m_min..=m_max).map(|m| pmf.mass_at(m * delta)).collect();
    let h = (w - m_min) as usize;
    Chain::assemble(a, h, w, *params).map(ChainBuild::Chain)
}

impl Chain {
    /// A chain given directly by its coefficients, with unit-sized
    /// reservation parameters (`Δ = 1`, `N = 1`, `Q_s = T_s = H`), so that
    /// state `j` lies `j` units beyond the supply.
    pub fn from_coefficients(a: Vec<f64>, h: usize) -> Result<Self, ModelError> {
        if h == 0 {
            return Err(ModelError::InvalidCoefficients("H must be at least 1".into()));
        }
        let hu = h as u64;
        let params = ReservationParams::new(hu, hu, hu, 1)?;
        Chain::assemble(a, h, hu, params)
    }

    fn assemble(a: Vec<f64>, h: usize, w_units: u64, params: ReservationParams) -> Result<Self, ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidCoefficients(msg));
        if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("coefficients must be finite and nonnegative".into());
        }
        let n = a.len().saturating_sub(1);
        if h == 0 || n <= h {
            return bad(format!("need 1 ≤ H < n (H={h}, n={n})"));
        }
        if a[0] <= 0.0 || a[n] <= 0.0 {
            return bad("a_0 and a_n must be positive".into());
        }
        let total: f64 = a.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("coefficients sum to {total}"));
        }
        let a: Vec<f64> = a.into_iter().map(|x| x / total).collect();
        let alpha = a.iter().map(|x| x / a[0]).collect();
        Ok(Chain {
            a,
            alpha,
            h,
            w_units,
            params,
        })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// `α_j = a_j / a_0`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn n(&self) -> usize {
        self.a.len() - 1
    }

    pub fn w_units(&self) -> u64 {
        self.w_units
    }

    pub fn params(&self) -> &ReservationParams {
        &self.params
    }

    /// Coefficient `a_k`, zero outside `0..=n`.
    pub fn coef(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.a.get(k as usize).copied().unwrap_or(0.0)
        }
    }

    /// `b_k = Σ_{j ≤ k} a_j`, the probability of returning to state 0 from
    /// boundary row `H − k`; `k = 1..=H`.
    pub fn b(&self) -> Vec<f64> {
        (1..=self.h).map(|k| self.a[..=k].iter().sum()).collect()
    }

    /// Transition probability `p(i, j)` of the infinite chain.
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        let h = self.h as i64;
        let (i, j) = (i as i64, j as i64);
        if j > 0 {
            self.coef(j - i + h)
        } else if i > h {
            0.0
        } else {
            self.a[..=(h - i) as usize].iter().sum()
        }
    }

    /// `γ(k, l) = Σ_{j=0}^{k} α_j l^{k−j}`.
    pub fn gamma(&self, k: usize, l: f64) -> Result<f64, ModelError> {
        if k > self.n() {
            return Err(ModelError::GammaIndex { k, n: self.n() });
        }
        Ok(self.alpha[..=k].iter().fold(0.0, |acc, &x| acc * l + x))
    }

    /// `γ(k, l)` at a complex argument (used by the boundary system).
    pub fn gamma_complex(&self, k: usize, l: Complex64) -> Complex64 {
        self.alpha[..=k.min(self.n())]
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &x| acc * l + x)
    }

    /// Drift `D_1 = Σ_{j<H} γ(j,1) − Σ_{j>H} (j−H)·α_j`.
    pub fn drift_d1(&self) -> f64 {
        let h = self.h;
        let mut gamma = 0.0;
        let mut left = 0.0;
        for j in 0..h {
            gamma += self.alpha[j];
            left += gamma;
        }
        let right: f64 = (h + 1..=self.n()).map(|j| (j - h) as f64 * self.alpha[j]).sum();
        left - right
    }

    /// The same drift written as the expected downward minus upward step,
    /// divided by `a_0`.
    pub fn drift_weighted(&self) -> f64 {
        let h = self.h as f64;
        let net: f64 = self
            .a
            .iter()
            .enumerate()
            .map(|(j, &x)| (h - j as f64) * x)
            .sum();
        net / self.a[0]
    }

    pub fn classify(&self) -> Classification {
        if self.drift_d1() > 0.0 {
            Classification::PositiveRecurrent
        } else {
            Classification::TransientOrNull
        }
    }

    /// Conservative `H = 1` chain: every downward move goes a single step.
    pub fn lump(&self) -> Chain {
        if self.h == 1 {
            return self.clone();
        }
        let mut a = Vec::with_capacity(self.n() - self.h + 2);
        a.push(self.a[..self.h].iter().sum());
        a.extend_from_slice(&self.a[self.h..]);
        let alpha = a.iter().map(|x| x / a[0]).collect();
        Chain {
            a,
            alpha,
            h: 1,
            w_units: self.w_units,
            params: self.params,
        }
    }

    /// Level decomposition into the repeating blocks.
    pub fn blocks(&self) -> QbdpBlocks {
        let f = (self.n() - self.h).max(self.h);
        let h = self.h as i64;
        let fi = f as i64;
        let block = |offset: i64| Mat::from_fn(f, f, |r, c| self.coef(c as i64 - r as i64 + offset));
        QbdpBlocks {
            f,
            boundary: Mat::from_fn(f, f, |r, c| self.transition(r, c)),
            up: block(fi + h),
            local: block(h),
            down: block(h - fi),
        }
    }

    /// Serializable summary for inspection and golden files.
    pub fn dump(&self) -> ChainDump {
        ChainDump {
            w_units: self.w_units,
            h: self.h,
            n: self.n(),
            a: self.a.clone(),
            b: self.b(),
            classification: self.classify(),
            d1: self.drift_d1(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDump {
    #[serde(rename = "W_units")]
    pub w_units: u64,
    #[serde(rename = "H")]
    pub h: usize,
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub classification: Classification,
    #[serde(rename = "D1")]
    pub d1: f64,
}

/// Block-tridiagonal form with levels of `F = max(n − H, H)` states.
///
/// Level 0 holds states `0..F`. From level `k ≥ 1` the chain moves to level
/// `k + 1` through `up`, stays through `local` and drops through `down`;
/// level 0 uses `boundary` in place of `local` and cannot drop further.
#[derive(Debug, Clone)]
pub struct QbdpBlocks {
    pub f: usize,
    pub boundary: Mat<f64>,
    pub up: Mat<f64>,
    pub local: Mat<f64>,
    pub down: Mat<f64>,
}
