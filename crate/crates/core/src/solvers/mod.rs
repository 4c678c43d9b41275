//! Steady-state solvers for the backlog chain.
//!
//! Each method implements [`SteadyStateSolver`] and is looked up by name in a
//! [`SolverRegistry`]. All of them return a [`SteadyState`] whose head
//! `π(0), π(1), …` can be extended on demand for deadline queries.

mod analytic;
mod companion;
mod matrix_geometric;

pub use analytic::{unclamped_bound, AnalyticBound};
pub use companion::{char_poly, deflate_unit_root, deflated_char_poly, stable_root_product, CompanionSolver, PolynomialRoots};
pub use matrix_geometric::{r_residual, MatrixGeometric, RIteration};

use crate::distributions::{DistributionError, Pmf};
use crate::model::{build_chain, ChainBuild, Classification, ModelError, ReservationParams};
use crate::Chain;
use faer::Mat;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("root on unit circle (|β| = {modulus})")]
    RootOnUnitCircle { modulus: f64 },
    #[error("root partition inconsistent: {unstable} unstable roots, expected {expected}")]
    PartitionInconsistent { unstable: usize, expected: usize },
    #[error("repeated eigenvalues: the companion method needs simple roots")]
    RepeatedRoots,
    #[error("stable-root product has imaginary residue {0}")]
    ImaginaryResidue(f64),
    #[error("boundary system gives π(0) = {system}, eigenvalue product gives {product}")]
    BoundaryMismatch { product: f64, system: f64 },
    #[error("iteration did not converge within {iterations} steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("not positive recurrent: spectral radius of R is not below 1")]
    NotPositiveRecurrent,
    #[error("singular linear system")]
    Singular,
    #[error("unknown solver '{0}' (available: {1})")]
    UnknownSolver(String, String),
    #[error("deadline below model resolution: {0}")]
    DeadlineResolution(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Analytic,
    Companion,
    MatrixGeometric,
}

/// Level vectors `x_0, x_0 R, x_0 R², …` of a matrix-geometric solution.
#[derive(Debug)]
struct Levels {
    level0: Vec<f64>,
    r: Mat<f64>,
}

impl Levels {
    fn fill(&self, out: &mut Vec<f64>, count: usize) {
        let f = self.level0.len();
        let mut level = Mat::from_fn(1, f, |_, c| self.level0[c]);
        while out.len() < count {
            out.extend((0..f).map(|c| level[(0, c)]));
            level = &level * &self.r;
        }
        out.truncate(count);
    }
}

#[derive(Debug, Clone)]
enum Generator {
    /// All probabilities vanish (transient or null-recurrent chain).
    Zero,
    /// `π(0) = 1`.
    Certain,
    /// `H = 1`: flow balance across the cut between states `m` and `m + 1`,
    /// `a_0 π(m+1) = Σ_{i≤m} π(i) Pr{step from i ends above m}`, which only
    /// adds nonnegative terms.
    SkipFree { a: Vec<f64>, pi0: f64 },
    /// `H > 1`: the forward balance recursion amplifies rounding along the
    /// `H − 1` roots outside the unit circle, so states from `H` on come
    /// from the matrix-geometric form of the same chain, built on first use.
    Deferred {
        seed: Vec<f64>,
        chain: Arc<Chain>,
        levels: Arc<OnceLock<Result<Levels, SolveError>>>,
    },
    Geometric(Arc<Levels>),
}

/// Steady-state distribution of the chain, with `π(0)` the probability of
/// meeting the deadline `D = T`.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub classification: Classification,
    pub pi0: f64,
    /// `π(1)..π(H−1)` of the chain the method solved.
    pub boundary: Vec<f64>,
    pub method: Method,
    pub conservative: bool,
    generator: Generator,
}

impl SteadyState {
    pub fn zero(method: Method, conservative: bool) -> Self {
        SteadyState {
            classification: Classification::TransientOrNull,
            pi0: 0.0,
            boundary: Vec::new(),
            method,
            conservative,
            generator: Generator::Zero,
        }
    }

    pub fn always_meets(method: Method, conservative: bool) -> Self {
        SteadyState {
            classification: Classification::PositiveRecurrent,
            pi0: 1.0,
            boundary: Vec::new(),
            method,
            conservative,
            generator: Generator::Certain,
        }
    }

    /// A positive-recurrent state known through `π(0..H)` of `chain`.
    fn from_boundary(chain: &Chain, seed: Vec<f64>, method: Method, conservative: bool) -> Self {
        debug_assert_eq!(seed.len(), chain.h());
        let generator = if chain.h() == 1 {
            Generator::SkipFree {
                a: chain.a().to_vec(),
                pi0: seed[0],
            }
        } else {
            Generator::Deferred {
                seed: seed.clone(),
                chain: Arc::new(chain.clone()),
                levels: Arc::new(OnceLock::new()),
            }
        };
        SteadyState {
            classification: Classification::PositiveRecurrent,
            pi0: seed[0],
            boundary: seed[1..].to_vec(),
            method,
            conservative,
            generator,
        }
    }

    fn from_levels(level0: Vec<f64>, r: Mat<f64>, h: usize, method: Method) -> Self {
        SteadyState {
            classification: Classification::PositiveRecurrent,
            pi0: level0[0].clamp(0.0, 1.0),
            boundary: level0[1..h].to_vec(),
            method,
            conservative: false,
            generator: Generator::Geometric(Arc::new(Levels { level0, r })),
        }
    }

    /// `π(0)..π(count−1)`.
    ///
    /// Entries are clipped to `[0, 1 − partial sum]` so that rounding can
    /// never push the total above 1. Fails only if a deferred tail cannot be
    /// computed.
    pub fn head(&self, count: usize) -> Result<Vec<f64>, SolveError> {
        let mut out = Vec::with_capacity(count);
        match &self.generator {
            Generator::Zero => out.resize(count, 0.0),
            Generator::Certain => {
                out.resize(count, 0.0);
                if let Some(first) = out.first_mut() {
                    *first = 1.0;
                }
            }
            Generator::SkipFree { a, pi0 } => {
                // up[s] = Pr{step k > s} = Σ_{k>s} a_k.
                let n = a.len() - 1;
                let mut up = vec![0.0; n + 1];
                for s in (0..n).rev() {
                    up[s] = up[s + 1] + a[s + 1];
                }
                if count > 0 {
                    out.push(*pi0);
                }
                while out.len() < count {
                    let m = out.len() - 1;
                    // State i ≤ m ends above m when k > m − i + 1.
                    let flow: f64 = (m.saturating_sub(n)..=m)
                        .filter_map(|i| up.get(m - i + 1).map(|u| out[i] * u))
                        .sum();
                    out.push(flow / a[0]);
                }
            }
            Generator::Deferred { seed, chain, levels } => {
                out.extend(seed.iter().copied().take(count));
                if count > seed.len() {
                    let levels = levels
                        .get_or_init(|| {
                            let mg = MatrixGeometric::cyclic_reduction();
                            mg.levels(&chain.blocks())
                        })
                        .as_ref()
                        .map_err(Clone::clone)?;
                    let mut full = Vec::with_capacity(count);
                    levels.fill(&mut full, count);
                    out.extend_from_slice(&full[seed.len()..]);
                }
            }
            Generator::Geometric(levels) => levels.fill(&mut out, count),
        }
        let mut total = 0.0_f64;
        for x in out.iter_mut() {
            *x = x.clamp(0.0, (1.0 - total).max(0.0));
            total += *x;
        }
        Ok(out)
    }

    /// `π(H)..π(H+count−1)` where `H − 1` is the boundary length.
    pub fn tail(&self, count: usize) -> Result<Vec<f64>, SolveError> {
        let h = self.boundary.len() + 1;
        Ok(self.head(h + count)?.split_off(h))
    }
}

/// Lower bound on `Pr{f_k ≤ r_k + d}`: the mass of every state whose
/// response-time bound `⌈v/Q_s⌉·T_s` does not exceed `d`.
pub fn deadline_probability(state: &SteadyState, params: &ReservationParams, d: u64) -> Result<f64, SolveError> {
    let ts = params.server_period;
    if !d.is_multiple_of(ts) {
        return Err(SolveError::DeadlineResolution(format!(
            "deadline {d} is not a multiple of server_period {ts}"
        )));
    }
    let ell = d / ts;
    if ell < params.n() {
        return Err(SolveError::DeadlineResolution(format!(
            "deadline {d} is shorter than the task period {}",
            params.period
        )));
    }
    let j_max = ((ell - params.n()) * params.budget / params.delta) as usize;
    Ok(state.head(j_max + 1)?.iter().sum::<f64>().min(1.0))
}

/// A steady-state solution method.
pub trait SteadyStateSolver: Send + Sync {
    /// Registry key.
    fn name(&self) -> &'static str;

    fn method(&self) -> Method;

    /// Whether results are lower bounds on the exact chain's probabilities.
    fn conservative(&self) -> bool;

    /// Resampling step used when the caller does not fix one.
    fn default_delta(&self, budget: u64) -> u64;

    /// Whether `π(0)` is known to be nondecreasing in the budget at a fixed
    /// Δ. Callers that need monotone curves must otherwise take an envelope.
    fn monotone_in_budget(&self) -> bool {
        true
    }

    /// Solves a proper (non-degenerate) chain.
    fn solve(&self, chain: &Chain) -> Result<SteadyState, SolveError>;

    /// Solves the outcome of [`build_chain`], covering the degenerate cases.
    fn solve_build(&self, build: &ChainBuild) -> Result<SteadyState, SolveError> {
        match build {
            ChainBuild::AlwaysMeets => Ok(SteadyState::always_meets(self.method(), self.conservative())),
            ChainBuild::Chain(chain) => self.solve(chain),
        }
    }
}

/// Largest divisor of `q` not exceeding `target` (at least 1).
pub fn largest_divisor_at_most(q: u64, target: u64) -> u64 {
    let target = target.clamp(1, q.max(1));
    (1..=target).rev().find(|d| q.is_multiple_of(*d)).unwrap_or(1)
}

/// Solvers selectable by name.
#[derive(Clone, Default)]
pub struct SolverRegistry {
    solvers: BTreeMap<&'static str, Arc<dyn SteadyStateSolver>>,
}

impl SolverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `analytic`, `companion`, `cyclic-reduction` and `fixed-point`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(AnalyticBound));
        r.register(Arc::new(CompanionSolver));
        r.register(Arc::new(MatrixGeometric::cyclic_reduction()));
        r.register(Arc::new(MatrixGeometric::fixed_point()));
        r
    }

    pub fn register(&mut self, solver: Arc<dyn SteadyStateSolver>) {
        self.solvers.insert(solver.name(), solver);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SteadyStateSolver>, SolveError> {
        self.solvers
            .get(name)
            .cloned()
            .ok_or_else(|| SolveError::UnknownSolver(name.to_string(), self.names().join(", ")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.solvers.keys().copied().collect()
    }
}

/// Result of the resample → build → solve pipeline for one reservation.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub params: ReservationParams,
    pub build: Option<ChainBuild>,
    pub state: SteadyState,
}

impl Analysis {
    pub fn deadline_probability(&self, d: u64) -> Result<f64, SolveError> {
        deadline_probability(&self.state, &self.params, d)
    }
}

/// Resamples `pmf` to `params.delta`, builds the chain and solves it. A
/// divergent reservation yields the all-zero steady state.
pub fn analyze(pmf: &Pmf, params: &ReservationParams, solver: &dyn SteadyStateSolver) -> Result<Analysis, SolveError> {
    let resampled = pmf.resample(params.delta)?;
    match build_chain(&resampled, params) {
        Ok(build) => {
            let state = solver.solve_build(&build)?;
            Ok(Analysis {
                params: *params,
                build: Some(build),
                state,
            })
        }
        Err(ModelError::Divergent) => Ok(Analysis {
            params: *params,
            build: None,
            state: SteadyState::zero(solver.method(), solver.conservative()),
        }),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geometric() -> Chain {
        Chain::from_coefficients(vec![0.75, 0.0, 0.25], 1).unwrap()
    }

    #[test]
    fn registry_lookup() {
        let r = SolverRegistry::with_builtins();
        assert_eq!(r.names(), vec!["analytic", "companion", "cyclic-reduction", "fixed-point"]);
        assert_eq!(r.get("companion").unwrap().method(), Method::Companion);
        assert!(r.get("analytic").unwrap().conservative());
        assert!(matches!(r.get("newton"), Err(SolveError::UnknownSolver(..))));
    }

    #[test]
    fn delta_policies() {
        let r = SolverRegistry::with_builtins();
        assert_eq!(r.get("analytic").unwrap().default_delta(22_500), 11_250);
        assert_eq!(r.get("companion").unwrap().default_delta(22_500), 50);
        assert_eq!(r.get("cyclic-reduction").unwrap().default_delta(48), 48);
        assert_eq!(largest_divisor_at_most(35, 17), 7);
        assert_eq!(largest_divisor_at_most(1, 50), 1);
    }

    #[test]
    fn geometric_tail_and_deadlines() {
        let r = SolverRegistry::with_builtins();
        for name in r.names() {
            let s = r.get(name).unwrap().solve(&geometric()).unwrap();
            let tol = if s.method == Method::MatrixGeometric { 1e-9 } else { 1e-12 };
            assert_abs_diff_eq!(s.pi0, 2.0 / 3.0, epsilon = tol);
            let t = s.tail(3).unwrap();
            for (x, y) in t.iter().zip([2.0 / 9.0, 2.0 / 27.0, 2.0 / 81.0]) {
                assert_abs_diff_eq!(*x, y, epsilon = tol);
            }
            let total: f64 = s.head(201).unwrap().iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);

            let params = geometric().params().to_owned();
            let n = params.n();
            let ts = params.server_period;
            assert_abs_diff_eq!(deadline_probability(&s, &params, n * ts).unwrap(), s.pi0);
            assert_abs_diff_eq!(
                deadline_probability(&s, &params, (n + 2) * ts).unwrap(),
                26.0 / 27.0,
                epsilon = tol
            );
            assert!(deadline_probability(&s, &params, (n + 200) * ts).unwrap() > 1.0 - 1e-9);
            assert!(matches!(
                deadline_probability(&s, &params, 0),
                Err(SolveError::DeadlineResolution(_))
            ));
        }
    }

    #[test]
    fn deadline_needs_server_period_multiple() {
        let s = SteadyState::always_meets(Method::Companion, false);
        let params = ReservationParams::new(100, 50, 20, 10).unwrap();
        assert!(deadline_probability(&s, &params, 125).is_err());
        assert!(deadline_probability(&s, &params, 50).is_err());
        assert_eq!(deadline_probability(&s, &params, 100).unwrap(), 1.0);
    }

    #[test]
    fn transient_state_is_zero() {
        let s = SteadyState::zero(Method::Companion, false);
        assert_eq!(s.head(5).unwrap(), vec![0.0; 5]);
        assert_eq!(s.tail(3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn pipeline_handles_degenerate_cases() {
        let solver = CompanionSolver;
        let params = ReservationParams::new(100, 50, 20, 10).unwrap();
        let always = analyze(&Pmf::point(35), &params, &solver).unwrap();
        assert_eq!(always.state.pi0, 1.0);
        let divergent = analyze(&Pmf::point(45), &params, &solver).unwrap();
        assert_eq!(divergent.state.classification, Classification::TransientOrNull);
        assert_eq!(divergent.state.pi0, 0.0);
    }
}
