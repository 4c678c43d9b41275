//! Budget allocation across tasks that maximizes the smallest per-task
//! quality under a total-bandwidth limit.
//!
//! Quality is affine in the miss probability, `f = intercept − slope·(1 − p)`.
//! For a common quality level `L` every task needs a minimal probability and
//! therefore a minimal budget; `L` is feasible when those budgets fit in the
//! bandwidth limit, and the optimizer bisects on `L`.

use crate::distributions::Pmf;
use crate::model::{ModelError, ReservationParams};
use crate::solvers::{analyze, largest_divisor_at_most, SolveError, SteadyStateSolver};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Mutex;
use thiserror::Error;

/// Bisection stops once the feasible and infeasible levels are this close.
pub const QUALITY_STEP: f64 = 1e-3;
const MAX_BISECTIONS: usize = 40;
const BANDWIDTH_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub intercept: f64,
    /// Quality lost per unit of miss probability.
    pub slope: f64,
}

impl QualityModel {
    pub fn quality(&self, p_meet: f64) -> f64 {
        self.intercept - self.slope * (1.0 - p_meet)
    }

    /// Smallest meet probability giving quality `level`; `None` if even
    /// `p = 1` falls short.
    pub fn required_probability(&self, level: f64) -> Option<f64> {
        if level <= self.intercept - self.slope {
            return Some(0.0);
        }
        if level > self.intercept {
            return None;
        }
        Some((1.0 - (self.intercept - level) / self.slope).clamp(0.0, 1.0))
    }
}

/// How Δ is chosen for a candidate budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaPolicy {
    /// The solver's own default (`Q/2` for the analytic bound, 50 µs for
    /// the numeric solvers).
    #[default]
    SolverDefault,
    /// A fixed step in µs, lowered to a divisor of the budget when needed.
    Fixed(u64),
    /// `Q/k`, lowered to a divisor of the budget when needed.
    Fraction(u64),
}

impl DeltaPolicy {
    pub fn resolve(&self, solver: &dyn SteadyStateSolver, budget: u64) -> u64 {
        match *self {
            DeltaPolicy::SolverDefault => solver.default_delta(budget),
            DeltaPolicy::Fixed(d) => largest_divisor_at_most(budget, d),
            DeltaPolicy::Fraction(k) => largest_divisor_at_most(budget, budget / k.max(1)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub period: u64,
    pub deadline: u64,
    pub server_period: u64,
    pub pmf: Pmf,
    pub delta: DeltaPolicy,
    pub quality: QualityModel,
    pub floor: Option<f64>,
}

impl TaskSpec {
    /// A task with deadline equal to its period, the solver's Δ and no floor.
    pub fn new(name: impl Into<String>, period: u64, server_period: u64, pmf: Pmf, quality: QualityModel) -> Self {
        TaskSpec {
            name: name.into(),
            period,
            deadline: period,
            server_period,
            pmf,
            delta: DeltaPolicy::SolverDefault,
            quality,
            floor: None,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let invalid = |reason: String| OptimizeError::InvalidTask {
            task: self.name.clone(),
            reason,
        };
        if self.period == 0 || self.server_period == 0 || !self.period.is_multiple_of(self.server_period) {
            return Err(invalid(
                ModelError::ServerPeriodNotDivisor {
                    period: self.period,
                    server_period: self.server_period,
                }
                .to_string(),
            ));
        }
        if !self.deadline.is_multiple_of(self.server_period) || self.deadline < self.period {
            return Err(invalid(format!(
                "deadline {} must be a multiple of server_period {} and at least the period {}",
                self.deadline, self.server_period, self.period
            )));
        }
        if self.quality.slope < 0.0 || !self.quality.intercept.is_finite() || !self.quality.slope.is_finite() {
            return Err(invalid("quality slope must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn level_floor(&self, level: f64) -> f64 {
        self.floor.map_or(level, |f| level.max(f))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("task '{task}': {reason}")]
    InvalidTask { task: String, reason: String },
    #[error("budget resolution {resolution} µs must divide server_period {server_period} µs of task '{task}'")]
    Resolution {
        task: String,
        resolution: u64,
        server_period: u64,
    },
    #[error("no tasks to allocate")]
    NoTasks,
    #[error("task '{task}' at budget {budget} µs: {source}")]
    Solve {
        task: String,
        budget: u64,
        #[source]
        source: SolveError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub budget: u64,
    pub delta: u64,
    pub p_meet: f64,
    pub quality: f64,
}

/// Probability of meeting the task's deadline with budget `budget`.
pub fn evaluate_task(task: &TaskSpec, budget: u64, solver: &dyn SteadyStateSolver) -> Result<Evaluation, OptimizeError> {
    let wrap = |source: SolveError| OptimizeError::Solve {
        task: task.name.clone(),
        budget,
        source,
    };
    let delta = task.delta.resolve(solver, budget);
    let params = ReservationParams::new(task.period, task.server_period, budget, delta)
        .map_err(|e| wrap(e.into()))?;
    let p_meet = analyze(&task.pmf, &params, solver)
        .and_then(|a| a.deadline_probability(task.deadline))
        .map_err(wrap)?;
    Ok(Evaluation {
        budget,
        delta,
        p_meet,
        quality: task.quality.quality(p_meet),
    })
}

/// Meet probability as a function of the budget on the grid
/// `resolution, 2·resolution, …, server_period`, made nondecreasing.
///
/// For solvers whose output is monotone in the budget the curve is evaluated
/// lazily, only where a search looks; otherwise every grid point is solved
/// up front and replaced by the running maximum. The running maximum is
/// still a valid lower bound: the exact probability never decreases when the
/// budget grows.
pub struct BudgetCurve<'a> {
    task: &'a TaskSpec,
    solver: &'a dyn SteadyStateSolver,
    resolution: u64,
    points: usize,
    envelope: Option<Vec<f64>>,
    cache: Mutex<BTreeMap<usize, f64>>,
}

impl<'a> BudgetCurve<'a> {
    pub fn new(task: &'a TaskSpec, solver: &'a dyn SteadyStateSolver, resolution: u64) -> Result<Self, OptimizeError> {
        task.validate()?;
        if resolution == 0 || !task.server_period.is_multiple_of(resolution) {
            return Err(OptimizeError::Resolution {
                task: task.name.clone(),
                resolution,
                server_period: task.server_period,
            });
        }
        let points = (task.server_period / resolution) as usize;
        let mut curve = BudgetCurve {
            task,
            solver,
            resolution,
            points,
            envelope: None,
            cache: Mutex::new(BTreeMap::new()),
        };
        if !solver.monotone_in_budget() {
            let raw: Vec<f64> = (1..=points)
                .into_par_iter()
                .map(|k| evaluate_task(task, k as u64 * resolution, solver).map(|e| e.p_meet))
                .collect::<Result<_, _>>()?;
            let mut best = 0.0_f64;
            curve.envelope = Some(
                raw.into_iter()
                    .map(|p| {
                        best = best.max(p);
                        best
                    })
                    .collect(),
            );
        }
        Ok(curve)
    }

    /// Number of grid budgets.
    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn budget(&self, k: usize) -> u64 {
        k as u64 * self.resolution
    }

    /// Solver invocations so far.
    pub fn evaluations(&self) -> usize {
        match &self.envelope {
            Some(e) => e.len(),
            None => self.cache.lock().expect("curve cache poisoned").len(),
        }
    }

    /// Envelope probability at grid budget `k ∈ 1..=len()`.
    pub fn probability(&self, k: usize) -> Result<f64, OptimizeError> {
        debug_assert!((1..=self.points).contains(&k));
        if let Some(env) = &self.envelope {
            return Ok(env[k - 1]);
        }
        if let Some(&p) = self.cache.lock().expect("curve cache poisoned").get(&k) {
            return Ok(p);
        }
        let p = evaluate_task(self.task, self.budget(k), self.solver)?.p_meet;
        self.cache.lock().expect("curve cache poisoned").insert(k, p);
        Ok(p)
    }

    /// Smallest grid index whose probability reaches `target`.
    pub fn min_index(&self, target: f64) -> Result<Option<usize>, OptimizeError> {
        if target <= 0.0 {
            return Ok(Some(1));
        }
        if self.probability(self.points)? < target {
            return Ok(None);
        }
        // Invariant: index `hi` reaches the target, `lo` does not (0 is a
        // virtual budget that never does).
        let (mut lo, mut hi) = (0, self.points);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.probability(mid)? >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(hi))
    }
}

/// Smallest budget on the `resolution` grid whose (envelope) probability
/// reaches `target_p`, or `None` if even the full server period falls short.
pub fn min_budget(
    task: &TaskSpec,
    target_p: f64,
    solver: &dyn SteadyStateSolver,
    resolution: u64,
) -> Result<Option<u64>, OptimizeError> {
    let curve = BudgetCurve::new(task, solver, resolution)?;
    Ok(curve.min_index(target_p)?.map(|k| curve.budget(k)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskAllocation {
    pub name: String,
    pub budget: u64,
    pub server_period: u64,
    pub bandwidth: f64,
    pub delta: u64,
    pub p_meet: f64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub solver: String,
    pub tasks: Vec<TaskAllocation>,
    pub total_bandwidth: f64,
    pub bandwidth_limit: f64,
    /// Smallest task quality.
    pub objective_value: f64,
    pub feasible: bool,
    /// The constraint that cannot be met when `feasible` is false.
    pub binding: Option<String>,
    pub solver_evaluations: usize,
}

struct Problem<'a> {
    tasks: &'a [TaskSpec],
    curves: Vec<BudgetCurve<'a>>,
    bandwidth_limit: f64,
}

impl Problem<'_> {
    /// Minimal grid indices for quality level `level` (floors applied);
    /// `None` for a task that cannot reach it.
    fn indices(&self, level: f64) -> Result<Vec<Option<usize>>, OptimizeError> {
        self.tasks
            .par_iter()
            .zip(&self.curves)
            .map(|(task, curve)| match task.quality.required_probability(task.level_floor(level)) {
                Some(p) => curve.min_index(p),
                None => Ok(None),
            })
            .collect()
    }

    fn bandwidth(&self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .zip(self.tasks)
            .zip(&self.curves)
            .map(|((&k, t), c)| c.budget(k) as f64 / t.server_period as f64)
            .sum()
    }

    fn fits(&self, indices: &[Option<usize>]) -> Option<Vec<usize>> {
        let ks: Option<Vec<usize>> = indices.iter().copied().collect();
        ks.filter(|ks| self.bandwidth(ks) <= self.bandwidth_limit + BANDWIDTH_SLACK)
    }

    /// Spends leftover bandwidth, steepest slope first (ties by task order),
    /// on the cheapest budget reaching the best affordable probability.
    fn distribute_leftover(&self, ks: &mut [usize]) -> Result<(), OptimizeError> {
        let mut order: Vec<usize> = (0..self.tasks.len()).collect();
        order.sort_by(|&i, &j| self.tasks[j].quality.slope.total_cmp(&self.tasks[i].quality.slope));
        for i in order {
            let task = &self.tasks[i];
            let curve = &self.curves[i];
            let spare = self.bandwidth_limit + BANDWIDTH_SLACK - self.bandwidth(ks);
            let extra_budget = (spare * task.server_period as f64).max(0.0);
            let extra = (extra_budget / curve.resolution as f64 + 1e-9).floor() as usize;
            let reach = (ks[i] + extra).min(curve.len());
            if reach > ks[i] {
                let best = curve.probability(reach)?;
                if best > curve.probability(ks[i])? {
                    ks[i] = curve.min_index(best)?.unwrap_or(reach);
                }
            }
        }
        Ok(())
    }

    fn allocation(&self, ks: &[usize], solver: &str, binding: Option<String>) -> Result<Allocation, OptimizeError> {
        let mut tasks = Vec::with_capacity(ks.len());
        for ((&k, task), curve) in ks.iter().zip(self.tasks).zip(&self.curves) {
            let budget = curve.budget(k);
            let p_meet = curve.probability(k)?;
            tasks.push(TaskAllocation {
                name: task.name.clone(),
                budget,
                server_period: task.server_period,
                bandwidth: budget as f64 / task.server_period as f64,
                delta: task.delta.resolve(curve.solver, budget),
                p_meet,
                quality: task.quality.quality(p_meet),
            });
        }
        Ok(Allocation {
            solver: solver.to_string(),
            objective_value: tasks.iter().map(|t| t.quality).fold(f64::INFINITY, f64::min),
            total_bandwidth: tasks.iter().map(|t| t.bandwidth).sum(),
            bandwidth_limit: self.bandwidth_limit,
            feasible: binding.is_none(),
            binding,
            solver_evaluations: self.curves.iter().map(BudgetCurve::evaluations).sum(),
            tasks,
        })
    }
}

/// Maximizes `min_i f_i` over budgets on the `resolution` grid subject to
/// `Σ Q_i/T_s,i ≤ bandwidth_limit` and the per-task quality floors.
pub fn optimize(
    tasks: &[TaskSpec],
    bandwidth_limit: f64,
    solver: &dyn SteadyStateSolver,
    resolution: u64,
) -> Result<Allocation, OptimizeError> {
    if tasks.is_empty() {
        return Err(OptimizeError::NoTasks);
    }
    let curves = tasks
        .iter()
        .map(|t| BudgetCurve::new(t, solver, resolution))
        .collect::<Result<Vec<_>, _>>()?;
    let problem = Problem {
        tasks,
        curves,
        bandwidth_limit,
    };

    // Floors alone.
    let floor_indices = problem.indices(f64::NEG_INFINITY)?;
    let Some(mut ks) = problem.fits(&floor_indices) else {
        let binding = match floor_indices.iter().position(Option::is_none) {
            Some(i) => format!("quality floor of task '{}' is unreachable even at full budget", tasks[i].name),
            None => {
                let ks: Vec<usize> = floor_indices.iter().map(|k| k.unwrap_or(1)).collect();
                format!(
                    "total bandwidth: quality floors need {:.4} > {bandwidth_limit}",
                    problem.bandwidth(&ks)
                )
            }
        };
        let ks: Vec<usize> = floor_indices
            .iter()
            .zip(&problem.curves)
            .map(|(k, c)| k.unwrap_or(c.len()))
            .collect();
        return problem.allocation(&ks, solver.name(), Some(binding));
    };

    let mut lo = tasks
        .iter()
        .map(|t| {
            let bottom = t.quality.intercept - t.quality.slope;
            t.floor.map_or(bottom, |f| bottom.min(f))
        })
        .fold(f64::INFINITY, f64::min);
    let mut hi = tasks.iter().map(|t| t.quality.intercept).fold(f64::INFINITY, f64::min);
    if let Some(top) = problem.fits(&problem.indices(hi)?) {
        ks = top;
    } else {
        for _ in 0..MAX_BISECTIONS {
            if hi - lo <= QUALITY_STEP {
                break;
            }
            let mid = 0.5 * (lo + hi);
            match problem.fits(&problem.indices(mid)?) {
                Some(found) => {
                    lo = mid;
                    ks = found;
                }
                None => hi = mid,
            }
        }
    }
    problem.distribute_leftover(&mut ks)?;
    problem.allocation(&ks, solver.name(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{AnalyticBound, CompanionSolver, MatrixGeometric};
    use approx::assert_abs_diff_eq;

    fn geometric_task() -> TaskSpec {
        // Budget 2 with Δ = 1 gives a = [0.75, 0, 0.25].
        let pmf = Pmf::from_pairs(&[(1, 0.75), (3, 0.25)]).unwrap();
        let mut t = TaskSpec::new(
            "geo",
            4,
            4,
            pmf,
            QualityModel {
                intercept: 40.0,
                slope: 9.0,
            },
        );
        t.delta = DeltaPolicy::Fixed(1);
        t
    }

    #[test]
    fn geometric_quality() {
        let t = geometric_task();
        for solver in [&AnalyticBound as &dyn SteadyStateSolver, &CompanionSolver, &MatrixGeometric::default()] {
            let e = evaluate_task(&t, 2, solver).unwrap();
            assert_abs_diff_eq!(e.p_meet, 2.0 / 3.0, epsilon = 1e-9);
            assert_abs_diff_eq!(e.quality, 37.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn degenerate_budgets() {
        let mut t = geometric_task();
        let e = evaluate_task(&t, 3, &CompanionSolver).unwrap();
        assert_eq!((e.p_meet, e.quality), (1.0, 40.0));
        t.quality.slope = 0.0;
        assert_eq!(evaluate_task(&t, 1, &CompanionSolver).unwrap().quality, 40.0);
    }

    #[test]
    fn min_budget_limits() {
        let t = geometric_task();
        assert_eq!(min_budget(&t, 0.0, &CompanionSolver, 1).unwrap(), Some(1));
        assert_eq!(min_budget(&t, 1.0, &CompanionSolver, 1).unwrap(), Some(3));
        assert_eq!(min_budget(&t, 0.5, &CompanionSolver, 1).unwrap(), Some(2));
    }

    #[test]
    fn required_probability_inverts_quality() {
        let q = QualityModel {
            intercept: 40.0,
            slope: 8.0,
        };
        assert_eq!(q.required_probability(30.0), Some(0.0));
        assert_eq!(q.required_probability(41.0), None);
        assert_abs_diff_eq!(q.quality(q.required_probability(38.0).unwrap()), 38.0, epsilon = 1e-12);
        let flat = QualityModel {
            intercept: 5.0,
            slope: 0.0,
        };
        assert_eq!(flat.required_probability(5.0), Some(0.0));
        assert_eq!(flat.required_probability(5.1), None);
    }

    #[test]
    fn single_task_takes_what_helps() {
        let t = geometric_task();
        let a = optimize(std::slice::from_ref(&t), 1.0, &CompanionSolver, 1).unwrap();
        assert!(a.feasible);
        // Budget 3 already meets every deadline; the rest is not spent.
        assert_eq!(a.tasks[0].budget, 3);
        assert_eq!(a.objective_value, 40.0);
    }

    #[test]
    fn symmetric_tasks() {
        let mut b = geometric_task();
        b.name = "twin".into();
        let tasks = [geometric_task(), b];
        let a = optimize(&tasks, 0.9, &CompanionSolver, 1).unwrap();
        assert!(a.total_bandwidth <= 0.9 + 1e-12);
        let (x, y) = (a.tasks[0].budget, a.tasks[1].budget);
        assert!(x.abs_diff(y) <= 1, "{x} {y}");
    }

    #[test]
    fn unreachable_floor_is_named() {
        let mut t = geometric_task();
        t.floor = Some(41.0);
        let a = optimize(&[t], 1.0, &CompanionSolver, 1).unwrap();
        assert!(!a.feasible);
        assert!(a.binding.unwrap().contains("'geo'"));
    }

    #[test]
    fn bandwidth_shortfall_is_named() {
        let mut t = geometric_task();
        t.floor = Some(40.0);
        let a = optimize(&[t], 0.5, &CompanionSolver, 1).unwrap();
        assert!(!a.feasible);
        assert!(a.binding.unwrap().starts_with("total bandwidth"));
    }

    #[test]
    fn rejects_bad_resolution() {
        let t = geometric_task();
        assert!(matches!(
            min_budget(&t, 0.5, &CompanionSolver, 3),
            Err(OptimizeError::Resolution { .. })
        ));
    }
}
