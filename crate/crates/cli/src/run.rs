//! Executes a validated configuration and assembles its report.

use crate::config::{ConfigError, Mode, RunConfig, TaskConfig};
use crate::report;
use cbsprob::model::ChainDump;
use cbsprob::{
    analyze, build_chain, evaluate_task, optimize, simulate, Allocation, ChainBuild, Classification, DeltaPolicy,
    Method, ModelError, ReservationParams, SimulationResult, SolverRegistry,
};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 3,
            RunError::Numerical(_) | RunError::Output(_) => 4,
        }
    }
}

/// Everything a run produces; the caller decides where each part goes.
#[derive(Debug)]
pub struct Outcome {
    pub json: String,
    pub text: String,
    /// Sweep rows (analyze), delay histogram (simulate) or the allocation
    /// table (optimize).
    pub csv: String,
    pub chain_dumps: Option<String>,
    /// Optimization found no allocation meeting the floors.
    pub infeasible: bool,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    mode: Mode,
    config: &'a RunConfig,
    results: T,
}

fn render<T: Serialize>(config: &RunConfig, results: T) -> Result<String, RunError> {
    let report = Report {
        tool: "cbsprob",
        version: env!("CARGO_PKG_VERSION"),
        mode: config.mode,
        config,
        results,
    };
    serde_json::to_string_pretty(&report)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| RunError::Output(e.to_string()))
}

fn csv_or_err(headers: &[&str], rows: &[Vec<String>]) -> Result<String, RunError> {
    report::csv(headers, rows).map_err(|e| RunError::Output(e.to_string()))
}

pub fn run(config: &RunConfig, dump_chains: bool) -> Result<Outcome, RunError> {
    match config.mode {
        Mode::Analyze => run_analyze(config, dump_chains),
        Mode::Simulate => run_simulate(config),
        Mode::Optimize => run_optimize(config),
    }
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeRow {
    pub task: String,
    pub budget: u64,
    pub bandwidth: f64,
    pub delta: u64,
    pub solver: String,
    pub method: Method,
    pub classification: Classification,
    pub pi0: f64,
    pub boundary: Vec<f64>,
    pub deadline: u64,
    pub deadline_prob_requested: f64,
    pub runtime_us: u64,
    pub conservative: bool,
}

struct Point<'a> {
    task: &'a TaskConfig,
    budget: u64,
    delta: DeltaPolicy,
    solver: &'a str,
}

#[derive(Serialize)]
struct DumpEntry<'a> {
    task: &'a str,
    budget: u64,
    delta: u64,
    outcome: &'static str,
    chain: Option<ChainDump>,
}

fn run_analyze(config: &RunConfig, dump_chains: bool) -> Result<Outcome, RunError> {
    let registry = SolverRegistry::with_builtins();
    let mut points = Vec::new();
    for task in &config.tasks {
        for &budget in &task.budgets {
            for &delta in &task.deltas {
                for solver in &config.solvers {
                    points.push(Point {
                        task,
                        budget,
                        delta,
                        solver,
                    });
                }
            }
        }
    }
    let rows: Vec<AnalyzeRow> = points
        .par_iter()
        .map(|p| {
            let solver = registry.get(p.solver).map_err(|e| RunError::Numerical(e.to_string()))?;
            let delta = p.delta.resolve(solver.as_ref(), p.budget);
            let context = |e: &dyn std::fmt::Display| {
                RunError::Numerical(format!(
                    "task '{}', budget {} µs, Δ {delta} µs, solver {}: {e}",
                    p.task.name, p.budget, p.solver
                ))
            };
            let params =
                ReservationParams::new(p.task.period, p.task.server_period, p.budget, delta).map_err(|e| context(&e))?;
            let start = Instant::now();
            let analysis = analyze(&p.task.distribution, &params, solver.as_ref()).map_err(|e| context(&e))?;
            let requested = analysis.deadline_probability(p.task.deadline).map_err(|e| context(&e))?;
            let runtime_us = start.elapsed().as_micros() as u64;
            let state = analysis.state;
            Ok(AnalyzeRow {
                task: p.task.name.clone(),
                budget: p.budget,
                bandwidth: params.bandwidth(),
                delta,
                solver: p.solver.to_string(),
                method: state.method,
                classification: state.classification,
                pi0: state.pi0,
                boundary: state.boundary,
                deadline: p.task.deadline,
                deadline_prob_requested: requested,
                runtime_us,
                conservative: state.conservative,
            })
        })
        .collect::<Result<_, RunError>>()?;

    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.budget.to_string(),
                format!("{:.4}", r.bandwidth),
                r.delta.to_string(),
                r.solver.clone(),
                format!("{:.6}", r.pi0),
                r.deadline.to_string(),
                format!("{:.6}", r.deadline_prob_requested),
                r.runtime_us.to_string(),
            ]
        })
        .collect();
    let headers = [
        "task", "budget_us", "bandwidth", "delta_us", "solver", "pi0", "deadline_us", "p_deadline", "runtime_us",
    ];
    let chain_dumps = if dump_chains { Some(dump(config)?) } else { None };
    Ok(Outcome {
        json: render(config, &rows)?,
        text: report::table(&headers, &cells),
        csv: csv_or_err(&headers, &cells)?,
        chain_dumps,
        infeasible: false,
    })
}

/// The chain of every (task, budget, Δ) point, for the first solver's Δ.
fn dump(config: &RunConfig) -> Result<String, RunError> {
    let registry = SolverRegistry::with_builtins();
    let solver = registry.get(&config.solvers[0]).map_err(|e| RunError::Numerical(e.to_string()))?;
    let mut entries = Vec::new();
    for task in &config.tasks {
        for &budget in &task.budgets {
            for policy in &task.deltas {
                let delta = policy.resolve(solver.as_ref(), budget);
                let fail = |e: &dyn std::fmt::Display| RunError::Numerical(format!("task '{}': {e}", task.name));
                let params = ReservationParams::new(task.period, task.server_period, budget, delta).map_err(|e| fail(&e))?;
                let resampled = task.distribution.resample(delta).map_err(|e| fail(&e))?;
                let (outcome, chain) = match build_chain(&resampled, &params) {
                    Ok(ChainBuild::Chain(c)) => ("chain", Some(c.dump())),
                    Ok(ChainBuild::AlwaysMeets) => ("always-meets", None),
                    Err(ModelError::Divergent) => ("divergent", None),
                    Err(e) => return Err(fail(&e)),
                };
                entries.push(DumpEntry {
                    task: &task.name,
                    budget,
                    delta,
                    outcome,
                    chain,
                });
            }
        }
    }
    serde_json::to_string_pretty(&entries)
        .map(|s| s + "\n")
        .map_err(|e| RunError::Output(e.to_string()))
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, Serialize)]
pub struct SimulateRow {
    pub task: String,
    pub budget: u64,
    pub bandwidth: f64,
    pub result: SimulationResult,
}

fn run_simulate(config: &RunConfig) -> Result<Outcome, RunError> {
    let points: Vec<(&TaskConfig, u64)> = config
        .tasks
        .iter()
        .flat_map(|t| t.budgets.iter().map(move |&q| (t, q)))
        .collect();
    let rows: Vec<(SimulateRow, u128)> = points
        .par_iter()
        .map(|&(task, budget)| {
            let fail = |e: &dyn std::fmt::Display| {
                RunError::Numerical(format!("task '{}', budget {budget} µs: {e}", task.name))
            };
            let params = ReservationParams::new(task.period, task.server_period, budget, 1).map_err(|e| fail(&e))?;
            let start = Instant::now();
            let result = simulate(&task.distribution, &params, config.jobs, config.warmup, config.seed)
                .map_err(|e| fail(&e))?;
            let row = SimulateRow {
                task: task.name.clone(),
                budget,
                bandwidth: params.bandwidth(),
                result,
            };
            Ok((row, start.elapsed().as_micros()))
        })
        .collect::<Result<_, RunError>>()?;

    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(r, us)| {
            vec![
                r.task.clone(),
                r.budget.to_string(),
                format!("{:.4}", r.bandwidth),
                format!("{:.6}", r.result.p_meet_hat),
                format!("{:.6}", r.result.ci99_halfwidth),
                r.result.jobs_simulated.to_string(),
                us.to_string(),
            ]
        })
        .collect();
    let text = report::table(
        &["task", "budget_us", "bandwidth", "p_meet_hat", "ci99", "jobs", "runtime_us"],
        &cells,
    );

    // One run: the plain histogram; several: prefixed by task and budget.
    let single = rows.len() == 1;
    let mut hist = Vec::new();
    for (r, _) in &rows {
        for (periods, count) in &r.result.delay_histogram {
            let mut row = if single {
                Vec::new()
            } else {
                vec![r.task.clone(), r.budget.to_string()]
            };
            row.extend([periods.to_string(), count.to_string()]);
            hist.push(row);
        }
    }
    let headers: &[&str] = if single {
        &["delay_in_server_periods", "count"]
    } else {
        &["task", "budget_us", "delay_in_server_periods", "count"]
    };
    let results: Vec<&SimulateRow> = rows.iter().map(|(r, _)| r).collect();
    Ok(Outcome {
        json: render(config, &results)?,
        text,
        csv: csv_or_err(headers, &hist)?,
        chain_dumps: None,
        infeasible: false,
    })
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeRow {
    pub task: String,
    pub budget: u64,
    pub estimated_probability: f64,
    /// Re-evaluated with the exact solver at its own Δ.
    pub exact_probability: Option<f64>,
    pub quality: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeResults {
    pub allocation: Allocation,
    pub exact_solver: Option<String>,
    pub table: Vec<OptimizeRow>,
    pub runtime_us: u64,
}

fn run_optimize(config: &RunConfig) -> Result<Outcome, RunError> {
    let registry = SolverRegistry::with_builtins();
    let solver = registry
        .get(&config.solvers[0])
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    let specs: Vec<_> = config.tasks.iter().map(TaskConfig::spec).collect();
    let start = Instant::now();
    let allocation = optimize(&specs, config.bandwidth_limit, solver.as_ref(), config.resolution)
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    let runtime_us = start.elapsed().as_micros() as u64;

    let exact: Vec<Option<f64>> = match (&config.exact_solver, allocation.feasible) {
        (Some(name), true) => {
            let exact = registry.get(name).map_err(|e| RunError::Numerical(e.to_string()))?;
            specs
                .par_iter()
                .zip(&allocation.tasks)
                .map(|(spec, t)| {
                    let mut spec = spec.clone();
                    spec.delta = DeltaPolicy::SolverDefault;
                    evaluate_task(&spec, t.budget, exact.as_ref())
                        .map(|e| Some(e.p_meet))
                        .map_err(|e| RunError::Numerical(e.to_string()))
                })
                .collect::<Result<_, _>>()?
        }
        _ => vec![None; specs.len()],
    };
    let table: Vec<OptimizeRow> = allocation
        .tasks
        .iter()
        .zip(exact)
        .map(|(t, exact_probability)| OptimizeRow {
            task: t.name.clone(),
            budget: t.budget,
            estimated_probability: t.p_meet,
            exact_probability,
            quality: t.quality,
        })
        .collect();

    let cells: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.budget.to_string(),
                format!("{:.4}", r.estimated_probability),
                r.exact_probability.map_or("-".into(), |p| format!("{p:.4}")),
                format!("{:.3}", r.quality),
            ]
        })
        .collect();
    let headers = ["task", "budget_us", "estimated_prob", "exact_prob", "quality"];
    let mut text = report::table(&headers, &cells);
    if allocation.feasible {
        text.push_str(&format!(
            "\nobjective {:.4}  total bandwidth {:.4} / {}  solver {}  ({} solves, {runtime_us} µs)\n",
            allocation.objective_value,
            allocation.total_bandwidth,
            allocation.bandwidth_limit,
            allocation.solver,
            allocation.solver_evaluations,
        ));
    } else {
        text.push_str(&format!(
            "\ninfeasible: {}\n",
            allocation.binding.as_deref().unwrap_or("unknown constraint")
        ));
    }
    let infeasible = !allocation.feasible;
    let results = OptimizeResults {
        allocation,
        exact_solver: config.exact_solver.clone(),
        table,
        runtime_us,
    };
    Ok(Outcome {
        json: render(config, &results)?,
        text,
        csv: csv_or_err(&headers, &cells)?,
        chain_dumps: None,
        infeasible,
    })
}
