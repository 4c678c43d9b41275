//! Two synthetic tasks sharing 95% of the CPU: optimal budgets by each solver.
//!
//! `cargo run --release --example two_tasks [solver...]`

use cbsprob::{optimize, Pmf, QualityModel, SolverRegistry, TaskSpec};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tasks = [
        TaskSpec::new(
            "light",
            100_000,
            50_000,
            Pmf::from_beta(2.0, 7.0, 99_500, 1)?,
            QualityModel { intercept: 40.0, slope: 8.9 },
        ),
        TaskSpec::new(
            "heavy",
            100_000,
            50_000,
            Pmf::from_beta(2.0, 4.0, 99_500, 1)?,
            QualityModel { intercept: 42.0, slope: 42.051 },
        ),
    ];
    let registry = SolverRegistry::with_builtins();
    let mut names: Vec<String> = std::env::args().skip(1).collect();
    if names.is_empty() {
        names = vec!["analytic".into(), "cyclic-reduction".into()];
    }
    for name in names {
        let solver = registry.get(&name)?;
        let start = Instant::now();
        let a = optimize(&tasks, 0.95, solver.as_ref(), 1000)?;
        println!("{name}: objective {:.4} in {:.2?} ({} solves)", a.objective_value, start.elapsed(), a.solver_evaluations);
        for t in &a.tasks {
            println!("  {:>6} Q={:>6} µs  B={:.3}  p={:.5}  f={:.4}", t.name, t.budget, t.bandwidth, t.p_meet, t.quality);
        }
    }
    Ok(())
}
