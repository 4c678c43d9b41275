//! Deadline probability of a beta(2, 7) task (T = 100 ms, T_s = 50 ms) for a
//! range of bandwidths, with every solver.
//!
//! `cargo run --release -p cbsprob --example bandwidth_sweep [solver...]`

use cbsprob::{analyze, Pmf, ReservationParams, SolverRegistry};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pmf = Pmf::from_beta(2.0, 7.0, 99_500, 1)?;
    let registry = SolverRegistry::with_builtins();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let names: Vec<&str> = if args.is_empty() {
        vec!["analytic", "cyclic-reduction", "companion"]
    } else {
        args.iter().map(String::as_str).collect()
    };
    for name in names {
        let solver = registry.get(name)?;
        for pct in [35u64, 40, 45, 50, 60] {
            let budget = 50_000 * pct / 100;
            let params = ReservationParams::new(100_000, 50_000, budget, solver.default_delta(budget))?;
            let start = Instant::now();
            let a = analyze(&pmf, &params, solver.as_ref())?;
            println!(
                "{name:>16} B={pct}% Δ={:>5} π0={:.6} ({:.2?})",
                params.delta,
                a.state.pi0,
                start.elapsed()
            );
        }
    }
    Ok(())
}
