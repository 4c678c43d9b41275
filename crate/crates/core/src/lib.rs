//! Probabilistic deadline guarantees for periodic tasks served by a
//! constant-bandwidth-server reservation.
//!
//! The pipeline is: an execution-time [`Pmf`] is resampled onto a Δ grid,
//! turned into the backlog [`Chain`] for a reservation
//! ([`ReservationParams`]), and solved for its steady state by one of the
//! methods in [`solvers`]. The steady-state mass of state 0 is the
//! probability that a job finishes within its period; further states answer
//! longer deadlines. [`simulator`] provides an independent Monte Carlo check
//! and [`optimizer`] allocates budgets across several tasks.

pub mod distributions;
pub mod model;
pub mod optimizer;
pub mod simulator;
pub mod solvers;

pub use distributions::{
    dominates, format_pmf, parse_pmf, parse_trace, read_pmf, read_trace, resample, write_pmf, DistributionError, Pmf,
};
pub use model::{build_chain, Chain, ChainBuild, Classification, ModelError, QbdpBlocks, ReservationParams};
pub use optimizer::{
    evaluate_task, min_budget, optimize, Allocation, DeltaPolicy, OptimizeError, QualityModel, TaskAllocation, TaskSpec,
};
pub use simulator::{simulate, SimulationError, SimulationResult};
pub use solvers::{
    analyze, deadline_probability, Analysis, Method, SolveError, SolverRegistry, SteadyState, SteadyStateSolver,
};
