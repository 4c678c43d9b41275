//! Closed-form lower bound through the lumped `H = 1` chain.

use super::{largest_divisor_at_most, Method, SolveError, SteadyState, SteadyStateSolver};
use crate::Chain;

/// `1 − Σ_{j≥2} (j−1)·a'_j / a'_0` on the lumped chain, before clamping.
/// Nonpositive exactly when the lumped chain has no equilibrium.
pub fn unclamped_bound(chain: &Chain) -> f64 {
    let lumped = chain.lump();
    let a = lumped.a();
    let excess: f64 = a.iter().enumerate().skip(2).map(|(j, x)| (j - 1) as f64 * x).sum();
    1.0 - excess / a[0]
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticBound;

impl SteadyStateSolver for AnalyticBound {
    fn name(&self) -> &'static str {
        "analytic"
    }

    fn method(&self) -> Method {
        Method::Analytic
    }

    fn conservative(&self) -> bool {
        true
    }

    // More budget shortens the recovery step but also coarsens Δ = Q/2, so
    // the bound can dip as the budget grows.
    fn monotone_in_budget(&self) -> bool {
        false
    }

    fn default_delta(&self, budget: u64) -> u64 {
        largest_divisor_at_most(budget, budget / 2)
    }

    fn solve(&self, chain: &Chain) -> Result<SteadyState, SolveError> {
        let pi0 = unclamped_bound(chain);
        if pi0 <= 0.0 {
            return Ok(SteadyState::zero(Method::Analytic, true));
        }
        Ok(SteadyState::from_boundary(&chain.lump(), vec![pi0], Method::Analytic, true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Classification;
    use approx::assert_abs_diff_eq;

    #[test]
    fn geometric_bound() {
        let c = Chain::from_coefficients(vec![0.75, 0.0, 0.25], 1).unwrap();
        let s = AnalyticBound.solve(&c).unwrap();
        assert_abs_diff_eq!(s.pi0, 2.0 / 3.0, epsilon = 1e-15);
        assert!(s.conservative);
    }

    #[test]
    fn lumped_h2_bound() {
        // Lumped coefficients [0.7, 0, 0, 0.3]: 1 − 2·0.3/0.7.
        let c = Chain::from_coefficients(vec![0.5, 0.2, 0.0, 0.0, 0.3], 2).unwrap();
        assert_abs_diff_eq!(unclamped_bound(&c), 1.0 - 0.6 / 0.7, epsilon = 1e-15);
    }

    #[test]
    fn clamps_divergent_chains() {
        let c = Chain::from_coefficients(vec![0.25, 0.0, 0.75], 1).unwrap();
        assert!(unclamped_bound(&c) <= 0.0);
        let s = AnalyticBound.solve(&c).unwrap();
        assert_eq!(s.pi0, 0.0);
        assert_eq!(s.classification, Classification::TransientOrNull);
    }
}
