//! Exact solution from the roots of the characteristic polynomial.
//!
//! `π(0)` is the product of `1 − β` over the roots strictly inside the unit
//! circle. The boundary `π(0..H)` is recovered independently from one linear
//! equation per root outside the circle plus the drift equation, and the two
//! values of `π(0)` must agree.

use super::{largest_divisor_at_most, Method, SolveError, SteadyState, SteadyStateSolver};
use crate::model::Classification;
use crate::Chain;
use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64;

const UNIT_CIRCLE_BAND: f64 = 1e-9;
const DISTINCT_ROOTS: f64 = 1e-9;
const IMAGINARY_RESIDUE: f64 = 1e-9;
const BOUNDARY_AGREEMENT: f64 = 1e-8;
const NUMERIC_DELTA_US: u64 = 50;

/// Descending coefficients of the degree-`n` characteristic polynomial
/// `λ^n − w·λ^{n−H} + Σ_{j≥1, j≠H} α_j·λ^{n−j}` with
/// `w = γ(H−1, 1) + Σ_{j>H} α_j`.
pub fn char_poly(chain: &Chain) -> Vec<f64> {
    let alpha = chain.alpha();
    let h = chain.h();
    let w = alpha[..h].iter().sum::<f64>() + alpha[h + 1..].iter().sum::<f64>();
    let mut c = alpha.to_vec();
    c[h] = -w;
    c
}

/// Synthetic division by `λ − 1`; returns the quotient and the remainder.
pub fn deflate_unit_root(coeffs: &[f64]) -> (Vec<f64>, f64) {
    let mut q = Vec::with_capacity(coeffs.len() - 1);
    let mut acc = 0.0;
    for &c in &coeffs[..coeffs.len() - 1] {
        acc += c;
        q.push(acc);
    }
    (q, acc + coeffs[coeffs.len() - 1])
}

/// The characteristic polynomial divided by `λ − 1`, computed without
/// cancellation: `q_k = Σ_{j≤k} α_j` for `k < H` and `q_k = −Σ_{j>k} α_j`
/// for `k ≥ H` (the two agree because `P(1) = 0`). Forward synthetic division
/// would instead produce the small trailing coefficients as differences of
/// large partial sums, and the stable roots would follow the rounding noise.
pub fn deflated_char_poly(chain: &Chain) -> Vec<f64> {
    let alpha = chain.alpha();
    let h = chain.h();
    let n = chain.n();
    let mut q = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..h {
        acc += alpha[k];
        q[k] = acc;
    }
    let mut acc = 0.0;
    for k in (h..n).rev() {
        acc += alpha[k + 1];
        q[k] = -acc;
    }
    q
}

/// Roots of the characteristic polynomial with the root at 1 removed.
#[derive(Debug, Clone)]
pub struct PolynomialRoots {
    pub roots: Vec<Complex64>,
    pub unit_root_removed: bool,
}

impl PolynomialRoots {
    /// Eigenvalues of the companion matrix of the deflated polynomial.
    ///
    /// The eigenvalues are used as computed. Roots inside the unit circle are
    /// individually ill-conditioned (only their symmetric functions, such as
    /// `Π (1 − β)`, are well determined), and Newton refinement on the
    /// polynomial was found to degrade rather than improve the agreement
    /// between the two independent evaluations of `π(0)`.
    pub fn of_chain(chain: &Chain) -> Result<Self, SolveError> {
        let q = deflated_char_poly(chain);
        let m = q.len() - 1;
        let lead = q[0];
        // Column form: the coefficients fill the last column.
        let companion = Mat::from_fn(m, m, |r, c| {
            if c == m - 1 {
                -q[m - r] / lead
            } else if r == c + 1 {
                1.0
            } else {
                0.0
            }
        });
        let roots = companion.eigenvalues().map_err(|_| SolveError::NotConverged {
            iterations: 0,
            residual: f64::NAN,
        })?;
        Ok(PolynomialRoots {
            roots,
            unit_root_removed: true,
        })
    }

    /// Fails if two roots are closer than the distinctness tolerance,
    /// measured relative to their magnitude.
    pub fn check_simple(&self) -> Result<(), SolveError> {
        for (i, a) in self.roots.iter().enumerate() {
            for b in &self.roots[i + 1..] {
                let scale = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
                if (a - b).norm() <= DISTINCT_ROOTS * scale {
                    return Err(SolveError::RepeatedRoots);
                }
            }
        }
        Ok(())
    }

    /// Splits into roots strictly inside and strictly outside the unit circle.
    pub fn partition(&self) -> Result<(Vec<Complex64>, Vec<Complex64>), SolveError> {
        let mut stable = Vec::new();
        let mut unstable = Vec::new();
        for &r in &self.roots {
            let modulus = r.norm();
            if modulus < 1.0 - UNIT_CIRCLE_BAND {
                stable.push(r);
            } else if modulus > 1.0 + UNIT_CIRCLE_BAND {
                unstable.push(r);
            } else {
                return Err(SolveError::RootOnUnitCircle { modulus });
            }
        }
        Ok((stable, unstable))
    }
}

/// `Π (1 − β)` over the `n − H` smallest-modulus roots, without the
/// recurrence or partition checks. For a positive-recurrent chain these are
/// exactly the stable roots; for a transient one the set picks up a root
/// outside the circle and the product falls outside `(0, 1]`.
pub fn stable_root_product(chain: &Chain) -> Result<f64, SolveError> {
    let mut roots = PolynomialRoots::of_chain(chain)?.roots;
    roots.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let product = roots
        .iter()
        .take(chain.n() - chain.h())
        .fold(Complex64::new(1.0, 0.0), |acc, r| acc * (1.0 - r));
    Ok(product.re)
}

/// `c_k(β) = Σ_{q=0}^{H−1−k} γ(q, β)` for `k = 0..H`.
fn boundary_row(chain: &Chain, beta: Complex64) -> Vec<Complex64> {
    let h = chain.h();
    let mut gammas = Vec::with_capacity(h);
    let mut g = Complex64::new(0.0, 0.0);
    for q in 0..h {
        g = g * beta + chain.alpha()[q];
        gammas.push(g);
    }
    // c_k is the prefix sum of γ up to H−1−k.
    let mut row = vec![Complex64::new(0.0, 0.0); h];
    let mut acc = Complex64::new(0.0, 0.0);
    for (q, g) in gammas.iter().enumerate() {
        acc += g;
        row[h - 1 - q] = acc;
    }
    row
}

/// Solves for `π(0..H)` from the unstable roots and the drift equation.
fn boundary_system(chain: &Chain, unstable: &[Complex64]) -> Result<Vec<f64>, SolveError> {
    let h = chain.h();
    let mut rows = Vec::with_capacity(h);
    let mut rhs = Vec::with_capacity(h);
    rows.push(boundary_row(chain, Complex64::new(1.0, 0.0)));
    rhs.push(Complex64::new(chain.drift_d1(), 0.0));
    for &beta in unstable {
        rows.push(boundary_row(chain, beta));
        rhs.push(Complex64::new(0.0, 0.0));
    }
    // Row equilibration: powers of |β| > 1 can differ by orders of magnitude.
    for (row, b) in rows.iter_mut().zip(rhs.iter_mut()) {
        let scale = row.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if scale > 0.0 {
            row.iter_mut().for_each(|x| *x /= scale);
            *b /= scale;
        }
    }
    let m = Mat::from_fn(h, h, |r, c| rows[r][c]);
    let b = Mat::from_fn(h, 1, |r, _| rhs[r]);
    let x = m.partial_piv_lu().solve(&b);
    let solution: Vec<f64> = (0..h).map(|k| x[(k, 0)].re).collect();
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::Singular);
    }
    Ok(solution)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CompanionSolver;

impl SteadyStateSolver for CompanionSolver {
    fn name(&self) -> &'static str {
        "companion"
    }

    fn method(&self) -> Method {
        Method::Companion
    }

    fn conservative(&self) -> bool {
        false
    }

    fn default_delta(&self, budget: u64) -> u64 {
        largest_divisor_at_most(budget, NUMERIC_DELTA_US)
    }

    fn solve(&self, chain: &Chain) -> Result<SteadyState, SolveError> {
        if chain.classify() == Classification::TransientOrNull {
            return Ok(SteadyState::zero(Method::Companion, false));
        }
        let roots = PolynomialRoots::of_chain(chain)?;
        roots.check_simple()?;
        let (stable, unstable) = roots.partition()?;
        if unstable.len() != chain.h() - 1 {
            return Err(SolveError::PartitionInconsistent {
                unstable: unstable.len(),
                expected: chain.h() - 1,
            });
        }
        let product = stable
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, r| acc * (1.0 - r));
        if product.im.abs() > IMAGINARY_RESIDUE {
            return Err(SolveError::ImaginaryResidue(product.im));
        }
        let pi0 = product.re;
        let mut seed = boundary_system(chain, &unstable)?;
        if (seed[0] - pi0).abs() > BOUNDARY_AGREEMENT {
            return Err(SolveError::BoundaryMismatch {
                product: pi0,
                system: seed[0],
            });
        }
        seed[0] = pi0;
        Ok(SteadyState::from_boundary(chain, seed, Method::Companion, false))
    }
}
