//! Matrix-geometric solution over levels of `F` states: `x_{k+1} = x_k R`,
//! with `R` the minimal nonnegative solution of `R = up + R·local + R²·down`.
//!
//! `R` comes either from cyclic reduction (through the first-passage matrix
//! `G`) or from the plain fixed-point iteration, which is far slower and only
//! kept to cross-check the former.

use super::{largest_divisor_at_most, Levels, Method, SolveError, SteadyState, SteadyStateSolver};
use crate::model::{Classification, QbdpBlocks};
use crate::Chain;
use faer::linalg::solvers::DenseSolveCore;
use faer::prelude::*;
use faer::{Mat, MatRef};

const RESIDUAL_TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 100_000;
const MAX_SQUARINGS: usize = 60;
const NUMERIC_DELTA_US: u64 = 50;

/// Maximum absolute row sum.
fn inf_norm(m: MatRef<'_, f64>) -> f64 {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn identity(f: usize) -> Mat<f64> {
    Mat::identity(f, f)
}

/// `‖R − (up + R·local + R²·down)‖∞`.
pub fn r_residual(blocks: &QbdpBlocks, r: &Mat<f64>) -> f64 {
    let rhs = &blocks.up + r * &blocks.local + r * r * &blocks.down;
    inf_norm((r - &rhs).as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RIteration {
    CyclicReduction,
    FixedPoint,
}

#[derive(Debug, Clone, Copy)]
pub struct MatrixGeometric {
    pub iteration: RIteration,
    pub max_iterations: usize,
}

impl MatrixGeometric {
    pub fn cyclic_reduction() -> Self {
        MatrixGeometric {
            iteration: RIteration::CyclicReduction,
            max_iterations: MAX_ITERATIONS,
        }
    }

    pub fn fixed_point() -> Self {
        MatrixGeometric {
            iteration: RIteration::FixedPoint,
            max_iterations: MAX_ITERATIONS,
        }
    }

    /// Minimal nonnegative solution `R`, verified to residual `1e-12`.
    pub fn rate_matrix(&self, blocks: &QbdpBlocks) -> Result<Mat<f64>, SolveError> {
        let r = match self.iteration {
            RIteration::CyclicReduction => self.cyclic_reduction_r(blocks)?,
            RIteration::FixedPoint => self.fixed_point_r(blocks)?,
        };
        let residual = r_residual(blocks, &r);
        if residual.is_nan() || residual >= RESIDUAL_TOLERANCE {
            return Err(SolveError::NotConverged {
                iterations: self.max_iterations,
                residual,
            });
        }
        Ok(r)
    }

    fn cyclic_reduction_r(&self, blocks: &QbdpBlocks) -> Result<Mat<f64>, SolveError> {
        let f = blocks.f;
        let id = identity(f);
        let mut down = blocks.down.clone();
        let mut local = blocks.local.clone();
        let mut up = blocks.up.clone();
        let mut local_hat = blocks.local.clone();
        let mut converged = false;
        for _ in 0..self.max_iterations.min(200) {
            let lu = (&id - &local).partial_piv_lu();
            let x = lu.solve(&down);
            let y = lu.solve(&up);
            let up_x = &up * &x;
            local_hat = &local_hat + &up_x;
            local = &local + &down * &y + &up_x;
            down = &down * &x;
            up = &up * &y;
            if inf_norm(up.as_ref()) < f64::EPSILON * 1e-2 || inf_norm(down.as_ref()) < f64::EPSILON * 1e-2 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SolveError::NotConverged {
                iterations: 200,
                residual: inf_norm(up.as_ref()),
            });
        }
        let g = (&id - &local_hat).partial_piv_lu().solve(&blocks.down);
        let u = &blocks.local + &blocks.up * &g;
        let inv = (&id - &u).partial_piv_lu().inverse();
        Ok(&blocks.up * &inv)
    }

    fn fixed_point_r(&self, blocks: &QbdpBlocks) -> Result<Mat<f64>, SolveError> {
        let f = blocks.f;
        let inv = (&identity(f) - &blocks.local).partial_piv_lu().inverse();
        let mut r = Mat::<f64>::zeros(f, f);
        for it in 1..=self.max_iterations {
            let next = (&blocks.up + &r * &r * &blocks.down) * &inv;
            let step = inf_norm((&next - &r).as_ref());
            r = next;
            if step < 1e-16 || (it % 64 == 0 && r_residual(blocks, &r) < RESIDUAL_TOLERANCE * 1e-2) {
                return Ok(r);
            }
        }
        Err(SolveError::NotConverged {
            iterations: self.max_iterations,
            residual: r_residual(blocks, &r),
        })
    }

    /// Solves the level structure of `blocks`; the caller guarantees the
    /// chain is positive recurrent.
    pub fn solve_blocks(&self, blocks: &QbdpBlocks, h: usize) -> Result<SteadyState, SolveError> {
        let Levels { level0, r } = self.levels(blocks)?;
        Ok(SteadyState::from_levels(level0, r, h, Method::MatrixGeometric))
    }

    pub(super) fn levels(&self, blocks: &QbdpBlocks) -> Result<Levels, SolveError> {
        let f = blocks.f;
        let id = identity(f);
        let r = self.rate_matrix(blocks)?;
        certify_spectral_radius(&r)?;

        // x (I − C − R·down) = 0 with the first equation replaced by
        // x (I − R)^{-1} 1 = 1.
        let ones = Mat::<f64>::from_fn(f, 1, |_, _| 1.0);
        let mass = (&id - &r).partial_piv_lu().solve(&ones);
        let mut m = &id - &blocks.boundary - &r * &blocks.down;
        for row in 0..f {
            m[(row, 0)] = mass[(row, 0)];
        }
        let mut e = Mat::<f64>::zeros(f, 1);
        e[(0, 0)] = 1.0;
        let x = m.transpose().to_owned().partial_piv_lu().solve(&e);
        let level0: Vec<f64> = (0..f).map(|i| x[(i, 0)]).collect();
        if level0.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Singular);
        }
        Ok(Levels { level0, r })
    }
}

impl Default for MatrixGeometric {
    fn default() -> Self {
        Self::cyclic_reduction()
    }
}

/// Proves `ρ(R) < 1` by finding a power of `R` with infinity norm below 1.
fn certify_spectral_radius(r: &Mat<f64>) -> Result<(), SolveError> {
    let mut power = r.clone();
    for _ in 0..MAX_SQUARINGS {
        let norm = inf_norm(power.as_ref());
        if norm < 1.0 {
            return Ok(());
        }
        if !norm.is_finite() || norm > 1e100 {
            break;
        }
        power = &power * &power;
    }
    Err(SolveError::NotPositiveRecurrent)
}

impl SteadyStateSolver for MatrixGeometric {
    fn name(&self) -> &'static str {
        match self.iteration {
            RIteration::CyclicReduction => "cyclic-reduction",
            RIteration::FixedPoint => "fixed-point",
        }
    }

    fn method(&self) -> Method {
        Method::MatrixGeometric
    }

    fn conservative(&self) -> bool {
        false
    }

    fn default_delta(&self, budget: u64) -> u64 {
        largest_divisor_at_most(budget, NUMERIC_DELTA_US)
    }

    fn solve(&self, chain: &Chain) -> Result<SteadyState, SolveError> {
        if chain.classify() == Classification::TransientOrNull {
            return Ok(SteadyState::zero(Method::MatrixGeometric, false));
        }
        self.solve_blocks(&chain.blocks(), chain.h())
    }
}
