//! Partially sparse recovery of inputs and dynamics.
//!
//! The joint program
//!
//! ```text
//! minimize ||u||_1   subject to  ||z - u - psi_a a||_2 <= eta
//! ```
//!
//! is reduced to a program in `u` alone: for a fixed `u` the best `a` leaves
//! the residual `P (z - u)`, with `P` the projector onto `range(psi_a)^perp`,
//! so the constraint becomes `||P z - P u|| <= eta`. The dense part is then
//! recovered by least squares from `psi_a a = z - u`.
//!
//! The solver is deterministic: identical inputs produce identical iterates.

mod admm;
pub mod oracle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use crate::sensing::{Projector, RankPolicy, SensingSystem};

pub use oracle::{solve_l0_oracle, solve_partial_l0_oracle, L0Solution, DEFAULT_ENUMERATION_BUDGET};

use admm::{AdmmSettings, DenseGraph, ProjectorGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default)]
pub struct SolverOptions<T: Scalar = f64> {
    /// Noise bound on the l2 residual.
    pub eta: T,
    pub feas_tol: T,
    pub obj_tol: T,
    pub max_iters: usize,
    /// Adds `lambda_a * ||a||_1` to the objective and drops the rank
    /// requirement on the dense block.
    pub sparsify_a: bool,
    pub lambda_a: T,
    /// Reject column-rank-deficient dense blocks. When `false`, the dense
    /// part is the minimum-norm least-squares solution.
    pub require_full_rank: bool,
    /// ADMM penalty parameter.
    pub admm_rho: T,
    /// ADMM over-relaxation factor, in `(0, 2)`.
    pub admm_relaxation: T,
    /// Refine noiseless solutions by an exact fit on the recovered support.
    pub polish: bool,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            eta: T::zero(),
            feas_tol: T::lit(1e-8),
            obj_tol: T::lit(1e-6),
            max_iters: 50_000,
            sparsify_a: false,
            lambda_a: T::one(),
            require_full_rank: true,
            admm_rho: T::lit(10.0),
            admm_relaxation: T::lit(1.6),
            polish: true,
        }
    }
}

impl<T: Scalar> SolverOptions<T> {
    pub fn with_eta(mut self, eta: T) -> Self {
        self.eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= T::zero()) {
            return Err(Error::Config(format!("eta must be nonnegative, got {}", self.eta)));
        }
        if !(self.feas_tol > T::zero() && self.obj_tol > T::zero()) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.lambda_a >= T::zero()) {
            return Err(Error::Config("lambda_a must be nonnegative".into()));
        }
        if !(self.admm_rho > T::zero()) {
            return Err(Error::Config("admm_rho must be positive".into()));
        }
        if !(self.admm_relaxation > T::zero() && self.admm_relaxation < T::lit(2.0)) {
            return Err(Error::Config("admm_relaxation must lie in (0, 2)".into()));
        }
        Ok(())
    }

    fn admm(&self) -> AdmmSettings<T> {
        AdmmSettings {
            eta: self.eta,
            feas_tol: self.feas_tol,
            obj_tol: self.obj_tol,
            max_iters: self.max_iters,
            rho: self.admm_rho,
            relaxation: self.admm_relaxation,
            polish: self.polish,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Solution<T: Scalar = f64> {
    pub u_star: DVector<T>,
    pub a_star: DVector<T>,
    /// `||z - u* - psi_a a*||_2`.
    pub residual_norm: T,
    pub objective: T,
    pub status: SolveStatus,
    pub iterations: usize,
}

/// Result of a plain basis-pursuit-denoising solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct BpdnSolution<T: Scalar = f64> {
    pub x: DVector<T>,
    pub residual_norm: T,
    pub objective: T,
    pub status: SolveStatus,
    pub iterations: usize,
}

/// `min ||x||_1  s.t.  ||b - m x||_2 <= opts.eta`.
pub fn solve_bpdn<T: Scalar>(m: &DMatrix<T>, b: &DVector<T>, opts: &SolverOptions<T>) -> Result<BpdnSolution<T>> {
    let weights = DVector::from_element(m.ncols(), T::one());
    solve_weighted_bpdn(m, b, &weights, opts)
}

fn solve_weighted_bpdn<T: Scalar>(
    m: &DMatrix<T>,
    b: &DVector<T>,
    weights: &DVector<T>,
    opts: &SolverOptions<T>,
) -> Result<BpdnSolution<T>> {
    opts.validate()?;
    if m.nrows() != b.len() {
        return Err(shape_err("bpdn right-hand side", m.nrows(), b.len()));
    }
    let weighted_l1 = |x: &DVector<T>| x.iter().zip(weights.iter()).fold(T::zero(), |acc, (v, w)| acc + *w * v.abs());

    // The smallest achievable residual decides feasibility up front.
    let ls = linalg::pinv_solve(m, b);
    let min_residual = (m * &ls - b).norm();
    if min_residual > opts.eta + opts.feas_tol {
        return Ok(BpdnSolution {
            objective: weighted_l1(&ls),
            x: ls,
            residual_norm: min_residual,
            status: SolveStatus::Infeasible,
            iterations: 0,
        });
    }

    let (free, penalized): (Vec<usize>, Vec<usize>) = (0..m.ncols()).partition(|&i| weights[i] == T::zero());
    if !free.is_empty() {
        return solve_with_free_columns(m, b, weights, &free, &penalized, opts);
    }

    // Equilibrate: unit-norm columns, weights rescaled to keep the objective.
    let norms: Vec<T> = m
        .column_iter()
        .map(|c| {
            let v = c.norm();
            if v > T::zero() { v } else { T::one() }
        })
        .collect();
    let mut scaled = m.clone();
    for (mut c, &v) in scaled.column_iter_mut().zip(norms.iter()) {
        c.unscale_mut(v);
    }
    let scaled_weights = DVector::from_fn(weights.len(), |i, _| weights[i] / norms[i]);
    let graph = DenseGraph::new(&scaled);
    let out = admm::solve(&graph, b, &scaled_weights, &opts.admm());
    let x = DVector::from_fn(out.x.len(), |i, _| out.x[i] / norms[i]);
    let residual_norm = (m * &x - b).norm();
    let status = status_of(out.converged, residual_norm, opts);
    Ok(BpdnSolution {
        objective: weighted_l1(&x),
        x,
        residual_norm,
        status,
        iterations: out.iterations,
    })
}

/// Unweighted columns are eliminated: for fixed penalized coefficients their
/// best values are a least-squares fit, so the constraint only sees the
/// residual projected off their range.
fn solve_with_free_columns<T: Scalar>(
    m: &DMatrix<T>,
    b: &DVector<T>,
    weights: &DVector<T>,
    free: &[usize],
    penalized: &[usize],
    opts: &SolverOptions<T>,
) -> Result<BpdnSolution<T>> {
    let m_free = m.select_columns(free);
    let m_pen = m.select_columns(penalized);
    let basis = linalg::range_basis(&m_free);
    let complement = |v: &DMatrix<T>| v - &basis * basis.tr_mul(v);
    let reduced = complement(&m_pen);
    let rhs = complement(&DMatrix::from_column_slice(b.len(), 1, b.as_slice())).column(0).into_owned();
    let pen_weights = DVector::from_iterator(penalized.len(), penalized.iter().map(|&i| weights[i]));
    let inner = if penalized.is_empty() {
        None
    } else {
        Some(solve_weighted_bpdn(&reduced, &rhs, &pen_weights, opts)?)
    };
    let x_pen = inner.as_ref().map_or_else(|| DVector::zeros(0), |s| s.x.clone());
    let x_free = linalg::pinv_solve(&m_free, &(b - &m_pen * &x_pen));
    let mut x = DVector::zeros(m.ncols());
    for (slot, &i) in penalized.iter().enumerate() {
        x[i] = x_pen[slot];
    }
    for (slot, &i) in free.iter().enumerate() {
        x[i] = x_free[slot];
    }
    let residual_norm = (m * &x - b).norm();
    let converged = inner.as_ref().is_none_or(|s| s.status == SolveStatus::Optimal);
    Ok(BpdnSolution {
        objective: x.iter().zip(weights.iter()).fold(T::zero(), |acc, (v, w)| acc + *w * v.abs()),
        x,
        residual_norm,
        status: status_of(converged, residual_norm, opts),
        iterations: inner.map_or(0, |s| s.iterations),
    })
}

fn status_of<T: Scalar>(converged: bool, residual: T, opts: &SolverOptions<T>) -> SolveStatus {
    if converged && residual <= opts.eta + opts.feas_tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIters
    }
}

/// Recovers `(u, a)` from a sensing system.
pub fn solve_blind_id<T: Scalar>(sys: &SensingSystem<T>, opts: &SolverOptions<T>) -> Result<Solution<T>> {
    opts.validate()?;
    if opts.sparsify_a {
        return solve_jointly_sparse(sys, opts);
    }
    let policy = if opts.require_full_rank {
        RankPolicy::Strict
    } else {
        RankPolicy::MinNorm
    };
    let projector = Projector::build(sys, policy)?;
    solve_with_projector(sys, &projector, opts)
}

/// Same as [`solve_blind_id`] with a projector built beforehand.
pub fn solve_with_projector<T: Scalar>(
    sys: &SensingSystem<T>,
    projector: &Projector<T>,
    opts: &SolverOptions<T>,
) -> Result<Solution<T>> {
    opts.validate()?;
    if projector.dim() != sys.num_rows() {
        return Err(shape_err("projector dimension", sys.num_rows(), projector.dim()));
    }
    let b = projector.apply(&sys.z);
    let weights = DVector::from_element(sys.num_rows(), T::one());
    let out = admm::solve(&ProjectorGraph { p: projector }, &b, &weights, &opts.admm());
    let u_star = out.x;
    let a_star = projector.solve_dense_part(&(&sys.z - &u_star));
    let residual_norm = sys.residual(&u_star, &a_star).norm();
    Ok(Solution {
        objective: linalg::l1_norm(&u_star),
        status: status_of(out.converged, residual_norm, opts),
        u_star,
        a_star,
        residual_norm,
        iterations: out.iterations,
    })
}

fn solve_jointly_sparse<T: Scalar>(sys: &SensingSystem<T>, opts: &SolverOptions<T>) -> Result<Solution<T>> {
    let m = sys.num_rows();
    let full = sys.full_matrix();
    let weights = DVector::from_fn(full.ncols(), |i, _| if i < m { T::one() } else { opts.lambda_a });
    let out = solve_weighted_bpdn(&full, &sys.z, &weights, opts)?;
    let u_star = out.x.rows(0, m).into_owned();
    let a_star = out.x.rows(m, sys.num_dense_cols()).into_owned();
    let residual_norm = sys.residual(&u_star, &a_star).norm();
    Ok(Solution {
        u_star,
        a_star,
        residual_norm,
        objective: out.objective,
        status: out.status,
        iterations: out.iterations,
    })
}

/// Least-squares `a` with `psi_a a ~= z - u`; requires full column rank.
pub fn recover_dense_part<T: Scalar>(psi_a: &DMatrix<T>, z: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
    if z.len() != u.len() {
        return Err(shape_err("input vector", z.len(), u.len()));
    }
    linalg::lstsq_full_rank(psi_a, &(z - u))
}
