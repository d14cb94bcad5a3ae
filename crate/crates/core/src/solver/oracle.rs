//! Exhaustive l0 oracle: enumerate supports in increasing size and keep the
//! first size whose least-squares fit satisfies the noise bound.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct L0Solution<T: Scalar = f64> {
    pub x: DVector<T>,
    /// Sparse support (indices into the enumerated columns).
    pub support: Vec<usize>,
    pub residual_norm: T,
    /// `false` when another support of the same size also fits.
    pub unique: bool,
    /// Number of feasible supports of the minimal size.
    pub feasible_supports: usize,
}

/// `sum_{s=0}^{s_max} C(d, s)`, saturating.
pub fn count_supports(d: usize, s_max: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for s in 0..=s_max.min(d) {
        total = total.saturating_add(binom);
        binom = binom.saturating_mul((d - s) as u128) / (s as u128 + 1);
    }
    total
}

/// Feasibility slack added to `eta`, so that a support reproducing `b` up to
/// rounding counts as an exact fit when `eta = 0`.
fn fit_slack<T: Scalar>(b: &DVector<T>) -> T {
    T::machine_epsilon().sqrt() * b.norm().max(T::one())
}

/// Sparsest `x` with `||m x - b|| <= eta` among supports of size `<= s_max`.
///
/// Ties at the minimal size go to the smaller residual, then to the
/// lexicographically smaller support.
pub fn solve_l0_oracle<T: Scalar>(
    m: &DMatrix<T>,
    b: &DVector<T>,
    eta: T,
    s_max: usize,
    budget: u64,
) -> Result<Option<L0Solution<T>>> {
    solve_partial_l0_oracle(m, b, eta, s_max, 0, budget)
}

/// Like [`solve_l0_oracle`], but the last `dense_cols` columns of `m` are
/// part of every support and do not count towards its size.
pub fn solve_partial_l0_oracle<T: Scalar>(
    m: &DMatrix<T>,
    b: &DVector<T>,
    eta: T,
    s_max: usize,
    dense_cols: usize,
    budget: u64,
) -> Result<Option<L0Solution<T>>> {
    if m.nrows() != b.len() {
        return Err(shape_err("oracle right-hand side", m.nrows(), b.len()));
    }
    if dense_cols > m.ncols() {
        return Err(shape_err("oracle dense columns", format!("<= {}", m.ncols()), dense_cols));
    }
    let sparse_cols = m.ncols() - dense_cols;
    let needed = count_supports(sparse_cols, s_max);
    if needed > budget as u128 {
        return Err(Error::Budget { needed, budget });
    }
    let threshold = eta + fit_slack(b);
    let fixed: Vec<usize> = (sparse_cols..m.ncols()).collect();

    for size in 0..=s_max.min(sparse_cols) {
        let mut best: Option<(T, Vec<usize>, DVector<T>)> = None;
        let mut feasible = 0usize;
        for support in (0..sparse_cols).combinations(size) {
            let cols: Vec<usize> = support.iter().chain(fixed.iter()).copied().collect();
            let sub = m.select_columns(cols.iter());
            let coeffs = linalg::pinv_solve(&sub, b);
            let residual = (&sub * &coeffs - b).norm();
            if residual > threshold {
                continue;
            }
            feasible += 1;
            if best.as_ref().is_none_or(|(r, _, _)| residual < *r) {
                let mut x = DVector::zeros(m.ncols());
                for (slot, &c) in cols.iter().enumerate() {
                    x[c] = coeffs[slot];
                }
                best = Some((residual, support, x));
            }
        }
        if let Some((residual_norm, support, x)) = best {
            return Ok(Some(L0Solution {
                x,
                support,
                residual_norm,
                unique: feasible == 1,
                feasible_supports: feasible,
            }));
        }
    }
    Ok(None)
}
