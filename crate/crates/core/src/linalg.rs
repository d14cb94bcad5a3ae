//! Dense linear-algebra helpers shared by the sensing, solver and
//! diagnostics modules.
//!
//! Every numerical-rank decision in the crate goes through
//! [`rank_threshold`]: a singular value counts as nonzero when it exceeds
//! `max(rows, cols) * eps * sigma_max`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn rank_threshold<T: Scalar>(rows: usize, cols: usize, sigma_max: T) -> T {
    T::lit(rows.max(cols) as f64) * T::machine_epsilon() * sigma_max
}

/// Thin singular value decomposition `a = u * diag(s) * v^T` with singular
/// values in descending order; `u` is `m x p`, `v` is `n x p`, `p = min(m, n)`.
///
/// Columns of `u` (or of `v` for wide inputs) belonging to zero singular
/// values are zero.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub u: DMatrix<T>,
    pub singular_values: DVector<T>,
    pub v: DMatrix<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn rank(&self) -> usize {
        rank_from_singular_values(self.singular_values.as_slice(), self.u.nrows(), self.v.nrows())
    }
}

/// One-sided Jacobi SVD, preceded by a Householder QR for tall inputs.
///
/// nalgebra's bidiagonal SVD returns inaccurate factors for some
/// rank-deficient matrices, which every rank, range and spark computation
/// here depends on.
pub fn svd<T: Scalar>(a: &DMatrix<T>) -> Svd<T> {
    let (m, n) = a.shape();
    if m < n {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    if n == 0 {
        return Svd {
            u: DMatrix::zeros(m, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(0, 0),
        };
    }
    let (q, mut w) = if m > n {
        let qr = a.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, a.clone())
    };
    let rows = w.nrows();
    let mut v = DMatrix::<T>::identity(n, n);
    let eps = T::machine_epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for r in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for i in 0..rows {
                    let (x, y) = (w[(i, p)], w[(i, r)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let t = if zeta == T::zero() { T::one() } else { t };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (w[(i, p)], w[(i, r)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, r)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, r)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, r)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<T> = (0..n).map(|j| w.column(j).norm()).collect();
    let order = order_desc(&norms);
    let mut u = DMatrix::zeros(rows, n);
    let mut v_sorted = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        if norms[src] > T::zero() {
            u.set_column(dst, &(w.column(src) / norms[src]));
        }
        v_sorted.set_column(dst, &v.column(src));
    }
    let u = match q {
        Some(q) => q * u,
        None => u,
    };
    Svd {
        u,
        singular_values: s,
        v: v_sorted,
    }
}

/// Singular values in descending order; empty for degenerate shapes.
pub fn singular_values<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    svd(m).singular_values
}

pub fn rank_from_singular_values<T: Scalar>(svals: &[T], rows: usize, cols: usize) -> usize {
    let sigma_max = svals.iter().copied().fold(T::zero(), T::max);
    if sigma_max <= T::zero() {
        return 0;
    }
    let tol = rank_threshold(rows, cols, sigma_max);
    svals.iter().filter(|&&s| s > tol).count()
}

pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>) -> usize {
    let sv = singular_values(m);
    rank_from_singular_values(sv.as_slice(), m.nrows(), m.ncols())
}

pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    singular_values(m).iter().copied().fold(T::zero(), T::max)
}

/// Minimum-norm least-squares solution of `a x ~= b`, using the shared rank
/// threshold to discard negligible singular values.
pub fn pinv_solve<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let dec = svd(a);
    let sigma_max = dec.singular_values.iter().copied().fold(T::zero(), T::max);
    let tol = rank_threshold(a.nrows(), a.ncols(), sigma_max);
    let mut coeffs = dec.u.tr_mul(b);
    for (c, &s) in coeffs.iter_mut().zip(dec.singular_values.iter()) {
        *c = if s > tol && s > T::zero() { *c / s } else { T::zero() };
    }
    &dec.v * coeffs
}

/// Least-squares solution of `a x ~= b` for a full-column-rank `a`.
pub fn lstsq_full_rank<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    if a.nrows() != b.len() {
        return Err(crate::error::shape_err("least squares", a.nrows(), b.len()));
    }
    let rank = numerical_rank(a);
    if rank < a.ncols() {
        return Err(Error::Identifiability {
            rank,
            required: a.ncols(),
            detail: "dense block is column rank deficient".into(),
        });
    }
    Ok(pinv_solve(a, b))
}

/// Orthonormal basis of the range of `m` (columns), sized by numerical rank.
pub fn range_basis<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let dec = svd(m);
    let rank = dec.rank();
    dec.u.columns(0, rank).into_owned()
}

/// Orthonormal basis of the null space of `m` (columns).
pub fn null_space_basis<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let row_space = range_basis(&m.transpose());
    if row_space.ncols() == n {
        return DMatrix::zeros(n, 0);
    }
    let complement = DMatrix::identity(n, n) - &row_space * row_space.transpose();
    let eig = SymmetricEigen::new(complement);
    let half = T::lit(0.5);
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > half).collect();
    eig.eigenvectors.select_columns(keep.iter())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(g: &DMatrix<T>) -> Vec<T> {
    if g.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(g.clone());
    let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

fn order_desc<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

pub fn l1_norm<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, x| acc + x.abs())
}
