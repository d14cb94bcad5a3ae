//! Sensing-matrix assembly and the complement projector.
//!
//! The full sensing matrix is `[I | psi_a]`; the identity part is never
//! stored. Rows follow the flat layout of [`crate::model`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::model::{stack_measurements, Dataset, Dims, Mode};
use crate::scalar::Scalar;

/// Dense part of the sensing matrix with the stacked measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SensingSystem<T: Scalar = f64> {
    pub dims: Dims,
    pub mode: Mode,
    pub psi_a: DMatrix<T>,
    pub z: DVector<T>,
    pub eta: T,
}

impl<T: Scalar> SensingSystem<T> {
    /// Builds a system from explicit parts. Only the row count is checked
    /// against `dims`; the dense part may have any number of columns.
    pub fn from_parts(dims: Dims, mode: Mode, psi_a: DMatrix<T>, z: DVector<T>, eta: T) -> Result<Self> {
        let m = dims.num_measurements();
        if psi_a.nrows() != m {
            return Err(shape_err("dense sensing block rows", m, psi_a.nrows()));
        }
        if z.len() != m {
            return Err(shape_err("measurement vector", m, z.len()));
        }
        Ok(Self { dims, mode, psi_a, z, eta })
    }

    pub fn num_rows(&self) -> usize {
        self.psi_a.nrows()
    }

    pub fn num_dense_cols(&self) -> usize {
        self.psi_a.ncols()
    }

    /// Materializes `[I | psi_a]`. Only meant for small systems.
    pub fn full_matrix(&self) -> DMatrix<T> {
        let m = self.num_rows();
        let mut full = DMatrix::zeros(m, m + self.num_dense_cols());
        full.view_mut((0, 0), (m, m)).fill_with_identity();
        full.view_mut((0, m), (m, self.num_dense_cols())).copy_from(&self.psi_a);
        full
    }

    /// Rank of the dense block from a single SVD of the whole matrix.
    pub fn psi_a_rank(&self) -> usize {
        linalg::numerical_rank(&self.psi_a)
    }

    /// `z - u - psi_a a`.
    pub fn residual(&self, u: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        &self.z - u - &self.psi_a * a
    }
}

/// Rows are `blkdiag_k(I_n (x) z^(j)[k]^T)` stacked over experiments.
pub fn assemble_psi_a_ltv<T: Scalar>(ds: &Dataset<T>) -> SensingSystem<T> {
    let d = ds.dims;
    let n = d.n;
    let mut psi_a = DMatrix::zeros(d.num_measurements(), d.num_dynamics_params(Mode::Ltv));
    for j in 0..d.q {
        for k in 0..d.k_f {
            let zk = ds.snapshot(j, k);
            for i in 0..n {
                let row = d.flat_index(j, k, i);
                let col0 = k * n * n + i * n;
                for l in 0..n {
                    psi_a[(row, col0 + l)] = zk[l];
                }
            }
        }
    }
    SensingSystem {
        dims: d.with_mode(Mode::Ltv),
        mode: Mode::Ltv,
        psi_a,
        z: stack_measurements(ds),
        eta: ds.eta,
    }
}

/// Time-invariant collapse: every transition shares the same `n^2` columns.
pub fn assemble_psi_a_lti<T: Scalar>(ds: &Dataset<T>) -> SensingSystem<T> {
    let d = ds.dims;
    let n = d.n;
    let mut psi_a = DMatrix::zeros(d.num_measurements(), d.num_dynamics_params(Mode::Lti));
    for j in 0..d.q {
        for k in 0..d.k_f {
            let zk = ds.snapshot(j, k);
            for i in 0..n {
                let row = d.flat_index(j, k, i);
                for l in 0..n {
                    psi_a[(row, i * n + l)] = zk[l];
                }
            }
        }
    }
    SensingSystem {
        dims: d.with_mode(Mode::Lti),
        mode: Mode::Lti,
        psi_a,
        z: stack_measurements(ds),
        eta: ds.eta,
    }
}

pub fn assemble<T: Scalar>(ds: &Dataset<T>, mode: Mode) -> SensingSystem<T> {
    match mode {
        Mode::Ltv => assemble_psi_a_ltv(ds),
        Mode::Lti => assemble_psi_a_lti(ds),
    }
}

/// How [`Projector::build`] treats a column-rank-deficient dense block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankPolicy {
    /// Fail with an identifiability error.
    Strict,
    /// Project onto the complement of the numerical range and return
    /// minimum-norm dense parts.
    MinNorm,
}

/// One connected block of `psi_a`: rows and columns that only interact with
/// each other. Blocks never share rows or columns.
#[derive(Debug, Clone, PartialEq)]
struct Block<T: Scalar> {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Orthonormal basis of the block's column range, `rows x rank`.
    basis: DMatrix<T>,
    /// Pseudo-inverse of the block, `cols x rows`.
    pinv: DMatrix<T>,
}

/// Orthogonal projector onto the complement of `range(psi_a)`.
///
/// Stored implicitly through the block decomposition of `psi_a` (for the
/// LTV layout the blocks are the `(k, i)` groups holding `Z_k^T`), so that
/// applying it costs `O(rows * n)` instead of `O(rows^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector<T: Scalar = f64> {
    dim: usize,
    dense_cols: usize,
    rank: usize,
    singular_values: Vec<T>,
    blocks: Vec<Block<T>>,
}

impl<T: Scalar> Projector<T> {
    pub fn build(sys: &SensingSystem<T>, policy: RankPolicy) -> Result<Self> {
        let psi = &sys.psi_a;
        let (m, ncols) = psi.shape();
        let groups = connected_blocks(psi);

        let mut factored = Vec::with_capacity(groups.len());
        let mut singular_values = Vec::with_capacity(ncols);
        for (rows, cols) in groups {
            let sub = DMatrix::from_fn(rows.len(), cols.len(), |r, c| psi[(rows[r], cols[c])]);
            let (svals, u, v) = if rows.is_empty() || cols.is_empty() {
                (Vec::new(), DMatrix::zeros(rows.len(), 0), DMatrix::zeros(cols.len(), 0))
            } else {
                let dec = linalg::svd(&sub);
                (dec.singular_values.iter().copied().collect::<Vec<_>>(), dec.u, dec.v)
            };
            singular_values.extend(svals.iter().copied());
            // Columns beyond the row count carry structurally zero singular values.
            singular_values.extend(std::iter::repeat_n(T::zero(), cols.len().saturating_sub(rows.len())));
            factored.push((rows, cols, svals, u, v));
        }

        let sigma_max = singular_values.iter().copied().fold(T::zero(), T::max);
        let tol = linalg::rank_threshold(m, ncols, sigma_max);
        let mut rank = 0;
        let mut blocks = Vec::with_capacity(factored.len());
        for (rows, cols, svals, u, v) in factored {
            let keep: Vec<usize> = (0..svals.len())
                .filter(|&i| svals[i] > tol && svals[i] > T::zero())
                .collect();
            rank += keep.len();
            if keep.is_empty() {
                blocks.push(Block {
                    basis: DMatrix::zeros(rows.len(), 0),
                    pinv: DMatrix::zeros(cols.len(), rows.len()),
                    rows,
                    cols,
                });
                continue;
            }
            let basis = u.select_columns(keep.iter());
            let mut v_scaled = v.select_columns(keep.iter());
            for (c, &i) in keep.iter().enumerate() {
                let inv = T::one() / svals[i];
                v_scaled.column_mut(c).scale_mut(inv);
            }
            let pinv = v_scaled * basis.transpose();
            blocks.push(Block { rows, cols, basis, pinv });
        }

        if policy == RankPolicy::Strict && rank < ncols {
            return Err(Error::Identifiability {
                rank,
                required: ncols,
                detail: "the dense sensing block is column rank deficient, so some \
                         per-step state matrix Z_k lacks full row rank"
                    .into(),
            });
        }
        Ok(Self {
            dim: m,
            dense_cols: ncols,
            rank,
            singular_values,
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Numerical rank of `psi_a`.
    pub fn psi_a_rank(&self) -> usize {
        self.rank
    }

    pub fn psi_a_full_column_rank(&self) -> bool {
        self.rank == self.dense_cols
    }

    /// Singular values of `psi_a` gathered from its blocks.
    pub fn psi_a_singular_values(&self) -> &[T] {
        &self.singular_values
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = x.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, x: &mut DVector<T>) {
        debug_assert_eq!(x.len(), self.dim);
        for b in &self.blocks {
            if b.basis.ncols() == 0 {
                continue;
            }
            if b.basis.ncols() == b.rows.len() {
                for &r in &b.rows {
                    x[r] = T::zero();
                }
                continue;
            }
            let local = DVector::from_iterator(b.rows.len(), b.rows.iter().map(|&r| x[r]));
            let coeffs = b.basis.tr_mul(&local);
            let along = &b.basis * coeffs;
            for (slot, &r) in b.rows.iter().enumerate() {
                x[r] -= along[slot];
            }
        }
    }

    /// `P e_i`.
    pub fn column(&self, i: usize) -> DVector<T> {
        let mut e = DVector::zeros(self.dim);
        e[i] = T::one();
        self.apply_in_place(&mut e);
        e
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut p = DMatrix::identity(self.dim, self.dim);
        for b in &self.blocks {
            if b.basis.ncols() == 0 {
                continue;
            }
            let spans = b.basis.ncols() == b.rows.len();
            let local = &b.basis * b.basis.transpose();
            for (r, &gr) in b.rows.iter().enumerate() {
                for (c, &gc) in b.rows.iter().enumerate() {
                    if spans {
                        p[(gr, gc)] = T::zero();
                    } else {
                        p[(gr, gc)] -= local[(r, c)];
                    }
                }
            }
        }
        p
    }

    /// Least-squares (minimum-norm when rank deficient) solution of
    /// `psi_a a ~= rhs`, using the stored block factorization.
    pub fn solve_dense_part(&self, rhs: &DVector<T>) -> DVector<T> {
        let mut a = DVector::zeros(self.dense_cols);
        for b in &self.blocks {
            if b.cols.is_empty() || b.rows.is_empty() {
                continue;
            }
            let local = DVector::from_iterator(b.rows.len(), b.rows.iter().map(|&r| rhs[r]));
            let sol = &b.pinv * local;
            for (slot, &c) in b.cols.iter().enumerate() {
                a[c] = sol[slot];
            }
        }
        a
    }
}

/// Projector onto `range(psi_a)^perp`; fails when `psi_a` is column rank
/// deficient.
pub fn complement_projector<T: Scalar>(sys: &SensingSystem<T>) -> Result<Projector<T>> {
    Projector::build(sys, RankPolicy::Strict)
}

/// Splits the nonzero pattern of `m` into connected row/column groups.
/// Rows without nonzeros and columns without nonzeros form their own groups.
fn connected_blocks<T: Scalar>(m: &DMatrix<T>) -> Vec<(Vec<usize>, Vec<usize>)> {
    let (nrows, ncols) = m.shape();
    let mut parent: Vec<usize> = (0..ncols).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut row_anchor = vec![None; nrows];
    for r in 0..nrows {
        let mut first = None;
        for c in 0..ncols {
            if m[(r, c)] != T::zero() {
                match first {
                    None => first = Some(c),
                    Some(f) => {
                        let (a, b) = (find(&mut parent, f), find(&mut parent, c));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
        row_anchor[r] = first;
    }

    let mut group_of_root = vec![usize::MAX; ncols];
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for c in 0..ncols {
        let root = find(&mut parent, c);
        if group_of_root[root] == usize::MAX {
            group_of_root[root] = groups.len();
            groups.push((Vec::new(), Vec::new()));
        }
        groups[group_of_root[root]].1.push(c);
    }
    for (r, anchor) in row_anchor.into_iter().enumerate() {
        match anchor {
            Some(c) => {
                let root = find(&mut parent, c);
                groups[group_of_root[root]].0.push(r);
            }
            None => groups.push((vec![r], Vec::new())),
        }
    }
    groups
}
