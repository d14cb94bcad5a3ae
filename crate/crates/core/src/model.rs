//! Time-varying state-space data model, forward simulation and stacking.
//!
//! # Vectorization order
//!
//! All stacked vectors use one layout. For experiment `j` (0-based), transition
//! `k` in `0..k_f` and state `i` in `0..n`, the flat index is
//!
//! ```text
//! (j * k_f + k) * n + i
//! ```
//!
//! which is the column-major `vec` of the block matrices whose block rows are
//! `[x^(1)[k] ... x^(q)[k]]`. The measurement vector uses the successor states
//! `z^(j)[k + 1]` at that index; inputs and noise use `u^(j)[k]`, `w^(j)[k]`.
//!
//! The dynamics vector stacks the matrices `A[0], ..., A[k_f - 1]`, each one
//! row by row: entry `a_il[k]` sits at `k * n^2 + i * n + l` (LTI mode keeps a
//! single block of `n^2` entries).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Ltv,
    Lti,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Ltv => f.write_str("ltv"),
            Mode::Lti => f.write_str("lti"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ltv" => Ok(Mode::Ltv),
            "lti" => Ok(Mode::Lti),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected ltv or lti)"))),
        }
    }
}

/// Problem dimensions: `n` states, `k_f` transitions, `q` experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub k_f: usize,
    pub q: usize,
    #[serde(default)]
    pub lti: bool,
}

impl Dims {
    pub fn new(n: usize, k_f: usize, q: usize) -> Result<Self> {
        let dims = Self { n, k_f, q, lti: false };
        dims.validate()?;
        Ok(dims)
    }

    pub fn with_mode(self, mode: Mode) -> Self {
        Self {
            lti: mode == Mode::Lti,
            ..self
        }
    }

    pub fn mode(&self) -> Mode {
        if self.lti {
            Mode::Lti
        } else {
            Mode::Ltv
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k_f == 0 || self.q == 0 {
            return Err(Error::InvalidDims(format!(
                "n, k_f and q must be positive (got n={}, k_f={}, q={})",
                self.n, self.k_f, self.q
            )));
        }
        Ok(())
    }

    /// Length of the stacked measurement, input and noise vectors.
    pub fn num_measurements(&self) -> usize {
        self.n * self.k_f * self.q
    }

    pub fn num_dynamics_params(&self, mode: Mode) -> usize {
        match mode {
            Mode::Ltv => self.n * self.n * self.k_f,
            Mode::Lti => self.n * self.n,
        }
    }

    pub fn num_snapshots(&self) -> usize {
        self.q * (self.k_f + 1)
    }

    /// Flat index of `(experiment, transition, state)` in stacked vectors.
    pub fn flat_index(&self, j: usize, k: usize, i: usize) -> usize {
        debug_assert!(j < self.q && k < self.k_f && i < self.n);
        (j * self.k_f + k) * self.n + i
    }

    /// Inverse of [`Dims::flat_index`].
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.n;
        let jk = idx / self.n;
        (jk / self.k_f, jk % self.k_f, i)
    }

    pub fn snapshot_index(&self, j: usize, k: usize) -> usize {
        debug_assert!(j < self.q && k <= self.k_f);
        j * (self.k_f + 1) + k
    }
}

/// Dynamics matrices `A[0..k_f]`, shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LtvModel<T: Scalar = f64> {
    pub dims: Dims,
    /// `k_f` matrices, or one matrix when `dims.lti` is set.
    pub a_mats: Vec<DMatrix<T>>,
}

impl<T: Scalar> LtvModel<T> {
    pub fn new(dims: Dims, a_mats: Vec<DMatrix<T>>) -> Result<Self> {
        dims.validate()?;
        let expected = if dims.lti { 1 } else { dims.k_f };
        if a_mats.len() != expected {
            return Err(shape_err("dynamics matrices", expected, a_mats.len()));
        }
        for m in &a_mats {
            if m.shape() != (dims.n, dims.n) {
                return Err(shape_err(
                    "dynamics matrix",
                    format!("{0}x{0}", dims.n),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            if !m.iter().all(|v| v.is_finite_value()) {
                return Err(Error::NonFinite("dynamics matrix construction".into()));
            }
        }
        Ok(Self { dims, a_mats })
    }

    /// Time-invariant model: a single matrix repeated over all transitions.
    pub fn time_invariant(dims: Dims, a: DMatrix<T>) -> Result<Self> {
        Self::new(Dims { lti: true, ..dims }, vec![a])
    }

    pub fn matrix(&self, k: usize) -> &DMatrix<T> {
        if self.dims.lti {
            &self.a_mats[0]
        } else {
            &self.a_mats[k]
        }
    }

    /// Stacked dynamics vector in the layout documented at module level.
    pub fn dynamics_vector(&self) -> DVector<T> {
        let n = self.dims.n;
        let mut out = DVector::zeros(self.a_mats.len() * n * n);
        for (k, m) in self.a_mats.iter().enumerate() {
            for i in 0..n {
                for l in 0..n {
                    out[k * n * n + i * n + l] = m[(i, l)];
                }
            }
        }
        out
    }

    /// Inverse of [`LtvModel::dynamics_vector`].
    pub fn from_dynamics_vector(dims: Dims, mode: Mode, a: &DVector<T>) -> Result<Self> {
        let n = dims.n;
        let blocks = if mode == Mode::Lti { 1 } else { dims.k_f };
        if a.len() != blocks * n * n {
            return Err(shape_err("dynamics vector", blocks * n * n, a.len()));
        }
        let mats = (0..blocks)
            .map(|k| DMatrix::from_fn(n, n, |i, l| a[k * n * n + i * n + l]))
            .collect();
        Self::new(dims.with_mode(mode), mats)
    }
}

/// Measured state snapshots `z^(j)[k]`, `k = 0..=k_f`, for all experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<T: Scalar = f64> {
    pub dims: Dims,
    /// `q * (k_f + 1)` vectors ordered experiment-major, then step.
    pub snapshots: Vec<DVector<T>>,
    /// Bound on the l2 norm of the stacked noise.
    pub eta: T,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dims: Dims, snapshots: Vec<DVector<T>>, eta: T) -> Result<Self> {
        dims.validate()?;
        if snapshots.len() != dims.num_snapshots() {
            return Err(shape_err("dataset snapshots", dims.num_snapshots(), snapshots.len()));
        }
        if let Some(bad) = snapshots.iter().find(|s| s.len() != dims.n) {
            return Err(shape_err("snapshot length", dims.n, bad.len()));
        }
        if !(eta >= T::zero()) {
            return Err(Error::Domain(format!("noise bound must be nonnegative, got {eta}")));
        }
        Ok(Self { dims, snapshots, eta })
    }

    pub fn snapshot(&self, j: usize, k: usize) -> &DVector<T> {
        &self.snapshots[self.dims.snapshot_index(j, k)]
    }

    /// `Z_k = [z^(1)[k] ... z^(q)[k]]`, an `n x q` matrix.
    pub fn state_matrix(&self, k: usize) -> DMatrix<T> {
        let d = self.dims;
        DMatrix::from_fn(d.n, d.q, |i, j| self.snapshot(j, k)[i])
    }

    pub fn initial_states(&self) -> Vec<DVector<T>> {
        (0..self.dims.q).map(|j| self.snapshot(j, 0).clone()).collect()
    }

    pub fn with_eta(mut self, eta: T) -> Self {
        self.eta = eta;
        self
    }
}

/// Sparse unknown inputs keyed by `(experiment, transition, state)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputPlan<T: Scalar = f64> {
    pub dims: Option<Dims>,
    pub entries: BTreeMap<(usize, usize, usize), T>,
}

impl<T: Scalar> InputPlan<T> {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims: Some(dims),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, j: usize, k: usize, i: usize, value: T) -> Result<()> {
        let d = self.dims.ok_or_else(|| Error::Config("input plan has no dimensions".into()))?;
        if j >= d.q || k >= d.k_f || i >= d.n {
            return Err(Error::Domain(format!(
                "input index (j={j}, k={k}, i={i}) out of range for n={}, k_f={}, q={}",
                d.n, d.k_f, d.q
            )));
        }
        self.entries.insert((j, k, i), value);
        Ok(())
    }

    /// Number of stored entries (`s_u`).
    pub fn sparsity(&self) -> usize {
        self.entries.len()
    }

    pub fn input(&self, j: usize, k: usize) -> DVector<T> {
        let n = self.dims.map(|d| d.n).unwrap_or(0);
        let mut u = DVector::zeros(n);
        for (&(jj, kk, i), &v) in self.entries.range((j, k, 0)..=(j, k, usize::MAX)) {
            debug_assert!(jj == j && kk == k);
            u[i] = v;
        }
        u
    }

    pub fn to_vector(&self) -> DVector<T> {
        let d = self.dims.expect("input plan dimensions");
        let mut u = DVector::zeros(d.num_measurements());
        for (&(j, k, i), &v) in &self.entries {
            u[d.flat_index(j, k, i)] = v;
        }
        u
    }

    /// Builds a plan from a stacked vector, keeping exactly the nonzero entries.
    pub fn from_vector(dims: Dims, u: &DVector<T>) -> Result<Self> {
        if u.len() != dims.num_measurements() {
            return Err(shape_err("input vector", dims.num_measurements(), u.len()));
        }
        let mut plan = Self::empty(dims);
        for (idx, &v) in u.iter().enumerate() {
            if v != T::zero() {
                let (j, k, i) = dims.unflatten(idx);
                plan.entries.insert((j, k, i), v);
            }
        }
        Ok(plan)
    }
}

/// One transition: `A z + u + w`.
pub fn simulate_step<T: Scalar>(
    a_k: &DMatrix<T>,
    z_k: &DVector<T>,
    u_k: &DVector<T>,
    w_k: &DVector<T>,
) -> Result<DVector<T>> {
    let n = z_k.len();
    if a_k.shape() != (n, n) {
        return Err(shape_err(
            "simulate_step matrix",
            format!("{n}x{n}"),
            format!("{}x{}", a_k.nrows(), a_k.ncols()),
        ));
    }
    if u_k.len() != n {
        return Err(shape_err("simulate_step input", n, u_k.len()));
    }
    if w_k.len() != n {
        return Err(shape_err("simulate_step noise", n, w_k.len()));
    }
    Ok(a_k * z_k + u_k + w_k)
}

/// Iterates the dynamics forward from `z0` for every experiment.
///
/// `noise` is the stacked noise vector (length `n * k_f * q`) or `None` for a
/// noiseless run. The returned dataset's `eta` is the l2 norm of that vector.
pub fn simulate_dataset<T: Scalar>(
    model: &LtvModel<T>,
    inputs: &InputPlan<T>,
    noise: Option<&DVector<T>>,
    z0: &[DVector<T>],
) -> Result<Dataset<T>> {
    let dims = model.dims;
    if let Some(d) = inputs.dims {
        if (d.n, d.k_f, d.q) != (dims.n, dims.k_f, dims.q) {
            return Err(shape_err(
                "input plan dimensions",
                format!("{:?}", (dims.n, dims.k_f, dims.q)),
                format!("{:?}", (d.n, d.k_f, d.q)),
            ));
        }
    }
    if z0.len() != dims.q {
        return Err(shape_err("initial states", dims.q, z0.len()));
    }
    if let Some(w) = noise {
        if w.len() != dims.num_measurements() {
            return Err(shape_err("stacked noise", dims.num_measurements(), w.len()));
        }
    }
    let n = dims.n;
    let zero = DVector::zeros(n);
    let mut snapshots = Vec::with_capacity(dims.num_snapshots());
    for (j, start) in z0.iter().enumerate() {
        if start.len() != n {
            return Err(shape_err("initial state", n, start.len()));
        }
        if !start.iter().all(|v| v.is_finite_value()) {
            return Err(Error::NonFinite("initial state".into()));
        }
        let mut z = start.clone();
        snapshots.push(z.clone());
        for k in 0..dims.k_f {
            let u = inputs.input(j, k);
            let w = match noise {
                Some(w) => w.rows(dims.flat_index(j, k, 0), n).into_owned(),
                None => zero.clone(),
            };
            z = simulate_step(model.matrix(k), &z, &u, &w)?;
            if !z.iter().all(|v| v.is_finite_value()) {
                return Err(Error::NonFinite(format!(
                    "simulation of experiment {j} at transition {k}"
                )));
            }
            snapshots.push(z.clone());
        }
    }
    let eta = noise.map(|w| w.norm()).unwrap_or_else(T::zero);
    Dataset::new(dims, snapshots, eta)
}

/// Stacks the successor snapshots `z^(j)[k]`, `k = 1..=k_f`, into one vector.
/// Initial states are regressors only and never appear here.
pub fn stack_measurements<T: Scalar>(ds: &Dataset<T>) -> DVector<T> {
    let d = ds.dims;
    let mut z = DVector::zeros(d.num_measurements());
    for j in 0..d.q {
        for k in 0..d.k_f {
            let next = ds.snapshot(j, k + 1);
            for i in 0..d.n {
                z[d.flat_index(j, k, i)] = next[i];
            }
        }
    }
    z
}
