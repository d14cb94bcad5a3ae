//! Recoverability certificates: rank conditions on the state matrices,
//! coherence, spark, restricted isometry and null space properties, and the
//! stability bounds for noisy or compressible recovery.
//!
//! The brute-force certificates enumerate column subsets and are meant for
//! small matrices. Every enumeration is checked against a budget up front;
//! running over it is an error, never a silent approximation (the spark is
//! the one exception and reports a lower bound instead).
//!
//! For the partial variants, the matrix of interest is `P` itself: with the
//! identity input block, `u` satisfies `u in range(psi_a)` exactly when
//! `P u = 0`, so the partial null space property of the pair is the ordinary
//! one of `P`.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, Dims, Mode};
use crate::scalar::Scalar;
use crate::sensing::{assemble, Projector, RankPolicy, SensingSystem};

pub use crate::solver::DEFAULT_ENUMERATION_BUDGET;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

fn check_budget(needed: u128, budget: u64) -> Result<()> {
    if needed > budget as u128 {
        Err(Error::Budget { needed, budget })
    } else {
        Ok(())
    }
}

/// Largest normalized inner product between two distinct columns.
pub fn mutual_coherence<T: Scalar>(m: &DMatrix<T>) -> Result<T> {
    if m.ncols() < 2 {
        return Err(Error::Domain(format!(
            "mutual coherence needs at least two columns, got {}",
            m.ncols()
        )));
    }
    let norms: Vec<T> = m.column_iter().map(|c| c.norm()).collect();
    if let Some(i) = norms.iter().position(|&v| v == T::zero()) {
        return Err(Error::Domain(format!("degenerate (zero) column {i} in mutual coherence")));
    }
    let gram = m.tr_mul(m);
    let mut mu = T::zero();
    for i in 0..m.ncols() {
        for j in (i + 1)..m.ncols() {
            mu = mu.max(gram[(i, j)].abs() / (norms[i] * norms[j]));
        }
    }
    Ok(mu.min(T::one()))
}

/// Sparsity level `(1 + 1/mu) / 2` below which recovery is guaranteed;
/// infinite when `mu = 0`.
pub fn mcc_bound<T: Scalar>(mu: T) -> Result<T> {
    if !(mu >= T::zero() && mu <= T::one()) {
        return Err(Error::Domain(format!("coherence must lie in [0, 1], got {mu}")));
    }
    if mu == T::zero() {
        return Ok(T::lit(f64::INFINITY));
    }
    Ok(T::lit(0.5) * (T::one() + T::one() / mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spark {
    pub value: usize,
    /// `false` when the budget ran out; `value` is then a lower bound.
    pub exact: bool,
}

/// Smallest number of linearly dependent columns, `ncols + 1` when the
/// columns are independent.
pub fn spark_bruteforce<T: Scalar>(m: &DMatrix<T>, budget: u64) -> Spark {
    let ncols = m.ncols();
    let rank = linalg::numerical_rank(m);
    if rank == ncols {
        return Spark { value: ncols + 1, exact: true };
    }
    let mut spent: u128 = 0;
    // Any rank + 1 columns are dependent, so sizes up to `rank` are enough.
    for size in 1..=rank {
        let count = binomial(ncols, size);
        if spent + count > budget as u128 {
            return Spark { value: size, exact: false };
        }
        spent += count;
        let dependent = (0..ncols)
            .combinations(size)
            .par_bridge()
            .any(|cols| linalg::numerical_rank(&m.select_columns(cols.iter())) < size);
        if dependent {
            return Spark { value: size, exact: true };
        }
    }
    Spark { value: rank + 1, exact: true }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RipResult<T: Scalar = f64> {
    pub order: usize,
    pub delta: T,
    /// Support attaining `delta` (lexicographically first among ties).
    pub worst_support: Vec<usize>,
    /// `delta < sqrt(2) - 1`, the level at which order-`2s` isometry
    /// guarantees stable `s`-sparse recovery.
    pub below_recovery_threshold: bool,
}

fn worst_of<T: Scalar>(a: (T, Vec<usize>), b: (T, Vec<usize>)) -> (T, Vec<usize>) {
    if a.0 > b.0 || (a.0 == b.0 && a.1 <= b.1) {
        a
    } else {
        b
    }
}

fn gram_deviation<T: Scalar>(g: &DMatrix<T>) -> T {
    let eig = linalg::symmetric_eigenvalues(g);
    match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => (hi - T::one()).max(T::one() - lo),
        _ => T::zero(),
    }
}

fn rip_from_gram<T: Scalar>(gram: &DMatrix<T>, s: usize, budget: u64) -> Result<RipResult<T>> {
    let ncols = gram.ncols();
    if s > ncols {
        return Err(Error::Domain(format!("isometry order {s} exceeds the {ncols} columns")));
    }
    check_budget(binomial(ncols, s), budget)?;
    let (delta, worst_support) = if s == 0 {
        (T::zero(), Vec::new())
    } else {
        (0..ncols)
            .combinations(s)
            .par_bridge()
            .map(|cols| {
                let sub = DMatrix::from_fn(s, s, |r, c| gram[(cols[r], cols[c])]);
                (gram_deviation(&sub), cols)
            })
            .reduce_with(worst_of)
            .unwrap_or((T::zero(), Vec::new()))
    };
    Ok(RipResult {
        order: s,
        below_recovery_threshold: delta < T::lit(2f64.sqrt() - 1.0),
        delta,
        worst_support,
    })
}

/// Restricted isometry constant of order `s` by enumerating every
/// `s`-column Gram matrix.
pub fn rip_constant_bruteforce<T: Scalar>(m: &DMatrix<T>, s: usize, budget: u64) -> Result<RipResult<T>> {
    rip_from_gram(&m.tr_mul(m), s, budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NspResult<T: Scalar = f64> {
    pub order: usize,
    pub holds: bool,
    /// Largest `||x_S||_1 / ||x||_1` over null vectors and `|S| = order`.
    pub max_ratio: T,
    /// Null vector attaining `max_ratio` when the property fails.
    pub witness: Option<DVector<T>>,
}

fn top_mass_ratio<T: Scalar>(x: &DVector<T>, s: usize) -> T {
    let mut mags: Vec<T> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let total = mags.iter().fold(T::zero(), |acc, &v| acc + v);
    if total == T::zero() {
        return T::zero();
    }
    mags.iter().take(s).fold(T::zero(), |acc, &v| acc + v) / total
}

/// Null space property of order `s`: `||x_S||_1 < ||x||_1 / 2` for every
/// nonzero null vector `x` and every `|S| = s`.
///
/// The ratio is maximized over the null space exactly. For a fixed `S` and
/// on each cone of the null space where the signs of the entries are fixed,
/// it is a ratio of linear functions, so its maximum sits on an extreme ray; every
/// extreme ray is cut out by `d - 1` independent coordinate hyperplanes,
/// where `d` is the nullity. The rays are enumerated directly.
///
/// Ratios within a few rounding units of one half count as failures.
pub fn nsp_check<T: Scalar>(m: &DMatrix<T>, s: usize, budget: u64) -> Result<NspResult<T>> {
    let null = linalg::null_space_basis(m);
    nsp_on_basis(&null, s, budget)
}

fn nsp_on_basis<T: Scalar>(null: &DMatrix<T>, s: usize, budget: u64) -> Result<NspResult<T>> {
    let (dim, nullity) = null.shape();
    if nullity == 0 || s == 0 {
        return Ok(NspResult {
            order: s,
            holds: true,
            max_ratio: T::zero(),
            witness: None,
        });
    }
    check_budget(binomial(dim, nullity - 1), budget)?;
    let best = (0..dim)
        .combinations(nullity - 1)
        .par_bridge()
        .filter_map(|rows| {
            let ray = if rows.is_empty() {
                null.column(0).into_owned()
            } else {
                let cut = null.select_rows(rows.iter());
                let dirs = linalg::null_space_basis(&cut);
                if dirs.ncols() != 1 {
                    return None;
                }
                null * dirs.column(0)
            };
            let ratio = top_mass_ratio(&ray, s);
            Some((ratio, rows, ray))
        })
        .reduce_with(|a, b| {
            if a.0 > b.0 || (a.0 == b.0 && a.1 <= b.1) {
                a
            } else {
                b
            }
        });
    let (max_ratio, _, ray) = best.ok_or_else(|| Error::Domain("null space has no extreme rays".into()))?;
    let slack = T::lit(64.0) * T::machine_epsilon() * T::lit(dim as f64);
    let holds = max_ratio < T::lit(0.5) - slack;
    Ok(NspResult {
        order: s,
        holds,
        max_ratio,
        witness: (!holds).then(|| ray.normalize()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PartialRipResult<T: Scalar = f64> {
    pub rip: RipResult<T>,
    /// `||P e_i||^2` for every input coordinate.
    pub column_norms_sq: Vec<T>,
}

/// Isometry constant of order `s - r` of the projected input block `P`.
pub fn partial_rip_constant<T: Scalar>(
    sys: &SensingSystem<T>,
    s_minus_r: usize,
    budget: u64,
) -> Result<PartialRipResult<T>> {
    let p = Projector::build(sys, RankPolicy::Strict)?.to_dense();
    // P is a symmetric idempotent, so it is its own Gram matrix.
    let column_norms_sq = p.diagonal().iter().copied().collect();
    Ok(PartialRipResult {
        rip: rip_from_gram(&p, s_minus_r, budget)?,
        column_norms_sq,
    })
}

/// Null space property of order `s - r` for the partially sparse pair,
/// i.e. of the projected input block `P`.
pub fn partial_nsp_check<T: Scalar>(sys: &SensingSystem<T>, s_minus_r: usize, budget: u64) -> Result<NspResult<T>> {
    let projector = Projector::build(sys, RankPolicy::Strict)?;
    // null(P) = range(psi_a).
    let null = linalg::range_basis(&sys.psi_a);
    debug_assert_eq!(null.ncols(), projector.psi_a_rank());
    nsp_on_basis(&null, s_minus_r, budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StabilityInputs<T: Scalar = f64> {
    pub beta1: T,
    pub beta2: T,
    pub eta: T,
    /// Best `(s - r)`-term l1 approximation error of the true input.
    pub sigma_s: T,
    pub s: usize,
    pub r: usize,
    /// Spectral norm of the input block.
    pub c1: T,
    /// Spectral norm of the pseudo-inverse of the dense block.
    pub c2: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StabilityBounds<T: Scalar = f64> {
    pub bound_u: T,
    pub bound_a: T,
}

/// Error bounds for the sparse and the dense part of a noisy, compressible
/// partially sparse recovery.
pub fn stability_bounds<T: Scalar>(inp: &StabilityInputs<T>) -> Result<StabilityBounds<T>> {
    let scalars = [inp.beta1, inp.beta2, inp.eta, inp.sigma_s, inp.c1, inp.c2];
    if scalars.iter().any(|v| !(*v >= T::zero()) || !v.is_finite_value()) {
        return Err(Error::Domain("stability inputs must be finite and nonnegative".into()));
    }
    if inp.r > inp.s {
        return Err(Error::Domain(format!("r = {} exceeds s = {}", inp.r, inp.s)));
    }
    let tail = if inp.s == inp.r {
        if inp.sigma_s > T::zero() {
            return Err(Error::Domain(
                "s = r leaves no sparse budget for a nonzero approximation error".into(),
            ));
        }
        T::zero()
    } else {
        inp.beta2 * inp.sigma_s / T::lit((inp.s - inp.r) as f64).sqrt()
    };
    let bound_u = inp.beta1 * inp.eta + tail;
    let bound_a = inp.c2 * (T::lit(2.0) * inp.eta + inp.c1 * bound_u);
    Ok(StabilityBounds { bound_u, bound_a })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCheck {
    /// Transition index for per-step checks.
    pub k: Option<usize>,
    pub rank: usize,
    pub required: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCheck {
    pub condition: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankConditions {
    pub mode: Mode,
    pub count_check: CountCheck,
    /// `rank(Z_k)` against `n` for `k = 0..k_f`.
    pub per_step: Vec<RankCheck>,
    /// Rank of `[Z_0 ... Z_{k_f - 1}]` (time-invariant mode only).
    pub lti_stacked: Option<RankCheck>,
    pub pass: bool,
    /// Human-readable reasons for every failed check.
    pub failures: Vec<String>,
}

/// Full-row-rank conditions on the state matrices that make the dense block
/// of the sensing matrix full column rank.
pub fn check_rank_conditions<T: Scalar>(ds: &Dataset<T>, mode: Mode) -> RankConditions {
    let Dims { n, k_f, q, .. } = ds.dims;
    let mut failures = Vec::new();
    let count_check = match mode {
        Mode::Ltv => CountCheck {
            condition: format!("q >= n ({q} >= {n})"),
            pass: q >= n,
        },
        Mode::Lti => CountCheck {
            condition: format!("k_f * q >= n ({} >= {n})", k_f * q),
            pass: k_f * q >= n,
        },
    };
    if !count_check.pass {
        let reason = match mode {
            Mode::Ltv => format!("too few experiments: q = {q} < n = {n}"),
            Mode::Lti => format!("too few snapshots: k_f * q = {} < n = {n}", k_f * q),
        };
        failures.push(reason);
    }
    let per_step: Vec<RankCheck> = (0..k_f)
        .map(|k| {
            let rank = linalg::numerical_rank(&ds.state_matrix(k));
            RankCheck {
                k: Some(k),
                rank,
                required: n,
                pass: rank == n,
            }
        })
        .collect();
    let lti_stacked = (mode == Mode::Lti).then(|| {
        let mut stacked = DMatrix::zeros(n, k_f * q);
        for k in 0..k_f {
            stacked.view_mut((0, k * q), (n, q)).copy_from(&ds.state_matrix(k));
        }
        let rank = linalg::numerical_rank(&stacked);
        RankCheck {
            k: None,
            rank,
            required: n,
            pass: rank == n,
        }
    });
    let pass = match &lti_stacked {
        None => {
            for c in per_step.iter().filter(|c| !c.pass) {
                failures.push(format!(
                    "Z_{} has rank {} < n = {n}: the states at step {} do not span the state space",
                    c.k.unwrap_or(0),
                    c.rank,
                    c.k.unwrap_or(0)
                ));
            }
            per_step.iter().all(|c| c.pass)
        }
        Some(c) => {
            if !c.pass {
                failures.push(format!("[Z_0 ... Z_{}] has rank {} < n = {n}", k_f - 1, c.rank));
            }
            c.pass
        }
    };
    RankConditions {
        mode,
        count_check,
        per_step,
        lti_stacked,
        pass,
        failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    /// Subset budget for the spark enumeration.
    pub spark_budget: u64,
    /// Compute coherence and spark of the projected input block.
    pub certificates: bool,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            spark_budget: DEFAULT_ENUMERATION_BUDGET,
            certificates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DiagnosticsReport<T: Scalar = f64> {
    pub dims: Dims,
    pub mode: Mode,
    pub input_sparsity: usize,
    pub rho_u: T,
    pub rho_u_pass: bool,
    /// Rank of the dense block from an SVD of the assembled matrix.
    pub psi_a_rank: usize,
    pub psi_a_cols: usize,
    pub psi_a_full_rank: bool,
    pub rank_conditions: RankConditions,
    /// Coherence of the projected input block; `None` when it is undefined
    /// (a column projects to zero, or fewer than two columns).
    pub mu: Option<T>,
    pub mcc_bound: Option<T>,
    pub spark: Option<Spark>,
    pub theorem1_pass: bool,
}

/// Uniqueness certificate for the partially sparse program on `ds`, given
/// the number of nonzero inputs.
pub fn theorem1_check<T: Scalar>(ds: &Dataset<T>, input_sparsity: usize, mode: Mode) -> DiagnosticsReport<T> {
    theorem1_check_with(ds, input_sparsity, mode, &DiagnosticsOptions::default())
}

pub fn theorem1_check_with<T: Scalar>(
    ds: &Dataset<T>,
    input_sparsity: usize,
    mode: Mode,
    opts: &DiagnosticsOptions,
) -> DiagnosticsReport<T> {
    let dims = ds.dims;
    let rho_u = T::lit(input_sparsity as f64) / T::lit(dims.num_measurements() as f64);
    let rho_u_pass = rho_u <= T::lit(0.5);
    let sys = assemble(ds, mode);
    let psi_a_rank = sys.psi_a_rank();
    let psi_a_cols = sys.num_dense_cols();
    let psi_a_full_rank = psi_a_rank == psi_a_cols;

    let (mu, mcc, spark) = if opts.certificates {
        let p = Projector::build(&sys, RankPolicy::MinNorm)
            .map(|p| p.to_dense())
            .unwrap_or_else(|_| DMatrix::identity(sys.num_rows(), sys.num_rows()));
        let mu = zero_safe_coherence(&p);
        let mcc = mu.and_then(|m| mcc_bound(m).ok());
        (mu, mcc, Some(spark_bruteforce(&p, opts.spark_budget)))
    } else {
        (None, None, None)
    };

    DiagnosticsReport {
        dims,
        mode,
        input_sparsity,
        rho_u,
        rho_u_pass,
        psi_a_rank,
        psi_a_cols,
        psi_a_full_rank,
        rank_conditions: check_rank_conditions(ds, mode),
        mu,
        mcc_bound: mcc,
        spark,
        theorem1_pass: rho_u_pass && psi_a_full_rank,
    }
}

/// Coherence with numerically vanishing columns treated as undefined.
fn zero_safe_coherence<T: Scalar>(m: &DMatrix<T>) -> Option<T> {
    let scale = m.amax();
    let tol = linalg::rank_threshold(m.nrows(), m.ncols(), scale.max(T::one()));
    if m.column_iter().any(|c| c.norm() <= tol) {
        return None;
    }
    mutual_coherence(m).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dims;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    const B: u64 = DEFAULT_ENUMERATION_BUDGET;

    #[test]
    fn coherence_examples() {
        assert_eq!(mutual_coherence(&DMatrix::<f64>::identity(3, 3)).unwrap(), 0.0);
        let dup = mat(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 1.0]);
        assert_relative_eq!(mutual_coherence(&dup).unwrap(), 1.0, epsilon = 1e-15);
        let h = 0.5f64.sqrt();
        let m = mat(2, 2, &[1.0, h, 0.0, h]);
        assert_relative_eq!(mutual_coherence(&m).unwrap(), h, epsilon = 1e-15);
        assert!(mutual_coherence(&mat(2, 2, &[1.0, 0.0, 0.0, 0.0])).is_err());
        assert!(mutual_coherence(&mat(2, 1, &[1.0, 0.0])).is_err());
    }

    #[test]
    fn mcc_examples() {
        assert_eq!(mcc_bound(0.5).unwrap(), 1.5);
        assert_eq!(mcc_bound(1.0).unwrap(), 1.0);
        assert!(mcc_bound(0.0f64).unwrap().is_infinite());
        assert!(mcc_bound(1.5).is_err());
        assert!(mcc_bound(-0.1).is_err());
    }

    #[test]
    fn spark_examples() {
        assert_eq!(spark_bruteforce(&DMatrix::<f64>::identity(3, 3), B), Spark { value: 4, exact: true });
        let dup = mat(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 1.0, 0.0, 0.0, 3.0]);
        assert_eq!(spark_bruteforce(&dup, B), Spark { value: 2, exact: true });
        let generic = mat(3, 4, &[0.3, -1.2, 0.7, 2.0, 1.1, 0.4, -0.9, 0.5, -0.6, 1.7, 0.2, -1.3]);
        assert_eq!(spark_bruteforce(&generic, B), Spark { value: 4, exact: true });
        let zero_col = mat(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(spark_bruteforce(&zero_col, B), Spark { value: 1, exact: true });
    }

    #[test]
    fn spark_budget_gives_lower_bound() {
        let generic = mat(3, 4, &[0.3, -1.2, 0.7, 2.0, 1.1, 0.4, -0.9, 0.5, -0.6, 1.7, 0.2, -1.3]);
        assert_eq!(spark_bruteforce(&generic, 5), Spark { value: 2, exact: false });
    }

    #[test]
    fn rip_examples() {
        let q = mat(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        for s in 0..=2 {
            assert!(rip_constant_bruteforce(&q, s, B).unwrap().delta.abs() < 1e-15);
        }
        let rho = 0.3f64;
        let m = mat(2, 2, &[1.0, rho, 0.0, (1.0 - rho * rho).sqrt()]);
        let r = rip_constant_bruteforce(&m, 2, B).unwrap();
        assert_relative_eq!(r.delta, rho, epsilon = 1e-14);
        assert!(r.below_recovery_threshold);
        let r = rip_constant_bruteforce(&(DMatrix::<f64>::identity(2, 2) * 2.0), 1, B).unwrap();
        assert_relative_eq!(r.delta, 3.0, epsilon = 1e-14);
        assert_eq!(r.worst_support, vec![0]);
        assert!(!r.below_recovery_threshold);
        assert!(matches!(
            rip_constant_bruteforce(&DMatrix::<f64>::identity(30, 30), 10, 1000),
            Err(Error::Budget { .. })
        ));
        assert!(rip_constant_bruteforce(&q, 3, B).is_err());
    }

    #[test]
    fn nsp_examples() {
        let r = nsp_check(&DMatrix::<f64>::identity(3, 3), 1, B).unwrap();
        assert!(r.holds && r.witness.is_none());

        let r = nsp_check(&mat(1, 2, &[1.0, 1.0]), 1, B).unwrap();
        assert!(!r.holds);
        assert_relative_eq!(r.max_ratio, 0.5, epsilon = 1e-12);
        let w = r.witness.unwrap();
        assert_relative_eq!(w[0], -w[1], epsilon = 1e-12);

        let r = nsp_check(&mat(1, 2, &[1.0, 2.0]), 1, B).unwrap();
        assert!(!r.holds);
        assert_relative_eq!(r.max_ratio, 2.0 / 3.0, epsilon = 1e-12);
        let w = r.witness.unwrap();
        assert_relative_eq!(w[0], -2.0 * w[1], epsilon = 1e-12);
    }

    #[test]
    fn nsp_holds_for_well_spread_null_space() {
        // Null space spanned by (1, 1, 1, 1, -1): the top entry carries a fifth.
        let m = mat(
            4,
            5,
            &[
                1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0,
            ],
        );
        let r = nsp_check(&m, 2, B).unwrap();
        assert!(r.holds);
        assert_relative_eq!(r.max_ratio, 0.4, epsilon = 1e-12);
        assert!(!nsp_check(&m, 3, B).unwrap().holds);
    }

    #[test]
    fn nsp_two_dimensional_null_space_matches_sampling() {
        let m = mat(1, 3, &[1.0, 2.0, 3.0]);
        let r = nsp_check(&m, 1, B).unwrap();
        let null = linalg::null_space_basis(&m);
        let mut sampled: f64 = 0.0;
        for t in 0..20000 {
            let th = t as f64 * std::f64::consts::PI / 20000.0;
            let x = &null * DVector::from_row_slice(&[th.cos(), th.sin()]);
            sampled = sampled.max(top_mass_ratio(&x, 1));
        }
        assert!(r.max_ratio >= sampled - 1e-12);
        assert!(r.max_ratio - sampled < 1e-3);
        // Null vector (3, 0, -1) puts three quarters of its mass on one entry.
        assert_relative_eq!(r.max_ratio, 0.75, epsilon = 1e-12);
    }

    fn toy_system(col: &[f64]) -> SensingSystem<f64> {
        let dims = Dims::new(1, 1, col.len()).unwrap();
        let psi = DMatrix::from_column_slice(col.len(), 1, col);
        SensingSystem::from_parts(dims, Mode::Ltv, psi, DVector::zeros(col.len()), 0.0).unwrap()
    }

    #[test]
    fn partial_rip_examples() {
        // Square invertible dense block: P = 0.
        let r = partial_rip_constant(&toy_system(&[2.0]), 1, B).unwrap();
        assert_relative_eq!(r.rip.delta, 1.0, epsilon = 1e-14);
        // psi_a = e_1 in R^2: P = diag(0, 1).
        let r = partial_rip_constant(&toy_system(&[1.0, 0.0]), 1, B).unwrap();
        assert_relative_eq!(r.rip.delta, 1.0, epsilon = 1e-14);
        assert_eq!(r.rip.worst_support, vec![0]);
        assert_relative_eq!(r.column_norms_sq[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(r.column_norms_sq[1], 1.0, epsilon = 1e-14);
        // Random tall block, order one: closed form.
        let sys = toy_system(&[0.4, -1.3, 0.8, 2.1, -0.2]);
        let r = partial_rip_constant(&sys, 1, B).unwrap();
        let p = Projector::build(&sys, RankPolicy::Strict).unwrap();
        let expected = (0..5).map(|i| (p.column(i).norm_squared() - 1.0).abs()).fold(0.0, f64::max);
        assert_relative_eq!(r.rip.delta, expected, epsilon = 1e-12);
        assert!(partial_rip_constant(&toy_system(&[0.0, 0.0]), 1, B).is_err());
    }

    #[test]
    fn partial_nsp_examples() {
        // null(P) = span(1, -1): ratio exactly one half.
        let r = partial_nsp_check(&toy_system(&[1.0, -1.0]), 1, B).unwrap();
        assert!(!r.holds);
        assert_relative_eq!(r.max_ratio, 0.5, epsilon = 1e-12);
        let r = partial_nsp_check(&toy_system(&[2.0, -1.0]), 1, B).unwrap();
        assert!(!r.holds);
        assert_relative_eq!(r.max_ratio, 2.0 / 3.0, epsilon = 1e-12);
        // No dense columns: P = I, null space trivial.
        let dims = Dims::new(1, 1, 2).unwrap();
        let empty = SensingSystem::from_parts(dims, Mode::Ltv, DMatrix::zeros(2, 0), DVector::zeros(2), 0.0).unwrap();
        let r = partial_nsp_check(&empty, 1, B).unwrap();
        assert!(r.holds);
        assert_eq!(r.holds, nsp_check(&DMatrix::<f64>::identity(2, 2), 1, B).unwrap().holds);
        // A dense block spanning everything only passes at order zero.
        assert!(partial_nsp_check(&toy_system(&[3.0]), 0, B).unwrap().holds);
        assert!(!partial_nsp_check(&toy_system(&[3.0]), 1, B).unwrap().holds);
    }

    #[test]
    fn stability_examples() {
        let base = StabilityInputs {
            beta1: 1.0,
            beta2: 1.0,
            eta: 0.0,
            sigma_s: 0.0,
            s: 4,
            r: 1,
            c1: 1.0,
            c2: 1.0,
        };
        let b = stability_bounds(&base).unwrap();
        assert_eq!((b.bound_u, b.bound_a), (0.0, 0.0));
        let b = stability_bounds(&StabilityInputs { eta: 0.1, ..base }).unwrap();
        assert_relative_eq!(b.bound_u, 0.1, epsilon = 1e-15);
        assert_relative_eq!(b.bound_a, 0.3, epsilon = 1e-15);
        let b = stability_bounds(&StabilityInputs { sigma_s: 0.6, s: 5, ..base }).unwrap();
        assert_relative_eq!(b.bound_u, 0.3, epsilon = 1e-15);
        assert!(stability_bounds(&StabilityInputs { s: 1, r: 1, sigma_s: 0.5, ..base }).is_err());
        assert!(stability_bounds(&StabilityInputs { s: 1, r: 1, ..base }).is_ok());
        assert!(stability_bounds(&StabilityInputs { r: 5, ..base }).is_err());
        assert!(stability_bounds(&StabilityInputs { beta1: -1.0, ..base }).is_err());
    }

    fn generic_dataset(n: usize, k_f: usize, q: usize) -> Dataset<f64> {
        let dims = Dims::new(n, k_f, q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64((n * 100 + k_f * 10 + q) as u64);
        let snaps = (0..q * (k_f + 1))
            .map(|_| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Dataset::new(dims, snaps, 0.0).unwrap()
    }

    #[test]
    fn rank_conditions_examples() {
        let rc = check_rank_conditions(&generic_dataset(10, 2, 5), Mode::Ltv);
        assert!(!rc.pass && !rc.count_check.pass);
        assert!(rc.failures.iter().any(|f| f.contains("q = 5 < n = 10")));

        let rc = check_rank_conditions(&generic_dataset(4, 3, 6), Mode::Ltv);
        assert!(rc.pass);
        assert!(rc.per_step.iter().all(|c| c.rank == 4));

        let rc = check_rank_conditions(&generic_dataset(4, 2, 2), Mode::Lti);
        assert!(rc.pass && rc.count_check.pass);
        assert_eq!(rc.lti_stacked.unwrap().rank, 4);
    }

    #[test]
    fn theorem1_examples() {
        let ds = generic_dataset(10, 4, 10);
        let opts = DiagnosticsOptions {
            certificates: false,
            ..Default::default()
        };
        let r = theorem1_check_with(&ds, 40, Mode::Ltv, &opts);
        assert_relative_eq!(r.rho_u, 0.1, epsilon = 1e-15);
        assert!(r.rho_u_pass && r.psi_a_full_rank && r.theorem1_pass);

        let r = theorem1_check_with(&ds, 400, Mode::Ltv, &opts);
        assert_eq!(r.rho_u, 1.0);
        assert!(!r.theorem1_pass);

        let r = theorem1_check_with(&generic_dataset(4, 2, 3), 1, Mode::Ltv, &opts);
        assert!(!r.psi_a_full_rank && !r.theorem1_pass);
    }

    #[test]
    fn theorem1_certificates_on_small_system() {
        let ds = generic_dataset(2, 1, 4);
        let r = theorem1_check(&ds, 1, Mode::Ltv);
        let mu = r.mu.unwrap();
        assert!((0.0..=1.0).contains(&mu));
        let spark = r.spark.unwrap();
        assert!(spark.exact);
        assert!(r.mcc_bound.unwrap() <= 0.5 * spark.value as f64 + 1e-12);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"theorem1_pass\":true"));
    }
}
