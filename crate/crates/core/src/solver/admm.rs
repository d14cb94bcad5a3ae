//! Graph-projection ADMM for weighted l1 minimization under an l2-ball
//! constraint:
//!
//! ```text
//! minimize  sum_i w_i |x_i|   subject to  ||M x - b||_2 <= eta
//! ```
//!
//! The splitting keeps the pair `(x, y)` on the graph `y = M x`; the l1 term
//! is handled by soft-thresholding `x`, the constraint by projecting `y` onto
//! the ball around `b`. With `eta = 0` the ball is the single point `b`, which
//! turns the method into an equality-constrained basis pursuit.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg;
use crate::scalar::Scalar;
use crate::sensing::Projector;

/// A linear map `M` together with the orthogonal projection onto its graph.
pub(crate) trait GraphOperator<T: Scalar> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: &DVector<T>) -> DVector<T>;
    /// Closest `(x, M x)` to `(c, d)`.
    fn project(&self, c: &DVector<T>, d: &DVector<T>) -> (DVector<T>, DVector<T>);
    /// Dense copy of the columns of `M` listed in `cols`.
    fn columns(&self, cols: &[usize]) -> DMatrix<T>;
}

/// Dense `M`, with the graph projection factored once by Cholesky.
pub(crate) struct DenseGraph<'a, T: Scalar> {
    m: &'a DMatrix<T>,
    factor: GraphFactor<T>,
}

enum GraphFactor<T: Scalar> {
    /// `I + M^T M` (input dimension not larger than output dimension).
    Normal(Cholesky<T, Dyn>),
    /// `I + M M^T`, used through the matrix inversion lemma.
    Dual(Cholesky<T, Dyn>),
}

impl<'a, T: Scalar> DenseGraph<'a, T> {
    pub(crate) fn new(m: &'a DMatrix<T>) -> Self {
        let (rows, cols) = m.shape();
        let factor = if cols <= rows {
            let g = DMatrix::identity(cols, cols) + m.tr_mul(m);
            GraphFactor::Normal(Cholesky::new(g).expect("I + M^T M is positive definite"))
        } else {
            let g = DMatrix::identity(rows, rows) + m * m.transpose();
            GraphFactor::Dual(Cholesky::new(g).expect("I + M M^T is positive definite"))
        };
        Self { m, factor }
    }
}

impl<T: Scalar> GraphOperator<T> for DenseGraph<'_, T> {
    fn input_dim(&self) -> usize {
        self.m.ncols()
    }

    fn output_dim(&self) -> usize {
        self.m.nrows()
    }

    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.m * x
    }

    fn project(&self, c: &DVector<T>, d: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let rhs = c + self.m.tr_mul(d);
        let x = match &self.factor {
            GraphFactor::Normal(ch) => ch.solve(&rhs),
            GraphFactor::Dual(ch) => {
                let inner = ch.solve(&(self.m * &rhs));
                rhs - self.m.tr_mul(&inner)
            }
        };
        let y = self.m * &x;
        (x, y)
    }

    fn columns(&self, cols: &[usize]) -> DMatrix<T> {
        self.m.select_columns(cols.iter())
    }
}

/// `M = P`, an orthogonal projector: `(I + P)^-1 = I - P / 2`.
pub(crate) struct ProjectorGraph<'a, T: Scalar> {
    pub(crate) p: &'a Projector<T>,
}

impl<T: Scalar> GraphOperator<T> for ProjectorGraph<'_, T> {
    fn input_dim(&self) -> usize {
        self.p.dim()
    }

    fn output_dim(&self) -> usize {
        self.p.dim()
    }

    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.p.apply(x)
    }

    fn project(&self, c: &DVector<T>, d: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let half = T::lit(0.5);
        let pc = self.p.apply(c);
        let pd = self.p.apply(d);
        let y = (&pc + &pd) * half;
        let x = c - &pc + &y;
        (x, y)
    }

    fn columns(&self, cols: &[usize]) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.p.dim(), cols.len());
        for (slot, &c) in cols.iter().enumerate() {
            out.set_column(slot, &self.p.column(c));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdmmSettings<T: Scalar> {
    pub eta: T,
    pub feas_tol: T,
    pub obj_tol: T,
    pub max_iters: usize,
    pub rho: T,
    pub relaxation: T,
    pub polish: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct AdmmOutcome<T: Scalar> {
    pub x: DVector<T>,
    pub iterations: usize,
    pub converged: bool,
}

const CHECK_EVERY: usize = 10;
const POLISH_EVERY: usize = 1000;

fn soft_threshold<T: Scalar>(v: T, kappa: T) -> T {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        T::zero()
    }
}

fn project_ball<T: Scalar>(v: &DVector<T>, center: &DVector<T>, radius: T) -> DVector<T> {
    let diff = v - center;
    let norm = diff.norm();
    if norm <= radius {
        v.clone()
    } else if radius <= T::zero() {
        center.clone()
    } else {
        center + diff * (radius / norm)
    }
}

fn weighted_l1<T: Scalar>(x: &DVector<T>, weights: &DVector<T>) -> T {
    x.iter().zip(weights.iter()).fold(T::zero(), |acc, (v, w)| acc + *w * v.abs())
}

/// Runs the iteration on a problem rescaled so that `||b||_inf = 1`; all
/// tolerances and the returned iterate refer to the original scale.
pub(crate) fn solve<T: Scalar, G: GraphOperator<T>>(
    op: &G,
    b: &DVector<T>,
    weights: &DVector<T>,
    settings: &AdmmSettings<T>,
) -> AdmmOutcome<T> {
    let d = op.input_dim();
    let scale = b.amax();
    if b.norm() <= settings.eta + settings.feas_tol || scale == T::zero() {
        return AdmmOutcome {
            x: DVector::zeros(d),
            iterations: 0,
            converged: true,
        };
    }
    let b_s = b / scale;
    let eta_s = settings.eta / scale;
    let feas_s = settings.feas_tol / scale;
    let rho = settings.rho;
    let alpha = settings.relaxation;
    let kappa = weights / rho;
    let scaled = AdmmSettings {
        feas_tol: feas_s,
        eta: eta_s,
        ..*settings
    };

    let mut x = DVector::<T>::zeros(d);
    let mut y = DVector::<T>::zeros(op.output_dim());
    let mut xt = DVector::<T>::zeros(d);
    let mut yt = DVector::<T>::zeros(op.output_dim());
    let mut x_half = DVector::<T>::zeros(d);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iters {
        iterations += 1;
        x_half = (&x - &xt).zip_map(&kappa, soft_threshold);
        let y_half = project_ball(&(&y - &yt), &b_s, eta_s);

        let x_rel = &x_half * alpha + &x * (T::one() - alpha);
        let y_rel = &y_half * alpha + &y * (T::one() - alpha);
        let (x_new, y_new) = op.project(&(&x_rel + &xt), &(&y_rel + &yt));
        xt += &x_rel - &x_new;
        yt += &y_rel - &y_new;

        let check = iterations % CHECK_EVERY == 0 || iterations == settings.max_iters;
        if check {
            let dual = ((&x_new - &x).norm_squared() + (&y_new - &y).norm_squared()).sqrt() * rho;
            let primal = ((&x_half - &x_new).norm_squared() + (&y_half - &y_new).norm_squared()).sqrt();
            let residual = (op.apply(&x_half) - &b_s).norm();
            let objective = weighted_l1(&x_half, weights).max(T::one());
            converged = residual <= eta_s + feas_s && primal <= feas_s && dual <= settings.obj_tol * objective;
        }
        x = x_new;
        y = y_new;
        if converged {
            break;
        }
        if settings.polish && iterations % POLISH_EVERY == 0 {
            let certified = if settings.eta == T::zero() {
                let dual = &yt * rho;
                polish_support(op, &b_s, weights, &x_half, &dual, false, &scaled)
                    .filter(|p| p.certified)
                    .map(|p| p.x)
            } else {
                polish_ball(op, &b_s, weights, &x_half, &scaled)
            };
            if let Some(x_opt) = certified {
                return AdmmOutcome {
                    x: x_opt * scale,
                    iterations,
                    converged: true,
                };
            }
        }
    }

    let mut best = x_half * scale;
    if settings.polish && settings.eta == T::zero() {
        let dual = yt * rho;
        if let Some(polished) = polish_support(op, b, weights, &best, &dual, converged, settings) {
            converged = converged || polished.certified;
            best = polished.x;
        }
    }
    AdmmOutcome {
        x: best,
        iterations,
        converged,
    }
}

struct Polished<T: Scalar> {
    x: DVector<T>,
    certified: bool,
}

/// Re-solves the equality constraint exactly on the support of `x`, and on
/// pruned supports when the iteration has not converged. A feasible refined
/// point is kept if it does not increase the weighted l1 objective, or if it
/// passes the optimality check.
fn polish_support<T: Scalar, G: GraphOperator<T>>(
    op: &G,
    b: &DVector<T>,
    weights: &DVector<T>,
    x: &DVector<T>,
    dual_estimate: &DVector<T>,
    converged: bool,
    settings: &AdmmSettings<T>,
) -> Option<Polished<T>> {
    let before = weighted_l1(x, weights);
    let slack = settings.obj_tol * before.max(T::one());
    let cutoffs: &[f64] = if converged { &[0.0] } else { &[0.0, 1e-6, 1e-4, 1e-2] };
    let peak = x.amax();
    let mut fallback = None;
    for &cut in cutoffs {
        let floor = peak * T::lit(cut);
        let support: Vec<usize> = (0..x.len())
            .filter(|&i| x[i].abs() > floor || (weights[i] == T::zero() && x[i] != T::zero()))
            .collect();
        if support.is_empty() || support.len() > op.output_dim() {
            continue;
        }
        let coeffs = linalg::pinv_solve(&op.columns(&support), b);
        let mut candidate = DVector::zeros(x.len());
        for (slot, &i) in support.iter().enumerate() {
            candidate[i] = coeffs[slot];
        }
        if (op.apply(&candidate) - b).norm() > settings.feas_tol {
            continue;
        }
        if !converged && certify_optimal(op, &candidate, weights, dual_estimate, settings.obj_tol) {
            return Some(Polished { x: candidate, certified: true });
        }
        if fallback.is_none() && weighted_l1(&candidate, weights) <= before + slack {
            fallback = Some(Polished { x: candidate, certified: false });
        }
    }
    fallback
}

/// Minimizes the weighted l1 norm over the ball on a fixed support and sign
/// pattern taken from `x`, where the objective is linear and the minimizer has
/// a closed form. The result is returned only if its signs agree with the
/// pattern and its multiplier satisfies the off-support optimality bounds.
fn polish_ball<T: Scalar, G: GraphOperator<T>>(
    op: &G,
    b: &DVector<T>,
    weights: &DVector<T>,
    x: &DVector<T>,
    settings: &AdmmSettings<T>,
) -> Option<DVector<T>> {
    let all: Vec<usize> = (0..x.len()).collect();
    let m = op.columns(&all);
    let peak = x.amax();
    let slack = settings.obj_tol * weights.amax().max(T::one());
    for cut in [0.0, 1e-6, 1e-4, 1e-2] {
        let floor = peak * T::lit(cut);
        let support: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&i| x[i].abs() > floor || (weights[i] == T::zero() && x[i] != T::zero()))
            .collect();
        if support.is_empty() || support.len() > op.output_dim() {
            continue;
        }
        let m_s = m.select_columns(&support);
        let Some(chol) = m_s.tr_mul(&m_s).cholesky() else {
            continue;
        };
        let cost = DVector::from_iterator(support.len(), support.iter().map(|&i| weights[i] * x[i].signum()));
        let x_ls = chol.solve(&m_s.tr_mul(b));
        let base = (&m_s * &x_ls - b).norm();
        let room = settings.eta * settings.eta - base * base;
        let step = chol.solve(&cost);
        let curvature = cost.dot(&step);
        if room <= T::zero() || curvature <= T::zero() {
            continue;
        }
        let t = room.sqrt() / curvature.sqrt();
        let x_s = x_ls - step * t;
        let signs_hold = support
            .iter()
            .zip(x_s.iter())
            .all(|(&i, &v)| weights[i] == T::zero() || v * x[i].signum() > T::zero());
        if !signs_hold {
            continue;
        }
        let mut candidate = DVector::zeros(x.len());
        for (slot, &i) in support.iter().enumerate() {
            candidate[i] = x_s[slot];
        }
        let residual = &m * &candidate - b;
        if residual.norm() > settings.eta + settings.feas_tol {
            continue;
        }
        let grad = m.tr_mul(&residual) * (-T::one() / t);
        let bounds = all
            .iter()
            .filter(|&&i| candidate[i] == T::zero())
            .all(|&i| grad[i].abs() <= weights[i] + slack);
        if bounds {
            return Some(candidate);
        }
    }
    None
}

/// Checks the optimality conditions of the equality-constrained problem at
/// `x`: some dual `nu` must satisfy `(M^T nu)_i = w_i sign(x_i)` on the support
/// and on unweighted columns, and `|(M^T nu)_i| <= w_i` elsewhere. The
/// iteration's dual estimate is corrected onto the equalities by least
/// squares before the bounds are tested.
fn certify_optimal<T: Scalar, G: GraphOperator<T>>(
    op: &G,
    x: &DVector<T>,
    weights: &DVector<T>,
    dual_estimate: &DVector<T>,
    tol: T,
) -> bool {
    let all: Vec<usize> = (0..x.len()).collect();
    let m = op.columns(&all);
    let pinned: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&i| x[i] != T::zero() || weights[i] == T::zero())
        .collect();
    let target = DVector::from_iterator(pinned.len(), pinned.iter().map(|&i| weights[i] * x[i].signum()));
    let m_pinned = m.select_columns(&pinned);
    let gap = m_pinned.tr_mul(dual_estimate) - &target;
    let nu = dual_estimate - linalg::pinv_solve(&m_pinned.transpose(), &gap);
    let grad = m.tr_mul(&nu);
    let slack = tol * weights.amax().max(T::one());
    let equalities = pinned.iter().zip(target.iter()).all(|(&i, &t)| (grad[i] - t).abs() <= slack);
    let bounds = all
        .iter()
        .filter(|&&i| x[i] == T::zero() && weights[i] != T::zero())
        .all(|&i| grad[i].abs() <= weights[i] + slack);
    equalities && bounds
}
