//! Synthetic data generation, Monte Carlo harness and error metrics.
//!
//! # Random streams
//!
//! Trial `t` draws from `ChaCha8Rng::seed_from_u64(seed ^ t)`. Normal
//! variates come from `rand_distr::StandardNormal` (ziggurat). Within a
//! trial the draws happen in this order:
//!
//! 1. dynamics entries, `A[0]` first, each matrix row by row;
//! 2. initial states `z^(j)[0]`, experiment by experiment;
//! 3. input targets: for each step `k`, a shuffled deck of the `n` states is
//!    dealt `inputs_per_step` cards per experiment and reshuffled when it
//!    cannot serve a full hand, so targets cycle uniformly over the states;
//! 4. input values, in `(j, k)` order and target order;
//! 5. noise entries in stacked order, skipped entirely when `alpha_w = 0`.
//!
//! Truncated-normal noise is drawn by rejection outside `[-3, 3]`.

mod plot;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::check_rank_conditions;
use crate::error::{Error, Result};
use crate::model::{simulate_dataset, Dataset, Dims, InputPlan, LtvModel, Mode};
use crate::sensing::{assemble, Projector, RankPolicy};
use crate::solver::{solve_with_projector, SolveStatus, SolverOptions};

pub use plot::{line_chart_svg, Series};

/// Truncation point of the thresholded normal noise, in standard deviations.
pub const NOISE_TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDist {
    #[default]
    TruncatedNormal,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dims: Dims,
    pub alpha_a: f64,
    pub alpha_u: f64,
    pub alpha_w: f64,
    pub noise_dist: NoiseDist,
    pub inputs_per_step: usize,
    pub trials: usize,
    pub seed: u64,
    /// Detection threshold for the cardinality metric.
    pub tau: f64,
    /// Factor applied to the realized noise norm before it is used as the
    /// solver's noise bound.
    pub eta_inflation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dims: Dims {
                n: 10,
                k_f: 4,
                q: 30,
                lti: false,
            },
            alpha_a: 1.0,
            alpha_u: 1.0,
            alpha_w: 0.0,
            noise_dist: NoiseDist::TruncatedNormal,
            inputs_per_step: 1,
            trials: 25,
            seed: 0,
            tau: DEFAULT_TAU,
            eta_inflation: 1.0,
        }
    }
}

/// Default detection threshold. Numerically zero entries of the recovered
/// input stay well below it, while genuine N(0, 1) inputs rarely do.
pub const DEFAULT_TAU: f64 = 1e-3;

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        for (name, v) in [
            ("alpha_a", self.alpha_a),
            ("alpha_u", self.alpha_u),
            ("alpha_w", self.alpha_w),
            ("eta_inflation", self.eta_inflation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.inputs_per_step > self.dims.n {
            return Err(Error::Config(format!(
                "inputs_per_step = {} exceeds the {} states",
                self.inputs_per_step, self.dims.n
            )));
        }
        Ok(())
    }

    pub fn input_sparsity(&self) -> usize {
        self.inputs_per_step * self.dims.k_f * self.dims.q
    }
}

/// One generated trial with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub model: LtvModel<f64>,
    pub inputs: InputPlan<f64>,
    /// Dataset whose `eta` is the realized noise norm times the inflation.
    pub dataset: Dataset<f64>,
    pub u_true: DVector<f64>,
    pub a_true: DVector<f64>,
    pub noise: DVector<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn noise_sample(rng: &mut ChaCha8Rng, dist: NoiseDist) -> f64 {
    match dist {
        NoiseDist::TruncatedNormal => loop {
            let v = normal(rng);
            if v.abs() <= NOISE_TRUNCATION {
                break v;
            }
        },
        NoiseDist::Uniform => rng.random_range(-1.0..1.0),
    }
}

/// Deterministic in `(cfg.seed, trial)`; the dynamics are time invariant
/// when `cfg.dims.lti` is set.
pub fn generate_synthetic(cfg: &SyntheticConfig, trial: u64) -> Result<SyntheticTrial> {
    cfg.validate()?;
    let dims = cfg.dims;
    let Dims { n, k_f, q, .. } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ trial);

    let blocks = if dims.lti { 1 } else { k_f };
    let a_mats: Vec<DMatrix<f64>> = (0..blocks)
        .map(|_| {
            let entries: Vec<f64> = (0..n * n).map(|_| cfg.alpha_a * normal(&mut rng)).collect();
            DMatrix::from_row_slice(n, n, &entries)
        })
        .collect();
    let model = LtvModel::new(dims, a_mats)?;

    let z0: Vec<DVector<f64>> = (0..q)
        .map(|_| DVector::from_fn(n, |_, _| normal(&mut rng)))
        .collect();

    let p = cfg.inputs_per_step;
    let mut targets = vec![Vec::new(); q * k_f];
    for k in 0..k_f {
        let mut deck: Vec<usize> = Vec::new();
        for j in 0..q {
            if deck.len() < p {
                deck = (0..n).collect();
                deck.shuffle(&mut rng);
            }
            let mut hand: Vec<usize> = deck.drain(..p).collect();
            hand.sort_unstable();
            targets[j * k_f + k] = hand;
        }
    }
    let mut inputs = InputPlan::empty(dims);
    for j in 0..q {
        for k in 0..k_f {
            for &i in &targets[j * k_f + k] {
                inputs.insert(j, k, i, cfg.alpha_u * normal(&mut rng))?;
            }
        }
    }

    let noise = if cfg.alpha_w > 0.0 {
        DVector::from_fn(dims.num_measurements(), |_, _| {
            cfg.alpha_w * noise_sample(&mut rng, cfg.noise_dist)
        })
    } else {
        DVector::zeros(dims.num_measurements())
    };
    let realized = simulate_dataset(&model, &inputs, Some(&noise), &z0)?;
    let eta = realized.eta * cfg.eta_inflation;
    Ok(SyntheticTrial {
        u_true: inputs.to_vector(),
        a_true: model.dynamics_vector(),
        dataset: realized.with_eta(eta),
        model,
        inputs,
        noise,
    })
}

/// Cardinality errors of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CardinalityError {
    /// `(fp + fn) / len`.
    pub rate: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// False positives are detections (`|u_hat| > tau`) where the truth is zero,
/// false negatives are true nonzeros that are not detected.
pub fn mape_card(u_true: &DVector<f64>, u_hat: &DVector<f64>, tau: f64) -> Result<CardinalityError> {
    if u_true.len() != u_hat.len() {
        return Err(crate::error::shape_err("estimated input", u_true.len(), u_hat.len()));
    }
    let mut fp = 0;
    let mut fn_ = 0;
    for (&t, &h) in u_true.iter().zip(u_hat.iter()) {
        let detected = h.abs() > tau;
        if t == 0.0 && detected {
            fp += 1;
        } else if t != 0.0 && !detected {
            fn_ += 1;
        }
    }
    let len = u_true.len().max(1) as f64;
    Ok(CardinalityError {
        rate: (fp + fn_) as f64 / len,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// Normalization of the input-magnitude error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NzNormalization {
    /// Divide the summed squared error by `T * s * q`.
    #[default]
    Printed,
    /// Divide by `T * s`, the number of nonzero entries summed over.
    PerEntry,
}

/// Per-trial ingredients of the input-magnitude error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NzError {
    /// Squared error summed over the true nonzero entries.
    pub sq_err: f64,
    /// Number of true nonzero entries.
    pub s: usize,
    pub q: usize,
}

impl NzError {
    pub fn new(u_true: &DVector<f64>, u_hat: &DVector<f64>, q: usize) -> Self {
        let (sq_err, s) = u_true
            .iter()
            .zip(u_hat.iter())
            .filter(|(t, _)| **t != 0.0)
            .fold((0.0, 0), |(acc, s), (t, h)| (acc + (t - h) * (t - h), s + 1));
        Self { sq_err, s, q }
    }
}

/// Root of the summed squared error on true nonzeros over all trials.
pub fn armse_nz(records: &[NzError], normalization: NzNormalization) -> Result<f64> {
    let total: usize = records.iter().map(|r| r.s).sum();
    if total == 0 {
        return Err(Error::Domain("no nonzero inputs to average over (s = 0)".into()));
    }
    let num: f64 = records.iter().map(|r| r.sq_err).sum();
    let den: f64 = match normalization {
        NzNormalization::Printed => records.iter().map(|r| (r.s * r.q) as f64).sum(),
        NzNormalization::PerEntry => total as f64,
    };
    Ok((num / den).sqrt())
}

/// Root mean square error over all entries of all trials.
pub fn armse_a(pairs: &[(f64, usize)]) -> Result<f64> {
    let count: usize = pairs.iter().map(|p| p.1).sum();
    if count == 0 {
        return Err(Error::Domain("no dynamics entries to average over".into()));
    }
    Ok((pairs.iter().map(|p| p.0).sum::<f64>() / count as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub rank_conditions_pass: bool,
    pub rho_u: f64,
    pub psi_a_full_rank: bool,
    /// The dense block was rank deficient and the minimum-norm projector
    /// was used instead.
    pub min_norm_fallback: bool,
    pub status: Option<SolveStatus>,
    pub error: Option<String>,
    pub iterations: usize,
    pub residual_norm: Option<f64>,
    pub eta: f64,
    pub cardinality: Option<CardinalityError>,
    pub nz: Option<NzError>,
    /// Squared error summed over the dynamics vector, with its length.
    pub a_sq_err: Option<(f64, usize)>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.status != Some(SolveStatus::Optimal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mode: Mode,
    pub q: usize,
    pub alpha_w: f64,
    pub tau: f64,
    pub trials: usize,
    pub mape_card: f64,
    /// Printed normalization, `T * s * q`.
    pub armse_nz: f64,
    /// Per-entry normalization, `T * s`.
    pub armse_nz_per_entry: f64,
    pub armse_a: f64,
    pub fp_count: usize,
    pub fn_count: usize,
    /// Fraction of trials without an optimal solve.
    pub failure_fraction: f64,
    /// Trials whose rank conditions failed.
    pub diagnostics_failures: usize,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

fn run_trial(cfg: &SyntheticConfig, mode: Mode, solver: &SolverOptions<f64>, trial: u64) -> TrialRecord {
    let mut record = TrialRecord {
        trial,
        rank_conditions_pass: false,
        rho_u: cfg.input_sparsity() as f64 / cfg.dims.num_measurements() as f64,
        psi_a_full_rank: false,
        min_norm_fallback: false,
        status: None,
        error: None,
        iterations: 0,
        residual_norm: None,
        eta: 0.0,
        cardinality: None,
        nz: None,
        a_sq_err: None,
    };
    let gen = match generate_synthetic(cfg, trial) {
        Ok(g) => g,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.eta = gen.dataset.eta;
    record.rank_conditions_pass = check_rank_conditions(&gen.dataset, mode).pass;
    let sys = assemble(&gen.dataset, mode);
    let projector = match Projector::build(&sys, RankPolicy::Strict) {
        Ok(p) => {
            record.psi_a_full_rank = true;
            p
        }
        Err(Error::Identifiability { .. }) => {
            record.min_norm_fallback = true;
            match Projector::build(&sys, RankPolicy::MinNorm) {
                Ok(p) => p,
                Err(e) => {
                    record.error = Some(e.to_string());
                    return record;
                }
            }
        }
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let opts = solver.with_eta(gen.dataset.eta);
    let sol = match solve_with_projector(&sys, &projector, &opts) {
        Ok(s) => s,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.status = Some(sol.status);
    record.iterations = sol.iterations;
    record.residual_norm = Some(sol.residual_norm);
    record.cardinality = mape_card(&gen.u_true, &sol.u_star, cfg.tau).ok();
    record.nz = Some(NzError::new(&gen.u_true, &sol.u_star, cfg.dims.q));
    let a_true = match mode {
        Mode::Ltv => gen.a_true.clone(),
        // A time-invariant fit is scored against the first generating matrix.
        Mode::Lti => gen.a_true.rows(0, cfg.dims.n * cfg.dims.n).into_owned(),
    };
    if a_true.len() == sol.a_star.len() {
        record.a_sq_err = Some(((a_true - &sol.a_star).norm_squared(), sol.a_star.len()));
    }
    record
}

/// Runs `cfg.trials` independent trials with the default solver settings.
pub fn run_monte_carlo(cfg: &SyntheticConfig, mode: Mode) -> Result<MetricsSummary> {
    run_monte_carlo_with(cfg, mode, &SolverOptions::default(), Execution::Parallel)
}

/// Trials are seeded individually and aggregated in trial order, so the
/// parallel and the sequential schedule give identical summaries.
pub fn run_monte_carlo_with(
    cfg: &SyntheticConfig,
    mode: Mode,
    solver: &SolverOptions<f64>,
    exec: Execution,
) -> Result<MetricsSummary> {
    cfg.validate()?;
    solver.validate()?;
    let trials = cfg.trials as u64;
    let records: Vec<TrialRecord> = match exec {
        Execution::Parallel => (0..trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, mode, solver, t))
            .collect(),
        Execution::Sequential => (0..trials).map(|t| run_trial(cfg, mode, solver, t)).collect(),
    };
    summarize(cfg, mode, records)
}

fn summarize(cfg: &SyntheticConfig, mode: Mode, records: Vec<TrialRecord>) -> Result<MetricsSummary> {
    let scored: Vec<&TrialRecord> = records.iter().filter(|r| r.cardinality.is_some()).collect();
    let nan_if_empty = |v: f64| if scored.is_empty() { f64::NAN } else { v };
    let mape = scored
        .iter()
        .filter_map(|r| r.cardinality.map(|c| c.rate))
        .sum::<f64>()
        / scored.len().max(1) as f64;
    let nz: Vec<NzError> = scored.iter().filter_map(|r| r.nz).collect();
    let a_pairs: Vec<(f64, usize)> = scored.iter().filter_map(|r| r.a_sq_err).collect();
    let (armse_printed, armse_entry) = if nz.iter().any(|r| r.s > 0) {
        (
            armse_nz(&nz, NzNormalization::Printed)?,
            armse_nz(&nz, NzNormalization::PerEntry)?,
        )
    } else {
        (0.0, 0.0)
    };
    Ok(MetricsSummary {
        mode,
        q: cfg.dims.q,
        alpha_w: cfg.alpha_w,
        tau: cfg.tau,
        trials: records.len(),
        mape_card: nan_if_empty(mape),
        armse_nz: nan_if_empty(armse_printed),
        armse_nz_per_entry: nan_if_empty(armse_entry),
        armse_a: if a_pairs.is_empty() { f64::NAN } else { armse_a(&a_pairs)? },
        fp_count: scored.iter().filter_map(|r| r.cardinality).map(|c| c.false_positives).sum(),
        fn_count: scored.iter().filter_map(|r| r.cardinality).map(|c| c.false_negatives).sum(),
        failure_fraction: records.iter().filter(|r| r.failed()).count() as f64 / records.len().max(1) as f64,
        diagnostics_failures: records.iter().filter(|r| !r.rank_conditions_pass).count(),
        records,
    })
}

/// Grid of experiment counts and noise scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub q_values: Vec<usize>,
    pub alpha_w_values: Vec<f64>,
}

impl Default for SweepGrid {
    /// Experiment counts 5 to 30 against noise scales 0, 0.01 and 0.05.
    fn default() -> Self {
        Self {
            q_values: vec![5, 10, 15, 20, 25, 30],
            alpha_w_values: vec![0.0, 0.01, 0.05],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.q_values.is_empty() || self.alpha_w_values.is_empty() {
            return Err(Error::Config("sweep grid must have at least one q and one alpha_w".into()));
        }
        Ok(())
    }
}

/// One Monte Carlo run per grid cell, `q` outer and `alpha_w` inner.
pub fn sweep(
    base: &SyntheticConfig,
    grid: &SweepGrid,
    mode: Mode,
    solver: &SolverOptions<f64>,
    exec: Execution,
) -> Result<Vec<MetricsSummary>> {
    grid.validate()?;
    let mut cells = Vec::with_capacity(grid.q_values.len() * grid.alpha_w_values.len());
    for &q in &grid.q_values {
        for &alpha_w in &grid.alpha_w_values {
            let cfg = SyntheticConfig {
                dims: Dims { q, ..base.dims },
                alpha_w,
                ..*base
            };
            cells.push(run_monte_carlo_with(&cfg, mode, solver, exec)?);
        }
    }
    Ok(cells)
}

const METRICS: [&str; 7] = [
    "mape_card",
    "armse_nz",
    "armse_nz_per_entry",
    "armse_a",
    "fp_count",
    "fn_count",
    "failure_fraction",
];

fn metric_values(s: &MetricsSummary) -> [f64; 7] {
    [
        s.mape_card,
        s.armse_nz,
        s.armse_nz_per_entry,
        s.armse_a,
        s.fp_count as f64,
        s.fn_count as f64,
        s.failure_fraction,
    ]
}

/// Long format: one `(q, alpha_w, metric, value)` row per metric and cell.
pub fn write_long_csv<W: std::io::Write>(cells: &[MetricsSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "alpha_w", "metric", "value"])?;
    for c in cells {
        for (name, value) in METRICS.iter().zip(metric_values(c)) {
            w.write_record([c.q.to_string(), c.alpha_w.to_string(), name.to_string(), value.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide format: one row per cell.
pub fn write_summary_csv<W: std::io::Write>(cells: &[MetricsSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["q".to_string(), "alpha_w".into(), "tau".into(), "trials".into()];
    header.extend(METRICS.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for c in cells {
        let mut row = vec![c.q.to_string(), c.alpha_w.to_string(), c.tau.to_string(), c.trials.to_string()];
        row.extend(metric_values(c).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Charts of every error metric against `q` (one line per noise level) and
/// against `alpha_w` (one line per `q`). Returns `(file stem, svg)` pairs.
pub fn sweep_charts(cells: &[MetricsSummary]) -> Vec<(String, String)> {
    let mut charts = Vec::new();
    let mut qs: Vec<usize> = cells.iter().map(|c| c.q).collect();
    qs.sort_unstable();
    qs.dedup();
    let mut alphas: Vec<f64> = cells.iter().map(|c| c.alpha_w).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let metrics: [(&str, fn(&MetricsSummary) -> f64); 3] = [
        ("mape_card", |c| c.mape_card),
        ("armse_nz", |c| c.armse_nz),
        ("armse_a", |c| c.armse_a),
    ];
    for (name, get) in metrics {
        if qs.len() > 1 {
            let series: Vec<Series> = alphas
                .iter()
                .map(|&a| Series {
                    label: format!("alpha_w = {a}"),
                    points: cells
                        .iter()
                        .filter(|c| c.alpha_w == a)
                        .map(|c| (c.q as f64, get(c)))
                        .collect(),
                })
                .collect();
            charts.push((format!("{name}_vs_q"), line_chart_svg(&format!("{name} vs q"), "q", name, &series)));
        }
        if alphas.len() > 1 {
            let series: Vec<Series> = qs
                .iter()
                .map(|&q| Series {
                    label: format!("q = {q}"),
                    points: cells
                        .iter()
                        .filter(|c| c.q == q)
                        .map(|c| (c.alpha_w, get(c)))
                        .collect(),
                })
                .collect();
            charts.push((
                format!("{name}_vs_alpha_w"),
                line_chart_svg(&format!("{name} vs alpha_w"), "alpha_w", name, &series),
            ));
        }
    }
    charts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            dims: Dims::new(3, 2, 6).unwrap(),
            trials: 3,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn generation_counts_and_sparsity() {
        let cfg = SyntheticConfig {
            dims: Dims::new(10, 4, 20).unwrap(),
            ..Default::default()
        };
        let g = generate_synthetic(&cfg, 0).unwrap();
        assert_eq!(g.inputs.sparsity(), 80);
        assert_eq!(cfg.input_sparsity(), 80);
        let rho = g.inputs.sparsity() as f64 / cfg.dims.num_measurements() as f64;
        assert!((rho - 0.1).abs() < 1e-15);
        assert_eq!(g.dataset.eta, 0.0);
        for j in 0..20 {
            for k in 0..4 {
                assert_eq!(g.inputs.entries.range((j, k, 0)..=(j, k, usize::MAX)).count(), 1);
            }
        }
    }

    #[test]
    fn targets_cycle_over_states() {
        let cfg = SyntheticConfig {
            dims: Dims::new(4, 2, 8).unwrap(),
            ..Default::default()
        };
        let g = generate_synthetic(&cfg, 3).unwrap();
        for k in 0..2 {
            let mut hits = [0usize; 4];
            for (&(_, kk, i), _) in &g.inputs.entries {
                if kk == k {
                    hits[i] += 1;
                }
            }
            assert_eq!(hits, [2, 2, 2, 2]);
        }
    }

    #[test]
    fn several_inputs_per_step_are_distinct() {
        let cfg = SyntheticConfig {
            dims: Dims::new(5, 2, 7).unwrap(),
            inputs_per_step: 3,
            ..Default::default()
        };
        let g = generate_synthetic(&cfg, 1).unwrap();
        assert_eq!(g.inputs.sparsity(), 3 * 2 * 7);
        let bad = SyntheticConfig {
            inputs_per_step: 6,
            ..cfg
        };
        assert!(matches!(generate_synthetic(&bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig {
            alpha_w: 0.05,
            ..small_cfg()
        };
        let a = generate_synthetic(&cfg, 2).unwrap();
        let b = generate_synthetic(&cfg, 2).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, 3).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn noise_is_bounded_and_scaled() {
        for dist in [NoiseDist::TruncatedNormal, NoiseDist::Uniform] {
            let cfg = SyntheticConfig {
                alpha_w: 0.1,
                noise_dist: dist,
                eta_inflation: 2.0,
                ..small_cfg()
            };
            let g = generate_synthetic(&cfg, 0).unwrap();
            let bound = match dist {
                NoiseDist::TruncatedNormal => 0.1 * NOISE_TRUNCATION,
                NoiseDist::Uniform => 0.1,
            };
            assert!(g.noise.amax() <= bound);
            assert!((g.dataset.eta - 2.0 * g.noise.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn cardinality_examples() {
        let t = v(&[1.0, 0.0, -2.0]);
        assert_eq!(mape_card(&t, &t, 0.1).unwrap().rate, 0.0);
        let mut truth = DVector::zeros(40);
        let mut est = DVector::zeros(40);
        truth[0] = 1.0;
        est[1] = 0.5;
        est[2] = -0.5;
        let e = mape_card(&truth, &est, 0.1).unwrap();
        assert_eq!((e.false_positives, e.false_negatives), (2, 1));
        assert!((e.rate - 0.075).abs() < 1e-15);
        let e = mape_card(&t, &DVector::zeros(3), 0.1).unwrap();
        assert!((e.rate - 2.0 / 3.0).abs() < 1e-15);
        assert!(mape_card(&t, &DVector::zeros(2), 0.1).is_err());
    }

    #[test]
    fn armse_examples() {
        let perfect = NzError::new(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), 1);
        assert_eq!(armse_nz(&[perfect, perfect], NzNormalization::Printed).unwrap(), 0.0);
        let one = NzError::new(&v(&[1.0]), &v(&[0.8]), 1);
        assert!((armse_nz(&[one], NzNormalization::Printed).unwrap() - 0.2).abs() < 1e-12);
        let e1 = NzError { sq_err: 0.5, s: 4, q: 2 };
        let e2 = NzError { sq_err: 0.3, s: 4, q: 2 };
        let expected = ((0.5 + 0.3) / (2.0 * 4.0 * 2.0f64)).sqrt();
        assert!((armse_nz(&[e1, e2], NzNormalization::Printed).unwrap() - expected).abs() < 1e-15);
        let expected = ((0.5 + 0.3) / 8.0f64).sqrt();
        assert!((armse_nz(&[e1, e2], NzNormalization::PerEntry).unwrap() - expected).abs() < 1e-15);
        let none = NzError { sq_err: 0.0, s: 0, q: 1 };
        assert!(matches!(armse_nz(&[none], NzNormalization::Printed), Err(Error::Domain(_))));
        assert!((armse_a(&[(0.08, 2), (0.0, 2)]).unwrap() - 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_is_schedule_independent() {
        let cfg = SyntheticConfig {
            alpha_w: 0.01,
            ..small_cfg()
        };
        let opts = SolverOptions::default();
        let par = run_monte_carlo_with(&cfg, Mode::Ltv, &opts, Execution::Parallel).unwrap();
        let seq = run_monte_carlo_with(&cfg, Mode::Ltv, &opts, Execution::Sequential).unwrap();
        assert_eq!(serde_json::to_string(&par).unwrap(), serde_json::to_string(&seq).unwrap());
        assert_eq!(par.trials, 3);
    }

    #[test]
    fn rank_deficient_trials_fall_back_and_are_flagged() {
        let cfg = SyntheticConfig {
            dims: Dims::new(4, 1, 2).unwrap(),
            trials: 2,
            ..Default::default()
        };
        let s = run_monte_carlo(&cfg, Mode::Ltv).unwrap();
        assert_eq!(s.diagnostics_failures, 2);
        assert!(s.records.iter().all(|r| r.min_norm_fallback && !r.psi_a_full_rank));
        assert!(s.mape_card.is_finite());
    }

    #[test]
    fn sweep_cells_match_single_runs() {
        let base = small_cfg();
        let grid = SweepGrid {
            q_values: vec![6],
            alpha_w_values: vec![0.0],
        };
        let opts = SolverOptions::default();
        let cells = sweep(&base, &grid, Mode::Ltv, &opts, Execution::Parallel).unwrap();
        let single = run_monte_carlo_with(&base, Mode::Ltv, &opts, Execution::Parallel).unwrap();
        assert_eq!(cells, vec![single]);

        let mut long = Vec::new();
        write_long_csv(&cells, &mut long).unwrap();
        let text = String::from_utf8(long).unwrap();
        assert!(text.starts_with("q,alpha_w,metric,value\n"));
        assert_eq!(text.lines().count(), 1 + METRICS.len());
        let mut wide = Vec::new();
        write_summary_csv(&cells, &mut wide).unwrap();
        assert_eq!(String::from_utf8(wide).unwrap().lines().count(), 2);
        assert!(sweep(&base, &SweepGrid { q_values: vec![], alpha_w_values: vec![0.0] }, Mode::Ltv, &opts, Execution::Parallel).is_err());
    }
}
