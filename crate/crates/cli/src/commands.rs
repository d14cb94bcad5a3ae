use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use blindid_core::diagnostics::{check_rank_conditions, theorem1_check_with, DiagnosticsReport};
use blindid_core::experiments::{
    generate_synthetic, run_monte_carlo_with, sweep, sweep_charts, write_long_csv, write_summary_csv, Execution,
    MetricsSummary,
};
use blindid_core::io::{self, GroundTruth, TRUTH_FILE};
use blindid_core::model::{Dataset, LtvModel, Mode};
use blindid_core::sensing::assemble;
use blindid_core::{solve_blind_id, Error, SolveStatus};
use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::manifest::{self, ArtifactLog, Manifest, MANIFEST_FILE};

pub const SOLUTION_FILE: &str = "solution.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success,
    NotIdentifiable(Vec<String>),
    NotConverged(String),
}

#[derive(Serialize)]
struct SolutionFile {
    seed: u64,
    mode: Mode,
    status: SolveStatus,
    iterations: usize,
    residual_norm: f64,
    objective: f64,
    eta: f64,
    /// Stacked input estimate.
    u: Vec<f64>,
    /// Stacked dynamics estimate.
    a: Vec<f64>,
    /// Nonzero inputs as `(experiment, step, state, value)`.
    inputs: Vec<(usize, usize, usize, f64)>,
    dynamics: Vec<String>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    log: ArtifactLog,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> anyhow::Result<()> {
        let p = self.path(name);
        io::write_json(&p, value)?;
        self.log.record(p);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        let p = self.path(name);
        fs::write(&p, text)?;
        self.log.record(p);
        Ok(())
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(BufWriter<fs::File>) -> blindid_core::Result<()>) -> anyhow::Result<()> {
        let p = self.path(name);
        write(BufWriter::new(fs::File::create(&p)?))?;
        self.log.record(p);
        Ok(())
    }

    fn dump_sensing(&mut self, ds: &Dataset<f64>) -> anyhow::Result<()> {
        let Some(dir) = self.cfg.sensing_dir(&self.out) else {
            return Ok(());
        };
        let sys = assemble(ds, self.cfg.mode);
        io::write_sensing(&dir, &sys.psi_a, &sys.z)?;
        self.log.record(dir.join("psi_a.csv"));
        self.log.record(dir.join("z.csv"));
        Ok(())
    }

    fn load_dataset(&self) -> anyhow::Result<Dataset<f64>> {
        let dir = self.cfg.dataset.as_ref().context("no dataset directory configured")?;
        let mut ds = io::read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
        ds.dims = ds.dims.with_mode(self.cfg.mode);
        Ok(ds)
    }
}

/// Executes `command`, then writes the manifest.
pub fn run(command: Command, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    cfg.validate(command)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut run = Run {
        cfg,
        out: cfg.out.clone(),
        log: ArtifactLog::default(),
    };
    println!("seed: {}", cfg.seed());
    let outcome = match command {
        Command::Simulate => simulate(&mut run)?,
        Command::Identify => identify(&mut run)?,
        Command::Diagnose => diagnose(&mut run)?,
        Command::Montecarlo => montecarlo(&mut run)?,
        Command::Sweep => run_sweep(&mut run)?,
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        seed: cfg.seed(),
        config: RunConfig {
            command: Some(command),
            ..cfg.clone()
        },
        artifacts: run.log.finish(&run.out)?,
    };
    io::write_json(&run.out.join(MANIFEST_FILE), &manifest)?;
    println!("wrote {} artifacts and {}", manifest.artifacts.len(), run.out.join(MANIFEST_FILE).display());
    Ok(outcome)
}

fn simulate(run: &mut Run) -> anyhow::Result<Outcome> {
    let cfg = run.cfg;
    let trial = generate_synthetic(&cfg.synthetic, cfg.trial)?;
    io::write_dataset(&run.out, &trial.dataset)?;
    run.log.record(run.path(io::DATASET_HEADER));
    run.log.record(run.path(io::SNAPSHOTS_FILE));
    let truth = GroundTruth::new(&trial.model, cfg.mode, &trial.inputs, trial.noise.norm());
    run.json(TRUTH_FILE, &truth)?;
    run.dump_sensing(&trial.dataset)?;
    let d = trial.dataset.dims;
    println!(
        "simulated n={} k_f={} q={} with {} nonzero inputs, noise norm {:.3e}",
        d.n,
        d.k_f,
        d.q,
        truth.inputs.len(),
        truth.noise_norm
    );
    Ok(Outcome::Success)
}

fn rank_failure_reasons(ds: &Dataset<f64>, mode: Mode, rank: usize, required: usize) -> Vec<String> {
    let mut reasons = vec![format!("the dense sensing block has rank {rank}, {required} needed")];
    reasons.extend(check_rank_conditions(ds, mode).failures);
    reasons
}

fn identify(run: &mut Run) -> anyhow::Result<Outcome> {
    let cfg = run.cfg;
    let ds = run.load_dataset()?;
    run.dump_sensing(&ds)?;
    let eta = cfg.eta.unwrap_or(ds.eta);
    let sys = assemble(&ds, cfg.mode);
    let opts = cfg.solver.with_eta(eta);
    let sol = match solve_blind_id(&sys, &opts) {
        Ok(s) => s,
        Err(Error::Identifiability { rank, required, .. }) => {
            return Ok(Outcome::NotIdentifiable(rank_failure_reasons(&ds, cfg.mode, rank, required)));
        }
        Err(e) => return Err(e.into()),
    };
    let model = LtvModel::from_dynamics_vector(ds.dims, cfg.mode, &sol.a_star)?;
    let mats: Vec<_> = match cfg.mode {
        Mode::Ltv => model.a_mats.clone(),
        Mode::Lti => model.a_mats.iter().take(1).cloned().collect(),
    };
    let dynamics = io::write_dynamics(&run.out, &mats)?;
    for name in &dynamics {
        run.log.record(run.path(name));
    }
    let dims = ds.dims;
    let inputs = sol
        .u_star
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(idx, &v)| {
            let (j, k, i) = dims.unflatten(idx);
            (j, k, i, v)
        })
        .collect::<Vec<_>>();
    let file = SolutionFile {
        seed: cfg.seed(),
        mode: cfg.mode,
        status: sol.status,
        iterations: sol.iterations,
        residual_norm: sol.residual_norm,
        objective: sol.objective,
        eta,
        u: sol.u_star.iter().copied().collect(),
        a: sol.a_star.iter().copied().collect(),
        inputs,
        dynamics,
    };
    run.json(SOLUTION_FILE, &file)?;
    println!(
        "status {:?} after {} iterations; {} nonzero inputs, residual {:.3e}",
        sol.status,
        sol.iterations,
        file.inputs.len(),
        sol.residual_norm
    );
    if sol.status == SolveStatus::Optimal {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::NotConverged(format!(
            "status {:?} after {} iterations, residual {:.3e} against bound {eta:.3e}",
            sol.status, sol.iterations, sol.residual_norm
        )))
    }
}

fn diagnostics_table(r: &DiagnosticsReport<f64>) -> String {
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    let mut rows: Vec<(String, String, &str)> = vec![
        (
            "dims".into(),
            format!("n={} k_f={} q={} ({})", r.dims.n, r.dims.k_f, r.dims.q, r.mode),
            "",
        ),
        (
            "input density".into(),
            format!("{} nonzero, rho_u = {:.4} (<= 0.5)", r.input_sparsity, r.rho_u),
            verdict(r.rho_u_pass),
        ),
        (
            "dense block rank".into(),
            format!("{} of {} columns", r.psi_a_rank, r.psi_a_cols),
            verdict(r.psi_a_full_rank),
        ),
        (
            "count check".into(),
            r.rank_conditions.count_check.condition.clone(),
            verdict(r.rank_conditions.count_check.pass),
        ),
    ];
    for c in &r.rank_conditions.per_step {
        rows.push((
            format!("rank Z_{}", c.k.unwrap_or(0)),
            format!("{} of {}", c.rank, c.required),
            verdict(c.pass),
        ));
    }
    if let Some(c) = &r.rank_conditions.lti_stacked {
        rows.push(("rank [Z_0 ...]".into(), format!("{} of {}", c.rank, c.required), verdict(c.pass)));
    }
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
    rows.push(("coherence".into(), fmt_opt(r.mu), ""));
    rows.push(("coherence bound".into(), fmt_opt(r.mcc_bound), ""));
    if let Some(s) = r.spark {
        let note = if s.exact { "" } else { " (lower bound)" };
        rows.push(("spark".into(), format!("{}{note}", s.value), ""));
    }
    rows.push(("uniqueness".into(), String::new(), verdict(r.theorem1_pass)));
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let vwidth = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v, ok)| format!("{k:<width$}  {v:<vwidth$}  {ok}").trim_end().to_string() + "\n")
        .collect()
}

fn diagnose(run: &mut Run) -> anyhow::Result<Outcome> {
    let cfg = run.cfg;
    let ds = run.load_dataset()?;
    run.dump_sensing(&ds)?;
    let sparsity = match cfg.input_sparsity {
        Some(s) => s,
        None => {
            let truth_path = cfg.dataset.as_ref().map(|d| d.join(TRUTH_FILE));
            match truth_path.filter(|p| p.is_file()) {
                Some(p) => io::read_json::<GroundTruth>(&p)?.inputs.len(),
                None => bail!("input_sparsity is not set and the dataset has no {TRUTH_FILE}"),
            }
        }
    };
    let report = theorem1_check_with(&ds, sparsity, cfg.mode, &cfg.diagnostics);
    run.json(REPORT_FILE, &report)?;
    let table = diagnostics_table(&report);
    print!("{table}");
    if report.theorem1_pass {
        return Ok(Outcome::Success);
    }
    let mut reasons = report.rank_conditions.failures.clone();
    if !report.psi_a_full_rank {
        reasons.insert(
            0,
            format!("the dense sensing block has rank {}, {} needed", report.psi_a_rank, report.psi_a_cols),
        );
    }
    if !report.rho_u_pass {
        reasons.push(format!("input density rho_u = {:.4} exceeds 0.5", report.rho_u));
    }
    Ok(Outcome::NotIdentifiable(reasons))
}

fn print_cell(c: &MetricsSummary) {
    println!(
        "q={:<3} alpha_w={:<6} mape_card={:.4} armse_nz={:.3e} armse_a={:.3e} failures={:.2}",
        c.q, c.alpha_w, c.mape_card, c.armse_nz, c.armse_a, c.failure_fraction
    );
}

fn montecarlo(run: &mut Run) -> anyhow::Result<Outcome> {
    let cfg = run.cfg;
    let summary = run_monte_carlo_with(&cfg.synthetic, cfg.mode, &cfg.solver, Execution::Parallel)?;
    let cells = std::slice::from_ref(&summary);
    run.json("metrics.json", &summary)?;
    run.csv("metrics_long.csv", |w| write_long_csv(cells, w))?;
    run.csv("metrics_summary.csv", |w| write_summary_csv(cells, w))?;
    print_cell(&summary);
    Ok(Outcome::Success)
}

fn run_sweep(run: &mut Run) -> anyhow::Result<Outcome> {
    let cfg = run.cfg;
    let cells = sweep(&cfg.synthetic, &cfg.sweep, cfg.mode, &cfg.solver, Execution::Parallel)?;
    run.json("sweep.json", &cells)?;
    run.csv("sweep_long.csv", |w| write_long_csv(&cells, w))?;
    run.csv("sweep_summary.csv", |w| write_summary_csv(&cells, w))?;
    if cfg.plots {
        for (stem, svg) in sweep_charts(&cells) {
            run.text(&format!("{stem}.svg"), &svg)?;
        }
    }
    cells.iter().for_each(print_cell);
    Ok(Outcome::Success)
}

/// Re-runs the configuration in a manifest into a fresh directory and checks
/// that every recorded artifact comes out byte for byte the same.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> anyhow::Result<Outcome> {
    let recorded: Manifest = io::read_json(manifest_path)?;
    let out = out.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("replay"));
    let cfg = RunConfig {
        out: out.clone(),
        ..recorded.config.clone()
    };
    let outcome = run(recorded.command, &cfg)?;
    let mut mismatches = Vec::new();
    for art in &recorded.artifacts {
        let path = manifest::resolve(&out, art);
        match manifest::sha256_file(&path) {
            Ok(h) if h == art.sha256 => {}
            Ok(_) => mismatches.push(format!("{} differs", art.path)),
            Err(_) => mismatches.push(format!("{} missing", art.path)),
        }
    }
    if !mismatches.is_empty() {
        bail!("replay does not match the manifest: {}", mismatches.join(", "));
    }
    println!("replay reproduced all {} artifacts", recorded.artifacts.len());
    Ok(outcome)
}
