use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use blindid_core::diagnostics::DiagnosticsOptions;
use blindid_core::experiments::{SweepGrid, SyntheticConfig};
use blindid_core::model::Mode;
use blindid_core::SolverOptions64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Identify,
    Diagnose,
    Montecarlo,
    Sweep,
}

/// Everything a run depends on. Command-line flags override the fields
/// loaded from the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub mode: Mode,
    /// Dataset bundle directory read by `identify` and `diagnose`.
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Where `psi_a.csv` and `z.csv` go; relative paths resolve inside `out`.
    pub dump_sensing: Option<PathBuf>,
    pub plots: bool,
    /// Trial index simulated by `simulate`.
    pub trial: u64,
    /// Noise bound for `identify`; the dataset's own bound when absent.
    pub eta: Option<f64>,
    /// Number of nonzero inputs assumed by `diagnose`; read from the bundle's
    /// ground truth when absent.
    pub input_sparsity: Option<usize>,
    pub synthetic: SyntheticConfig,
    pub solver: SolverOptions64,
    pub sweep: SweepGrid,
    pub diagnostics: DiagnosticsOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            mode: Mode::Ltv,
            dataset: None,
            out: PathBuf::from("out"),
            dump_sensing: None,
            plots: false,
            trial: 0,
            eta: None,
            input_sparsity: None,
            synthetic: SyntheticConfig::default(),
            solver: SolverOptions64::default(),
            sweep: SweepGrid::default(),
            diagnostics: DiagnosticsOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn seed(&self) -> u64 {
        self.synthetic.seed
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.synthetic.dims = self.synthetic.dims.with_mode(mode);
    }

    pub fn validate(&self, command: Command) -> anyhow::Result<()> {
        if self.synthetic.dims.lti != (self.mode == Mode::Lti) {
            bail!("synthetic.dims.lti disagrees with mode {}", self.mode);
        }
        self.solver.validate()?;
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                bail!("eta must be finite and nonnegative, got {eta}");
            }
        }
        match command {
            Command::Simulate | Command::Montecarlo => self.synthetic.validate()?,
            Command::Sweep => {
                self.synthetic.validate()?;
                self.sweep.validate()?;
            }
            Command::Identify | Command::Diagnose => match &self.dataset {
                None => bail!("{command:?} needs a dataset directory (`dataset` in the config or --dataset)"),
                Some(d) if !d.is_dir() => bail!("dataset directory {} does not exist", d.display()),
                Some(_) => {}
            },
        }
        Ok(())
    }

    pub fn sensing_dir(&self, out: &Path) -> Option<PathBuf> {
        self.dump_sensing.as_ref().map(|d| if d.is_absolute() { d.clone() } else { out.join(d) })
    }
}
