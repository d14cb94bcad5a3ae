//! On-disk formats: dataset bundles, ground truth, matrices as CSV.
//!
//! A dataset bundle is a directory holding `dataset.json` (dimensions, noise
//! bound and the snapshot file name) and `snapshots.csv`, one row per
//! snapshot with the state entries as columns. Rows are ordered
//! experiment-major, then step. Floats are written in shortest round-trip
//! form, so writing and reading a bundle is lossless.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Dims, InputPlan, LtvModel, Mode};

pub const DATASET_HEADER: &str = "dataset.json";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub dims: Dims,
    pub eta: f64,
    pub snapshots: String,
    pub row_order: String,
}

fn format_err(path: &Path, reason: impl ToString) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Writes rows of numbers as CSV, preceded by a `#` comment and a header.
pub fn write_matrix_csv(path: &Path, comment: &str, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "# {comment}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("row {}: {e}", line + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(path, format!("row {} has {} columns, expected {}", line + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn state_header(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("z{i}")).collect()
}

pub fn write_dataset(dir: &Path, ds: &Dataset<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let d = ds.dims;
    let header = DatasetHeader {
        dims: d,
        eta: ds.eta,
        snapshots: SNAPSHOTS_FILE.into(),
        row_order: "row j * (k_f + 1) + k holds z^(j)[k], j experiment, k step".into(),
    };
    write_json(&dir.join(DATASET_HEADER), &header)?;
    let m = DMatrix::from_fn(ds.snapshots.len(), d.n, |r, c| ds.snapshots[r][c]);
    let comment = format!(
        "{} snapshots of {} states; rows experiment-major then step (row = j*{} + k)",
        d.num_snapshots(),
        d.n,
        d.k_f + 1
    );
    write_matrix_csv(&dir.join(SNAPSHOTS_FILE), &comment, &state_header(d.n), &m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset<f64>> {
    let header: DatasetHeader = read_json(&dir.join(DATASET_HEADER))?;
    let path = dir.join(&header.snapshots);
    let m = read_matrix_csv(&path)?;
    let d = header.dims;
    d.validate()?;
    if m.nrows() != d.num_snapshots() || m.ncols() != d.n {
        return Err(format_err(
            &path,
            format!(
                "expected {}x{} snapshot matrix, found {}x{}",
                d.num_snapshots(),
                d.n,
                m.nrows(),
                m.ncols()
            ),
        ));
    }
    let snapshots = m.row_iter().map(|r| r.transpose()).collect();
    Dataset::new(d, snapshots, header.eta)
}

/// Generating model and inputs of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mode: Mode,
    pub a_mats: Vec<DMatrix<f64>>,
    /// Stacked dynamics vector.
    pub a: DVector<f64>,
    /// Stacked input vector.
    pub u: DVector<f64>,
    /// Nonzero inputs as `(experiment, step, state, value)`.
    pub inputs: Vec<(usize, usize, usize, f64)>,
    pub noise_norm: f64,
}

impl GroundTruth {
    pub fn new(model: &LtvModel<f64>, mode: Mode, plan: &InputPlan<f64>, noise_norm: f64) -> Self {
        let a_mats = match mode {
            Mode::Ltv => model.a_mats.clone(),
            Mode::Lti => model.a_mats.iter().take(1).cloned().collect(),
        };
        let a = DVector::from_iterator(
            a_mats.iter().map(|m| m.len()).sum(),
            a_mats.iter().flat_map(|m| m.transpose().iter().copied().collect::<Vec<_>>()),
        );
        Self {
            mode,
            a_mats,
            a,
            u: plan.to_vector(),
            inputs: plan.entries.iter().map(|(&(j, k, i), &v)| (j, k, i, v)).collect(),
            noise_norm,
        }
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path).map_err(|e| format_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// Writes every `A[k]` as `A_<k>.csv`.
pub fn write_dynamics(dir: &Path, a_mats: &[DMatrix<f64>]) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(a_mats.len());
    for (k, a) in a_mats.iter().enumerate() {
        let name = format!("A_{k}.csv");
        let header: Vec<String> = (0..a.ncols()).map(|l| format!("col{l}")).collect();
        write_matrix_csv(&dir.join(&name), &format!("A[{k}], row i holds a_i*"), &header, a)?;
        names.push(name);
    }
    Ok(names)
}

/// Dumps the dense sensing block and the measurements as `psi_a.csv` and
/// `z.csv`.
pub fn write_sensing(dir: &Path, psi_a: &DMatrix<f64>, z: &DVector<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header: Vec<String> = (0..psi_a.ncols()).map(|c| format!("a{c}")).collect();
    write_matrix_csv(
        &dir.join("psi_a.csv"),
        "dense sensing block, one row per stacked measurement",
        &header,
        psi_a,
    )?;
    let zm = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
    write_matrix_csv(&dir.join("z.csv"), "stacked measurements", &["z".to_string()], &zm)
}
