//! CSV schemas. Column order is part of the interface; append, never reorder.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// One `(method, configuration)` cell. Slope rows (`method = "<M>_slope"`)
/// fill only the configuration columns, `slope` and `slope_r2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub r_w: usize,
    pub sigma_eps: f64,
    pub kappa: f64,
    pub n_s: Option<usize>,
    pub trials: Option<usize>,
    /// Mean of `‖ŵ − w‖` and its standard error.
    pub mean_err: Option<f64>,
    pub std_err: Option<f64>,
    pub lambda_mean: Option<f64>,
    /// Bounds on the mean squared error.
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    pub seed: u64,
    pub wall_time_s: Option<f64>,
    pub mean_sq_err: Option<f64>,
    pub rmse: Option<f64>,
    pub sweep_axis: Option<String>,
    pub slope: Option<f64>,
    pub slope_r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_rel_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub r_w: usize,
    pub sigma_eps: f64,
    pub n_t: usize,
    pub mean_rel_err: f64,
    pub cov_rel_err: f64,
    pub detected_rank: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub index: usize,
    pub eigenvalue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub d: usize,
    pub n: usize,
    pub r_w: usize,
    pub sigma_eps: f64,
    pub t_used: Option<f64>,
    pub a_t: Option<f64>,
    pub b_t: Option<f64>,
    pub c_t: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub value: f64,
    pub std_err: Option<f64>,
    pub pass: bool,
}

pub fn out_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    Ok(dir.to_path_buf())
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(CliError::io(path))?;
    Ok(())
}
