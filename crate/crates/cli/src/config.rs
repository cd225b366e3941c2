use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

/// Flat experiment configuration shared by every subcommand.
///
/// Unset optional fields fall back to the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub n_s: Option<usize>,
    #[serde(default = "defaults::n_t")]
    pub n_t: usize,
    #[serde(default = "defaults::n_valid")]
    pub n_valid: usize,
    pub r_w: Option<usize>,
    pub sigma_eps: Option<f64>,
    #[serde(default = "defaults::kappa")]
    pub kappa: f64,
    /// Prior eigenvalues; identity when absent.
    pub eigvals: Option<Vec<f64>>,
    #[serde(default = "defaults::mean_mode")]
    pub prior_mean: String,
    #[serde(default = "defaults::basis")]
    pub prior_basis: String,

    #[serde(rename = "L", default = "defaults::layers")]
    pub layers: usize,
    #[serde(rename = "H", default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::d_k")]
    pub d_k: usize,
    #[serde(default)]
    pub value_matrices: bool,
    #[serde(default = "defaults::init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub gamma_init: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "defaults::batch")]
    pub batch: usize,

    #[serde(default)]
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub sweep_r_w: Option<Vec<usize>>,
    pub sweep_sigma_eps: Option<Vec<f64>>,
    pub sweep_kappa: Option<Vec<f64>>,

    /// Monte-Carlo trials for risk estimates.
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    /// Draws of `X` for the correction matrix.
    #[serde(default = "defaults::mc_samples")]
    pub mc_samples: usize,
    /// Contexts for the covariance-identity check.
    #[serde(default = "defaults::lemma_contexts")]
    pub lemma_contexts: usize,
    #[serde(default = "defaults::rank_threshold")]
    pub rank_threshold: f64,
    /// Prior recovery from the oracle estimator instead of the checkpoint.
    #[serde(default)]
    pub use_ore: bool,
    /// Noise level handed to the oracle, if different from `sigma_eps`
    /// (negative control for `bounds-check`).
    pub ore_sigma_eps: Option<f64>,
    /// Fill `wall_time_s`; off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

mod defaults {
    pub fn n_t() -> usize {
        1000
    }
    pub fn n_valid() -> usize {
        50
    }
    pub fn kappa() -> f64 {
        1.0
    }
    pub fn mean_mode() -> String {
        "random_unit".into()
    }
    pub fn basis() -> String {
        "random".into()
    }
    pub fn layers() -> usize {
        4
    }
    pub fn heads() -> usize {
        1
    }
    pub fn d_k() -> usize {
        10
    }
    pub fn init_std() -> f64 {
        0.1
    }
    pub fn epochs() -> usize {
        60
    }
    pub fn lr() -> f64 {
        1e-2
    }
    pub fn lr_decay() -> f64 {
        0.5
    }
    pub fn batch() -> usize {
        64
    }
    pub fn trials() -> usize {
        2000
    }
    pub fn mc_samples() -> usize {
        2000
    }
    pub fn lemma_contexts() -> usize {
        5000
    }
    pub fn rank_threshold() -> f64 {
        10.0
    }
}

/// Parse `value` as JSON, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Load a configuration: `ILR_SEED` (if given) < file < `--set` overrides.
pub fn load(path: &Path, sets: &[String], env_seed: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    let Value::Object(file) = file else {
        return Err(CliError::Config(format!("{}: top level must be an object", path.display())));
    };
    let mut merged = Map::new();
    if let Some(raw) = env_seed {
        let seed: u64 = raw.trim().parse().map_err(|_| CliError::Config(format!("ILR_SEED: not an integer: {raw:?}")))?;
        merged.insert("seed".into(), seed.into());
    }
    merged.extend(file);
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
        merged.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn require<T: Copy>(&self, field: &str, v: Option<T>) -> Result<T, CliError> {
        v.ok_or_else(|| CliError::Config(format!("missing required field `{field}`")))
    }

    pub fn path(&self, field: &str, v: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        let p = v
            .clone()
            .ok_or_else(|| CliError::Config(format!("missing required field `{field}`")))?;
        if !p.exists() {
            return Err(CliError::Config(format!("`{field}`: {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Checks on the data-generation fields that are present.
    pub fn validate_problem(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: String| Err(CliError::Config(format!("`{field}`: {why}")));
        if let (Some(d), Some(r)) = (self.d, self.r_w) {
            if r == 0 || r > d {
                return bad("r_w", format!("must satisfy 1 <= r_w <= d (r_w = {r}, d = {d})"));
            }
        }
        if let (Some(d), Some(n)) = (self.d, self.n) {
            if d == 0 || n == 0 {
                return bad("d", format!("d and n must be positive (d = {d}, n = {n})"));
            }
        }
        if let Some(s) = self.sigma_eps {
            if !(s > 0.0) || !s.is_finite() {
                return bad("sigma_eps", format!("must be positive, got {s}"));
            }
        }
        if !(self.kappa >= 1.0) {
            return bad("kappa", format!("must be >= 1, got {}", self.kappa));
        }
        if let Some(ev) = &self.eigvals {
            if Some(ev.len()) != self.r_w {
                return bad("eigvals", format!("expected r_w = {:?} values, got {}", self.r_w, ev.len()));
            }
        }
        if !["zero", "random_unit"].contains(&self.prior_mean.as_str()) {
            return bad("prior_mean", format!("expected zero|random_unit, got {:?}", self.prior_mean));
        }
        if !["random", "axis_aligned"].contains(&self.prior_basis.as_str()) {
            return bad("prior_basis", format!("expected random|axis_aligned, got {:?}", self.prior_basis));
        }
        if self.trials < 2 {
            return bad("trials", format!("need at least 2, got {}", self.trials));
        }
        Ok(())
    }
}
