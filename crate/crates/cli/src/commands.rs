use std::path::{Path, PathBuf};
use std::time::Instant;

use ilr_core::analysis::{
    correction_c, default_t, fit_loglog_slope, mc_bayes_risk, ore_bounds, output_stats, recovered_prior, risk_report,
    spectrum_rank, BoundPair, RiskMeta, RiskReport,
};
use ilr_core::estimators::{fit_prior, ore_estimate, re_estimate, tre_estimate, OracleSpec};
use ilr_core::model::{forward, read_checkpoint, train, write_checkpoint, ModelConfig, ModelParams, TrainConfig};
use ilr_core::numerics::{derive_seed, sym_eig};
use ilr_core::taskgen::{
    build_input_cov, build_prior, read_dataset, sample_dataset, write_dataset, BasisMode, EigenMode, InputSpec,
    MeanMode, NoiseSpec, PriorSpec, TaskDataset, PRIOR_STREAM,
};
use ilr_core::{Context64, Result as CoreResult, RngStream};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::{out_dir, write_csv, CheckRow, HistoryRow, RecoveryRow, ResultRow, SpectrumRow};

type Res<T> = Result<T, CliError>;

// Seed tags for the independent streams derived from the run seed.
const VALID_TAG: u64 = 1;
const TEST_TAG: u64 = 2;
const INIT_TAG: u64 = 3;
const CORRECTION_TAG: u64 = 4;
const RISK_TAG: u64 = 5;
const TRAIN_TAG: u64 = 6;
const LEMMA_TAG: u64 = 7;

/// Generating specification `(prior, input, noise)` for a configuration.
struct Problem {
    prior: PriorSpec<f64>,
    input: InputSpec<f64>,
    noise: NoiseSpec<f64>,
    n: usize,
}

impl Problem {
    fn from_config(cfg: &ExperimentConfig) -> Res<Self> {
        cfg.validate_problem()?;
        let d = cfg.require("d", cfg.d)?;
        let n = cfg.require("n", cfg.n)?;
        let r_w = cfg.require("r_w", cfg.r_w)?;
        let sigma = cfg.require("sigma_eps", cfg.sigma_eps)?;
        let mean = match cfg.prior_mean.as_str() {
            "zero" => MeanMode::Zero,
            _ => MeanMode::RandomUnit,
        };
        let eig = match &cfg.eigvals {
            Some(v) => EigenMode::Explicit(v.clone()),
            None => EigenMode::Identity,
        };
        let basis = match cfg.prior_basis.as_str() {
            "axis_aligned" => BasisMode::AxisAligned,
            _ => BasisMode::Random,
        };
        let prior = build_prior(d, r_w, &mean, &eig, basis, &mut RngStream::new(cfg.seed, PRIOR_STREAM))?;
        Ok(Self {
            prior,
            input: build_input_cov(d, cfg.kappa)?,
            noise: NoiseSpec::new(sigma)?,
            n,
        })
    }

    fn from_dataset(ds: &TaskDataset<f64>) -> Self {
        Self {
            prior: ds.prior.clone(),
            input: ds.input.clone(),
            noise: ds.noise,
            n: ds.n,
        }
    }

    fn sample(&self, count: usize, seed: u64) -> CoreResult<Vec<Context64>> {
        Ok(sample_dataset(&self.prior, &self.input, &self.noise, self.n, count, seed)?.contexts)
    }

    fn meta(&self) -> RiskMeta {
        RiskMeta::of(&self.prior, &self.input, &self.noise, self.n)
    }

    fn sigma(&self) -> f64 {
        self.noise.sigma_eps
    }

    fn bounds(&self) -> Option<BoundPair> {
        let p = &self.prior;
        let ev = self.input.eigenvalues();
        let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &l| (a.min(l), b.max(l)));
        ore_bounds(self.n, p.rank, self.sigma(), p.lambda_min(), p.lambda_max(), lo, hi, default_t(self.n)).ok()
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> Res<(PathBuf, TaskDataset<f64>)> {
    let path = cfg.path("dataset", &cfg.dataset)?;
    let ds = read_dataset(&path)?;
    Ok((path, ds))
}

fn load_model(cfg: &ExperimentConfig, ds: &TaskDataset<f64>) -> Res<ModelParams<f64>> {
    let path = cfg.path("checkpoint", &cfg.checkpoint)?;
    let (params, _) = read_checkpoint::<f64>(&path)?;
    if params.config.d != ds.d() || params.config.n != ds.n {
        return Err(CliError::Config(format!(
            "`checkpoint`: model (d={}, n={}) does not match dataset (d={}, n={})",
            params.config.d,
            params.config.n,
            ds.d(),
            ds.n
        )));
    }
    Ok(params)
}

struct Evaluated {
    report: RiskReport,
    lambda_mean: Option<f64>,
}

/// Errors and selected `λ` of one estimator over `contexts`, in order.
fn evaluate<F>(name: &str, meta: RiskMeta, contexts: &[Context64], f: F) -> Res<Evaluated>
where
    F: Fn(&Context64) -> CoreResult<(Vec<f64>, Option<f64>)> + Sync,
{
    let out: Vec<(f64, Option<f64>)> = contexts
        .par_iter()
        .enumerate()
        .map(|(j, c)| {
            let (w, lambda) = f(c).map_err(|e| ilr_core::IlrError::Estimator {
                index: j,
                source: Box::new(e),
            })?;
            let sq = w.iter().zip(&c.w_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            Ok((sq, lambda))
        })
        .collect::<CoreResult<_>>()?;
    let sq: Vec<f64> = out.iter().map(|o| o.0).collect();
    let lambdas: Vec<f64> = out.iter().filter_map(|o| o.1).collect();
    Ok(Evaluated {
        report: risk_report(name, &sq, meta),
        lambda_mean: (!lambdas.is_empty()).then(|| lambdas.iter().sum::<f64>() / lambdas.len() as f64),
    })
}

fn row(cfg: &ExperimentConfig, ev: &Evaluated, n_s: Option<usize>, bound: Option<BoundPair>, t0: Instant) -> ResultRow {
    let r = &ev.report;
    ResultRow {
        method: r.estimator.clone(),
        d: r.d,
        n: r.n,
        r_w: r.r_w,
        sigma_eps: r.sigma_eps,
        kappa: r.kappa,
        n_s,
        trials: Some(r.trials),
        mean_err: Some(r.mean_err),
        std_err: Some(r.err_std_err),
        lambda_mean: ev.lambda_mean,
        bound_lower: bound.map(|b| b.lower),
        bound_upper: bound.map(|b| b.upper),
        seed: cfg.seed,
        wall_time_s: cfg.timing.then(|| t0.elapsed().as_secs_f64()),
        mean_sq_err: Some(r.mean_sq_err),
        rmse: Some(r.rmse),
        ..Default::default()
    }
}

fn print_rows(rows: &[ResultRow]) {
    for r in rows {
        match (r.mean_err, r.slope) {
            (Some(m), _) => println!(
                "{:<12} r_w={:<3} sigma_eps={:<6} kappa={:<5} mean_err={:.4e} (se {:.1e})",
                r.method,
                r.r_w,
                r.sigma_eps,
                r.kappa,
                m,
                r.std_err.unwrap_or(0.0)
            ),
            (None, Some(s)) => println!("{:<12} slope={s:.3} r2={:.3}", r.method, r.slope_r2.unwrap_or(0.0)),
            _ => {}
        }
    }
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Res<()> {
    let problem = Problem::from_config(cfg)?;
    let n_s = cfg.require("n_s", cfg.n_s)?;
    if n_s == 0 {
        return Err(CliError::Config("`n_s`: must be positive".into()));
    }
    let ds = sample_dataset(&problem.prior, &problem.input, &problem.noise, problem.n, n_s, cfg.seed)?;
    let path = out_dir(out)?.join("dataset.ilrd");
    write_dataset(&ds, &path)?;
    println!(
        "wrote {}: {} contexts (d={}, n={}, r_w={}, sigma_eps={}, kappa={}, seed={})",
        path.display(),
        ds.len(),
        ds.d(),
        ds.n,
        ds.prior.rank,
        problem.sigma(),
        cfg.kappa,
        cfg.seed
    );
    Ok(())
}

pub fn train_model(cfg: &ExperimentConfig, out: &Path) -> Res<()> {
    let (ds_path, ds) = load_dataset(cfg)?;
    let mc = ModelConfig {
        d: ds.d(),
        n: ds.n,
        layers: cfg.layers,
        heads: cfg.heads,
        key_dim: cfg.d_k,
        train_value_matrices: cfg.value_matrices,
        init_std: cfg.init_std,
        layernorm_eps: 1e-5,
        gamma_init: cfg.gamma_init,
    };
    mc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    println!("parameters: {}", mc.param_count());
    let problem = Problem::from_dataset(&ds);
    let valid = problem.sample(cfg.n_valid, derive_seed(cfg.seed, VALID_TAG))?;
    let init = ModelParams::init(&mc, &mut RngStream::new(cfg.seed, derive_seed(cfg.seed, INIT_TAG)))?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        lr: cfg.lr,
        lr_decay: cfg.lr_decay,
        seed: cfg.seed,
        ..Default::default()
    };
    if tc.batch_size == 0 {
        return Err(CliError::Config("`batch`: must be positive".into()));
    }
    let (params, history) = train(init, &ds.contexts, &valid, &tc)?;
    let dir = out_dir(out)?;
    let meta = serde_json::json!({
        "dataset": ds_path.display().to_string(),
        "best_epoch": history.best_epoch,
        "train": tc,
    });
    let ckpt = dir.join("model.ilrm");
    write_checkpoint(&params, meta, &ckpt)?;
    let rows: Vec<HistoryRow> = history
        .records
        .iter()
        .map(|r| HistoryRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            valid_rel_l2: r.valid_rel_l2,
        })
        .collect();
    write_csv(&dir.join("history.csv"), &rows)?;
    let best = history.best().expect("epoch 0 recorded");
    println!(
        "best epoch {} (valid_rel_l2 {:.4e}); wrote {} and history.csv",
        best.epoch,
        best.valid_rel_l2,
        ckpt.display()
    );
    Ok(())
}

pub fn evaluate_all(cfg: &ExperimentConfig, out: &Path) -> Res<()> {
    let (_, ds) = load_dataset(cfg)?;
    let params = load_model(cfg, &ds)?;
    let problem = Problem::from_dataset(&ds);
    let test = problem.sample(cfg.n_t, derive_seed(cfg.seed, TEST_TAG))?;
    let learned = fit_prior(&ds.contexts, ds.n)?;
    let oracle = OracleSpec::new(problem.prior.clone(), cfg.ore_sigma_eps.unwrap_or(problem.sigma()))?;
    let meta = problem.meta();
    let n_s = Some(ds.len());
    let mut rows = Vec::new();

    let t0 = Instant::now();
    let ev = evaluate("transformer", meta, &test, |c| Ok((forward(&params, &c.x, &c.y)?, None)))?;
    rows.push(row(cfg, &ev, n_s, None, t0));
    let t0 = Instant::now();
    let ev = evaluate("RE", meta, &test, |c| {
        let r = re_estimate(&c.x, &c.y)?;
        Ok((r.w_hat, Some(r.lambda)))
    })?;
    rows.push(row(cfg, &ev, None, None, t0));
    let t0 = Instant::now();
    let ev = evaluate("TRE", meta, &test, |c| {
        let r = tre_estimate(&learned, &c.x, &c.y)?;
        Ok((r.w_hat, Some(r.lambda)))
    })?;
    rows.push(row(cfg, &ev, n_s, None, t0));
    let t0 = Instant::now();
    let ev = evaluate("ORE", meta, &test, |c| Ok((ore_estimate(&oracle, &c.x, &c.y)?, None)))?;
    rows.push(row(cfg, &ev, None, problem.bounds(), t0));

    let dir = out_dir(out)?;
    write_csv(&dir.join("evaluate.csv"), &rows)?;
    print_rows(&rows);
    Ok(())
}

pub fn prior_recovery(cfg: &ExperimentConfig, out: &Path) -> Res<()> {
    let (_, ds) = load_dataset(cfg)?;
    let problem = Problem::from_dataset(&ds);
    let test = problem.sample(cfg.n_t, derive_seed(cfg.seed, TEST_TAG))?;
    let sigma = problem.sigma();
    let (method, stats) = if cfg.use_ore {
        let oracle = OracleSpec::new(problem.prior.clone(), cfg.ore_sigma_eps.unwrap_or(sigma))?;
        ("ORE", output_stats(|c: &Context64| ore_estimate(&oracle, &c.x, &c.y), &test)?)
    } else {
        let params = load_model(cfg, &ds)?;
        ("transformer", output_stats(|c: &Context64| forward(&params, &c.x, &c.y), &test)?)
    };
    let c = correction_c(
        &problem.prior,
        &problem.input,
        ds.n,
        sigma,
        cfg.mc_samples,
        &RngStream::new(cfg.seed, derive_seed(cfg.seed, CORRECTION_TAG)),
    )?;
    let (mean, cov) = recovered_prior(&stats, &c, sigma)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let w0 = &problem.prior.mean;
    let diff: Vec<f64> = mean.iter().zip(w0).map(|(a, b)| a - b).collect();
    let mean_rel_err = norm(&diff) / norm(w0).max(f64::MIN_POSITIVE);
    let truth = problem.prior.covariance();
    let cov_rel_err = cov.sub(&truth)?.frobenius_norm() / truth.frobenius_norm();
    let spectrum = sym_eig(&cov)?.eigenvalues;
    let detected_rank = spectrum_rank(&cov, cfg.rank_threshold)?;

    let dir = out_dir(out)?;
    write_csv(
        &dir.join("recovery.csv"),
        &[RecoveryRow {
            method: method.into(),
            d: ds.d(),
            n: ds.n,
            r_w: problem.prior.rank,
            sigma_eps: sigma,
            n_t: cfg.n_t,
            mean_rel_err,
            cov_rel_err,
            detected_rank,
            seed: cfg.seed,
        }],
    )?;
    let rows: Vec<SpectrumRow> = spectrum
        .iter()
        .enumerate()
        .map(|(i, &l)| SpectrumRow {
            index: i + 1,
            eigenvalue: l,
        })
        .collect();
    write_csv(&dir.join("spectrum.csv"), &rows)?;
    println!(
        "{method}: mean_rel_err {mean_rel_err:.4e}, cov_rel_err {cov_rel_err:.4e}, detected rank {detected_rank} (r_w = {})",
        problem.prior.rank
    );
    Ok(())
}

#[derive(Clone, Copy, Debug)]
enum Axis {
    RankW,
    Sigma,
    Kappa,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::RankW => "r_w",
            Axis::Sigma => "sigma_eps",
            Axis::Kappa => "kappa",
        }
    }
}

fn sweep_axis(cfg: &ExperimentConfig) -> Res<(Axis, Vec<f64>)> {
    let mut active = Vec::new();
    if let Some(v) = &cfg.sweep_r_w {
        active.push((Axis::RankW, v.iter().map(|&r| r as f64).collect::<Vec<_>>()));
    }
    if let Some(v) = &cfg.sweep_sigma_eps {
        active.push((Axis::Sigma, v.clone()));
    }
    if let Some(v) = &cfg.sweep_kappa {
        active.push((Axis::Kappa, v.clone()));
    }
    match active.len() {
        1 => {
            let (axis, values) = active.pop().expect("one axis");
            if values.is_empty() {
                return Err(CliError::Config(format!("`sweep_{}`: empty sweep", axis.name())));
            }
            Ok((axis, values))
        }
        0 => Err(CliError::Config("one of `sweep_r_w`, `sweep_sigma_eps`, `sweep_kappa` is required".into())),
        _ => Err(CliError::Config(format!(
            "exactly one sweep axis may be active, got {}",
            active.iter().map(|a| format!("sweep_{}", a.0.name())).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn with_value(cfg: &ExperimentConfig, axis: Axis, v: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    match axis {
        Axis::RankW => {
            c.r_w = Some(v as usize);
            c.eigvals = None;
        }
        Axis::Sigma => c.sigma_eps = Some(v),
        Axis::Kappa => c.kappa = v,
    }
    c
}

pub fn scaling(cfg: &ExperimentConfig, out: &Path) -> Res<()> {
    let (axis, values) = sweep_axis(cfg)?;
    let n_s = cfg.require("n_s", cfg.n_s)?;
    let mut rows = Vec::new();
    let mut curves: Vec<(&str, Vec<(f64, f64)>)> = vec![("ORE", Vec::new()), ("TRE", Vec::new())];
    for &v in &values {
        let point = with_value(cfg, axis, v);
        let problem = Problem::from_config(&point)?;
        let train_set = problem.sample(n_s, derive_seed(cfg.seed, TRAIN_TAG))?;
        let test = problem.sample(cfg.n_t, derive_seed(cfg.seed, TEST_TAG))?;
        let meta = problem.meta();

        let t0 = Instant::now();
        let oracle = OracleSpec::new(problem.prior.clone(), problem.sigma())?;
        let ore = evaluate("ORE", meta, &test, |c| Ok((ore_estimate(&oracle, &c.x, &c.y)?, None)))?;
        rows.push(row(cfg, &ore, None, problem.bounds(), t0));
        let t0 = Instant::now();
        let learned = fit_prior(&train_set, problem.n)?;
        let tre = evaluate("TRE", meta, &test, |c| {
            let r = tre_estimate(&learned, &c.x, &c.y)?;
            Ok((r.w_hat, Some(r.lambda)))
        })?;
        rows.push(row(cfg, &tre, Some(n_s), None, t0));
        let t0 = Instant::now();
        let re = evaluate("RE", meta, &test, |c| {
            let r = re_estimate(&c.x, &c.y)?;
            Ok((r.w_hat, Some(r.lambda)))
        })?;
        rows.push(row(cfg, &re, None, None, t0));
        curves[0].1.push((v, ore.report.rmse));
        curves[1].1.push((v, tre.report.rmse));
    }
    if values.len() >= 3 {
        for (method, pts) in &curves {
            let fit = fit_loglog_slope(pts)?;
            let first = with_value(cfg, axis, values[0]);
            rows.push(ResultRow {
                method: format!("{method}_slope"),
                d: cfg.require("d", cfg.d)?,
                n: cfg.require("n", cfg.n)?,
                r_w: first.require("r_w", first.r_w)?,
                sigma_eps: first.require("sigma_eps", first.sigma_eps)?,
                kappa: first.kappa,
                n_s: Some(n_s),
                trials: Some(cfg.n_t),
                seed: cfg.seed,
                sweep_axis: Some(axis.name().into()),
                slope: Some(fit.slope),
                slope_r2: Some(fit.r2),
                ..Default::default()
            });
        }
    }
    for r in rows.iter_mut().filter(|r| r.slope.is_none()) {
        r.sweep_axis = Some(axis.name().into());
    }
    let dir = out_dir(out)?;
    write_csv(&dir.join("scaling.csv"), &rows)?;
    print_rows(&rows);
    Ok(())
}

pub fn bounds_check(cfg: &ExperimentConfig, out: &Path) -> Res<()> {
    let grid: Vec<usize> = match (&cfg.sweep_r_w, cfg.r_w) {
        (Some(v), _) => v.clone(),
        (None, Some(r)) => vec![r],
        (None, None) => vec![2, 5, 10, 20],
    };
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for &r_w in &grid {
        let mut point = cfg.clone();
        point.r_w = Some(r_w);
        point.sweep_r_w = None;
        let problem = Problem::from_config(&point)?;
        let (d, n, sigma) = (problem.prior.d, problem.n, problem.sigma());
        let oracle = OracleSpec::new(problem.prior.clone(), cfg.ore_sigma_eps.unwrap_or(sigma))?;
        let est = |c: &Context64| ore_estimate(&oracle, &c.x, &c.y);

        let risk = mc_bayes_risk(
            "ORE",
            est,
            &problem.prior,
            &problem.input,
            &problem.noise,
            n,
            cfg.trials,
            &RngStream::new(cfg.seed, derive_seed(cfg.seed, RISK_TAG)),
        )?;
        let t = default_t(n);
        let bound = problem.bounds();
        let (pass, line) = match bound {
            Some(b) => {
                let ok = risk.mean_sq_err >= b.lower - 3.0 * risk.std_err && risk.mean_sq_err <= b.upper + 3.0 * risk.std_err;
                (ok, format!("mse {:.4e} (se {:.1e}) in [{:.4e}, {:.4e}]", risk.mean_sq_err, risk.std_err, b.lower, b.upper))
            }
            None => (true, format!("mse {:.4e}; t outside [0, 1 - sqrt(r_w/n)), bound not applicable", risk.mean_sq_err)),
        };
        let name = format!("bound_sandwich(r_w={r_w})");
        println!("{} {name}: t_used={t:.4}, {line}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(name.clone());
        }
        rows.push(CheckRow {
            check: "bound_sandwich".into(),
            d,
            n,
            r_w,
            sigma_eps: sigma,
            t_used: Some(t),
            a_t: bound.map(|b| b.a_t),
            b_t: bound.map(|b| b.b_t),
            c_t: bound.map(|b| b.c_t),
            lower: bound.map(|b| b.lower),
            upper: bound.map(|b| b.upper),
            value: risk.mean_sq_err,
            std_err: Some(risk.std_err),
            pass,
        });

        let contexts = problem.sample(cfg.lemma_contexts, derive_seed(cfg.seed, LEMMA_TAG))?;
        let stats = output_stats(est, &contexts)?;
        let sigma_used = oracle.sigma_eps;
        let c = correction_c(
            &problem.prior,
            &problem.input,
            n,
            sigma_used,
            cfg.mc_samples,
            &RngStream::new(cfg.seed, derive_seed(cfg.seed, CORRECTION_TAG)),
        )?;
        let (_, cov) = recovered_prior(&stats, &c, sigma_used)?;
        let truth = problem.prior.covariance();
        let resid = cov.sub(&truth)?.frobenius_norm() / truth.frobenius_norm();
        let pass = resid < 0.1;
        let name = format!("covariance_identity(r_w={r_w})");
        println!(
            "{} {name}: relative residual {resid:.4e} (< 0.1)",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(name);
        }
        rows.push(CheckRow {
            check: "covariance_identity".into(),
            d,
            n,
            r_w,
            sigma_eps: sigma,
            t_used: None,
            a_t: None,
            b_t: None,
            c_t: None,
            lower: None,
            upper: Some(0.1),
            value: resid,
            std_err: None,
            pass,
        });
    }
    let dir = out_dir(out)?;
    write_csv(&dir.join("bounds.csv"), &rows)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed))
    }
}
