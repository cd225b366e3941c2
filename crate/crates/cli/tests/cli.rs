use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ilr() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ilr"));
    c.env_remove("ILR_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    ilr().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

const SMALL: &str = r#"{
  "d": 8, "n": 6, "n_s": 64, "n_t": 40, "n_valid": 8, "r_w": 2, "sigma_eps": 0.05,
  "L": 2, "d_k": 4, "epochs": 2, "lr": 0.01, "batch": 16,
  "trials": 100, "mc_samples": 200, "lemma_contexts": 200,
  "seed": 3,
  "dataset": "data/dataset.ilrd",
  "checkpoint": "data/model.ilrm"
}"#;

/// Generates and trains the small configuration in a fresh directory.
fn trained() -> TempDir {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    let o = run(tmp.path(), &["generate", "small.json", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(tmp.path(), &["train", "small.json", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    tmp
}

fn read_csv(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &str, name: &str) -> usize {
    header.split(',').position(|c| c == name).unwrap()
}

#[test]
fn generate_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--out", "a"])), 0);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--out", "b"])), 0);
    let a = fs::read(tmp.path().join("a/dataset.ilrd")).unwrap();
    let b = fs::read(tmp.path().join("b/dataset.ilrd")).unwrap();
    assert_eq!(a, b);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--out", "c", "--set", "seed=4"])), 0);
    assert_ne!(a, fs::read(tmp.path().join("c/dataset.ilrd")).unwrap());
}

#[test]
fn rank_above_dimension_is_config_error() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    let o = run(tmp.path(), &["generate", "small.json", "--set", "r_w=9"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("r_w"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    write_config(tmp.path(), "bad.json", r#"{"d": 8, "n": 6, "n_s": 4, "r_w": 2, "typo": 1}"#);
    assert_eq!(code(&run(tmp.path(), &["generate", "bad.json"])), 2);
    assert_eq!(code(&run(tmp.path(), &["generate", "missing.json"])), 2);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--set", "novalue"])), 2);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--set", "d=\"x\""])), 2);
}

#[test]
fn unwritable_output_is_io_error() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    fs::write(tmp.path().join("blocker"), "file").unwrap();
    let o = run(tmp.path(), &["generate", "small.json", "--out", "blocker/sub"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn seed_precedence_env_file_flag() {
    let tmp = TempDir::new().unwrap();
    let no_seed = SMALL.replace("\"seed\": 3,", "");
    write_config(tmp.path(), "noseed.json", &no_seed);
    write_config(tmp.path(), "small.json", SMALL);
    let with_env = |args: &[&str]| {
        let o = ilr().current_dir(tmp.path()).env("ILR_SEED", "11").args(args).output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
    };
    assert!(with_env(&["generate", "noseed.json", "--out", "e"]).contains("seed=11)"));
    assert!(with_env(&["generate", "small.json", "--out", "f"]).contains("seed=3)"));
    assert!(with_env(&["generate", "small.json", "--out", "g", "--set", "seed=5"]).contains("seed=5)"));
}

#[test]
fn set_overrides_file() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    let o = run(tmp.path(), &["generate", "small.json", "--out", "x", "--set", "n_s=10", "--set", "d=9"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("10 contexts") && s.contains("d=9,"), "{s}");
}

#[test]
fn train_writes_history_and_zero_lr_keeps_loss_constant() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--out", "data"])), 0);
    let o = run(tmp.path(), &["train", "small.json", "--out", "z", "--set", "lr=0", "--set", "epochs=3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("z/history.csv"));
    assert_eq!(header, "epoch,train_loss,valid_rel_l2");
    assert!(rows.len() >= 3);
    let losses: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[0] == w[1]), "{losses:?}");
    assert!(tmp.path().join("z/model.ilrm").exists());
}

#[test]
fn train_reports_parameter_count() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "big.json",
        r#"{"d": 100, "n": 50, "n_s": 2, "n_valid": 2, "r_w": 2, "sigma_eps": 0.01,
            "L": 4, "d_k": 10, "epochs": 0, "dataset": "big/dataset.ilrd"}"#,
    );
    assert_eq!(code(&run(tmp.path(), &["generate", "big.json", "--out", "big"])), 0);
    let o = run(tmp.path(), &["train", "big.json", "--out", "big"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("parameters: 14581"), "{}", stdout(&o));
}

#[test]
fn divergence_exits_4() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--out", "data"])), 0);
    let o = run(tmp.path(), &["train", "small.json", "--out", "dv", "--set", "lr=1e200"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn evaluate_rows_and_thread_invariance() {
    let tmp = trained();
    let o = run(tmp.path(), &["evaluate", "small.json", "--out", "e1", "--threads", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(tmp.path(), &["evaluate", "small.json", "--out", "e4", "--threads", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = fs::read(tmp.path().join("e1/evaluate.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("e4/evaluate.csv")).unwrap());

    let (header, rows) = read_csv(&tmp.path().join("e1/evaluate.csv"));
    assert!(header.starts_with(
        "method,d,n,r_w,sigma_eps,kappa,n_s,trials,mean_err,std_err,lambda_mean,bound_lower,bound_upper,seed,wall_time_s"
    ));
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["transformer", "RE", "TRE", "ORE"]);
    let err = column(&header, "mean_err");
    for r in &rows {
        let e: f64 = r[err].parse().unwrap();
        assert!(e.is_finite() && e >= 0.0);
    }
}

#[test]
fn evaluate_without_checkpoint_is_config_error() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    assert_eq!(code(&run(tmp.path(), &["generate", "small.json", "--out", "data"])), 0);
    let o = run(tmp.path(), &["evaluate", "small.json", "--out", "e"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn prior_recovery_outputs() {
    let tmp = trained();
    let o = run(tmp.path(), &["prior-recovery", "small.json", "--out", "pr"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("pr/spectrum.csv"));
    assert_eq!(header, "index,eigenvalue");
    assert_eq!(rows.len(), 8);

    let o = run(
        tmp.path(),
        &["prior-recovery", "small.json", "--out", "ore", "--set", "use_ore=true", "--set", "n_t=1000", "--set", "sigma_eps=0.01"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("ore/recovery.csv"));
    assert_eq!(
        header,
        "method,d,n,r_w,sigma_eps,n_t,mean_rel_err,cov_rel_err,detected_rank,seed"
    );
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "ORE");
    let cov: f64 = rows[0][column(&header, "cov_rel_err")].parse().unwrap();
    assert!(cov < 0.1, "cov_rel_err {cov}");
}

#[test]
fn scaling_requires_one_axis_and_writes_slopes() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "small.json", SMALL);
    let o = run(
        tmp.path(),
        &["scaling", "small.json", "--out", "s", "--set", "sweep_sigma_eps=[0.01,0.1]", "--set", "sweep_kappa=[1,2]"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(tmp.path(), &["scaling", "small.json", "--out", "s"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = run(tmp.path(), &["scaling", "small.json", "--out", "s", "--set", "sweep_sigma_eps=[0.01,0.03,0.1]"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("s/scaling.csv"));
    let slope_col = column(&header, "slope");
    let slopes: Vec<&Vec<String>> = rows.iter().filter(|r| r[0].ends_with("_slope")).collect();
    assert_eq!(slopes.len(), 2);
    let ore: f64 = slopes.iter().find(|r| r[0] == "ORE_slope").unwrap()[slope_col].parse().unwrap();
    assert!(ore > 0.5 && ore < 1.5, "ORE slope {ore}");
    assert_eq!(rows.len() - slopes.len(), 9);
}

#[test]
fn bounds_check_passes_and_negative_control_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"{"d": 20, "n": 400, "sigma_eps": 0.05, "r_w": 2,
                  "trials": 300, "lemma_contexts": 300, "mc_samples": 300, "seed": 1}"#;
    write_config(tmp.path(), "b.json", cfg);
    let o = run(tmp.path(), &["bounds-check", "b.json", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("b/bounds.csv"));
    assert_eq!(header, "check,d,n,r_w,sigma_eps,t_used,a_t,b_t,c_t,lower,upper,value,std_err,pass");
    assert!(rows.iter().all(|r| r.last().unwrap() == "true"));

    let o = run(tmp.path(), &["bounds-check", "b.json", "--out", "nc", "--set", "ore_sigma_eps=10"]);
    assert_eq!(code(&o), 1, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("FAIL"));
}
