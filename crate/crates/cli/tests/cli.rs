use std::fs;
use std::path::Path;
use std::process::Command;

use lru_mor::data::DataSplit;
use lru_mor::deep_ssm::DeepSsm;
use lru_mor::experiment::evaluate;
use lru_mor::metrics::Metrics;
use lru_mor::mor::{reduce_model, ReductionMethod};
use lru_mor_cli::commands::*;
use lru_mor_cli::config::Config;

const CONFIG: &str = r#"
[model]
n_x = 4
d_model = 4
n_skip_loss = 20

[train]
learning_rate = 1e-2
epochs = 2
batch_size = 4
subseq_len = 100
n_skip = 20

[gen]
length = 300
train_sequences = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lru-mor"))
}

fn run_ok(args: &[&str], dir: &Path) -> String {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Generate data and train a model inside `dir`.
fn setup(dir: &Path) {
    fs::write(dir.join("cfg.toml"), CONFIG).unwrap();
    run_ok(&["gen-data", "--config", "cfg.toml", "--seed", "5", "--out", "data"], dir);
    run_ok(&["fit", "--config", "cfg.toml", "--data", "data", "--seed", "1", "--out", "fit"], dir);
}

#[test]
fn fit_writes_checkpoint_log_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    for f in [MODEL_FILE, OPTIMIZER_FILE, TRAIN_LOG_FILE, METRICS_FILE] {
        assert!(dir.join("fit").join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(dir.join("fit").join(TRAIN_LOG_FILE)).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "epoch", "loss", "mse", "reg", "grad_norm", "wall_ms"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let model = DeepSsm::load(&dir.join("fit").join(MODEL_FILE)).unwrap();
    let opt = load_optimizer(&dir.join("fit").join(OPTIMIZER_FILE)).unwrap();
    assert_eq!(opt.m.len(), model.n_params());
    assert_eq!(opt.step as usize, log.lines().count());
}

#[test]
fn sweep_full_order_row_matches_eval_and_has_n_x_plus_one_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    run_ok(&["eval", "--checkpoint", "fit/model.json", "--data", "data", "--out", "eval"], dir);
    run_ok(&["sweep", "--checkpoint", "fit/model.json", "--data", "data", "--out", "sweep"], dir);
    let metrics: Metrics = serde_json::from_str(&fs::read_to_string(dir.join("eval").join(METRICS_FILE)).unwrap()).unwrap();
    let mut reader = csv::Reader::from_path(dir.join("sweep").join(SWEEP_CSV_FILE)).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["method", "r", "removed", "fit_y1", "avg_fit", "bound"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    for method in ReductionMethod::ALL {
        let own: Vec<_> = rows.iter().filter(|r| r[0] == method.to_string()).collect();
        assert_eq!(own.len(), 4 + 1, "{method}");
        assert_eq!(&own[0][1], "4");
        assert_eq!(own[0][3].parse::<f64>().unwrap(), metrics.fit[0]);
        assert_eq!(own[0][5].is_empty(), !method.is_balanced());
    }
}

#[test]
fn reduce_then_eval_matches_in_process_reduction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    run_ok(&["reduce", "--checkpoint", "fit/model.json", "--method", "bsp", "--order", "2", "--out", "red"], dir);
    run_ok(&["eval", "--checkpoint", "red/model.json", "--data", "data", "--out", "red_eval"], dir);
    let from_cli: Metrics =
        serde_json::from_str(&fs::read_to_string(dir.join("red_eval").join(METRICS_FILE)).unwrap()).unwrap();
    let model = DeepSsm::load(&dir.join("fit").join(MODEL_FILE)).unwrap();
    let (reduced, reports) = reduce_model(&model, 2, ReductionMethod::Bsp).unwrap();
    let split = DataSplit::load(&dir.join("data")).unwrap();
    let direct = evaluate(&reduced, &split.test, model.config.n_skip_loss).unwrap();
    assert!((from_cli.fit[0] - direct.fit[0]).abs() <= 1e-12);
    assert!((from_cli.rmse[0] - direct.rmse[0]).abs() <= 1e-12);
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("red").join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(saved.as_array().unwrap().len(), reports.len());
}

#[test]
fn identical_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    run_ok(&["gen-data", "--config", "cfg.toml", "--seed", "5", "--out", "data2"], dir);
    run_ok(&["fit", "--config", "cfg.toml", "--data", "data2", "--seed", "1", "--out", "fit2"], dir);
    for f in ["train/train000.csv", "test/test000.csv", "teacher.json"] {
        assert_eq!(fs::read(dir.join("data").join(f)).unwrap(), fs::read(dir.join("data2").join(f)).unwrap(), "{f}");
    }
    for f in [MODEL_FILE, OPTIMIZER_FILE, METRICS_FILE] {
        assert_eq!(fs::read(dir.join("fit").join(f)).unwrap(), fs::read(dir.join("fit2").join(f)).unwrap(), "{f}");
    }
    run_ok(&["fit", "--config", "cfg.toml", "--data", "data", "--seed", "2", "--out", "fit3"], dir);
    assert_ne!(fs::read(dir.join("fit").join(MODEL_FILE)).unwrap(), fs::read(dir.join("fit3").join(MODEL_FILE)).unwrap());
}

#[test]
fn gradcheck_passes_and_fails_with_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let stdout = run_ok(&["gradcheck", "--out", "gc"], dir);
    assert_eq!(stdout.lines().count(), 4);
    assert!(dir.join("gc").join(GRADCHECK_FILE).exists());
    fs::write(dir.join("strict.toml"), "[gradcheck]\ntolerance = 0.0\n").unwrap();
    let out = bin().args(["gradcheck", "--config", "strict.toml"]).current_dir(dir).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_errors_point_at_the_line_and_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), "[train]\nepochs = 3\nlearning_rat = 0.1\n").unwrap();
    let out = bin().args(["gen-data", "--config", "bad.toml"]).current_dir(dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("learning_rat"), "{err}");
}

#[test]
fn missing_arguments_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["eval"]).current_dir(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
    let out = bin().args(["reduce", "--method", "xyz", "--order", "1"]).current_dir(tmp.path()).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn in_process_api_matches_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let cfg = Config::parse(CONFIG).unwrap();
    let mut sink = Vec::new();
    let (model, _) = fit_cmd(&cfg, &dir.join("data"), Some(1), &dir.join("fit_lib"), &mut sink).unwrap();
    let from_bin = DeepSsm::load(&dir.join("fit").join(MODEL_FILE)).unwrap();
    assert_eq!(model.flatten(), from_bin.flatten());
}
