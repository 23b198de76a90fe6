//! Implementations of the subcommands. Each writes its artifacts under the
//! output directory and a human-readable summary to `stdout`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lru_mor::data::{gen_data, DataSplit, Generated, Sequence};
use lru_mor::deep_ssm::DeepSsm;
use lru_mor::experiment::{evaluate, fit_model, max_removable, sweep, SweepRow};
use lru_mor::metrics::Metrics;
use lru_mor::mor::{reduce_model, ReductionMethod, ReductionReport};
use lru_mor::training::{gradcheck, AdamState, GradCheckReport, RegKind, Window};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;

pub const MODEL_FILE: &str = "model.json";
pub const OPTIMIZER_FILE: &str = "optimizer.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";
pub const GRADCHECK_FILE: &str = "gradcheck.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_split(dir: &Path) -> Result<DataSplit> {
    DataSplit::load(dir).with_context(|| format!("loading data from {}", dir.display()))
}

fn load_model(path: &Path) -> Result<DeepSsm> {
    DeepSsm::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn output_names(split: &DataSplit) -> Vec<String> {
    let n = split.test.n_out();
    if split.meta.output_names.len() == n {
        split.meta.output_names.clone()
    } else {
        (1..=n).map(|i| format!("y{i}")).collect()
    }
}

pub fn gen_data_cmd(cfg: &Config, seed: Option<u64>, out: &Path, stdout: &mut dyn Write) -> Result<Generated> {
    let mut gen = cfg.gen.clone();
    if let Some(s) = seed {
        gen.seed = s;
    }
    let g = gen_data(&gen)?;
    create_dir(out)?;
    g.save(out)?;
    writeln!(
        stdout,
        "wrote {} train and {} test sequences of length {} to {}",
        g.split.train.sequences.len(),
        g.split.test.sequences.len(),
        gen.length,
        out.display()
    )?;
    Ok(g)
}

/// Train a fresh model and write `model.json`, `optimizer.json`, the JSON-lines
/// training log and the test metrics.
pub fn fit_cmd(cfg: &Config, data: &Path, seed: Option<u64>, out: &Path, stdout: &mut dyn Write) -> Result<(DeepSsm, Metrics)> {
    let split = load_split(data)?;
    let mut train_cfg = cfg.train.clone();
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    create_dir(out)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let outcome = fit_model(&split.train, &cfg.model, &train_cfg, Some(&mut log))?;
    log.flush()?;
    outcome.model.save(&out.join(MODEL_FILE))?;
    write_json(&out.join(OPTIMIZER_FILE), &outcome.optimizer)?;
    let metrics = evaluate(&outcome.model, &split.test, outcome.model.config.n_skip_loss)?;
    write_json(&out.join(METRICS_FILE), &metrics)?;
    if let Some(last) = outcome.history.last() {
        writeln!(stdout, "{} steps, final loss {:.4e} (mse {:.4e}, reg {:.4e})", last.step, last.loss, last.mse, last.reg)?;
    }
    write_metrics_table(stdout, &output_names(&split), &metrics)?;
    Ok((outcome.model, metrics))
}

/// Load a saved optimizer sidecar.
pub fn load_optimizer(path: &Path) -> Result<AdamState> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_metrics_table(w: &mut dyn Write, names: &[String], m: &Metrics) -> std::io::Result<()> {
    writeln!(w, "{:<10} {:>9} {:>12} {:>9}", "channel", "fit (%)", "rmse", "nrmse")?;
    for (i, name) in names.iter().enumerate() {
        writeln!(w, "{:<10} {:>9.3} {:>12.4e} {:>9.4}", name, m.fit[i], m.rmse[i], m.nrmse[i])?;
    }
    writeln!(w, "{:<10} {:>9.3}", "average", m.avg_fit())
}

/// Test-set metrics of a checkpoint, printed as a table followed by JSON.
pub fn eval_cmd(checkpoint: &Path, data: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> Result<Metrics> {
    let model = load_model(checkpoint)?;
    let split = load_split(data)?;
    let metrics = evaluate(&model, &split.test, model.config.n_skip_loss)?;
    write_metrics_table(stdout, &output_names(&split), &metrics)?;
    writeln!(stdout, "{}", serde_json::to_string(&metrics)?)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join(METRICS_FILE), &metrics)?;
    }
    Ok(metrics)
}

pub fn reduce_cmd(
    checkpoint: &Path,
    method: ReductionMethod,
    order: usize,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<(DeepSsm, Vec<ReductionReport>)> {
    let model = load_model(checkpoint)?;
    let (reduced, reports) = reduce_model(&model, order, method)?;
    create_dir(out)?;
    reduced.save(&out.join(MODEL_FILE))?;
    write_json(&out.join(REPORT_FILE), &reports)?;
    writeln!(stdout, "{method} to order {order}")?;
    for (i, r) in reports.iter().enumerate() {
        let bound = r.bound.map_or("-".to_string(), |b| format!("{b:.3e}"));
        writeln!(
            stdout,
            "layer {i}: {} -> {} states, H-inf error {:.3e}, bound {bound}, DC gain error {:.3e}",
            r.original_order, r.retained_order, r.hinf_error_estimate, r.dc_gain_error
        )?;
    }
    Ok((reduced, reports))
}

/// Largest number of states removable from every layer within the fit
/// tolerance, per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: ReductionMethod,
    pub full_avg_fit: f64,
    pub max_removed: usize,
}

pub fn summarize(rows: &[SweepRow], methods: &[ReductionMethod]) -> Vec<SweepSummary> {
    methods
        .iter()
        .map(|&method| SweepSummary {
            method,
            full_avg_fit: rows.iter().find(|r| r.method == method && r.removed == 0).map_or(f64::NAN, |r| r.avg_fit),
            max_removed: max_removable(rows, method),
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, names: &[String], rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["method".to_string(), "r".into(), "removed".into()];
    header.extend(names.iter().map(|n| format!("fit_{n}")));
    header.extend(["avg_fit".to_string(), "bound".into()]);
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.method.to_string(), row.r.to_string(), row.removed.to_string()];
        rec.extend(row.fit.iter().map(f64::to_string));
        rec.push(row.avg_fit.to_string());
        rec.push(row.bound.map_or(String::new(), |b| b.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_cmd(
    checkpoint: &Path,
    data: &Path,
    methods: &[ReductionMethod],
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<(Vec<SweepRow>, Vec<SweepSummary>)> {
    if methods.is_empty() {
        bail!("no reduction methods selected");
    }
    let model = load_model(checkpoint)?;
    let split = load_split(data)?;
    let rows = sweep(&model, &split.test, methods, model.config.n_skip_loss)?;
    let summary = summarize(&rows, methods);
    create_dir(out)?;
    write_sweep_csv(&out.join(SWEEP_CSV_FILE), &output_names(&split), &rows)?;
    write_json(&out.join(SWEEP_SUMMARY_FILE), &summary)?;
    writeln!(stdout, "{:<7} {:>12} {:>12}", "method", "full fit", "max removed")?;
    for s in &summary {
        writeln!(stdout, "{:<7} {:>12.3} {:>9} / {}", s.method.to_string(), s.full_avg_fit, s.max_removed, model.config.n_x)?;
    }
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOutcome {
    pub tolerance: f64,
    pub reports: Vec<GradCheckReport>,
    pub passed: bool,
}

/// Finite-difference check of the analytic gradient for every regularizer
/// on a small random model and sequence.
pub fn gradcheck_cmd(cfg: &Config, seed: Option<u64>, out: Option<&Path>, stdout: &mut dyn Write) -> Result<GradCheckOutcome> {
    let gc = &cfg.gradcheck;
    let seed = seed.unwrap_or(0);
    gc.model.validate()?;
    let model = DeepSsm::init(&mut ChaCha8Rng::seed_from_u64(seed), &gc.model, &cfg.train.lru_init())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let seq = Sequence {
        name: "gradcheck".into(),
        u: DMatrix::from_fn(gc.model.n_in, gc.length, |_, _| rng.random_range(-1.0..1.0)),
        y: DMatrix::from_fn(gc.model.n_out, gc.length, |_, _| rng.random_range(-1.0..1.0)),
    };
    let batch = [Window::whole(&seq)];
    let mut reports = Vec::new();
    for kind in RegKind::ALL {
        let report = gradcheck(&model, &batch, gc.n_skip, kind, gc.reg_strength, gc.step)?;
        let verdict = if report.worst_rel_err <= gc.tolerance { "ok" } else { "FAILED" };
        writeln!(stdout, "{:<15} worst rel. error {:.3e}  {verdict}", kind.name(), report.worst_rel_err)?;
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.worst_rel_err <= gc.tolerance);
    let outcome = GradCheckOutcome { tolerance: gc.tolerance, reports, passed };
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join(GRADCHECK_FILE), &outcome)?;
    }
    Ok(outcome)
}

/// Default output directory when `--out` is omitted.
pub fn default_out(command: &str) -> PathBuf {
    PathBuf::from("runs").join(command)
}
