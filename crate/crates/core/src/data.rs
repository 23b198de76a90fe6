//! Input/output datasets: CSV storage and synthetic generation.
//!
//! Each sequence is one CSV file with header `u1..u{n_in},y1..y{n_out}` and
//! one row per sample. A dataset directory holds `train/` and `test/`
//! subdirectories, an optional `meta.json` and, for generated data, the
//! teacher model in `teacher.json`.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::deep_ssm::{DeepSsm, DeepSsmConfig, Nonlinearity, NormKind};
use crate::error::{Error, Result};
use crate::lru::{LruInit, LruParams, LruState};

/// One input/output record; `u` is `n_in × T`, `y` is `n_out × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub output_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn n_in(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.u.nrows())
    }

    pub fn n_out(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.y.nrows())
    }

    /// Read every `*.csv` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Format(format!("no CSV files in {}", dir.display())));
        }
        let sequences = paths.iter().map(|p| read_csv(p)).collect::<Result<Vec<_>>>()?;
        let ds = Self { sequences };
        for s in &ds.sequences {
            if s.u.nrows() != ds.n_in() || s.y.nrows() != ds.n_out() {
                return Err(Error::Format(format!("sequence `{}` has a different channel layout", s.name)));
            }
        }
        Ok(ds)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in &self.sequences {
            write_csv(&dir.join(format!("{}.csv", s.name)), s)?;
        }
        Ok(())
    }
}

/// A train/test pair loaded from `<dir>/train` and `<dir>/test`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub meta: DatasetMeta,
}

impl DataSplit {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta = if meta_path.exists() {
            serde_json::from_str(&fs::read_to_string(meta_path)?)?
        } else {
            DatasetMeta::default()
        };
        let train = Dataset::load_dir(&dir.join("train"))?;
        let test = Dataset::load_dir(&dir.join("test"))?;
        if train.n_in() != test.n_in() || train.n_out() != test.n_out() {
            return Err(Error::Format("train and test channel counts differ".into()));
        }
        Ok(Self { train, test, meta })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.train.save_dir(&dir.join("train"))?;
        self.test.save_dir(&dir.join("test"))?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }
}

pub fn read_csv(path: &Path) -> Result<Sequence> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let mut u_cols = Vec::new();
    let mut y_cols = Vec::new();
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        let expected_u = format!("u{}", u_cols.len() + 1);
        let expected_y = format!("y{}", y_cols.len() + 1);
        if h == expected_u && y_cols.is_empty() {
            u_cols.push(i);
        } else if h == expected_y {
            y_cols.push(i);
        } else {
            return Err(Error::Format(format!(
                "{}: unexpected column `{h}` (header must be u1..uN,y1..yM)",
                path.display()
            )));
        }
    }
    if u_cols.is_empty() || y_cols.is_empty() {
        return Err(Error::Format(format!("{}: need at least one u and one y column", path.display())));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!("{}: row {}: `{v}` is not a number", path.display(), line + 2))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("{}: row {}: missing or non-finite value", path.display(), line + 2)));
        }
        rows.push(row);
    }
    let t = rows.len();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Sequence {
        name,
        u: DMatrix::from_fn(u_cols.len(), t, |i, k| rows[k][u_cols[i]]),
        y: DMatrix::from_fn(y_cols.len(), t, |i, k| rows[k][y_cols[i]]),
    })
}

pub fn write_csv(path: &Path, seq: &Sequence) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (1..=seq.u.nrows())
        .map(|i| format!("u{i}"))
        .chain((1..=seq.y.nrows()).map(|i| format!("y{i}")))
        .collect();
    w.write_record(&header)?;
    for k in 0..seq.len() {
        let row: Vec<String> = seq.u.column(k).iter().chain(seq.y.column(k).iter()).map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// A single diagonal LTI block.
    Lti,
    /// A randomly initialized deep SSM.
    DeepSsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    WhiteNoise,
    Multisine,
}

/// Synthetic data generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub teacher: TeacherKind,
    pub n_in: usize,
    pub n_out: usize,
    /// Teacher state order (per layer for a deep teacher).
    pub order: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub hidden: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub input: InputKind,
    pub input_std: f64,
    /// Period in samples of the multisine.
    pub multisine_period: usize,
    /// Excited DFT bins of the multisine; empty means bins `1..period/4`.
    pub multisine_bins: Vec<usize>,
    pub noise_std: f64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            teacher: TeacherKind::DeepSsm,
            n_in: 1,
            n_out: 1,
            order: 4,
            d_model: 8,
            n_layers: 2,
            hidden: 16,
            r_min: 0.5,
            r_max: 0.95,
            input: InputKind::WhiteNoise,
            input_std: 1.0,
            multisine_period: 256,
            multisine_bins: Vec::new(),
            noise_std: 0.0,
            train_sequences: 4,
            test_sequences: 1,
            length: 2000,
            seed: 0,
        }
    }
}

/// Ground-truth system behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Teacher {
    Lti { lru: LruParams },
    DeepSsm { model: DeepSsm },
}

impl Teacher {
    pub fn simulate(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Teacher::Lti { lru } => lru.simulate_sequential(u, &LruState::zeros(lru.n_states())),
            Teacher::DeepSsm { model } => model.forward(u),
        }
    }
}

/// Generated data together with its teacher.
#[derive(Debug, Clone)]
pub struct Generated {
    pub split: DataSplit,
    pub teacher: Teacher,
}

impl Generated {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.split.save(dir)?;
        fs::write(dir.join("teacher.json"), serde_json::to_string_pretty(&self.teacher)?)?;
        Ok(())
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 || self.order == 0 || self.length == 0 {
            return Err(Error::Config("n_in, n_out, order and length must be at least 1".into()));
        }
        if self.train_sequences == 0 || self.test_sequences == 0 {
            return Err(Error::Config("need at least one train and one test sequence".into()));
        }
        if !(0.0 <= self.r_min && self.r_min < self.r_max && self.r_max < 1.0) {
            return Err(Error::Config("need 0 <= r_min < r_max < 1".into()));
        }
        if self.input == InputKind::Multisine {
            if self.multisine_period < 4 {
                return Err(Error::Config("multisine_period must be at least 4".into()));
            }
            if let Some(b) = self.multisine_bins.iter().find(|&&b| b == 0 || 2 * b >= self.multisine_period) {
                return Err(Error::Config(format!("multisine bin {b} outside 1..period/2")));
            }
        }
        Ok(())
    }

    fn bins(&self) -> Vec<usize> {
        if self.multisine_bins.is_empty() {
            (1..(self.multisine_period / 4).max(2)).collect()
        } else {
            self.multisine_bins.clone()
        }
    }

    fn teacher<R: Rng>(&self, rng: &mut R) -> Result<Teacher> {
        let init = LruInit { r_min: self.r_min, r_max: self.r_max };
        Ok(match self.teacher {
            TeacherKind::Lti => {
                let mut lru = LruParams::init(rng, self.order, self.n_in, self.n_out, &init);
                let normal = Normal::new(0.0, 0.1).expect("valid std");
                lru.d = DMatrix::from_fn(self.n_out, self.n_in, |_, _| normal.sample(rng));
                Teacher::Lti { lru }
            }
            TeacherKind::DeepSsm => {
                let cfg = DeepSsmConfig {
                    n_in: self.n_in,
                    n_out: self.n_out,
                    d_model: self.d_model,
                    n_x: self.order,
                    n_layers: self.n_layers,
                    nonlinearity: Nonlinearity::Mlp { hidden: self.hidden },
                    norm: NormKind::LayerNorm,
                    n_skip_loss: 0,
                };
                Teacher::DeepSsm { model: DeepSsm::init(rng, &cfg, &init)? }
            }
        })
    }

    fn input<R: Rng>(&self, rng: &mut R) -> DMatrix<f64> {
        match self.input {
            InputKind::WhiteNoise => {
                let normal = Normal::new(0.0, self.input_std).expect("valid std");
                DMatrix::from_fn(self.n_in, self.length, |_, _| normal.sample(rng))
            }
            InputKind::Multisine => {
                let bins = self.bins();
                let p = self.multisine_period as f64;
                // equal amplitudes; each cosine has variance A²/2
                let amp = self.input_std * (2.0 / bins.len() as f64).sqrt();
                let mut u = DMatrix::zeros(self.n_in, self.length);
                for ch in 0..self.n_in {
                    let phases: Vec<f64> = bins.iter().map(|_| rng.random_range(0.0..TAU)).collect();
                    for k in 0..self.length {
                        u[(ch, k)] = bins
                            .iter()
                            .zip(&phases)
                            .map(|(&b, ph)| amp * (TAU * b as f64 * k as f64 / p + ph).cos())
                            .sum();
                    }
                }
                u
            }
        }
    }
}

/// Generate a dataset from a random teacher. Deterministic in `cfg.seed`.
pub fn gen_data(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let teacher = cfg.teacher(&mut rng)?;
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut make = |prefix: &str, count: usize| Dataset {
        sequences: (0..count)
            .map(|i| {
                let u = cfg.input(&mut rng);
                let mut y = teacher.simulate(&u);
                if cfg.noise_std > 0.0 {
                    y.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                }
                Sequence { name: format!("{prefix}{i:03}"), u, y }
            })
            .collect(),
    };
    let train = make("train", cfg.train_sequences);
    let test = make("test", cfg.test_sequences);
    Ok(Generated { split: DataSplit { train, test, meta: DatasetMeta::default() }, teacher })
}
