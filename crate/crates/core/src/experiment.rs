//! Evaluation, order sweeps and the end-to-end fit → reduce workflow.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::deep_ssm::{DeepSsm, DeepSsmConfig};
use crate::error::{Error, Result};
use crate::linalg::hankel_singular_values;
use crate::metrics::Metrics;
use crate::mor::{reduce_model, ReductionMethod};
use crate::training::{train, TrainConfig, TrainOutcome};

/// Average-fit drop (percentage points) tolerated by [`max_removable`].
pub const FIT_DROP_TOLERANCE: f64 = 1.0;

/// Initialize a model from `train_cfg.seed` and train it on `data`.
pub fn fit_model(
    data: &Dataset,
    model_cfg: &DeepSsmConfig,
    train_cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if data.n_in() != model_cfg.n_in || data.n_out() != model_cfg.n_out {
        return Err(Error::Config(format!(
            "data has {} inputs / {} outputs, model expects {} / {}",
            data.n_in(),
            data.n_out(),
            model_cfg.n_in,
            model_cfg.n_out
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let model = DeepSsm::init(&mut rng, model_cfg, &train_cfg.lru_init())?;
    train(model, &data.sequences, train_cfg, log)
}

/// Simulate every sequence from rest and score the samples after `n_skip`,
/// pooled over sequences.
pub fn evaluate(m: &DeepSsm, data: &Dataset, n_skip: usize) -> Result<Metrics> {
    let sims = m.forward_batch(&data.sequences.iter().map(|s| s.u.clone()).collect::<Vec<_>>());
    let mut pairs = Vec::with_capacity(sims.len());
    for (s, y_hat) in data.sequences.iter().zip(&sims) {
        if s.len() <= n_skip {
            return Err(Error::SequenceTooShort { len: s.len(), window: n_skip + 1 });
        }
        pairs.push((s.y.columns(n_skip, s.len() - n_skip).into_owned(), y_hat.columns(n_skip, s.len() - n_skip).into_owned()));
    }
    Metrics::pooled(&pairs.iter().map(|(a, b)| (a, b)).collect::<Vec<_>>())
}

/// One reduced order in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: ReductionMethod,
    pub r: usize,
    pub removed: usize,
    pub fit: Vec<f64>,
    pub avg_fit: f64,
    /// Sum over layers of the per-block H∞ bound (balanced methods).
    pub bound: Option<f64>,
}

/// Reduce all layers to each `r = n_x, …, 0` and evaluate on `test`.
/// `r = n_x` evaluates the unreduced model.
pub fn sweep(m: &DeepSsm, test: &Dataset, methods: &[ReductionMethod], n_skip: usize) -> Result<Vec<SweepRow>> {
    let n_x = m.config.n_x;
    let jobs: Vec<(ReductionMethod, usize)> =
        methods.iter().flat_map(|&method| (0..=n_x).rev().map(move |r| (method, r))).collect();
    jobs.par_iter()
        .map(|&(method, r)| {
            let (model, bound) = if r == n_x {
                (m.clone(), method.is_balanced().then_some(0.0))
            } else {
                let (model, reports) = reduce_model(m, r, method)?;
                let bound = reports.iter().map(|rep| rep.bound).sum::<Option<f64>>();
                (model, bound)
            };
            let metrics = evaluate(&model, test, n_skip)?;
            Ok(SweepRow { method, r, removed: n_x - r, avg_fit: metrics.avg_fit(), fit: metrics.fit, bound })
        })
        .collect()
}

/// Largest number of removed states per layer whose average fit stays
/// within [`FIT_DROP_TOLERANCE`] of the unreduced model.
pub fn max_removable(rows: &[SweepRow], method: ReductionMethod) -> usize {
    let own: Vec<&SweepRow> = rows.iter().filter(|r| r.method == method).collect();
    let Some(full) = own.iter().find(|r| r.removed == 0) else {
        return 0;
    };
    own.iter()
        .filter(|r| r.avg_fit >= full.avg_fit - FIT_DROP_TOLERANCE)
        .map(|r| r.removed)
        .max()
        .unwrap_or(0)
}

/// Number of LRU eigenvalues with modulus below `threshold`, over all layers.
pub fn count_small_eigenvalues(m: &DeepSsm, threshold: f64) -> usize {
    m.layers.iter().flat_map(|l| l.lru.eigenvalues()).filter(|z| z.norm() < threshold).count()
}

/// Number of Hankel singular values below `rel · σ_1` of their own layer.
pub fn count_small_hsv(m: &DeepSsm, rel: f64) -> Result<usize> {
    let mut count = 0;
    for layer in &m.layers {
        let s = hankel_singular_values(&layer.lru.to_state_space())?;
        count += s.normalized().iter().filter(|&&v| v < rel).count();
    }
    Ok(count)
}
