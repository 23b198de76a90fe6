//! Per-channel simulation quality metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `fit = 100 (1 - ‖y - ŷ‖ / ‖y - ȳ‖)`, `rmse = sqrt(mean (y - ŷ)²)`,
/// `nrmse = rmse / std(y)`, one entry per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fit: Vec<f64>,
    pub rmse: Vec<f64>,
    pub nrmse: Vec<f64>,
}

impl Metrics {
    pub fn avg_fit(&self) -> f64 {
        self.fit.iter().sum::<f64>() / self.fit.len() as f64
    }

    /// Pool several sequences by concatenating them along time.
    pub fn pooled(pairs: &[(&DMatrix<f64>, &DMatrix<f64>)]) -> Result<Metrics> {
        let Some((first, _)) = pairs.first() else {
            return Err(Error::LengthMismatch("no sequences to score".into()));
        };
        let total: usize = pairs.iter().map(|(y, _)| y.ncols()).sum();
        let mut y = DMatrix::zeros(first.nrows(), total);
        let mut y_hat = DMatrix::zeros(first.nrows(), total);
        let mut at = 0;
        for (a, b) in pairs {
            if a.shape() != b.shape() || a.nrows() != first.nrows() {
                return Err(Error::LengthMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            y.columns_mut(at, a.ncols()).copy_from(*a);
            y_hat.columns_mut(at, a.ncols()).copy_from(*b);
            at += a.ncols();
        }
        metrics(&y, &y_hat)
    }
}

/// Metrics of `y_hat` against `y` (channels × time).
pub fn metrics(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<Metrics> {
    if y.shape() != y_hat.shape() {
        return Err(Error::LengthMismatch(format!("{:?} vs {:?}", y.shape(), y_hat.shape())));
    }
    if y.ncols() == 0 {
        return Err(Error::LengthMismatch("empty sequence".into()));
    }
    let t = y.ncols() as f64;
    let mut out = Metrics { fit: Vec::new(), rmse: Vec::new(), nrmse: Vec::new() };
    for ch in 0..y.nrows() {
        let row = y.row(ch);
        let mean = row.sum() / t;
        let dev = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        if dev == 0.0 {
            return Err(Error::ZeroVariance(ch));
        }
        let err = row.iter().zip(y_hat.row(ch).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let rmse = (err / t).sqrt();
        out.fit.push(100.0 * (1.0 - (err / dev).sqrt()));
        out.rmse.push(rmse);
        out.nrmse.push(rmse / (dev / t).sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 3.0, -1.0, 1.0, 2.0, 0.5]);
        let m = metrics(&y, &y).unwrap();
        assert_eq!(m.fit, vec![100.0, 100.0]);
        assert_eq!(m.rmse, vec![0.0, 0.0]);
        assert_eq!(m.nrmse, vec![0.0, 0.0]);
    }

    #[test]
    fn mean_predictor() {
        let y = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 0.0, 3.0]);
        let m = metrics(&y, &DMatrix::from_element(1, 4, 1.5)).unwrap();
        assert!(m.fit[0].abs() < 1e-12);
        assert!((m.nrmse[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_is_rejected() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 4.0, 4.0]);
        assert!(matches!(metrics(&y, &y), Err(Error::ZeroVariance(1))));
    }

    #[test]
    fn pooled_equals_concatenated() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let ah = a.map(|v| v + 0.1);
        let bh = b.map(|v| v * 0.9);
        let pooled = Metrics::pooled(&[(&a, &ah), (&b, &bh)]).unwrap();
        let y = DMatrix::from_row_slice(1, 5, &[1.0, 2.0, 0.0, 3.0, -1.0]);
        let yh = DMatrix::from_row_slice(1, 5, &[1.1, 2.1, 0.1, 2.7, -0.9]);
        let direct = metrics(&y, &yh).unwrap();
        assert!((pooled.fit[0] - direct.fit[0]).abs() < 1e-12);
    }
}
