use num_complex::Complex64;

use super::{c, ComplexMatrix, StateSpaceModel};
use crate::error::{Error, Result};

const DEFECTIVE_COND: f64 = 1e10;

/// Eigendecomposition `M V = V diag(values)`.
///
/// `left`, when requested, holds `W` with `W* M = diag(values) W*` and the
/// biorthogonal normalization `W* V = I`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    pub vectors: ComplexMatrix,
    pub left: Option<ComplexMatrix>,
}

/// Eigenvalues of a square complex matrix via the complex Schur form.
pub fn eigenvalues(m: &ComplexMatrix) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!("eigenvalues of {:?}", m.shape())));
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let schur = m.clone().try_schur(f64::EPSILON, 100_000).ok_or(Error::EigenNoConvergence)?;
    Ok(schur.unpack().1.diagonal().iter().copied().collect())
}

/// Right (and optionally left) eigenvectors of a diagonalizable matrix.
///
/// Eigenvectors of the triangular Schur factor are obtained by back
/// substitution and mapped back with the unitary factor. Columns of
/// `vectors` have unit 2-norm.
pub fn eig_dense(m: &ComplexMatrix, want_left: bool) -> Result<Eigen> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!("eig of {:?}", m.shape())));
    }
    if n == 0 {
        let empty = ComplexMatrix::zeros(0, 0);
        return Ok(Eigen { values: Vec::new(), vectors: empty.clone(), left: want_left.then_some(empty) });
    }
    let schur = m.clone().try_schur(f64::EPSILON, 100_000).ok_or(Error::EigenNoConvergence)?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = t.diagonal().iter().copied().collect();

    let scale = t.norm().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * scale;
    let mut y = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = c(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = c(0.0, 0.0);
            for l in (j + 1)..=k {
                acc += t[(j, l)] * y[(l, k)];
            }
            let mut den = t[(j, j)] - values[k];
            if den.norm() < small {
                den = c(small, 0.0);
            }
            y[(j, k)] = -acc / den;
        }
    }
    let mut vectors = q * y;
    for mut col in vectors.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= c(norm, 0.0);
        }
    }

    let sv = vectors.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > DEFECTIVE_COND {
        return Err(Error::DefectiveMatrix(cond));
    }

    let left = if want_left {
        let inv = vectors.clone().try_inverse().ok_or(Error::DefectiveMatrix(f64::INFINITY))?;
        Some(inv.adjoint())
    } else {
        None
    };
    Ok(Eigen { values, vectors, left })
}

/// Largest eigenvalue modulus of `A`.
pub fn spectral_radius(ss: &StateSpaceModel) -> Result<f64> {
    let values = if ss.is_diagonal { ss.diag() } else { eigenvalues(&ss.a)? };
    Ok(values.iter().map(|z| z.norm()).fold(0.0, f64::max))
}
