use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{block_diag, c, ComplexMatrix};
use crate::error::{Error, Result};
use crate::serde_mat;

/// Complex discrete-time LTI system
///
/// ```text
/// x_k = A x_{k-1} + B u_k
/// y_k = C x_k + D u_k
/// ```
///
/// With `take_real_output` set, the input-output map for real inputs is
/// `y_k = Re[C x_k] + Re[D] u_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    #[serde(with = "serde_mat::complex")]
    pub a: ComplexMatrix,
    #[serde(with = "serde_mat::complex")]
    pub b: ComplexMatrix,
    #[serde(with = "serde_mat::complex")]
    pub c: ComplexMatrix,
    #[serde(with = "serde_mat::complex")]
    pub d: ComplexMatrix,
    pub is_diagonal: bool,
    pub take_real_output: bool,
}

impl StateSpaceModel {
    pub fn new(
        a: ComplexMatrix,
        b: ComplexMatrix,
        c: ComplexMatrix,
        d: ComplexMatrix,
        take_real_output: bool,
    ) -> Result<Self> {
        let is_diagonal = is_diagonal_matrix(&a);
        let ss = Self { a, b, c, d, is_diagonal, take_real_output };
        ss.validate()?;
        Ok(ss)
    }

    /// Diagonal (modal) system with `A = diag(lambda)`.
    pub fn diagonal(
        lambda: &[Complex64],
        b: ComplexMatrix,
        c: ComplexMatrix,
        d: ComplexMatrix,
        take_real_output: bool,
    ) -> Result<Self> {
        let a = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(lambda));
        let ss = Self { a, b, c, d, is_diagonal: true, take_real_output };
        ss.validate()?;
        Ok(ss)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("A is {:?}", self.a.shape())));
        }
        if self.b.nrows() != n
            || self.c.ncols() != n
            || self.d.nrows() != self.c.nrows()
            || self.d.ncols() != self.b.ncols()
        {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, C {:?}, D {:?}",
                self.a.shape(),
                self.b.shape(),
                self.c.shape(),
                self.d.shape()
            )));
        }
        let finite = |m: &ComplexMatrix| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if !(finite(&self.a) && finite(&self.b) && finite(&self.c) && finite(&self.d)) {
            return Err(Error::NonFinite);
        }
        if self.is_diagonal && !is_diagonal_matrix(&self.a) {
            return Err(Error::DimensionMismatch("is_diagonal set but A has off-diagonal entries".into()));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Diagonal of `A`; only meaningful when `is_diagonal`.
    pub fn diag(&self) -> Vec<Complex64> {
        self.a.diagonal().iter().copied().collect()
    }

    /// `A -> T^{-1} A T`, `B -> T^{-1} B`, `C -> C T`.
    pub fn similarity(&self, t: &ComplexMatrix, t_inv: &ComplexMatrix) -> Self {
        let a = t_inv * &self.a * t;
        let is_diagonal = is_diagonal_matrix(&a);
        Self {
            a,
            b: t_inv * &self.b,
            c: &self.c * t,
            d: self.d.clone(),
            is_diagonal,
            take_real_output: self.take_real_output,
        }
    }

    /// Permute states: new state `k` is old state `perm[k]`.
    pub fn permute_states(&self, perm: &[usize]) -> Self {
        let n = perm.len();
        let a = ComplexMatrix::from_fn(n, n, |i, j| self.a[(perm[i], perm[j])]);
        let b = ComplexMatrix::from_fn(n, self.n_inputs(), |i, j| self.b[(perm[i], j)]);
        let c = ComplexMatrix::from_fn(self.n_outputs(), n, |i, j| self.c[(i, perm[j])]);
        Self { a, b, c, d: self.d.clone(), is_diagonal: self.is_diagonal, take_real_output: self.take_real_output }
    }

    /// Realization of `G - other` (parallel connection with negated output).
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if self.n_inputs() != other.n_inputs() || self.n_outputs() != other.n_outputs() {
            return Err(Error::DimensionMismatch("difference of systems with different I/O sizes".into()));
        }
        if self.take_real_output != other.take_real_output {
            return Err(Error::DimensionMismatch("difference of real-output and complex-output systems".into()));
        }
        let mut b = ComplexMatrix::zeros(self.order() + other.order(), self.n_inputs());
        b.rows_mut(0, self.order()).copy_from(&self.b);
        b.rows_mut(self.order(), other.order()).copy_from(&other.b);
        let mut cm = ComplexMatrix::zeros(self.n_outputs(), self.order() + other.order());
        cm.columns_mut(0, self.order()).copy_from(&self.c);
        cm.columns_mut(self.order(), other.order()).copy_from(&(-&other.c));
        Ok(Self {
            a: block_diag(&self.a, &other.a),
            b,
            c: cm,
            d: &self.d - &other.d,
            is_diagonal: self.is_diagonal && other.is_diagonal,
            take_real_output: self.take_real_output,
        })
    }

    /// Simulate from `x0 = 0` with a complex input sequence (columns are time
    /// steps). Returns the complex output `C x_k + D u_k`, ignoring
    /// `take_real_output`.
    pub fn simulate_complex(&self, u: &ComplexMatrix) -> ComplexMatrix {
        let n = self.order();
        let steps = u.ncols();
        let mut x = nalgebra::DVector::<Complex64>::zeros(n);
        let mut y = ComplexMatrix::zeros(self.n_outputs(), steps);
        for k in 0..steps {
            let uk = u.column(k);
            x = if self.is_diagonal {
                let mut next = &self.b * uk;
                for i in 0..n {
                    next[i] += self.a[(i, i)] * x[i];
                }
                next
            } else {
                &self.a * &x + &self.b * uk
            };
            y.set_column(k, &(&self.c * &x + &self.d * uk));
        }
        y
    }

    /// Simulate the real input-output map from `x0 = 0`.
    ///
    /// For `take_real_output` systems this is `Re[C x_k] + Re[D] u_k`; for
    /// other systems the real part of the complex output is returned.
    pub fn simulate(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let uc = u.map(|v| c(v, 0.0));
        self.simulate_complex(&uc).map(|z| z.re)
    }
}

fn is_diagonal_matrix(a: &ComplexMatrix) -> bool {
    a.nrows() == a.ncols()
        && (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == Complex64::new(0.0, 0.0)))
}
