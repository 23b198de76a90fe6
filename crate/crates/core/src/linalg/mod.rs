//! Complex dense linear algebra and system-theoretic primitives for
//! discrete-time LTI systems.
//!
//! Everything here is a pure function of its inputs. Dense factorizations
//! (LU, Schur, SVD, Hermitian eigendecomposition) are delegated to
//! `nalgebra`; the system-level routines are built on top.

mod balance;
mod eig;
mod freq;
mod hankel;
mod lyapunov;
mod state_space;

pub use balance::{balance, balanced_realization, Balanced, SIGMA_REL_TOL};
pub use eig::{eig_dense, eigenvalues, spectral_radius, Eigen};
pub use freq::{frequency_response, hinf_norm_estimate, max_singular_value};
pub use hankel::{block_hankel_svd_dense, block_hankel_svd_oracle, hankel_singular_values, markov_parameters, required_depth, HankelSpectrum};
pub use lyapunov::{grammians, lyapunov_residual, solve_dlyap_dense, solve_dlyap_diag, GrammianPair};
pub use state_space::StateSpaceModel;

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Dense complex matrix used for every system matrix.
pub type ComplexMatrix = DMatrix<Complex64>;

pub(crate) fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Promote a real matrix to complex.
pub fn to_complex(m: &DMatrix<f64>) -> ComplexMatrix {
    m.map(|x| c(x, 0.0))
}

/// `(X + X*) / 2`
pub fn hermitian_part(x: &ComplexMatrix) -> ComplexMatrix {
    (x + x.adjoint()) * c(0.5, 0.0)
}

/// Block-diagonal stacking `diag(a, b)`.
pub fn block_diag(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    ComplexMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}
