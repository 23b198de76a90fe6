use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{c, eig::spectral_radius, hermitian_part, kron, ComplexMatrix, StateSpaceModel};
use crate::error::{Error, Result};

const DENOMINATOR_TOL: f64 = 1e-14;

/// Controllability (`p`) and observability (`q`) Grammians.
#[derive(Debug, Clone)]
pub struct GrammianPair {
    pub p: ComplexMatrix,
    pub q: ComplexMatrix,
}

/// Solve `A X A* - X + Y = 0` for `A = diag(lambda)`.
///
/// The Kronecker operator is diagonal here, so the solution is elementwise:
/// `X_ij = Y_ij / (1 - lambda_i conj(lambda_j))`.
pub fn solve_dlyap_diag(lambda: &[Complex64], y: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = lambda.len();
    if y.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "Y is {:?}, expected {n}x{n}",
            y.shape()
        )));
    }
    let mut x = y.clone();
    for j in 0..n {
        let lj = lambda[j].conj();
        for i in 0..n {
            let den = c(1.0, 0.0) - lambda[i] * lj;
            if den.norm() < DENOMINATOR_TOL {
                return Err(Error::DegenerateDenominator(den.norm()));
            }
            x[(i, j)] /= den;
        }
    }
    Ok(x)
}

/// Solve `A X A* - X + Y = 0` through the vectorized system
/// `(I - conj(A) ⊗ A) vec(X) = vec(Y)` with column-major `vec`.
///
/// Cost is `O(n^6)`; this is the reference route and the fallback for
/// non-diagonal realizations.
pub fn solve_dlyap_dense(a: &ComplexMatrix, y: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.nrows();
    if a.ncols() != n || y.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, Y {:?}",
            a.shape(),
            y.shape()
        )));
    }
    if n == 0 {
        return Ok(ComplexMatrix::zeros(0, 0));
    }
    let k = ComplexMatrix::identity(n * n, n * n) - kron(&a.map(|z| z.conj()), a);
    let lu = k.lu();
    let u = lu.u();
    let diag_max = u.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diag_min = u.diagonal().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    if diag_max == 0.0 || diag_min < 1e-14 * diag_max {
        return Err(Error::SingularSystem);
    }
    let rhs = DMatrix::from_column_slice(n * n, 1, y.as_slice());
    let sol = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    Ok(ComplexMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Grammians of a stable system:
/// `A P A* - P + B B* = 0` and `A* Q A - Q + C* C = 0`.
///
/// Both solutions are Hermitian-symmetrized.
pub fn grammians(ss: &StateSpaceModel) -> Result<GrammianPair> {
    let rho = spectral_radius(ss)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let bb = &ss.b * ss.b.adjoint();
    let cc = ss.c.adjoint() * &ss.c;
    let (p, q) = if ss.is_diagonal {
        let lambda = ss.diag();
        let conj: Vec<Complex64> = lambda.iter().map(|z| z.conj()).collect();
        (solve_dlyap_diag(&lambda, &bb)?, solve_dlyap_diag(&conj, &cc)?)
    } else {
        (solve_dlyap_dense(&ss.a, &bb)?, solve_dlyap_dense(&ss.a.adjoint(), &cc)?)
    };
    Ok(GrammianPair { p: hermitian_part(&p), q: hermitian_part(&q) })
}

/// `‖A X A* - X + Y‖_F`
pub fn lyapunov_residual(a: &ComplexMatrix, x: &ComplexMatrix, y: &ComplexMatrix) -> f64 {
    (a * x * a.adjoint() - x + y).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::to_complex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(z: f64) -> ComplexMatrix {
        ComplexMatrix::from_element(1, 1, c(z, 0.0))
    }

    #[test]
    fn diag_trivial_cases() {
        let x = solve_dlyap_diag(&[c(0.0, 0.0)], &scalar(1.0)).unwrap();
        assert_eq!(x[(0, 0)], c(1.0, 0.0));
        let x = solve_dlyap_diag(&[c(0.5, 0.0)], &scalar(1.0)).unwrap();
        assert!((x[(0, 0)].re - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn diag_rejects_unit_circle_modes() {
        let err = solve_dlyap_diag(&[c(0.0, 1.0)], &scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateDenominator(_)));
    }

    #[test]
    fn dense_trivial_cases() {
        let x = solve_dlyap_dense(&ComplexMatrix::zeros(2, 2), &ComplexMatrix::identity(2, 2)).unwrap();
        assert!((x - ComplexMatrix::identity(2, 2)).norm() < 1e-15);

        let a = to_complex(&DMatrix::from_diagonal(&nalgebra::dvector![0.5, 0.2]));
        let x = solve_dlyap_dense(&a, &ComplexMatrix::from_element(2, 2, c(1.0, 0.0))).unwrap();
        let lam = [0.5, 0.2];
        for i in 0..2 {
            for j in 0..2 {
                assert!((x[(i, j)].re - 1.0 / (1.0 - lam[i] * lam[j])).abs() < 1e-14);
                assert!(x[(i, j)].im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dense_residual_on_random_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut a = ComplexMatrix::from_fn(5, 5, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let rho = {
                let ss = StateSpaceModel::new(
                    a.clone(),
                    ComplexMatrix::zeros(5, 1),
                    ComplexMatrix::zeros(1, 5),
                    ComplexMatrix::zeros(1, 1),
                    false,
                )
                .unwrap();
                spectral_radius(&ss).unwrap()
            };
            a *= c(0.9 / rho, 0.0);
            let y = ComplexMatrix::from_fn(5, 5, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let x = solve_dlyap_dense(&a, &y).unwrap();
            assert!(lyapunov_residual(&a, &x, &y) <= 1e-10 * y.norm());
        }
    }

    #[test]
    fn scalar_grammians_closed_form() {
        let (lam, b, cc) = (c(0.3, 0.6), c(0.7, -0.2), c(-1.1, 0.4));
        let ss = StateSpaceModel::diagonal(
            &[lam],
            ComplexMatrix::from_element(1, 1, b),
            ComplexMatrix::from_element(1, 1, cc),
            ComplexMatrix::zeros(1, 1),
            true,
        )
        .unwrap();
        let g = grammians(&ss).unwrap();
        let den = 1.0 - lam.norm_sqr();
        assert!((g.p[(0, 0)].re - b.norm_sqr() / den).abs() < 1e-14);
        assert!((g.q[(0, 0)].re - cc.norm_sqr() / den).abs() < 1e-14);
    }
}
