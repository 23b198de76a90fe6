use serde::{Deserialize, Serialize};

use super::eig::{eigenvalues, spectral_radius};
use super::{grammians, ComplexMatrix, StateSpaceModel};
use crate::error::{Error, Result};

/// Hankel singular values of one block, sorted non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HankelSpectrum {
    pub sigma: Vec<f64>,
}

impl HankelSpectrum {
    pub fn new(mut sigma: Vec<f64>) -> Self {
        sigma.sort_by(|a, b| b.total_cmp(a));
        Self { sigma }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// Hankel nuclear norm `Σ σ_j`.
    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.iter().sum()
    }

    /// `σ_j / σ_1`; all zeros when `σ_1 = 0`.
    pub fn normalized(&self) -> Vec<f64> {
        let s1 = self.largest();
        self.sigma.iter().map(|s| if s1 > 0.0 { s / s1 } else { 0.0 }).collect()
    }
}

/// `σ_j = sqrt(eig_j(PQ))` of the complex realization.
///
/// The `take_real_output` flag is ignored: the spectrum is that of the
/// complex system. Its conjugate-closed real equivalent has each value twice.
pub fn hankel_singular_values(ss: &StateSpaceModel) -> Result<HankelSpectrum> {
    let g = grammians(ss)?;
    let pq = &g.p * &g.q;
    let mu = eigenvalues(&pq)?;
    let scale = pq.norm();
    let imag_tol = 1e-8 * scale;
    let mu_max = mu.iter().map(|z| z.re).fold(0.0, f64::max);
    // PQ is similar to a PSD matrix; negatives are round-off up to the
    // conditioning of the realization.
    let neg_tol = (1e-12 * mu_max).max(1e-10 * g.p.norm() * g.q.norm());
    let mut sigma = Vec::with_capacity(mu.len());
    for z in mu {
        if z.im.abs() > imag_tol {
            return Err(Error::ComplexEigenResidual { imag: z.im.abs(), tol: imag_tol });
        }
        if z.re < -neg_tol {
            return Err(Error::NegativeGramianProduct(z.re));
        }
        sigma.push(z.re.max(0.0).sqrt());
    }
    Ok(HankelSpectrum::new(sigma))
}

/// Impulse-response coefficients `g_k = C A^{k-1} B` for `k = 1..=count`.
pub fn markov_parameters(ss: &StateSpaceModel, count: usize) -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(count);
    let mut ak_b = ss.b.clone();
    for _ in 0..count {
        out.push(&ss.c * &ak_b);
        ak_b = &ss.a * ak_b;
    }
    out
}

/// Singular values of the `depth × depth` block Hankel matrix
/// `H_ij = g_{i+j-1}`, truncated or zero-padded to the system order.
///
/// Independent of the Grammian route; used as its cross-check. The truncated
/// matrix factors exactly as `H = O R` with `O = [C; CA; …; CA^{d-1}]` and
/// `R = [B, AB, …, A^{d-1}B]`, so with thin QRs `O = Q_o T_o` and
/// `R* = Q_r T_r` the singular values are those of the small `T_o T_r*`.
/// [`block_hankel_svd_dense`] forms `H` explicitly.
pub fn block_hankel_svd_oracle(ss: &StateSpaceModel, depth: usize) -> Result<HankelSpectrum> {
    check_depth(ss, depth)?;
    let (n, ny, nu) = (ss.order(), ss.n_outputs(), ss.n_inputs());
    let mut obs = ComplexMatrix::zeros(depth * ny, n);
    let mut reach_adj = ComplexMatrix::zeros(depth * nu, n);
    let mut c_ak = ss.c.clone();
    let mut ak_b = ss.b.clone();
    for k in 0..depth {
        obs.view_mut((k * ny, 0), (ny, n)).copy_from(&c_ak);
        reach_adj.view_mut((k * nu, 0), (nu, n)).copy_from(&ak_b.adjoint());
        c_ak = &c_ak * &ss.a;
        ak_b = &ss.a * ak_b;
    }
    let t_o = obs.qr().r();
    let t_r = reach_adj.qr().r();
    spectrum_of(&(t_o * t_r.adjoint()), n)
}

/// [`block_hankel_svd_oracle`] by a full SVD of the explicitly formed `H`.
/// Costs `O((depth · max(n_y, n_u))³)`.
pub fn block_hankel_svd_dense(ss: &StateSpaceModel, depth: usize) -> Result<HankelSpectrum> {
    check_depth(ss, depth)?;
    let (ny, nu) = (ss.n_outputs(), ss.n_inputs());
    let g = markov_parameters(ss, 2 * depth - 1);
    let mut h = ComplexMatrix::zeros(depth * ny, depth * nu);
    for i in 0..depth {
        for j in 0..depth {
            h.view_mut((i * ny, j * nu), (ny, nu)).copy_from(&g[i + j]);
        }
    }
    spectrum_of(&h, ss.order())
}

fn check_depth(ss: &StateSpaceModel, depth: usize) -> Result<()> {
    let rho = spectral_radius(ss)?;
    let residual = rho.powi(depth as i32);
    if depth == 0 || residual >= 1e-12 {
        return Err(Error::InsufficientDepth { depth, residual });
    }
    Ok(())
}

fn spectrum_of(m: &ComplexMatrix, order: usize) -> Result<HankelSpectrum> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(order, 0.0);
    Ok(HankelSpectrum::new(sv))
}

/// Smallest depth with `rho^depth < 1e-12`.
pub fn required_depth(rho: f64) -> usize {
    if rho <= 0.0 {
        return 1;
    }
    ((1e-12f64).ln() / rho.ln()).floor() as usize + 1
}
