use nalgebra::DVector;

use super::{c, grammians, ComplexMatrix, StateSpaceModel};
use crate::error::{Error, Result};

/// Relative threshold below which a Hankel singular value is treated as zero.
pub const SIGMA_REL_TOL: f64 = 1e-12;

/// A balanced realization together with its state transformation.
///
/// `system = (t_inv A t, t_inv B, C t, D)`. When the realization was
/// truncated to its numerical rank, `t` is `n × k` and `t_inv` is `k × n`.
#[derive(Debug, Clone)]
pub struct Balanced {
    pub system: StateSpaceModel,
    pub t: ComplexMatrix,
    pub t_inv: ComplexMatrix,
    pub sigma: Vec<f64>,
}

/// Square-root factor `L` with `L L* = X` for Hermitian PSD `X`.
fn psd_factor(x: &ComplexMatrix) -> ComplexMatrix {
    let eig = x.clone().symmetric_eigen();
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| c(v.max(0.0).sqrt(), 0.0)),
    );
    eig.eigenvectors * ComplexMatrix::from_diagonal(&roots)
}

/// Square-root balancing keeping the states whose Hankel singular value is at
/// least `rel_tol · σ_1`.
///
/// With `P = Lc Lc*`, `Q = Lo Lo*` and `Lo* Lc = U Σ V*`, the transformation
/// is `T = Lc V Σ^{-1/2}`, `T^{-1} = Σ^{-1/2} U* Lo*`. Both Grammians of the
/// result equal `diag(σ)`.
pub fn balanced_realization(ss: &StateSpaceModel, rel_tol: f64) -> Result<Balanced> {
    let g = grammians(ss)?;
    let lc = psd_factor(&g.p);
    let lo = psd_factor(&g.q);
    let svd = (lo.adjoint() * &lc).svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma_all: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s1 = sigma_all.first().copied().unwrap_or(0.0);
    let keep = sigma_all.iter().take_while(|&&s| s1 > 0.0 && s >= rel_tol * s1).count();

    let n = ss.order();
    let mut t = ComplexMatrix::zeros(n, keep);
    let mut t_inv = ComplexMatrix::zeros(keep, n);
    let v = v_t.adjoint();
    for (k, &idx) in order.iter().take(keep).enumerate() {
        let scale = c(sigma_all[k].powf(-0.5), 0.0);
        t.set_column(k, &(&lc * v.column(idx) * scale));
        t_inv.set_row(k, &((u.column(idx).adjoint() * lo.adjoint()) * scale));
    }
    let system = StateSpaceModel {
        a: &t_inv * &ss.a * &t,
        b: &t_inv * &ss.b,
        c: &ss.c * &t,
        d: ss.d.clone(),
        is_diagonal: false,
        take_real_output: ss.take_real_output,
    };
    Ok(Balanced { system, t, t_inv, sigma: sigma_all[..keep].to_vec() })
}

/// Full balanced realization. Fails when the realization is numerically
/// non-minimal (some `σ_j < 1e-12 σ_1`); callers may trim those states first.
pub fn balance(ss: &StateSpaceModel) -> Result<Balanced> {
    let bal = balanced_realization(ss, SIGMA_REL_TOL)?;
    if bal.sigma.len() < ss.order() {
        let index = bal.sigma.len();
        let sigma = crate::linalg::hankel_singular_values(ss)
            .map(|s| s.sigma.get(index).copied().unwrap_or(0.0))
            .unwrap_or(0.0);
        return Err(Error::NearUnobservableState { index, sigma });
    }
    Ok(bal)
}
