use std::f64::consts::PI;

use num_complex::Complex64;

use super::{c, ComplexMatrix, StateSpaceModel};
use crate::error::{Error, Result};

const RESOLVENT_TOL: f64 = 1e-14;
const GOLDEN_ITERS: usize = 80;

/// `C (zI - A)^{-1} B` at `z`, without feedthrough.
fn strictly_proper_response(ss: &StateSpaceModel, z: Complex64, omega: f64) -> Result<ComplexMatrix> {
    let n = ss.order();
    if n == 0 {
        return Ok(ComplexMatrix::zeros(ss.n_outputs(), ss.n_inputs()));
    }
    if ss.is_diagonal {
        let mut scaled = ss.b.clone();
        for i in 0..n {
            let den = z - ss.a[(i, i)];
            if den.norm() < RESOLVENT_TOL {
                return Err(Error::ResolventSingular(omega));
            }
            let inv = den.inv();
            scaled.row_mut(i).iter_mut().for_each(|v| *v *= inv);
        }
        Ok(&ss.c * scaled)
    } else {
        let resolvent = ComplexMatrix::from_diagonal_element(n, n, z) - &ss.a;
        let x = resolvent.lu().solve(&ss.b).ok_or(Error::ResolventSingular(omega))?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::ResolventSingular(omega));
        }
        Ok(&ss.c * x)
    }
}

/// Frequency response `G(e^{iω})`.
///
/// For `take_real_output` systems this is the response of the real I/O map,
/// i.e. of the conjugate-closed realization:
/// `½[G_c(z) + conj(G_c(conj z))] + Re D`.
pub fn frequency_response(ss: &StateSpaceModel, omega: f64) -> Result<ComplexMatrix> {
    let z = Complex64::from_polar(1.0, omega);
    let g = strictly_proper_response(ss, z, omega)?;
    if ss.take_real_output {
        let g_conj = strictly_proper_response(ss, z.conj(), omega)?;
        let half = c(0.5, 0.0);
        Ok((g + g_conj.map(|v| v.conj())) * half + ss.d.map(|v| c(v.re, 0.0)))
    } else {
        Ok(g + &ss.d)
    }
}

/// Largest singular value (spectral norm).
pub fn max_singular_value(m: &ComplexMatrix) -> f64 {
    match m.shape() {
        (0, _) | (_, 0) => 0.0,
        (1, _) | (_, 1) => m.norm(),
        _ => m.clone().svd(false, false).singular_values.max(),
    }
}

/// Grid estimate of the H∞ norm: the maximum of `σ_max(G(e^{iω}))` over
/// `grid_size` uniformly spaced frequencies, refined by golden-section search
/// around the best grid point.
///
/// The result is a lower bound on the true H∞ norm. Systems with a real I/O
/// map are scanned over `[0, π]`; general complex systems over `[-π, π]`.
pub fn hinf_norm_estimate(ss: &StateSpaceModel, grid_size: usize) -> Result<f64> {
    let real_map = ss.take_real_output || is_real_system(ss);
    let (lo, hi) = if real_map { (0.0, PI) } else { (-PI, PI) };
    let grid_size = grid_size.max(2);
    let step = (hi - lo) / (grid_size - 1) as f64;
    let gain = |w: f64| frequency_response(ss, w).map(|g| max_singular_value(&g));

    let mut best = (lo, f64::NEG_INFINITY);
    for k in 0..grid_size {
        let w = lo + step * k as f64;
        let v = gain(w)?;
        if v > best.1 {
            best = (w, v);
        }
    }

    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = gain(x1)?;
    let mut f2 = gain(x2)?;
    let mut peak = best.1.max(f1).max(f2);
    for _ in 0..GOLDEN_ITERS {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = gain(x1)?;
            peak = peak.max(f1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = gain(x2)?;
            peak = peak.max(f2);
        }
    }
    Ok(peak)
}

fn is_real_system(ss: &StateSpaceModel) -> bool {
    [&ss.a, &ss.b, &ss.c, &ss.d].iter().all(|m| m.iter().all(|z| z.im == 0.0))
}
