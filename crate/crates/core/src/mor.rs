//! Model order reduction of diagonal LTI blocks by modal or balanced
//! truncation and singular perturbation, followed by re-diagonalization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    balanced_realization, eig_dense, frequency_response, hankel_singular_values, hinf_norm_estimate, ComplexMatrix,
    HankelSpectrum, StateSpaceModel, SIGMA_REL_TOL,
};
use crate::deep_ssm::DeepSsm;
use crate::lru::LruParams;
use rayon::prelude::*;

/// Frequency grid used for the measured H∞ error in reports.
pub const REPORT_GRID: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMethod {
    /// Modal truncation
    Mt,
    /// Modal singular perturbation
    Msp,
    /// Balanced truncation
    Bt,
    /// Balanced singular perturbation
    Bsp,
}

impl ReductionMethod {
    pub const ALL: [ReductionMethod; 4] = [Self::Mt, Self::Msp, Self::Bt, Self::Bsp];

    pub fn is_balanced(self) -> bool {
        matches!(self, Self::Bt | Self::Bsp)
    }

    pub fn is_singular_perturbation(self) -> bool {
        matches!(self, Self::Msp | Self::Bsp)
    }
}

impl fmt::Display for ReductionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mt => "mt",
            Self::Msp => "msp",
            Self::Bt => "bt",
            Self::Bsp => "bsp",
        })
    }
}

impl FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mt" => Ok(Self::Mt),
            "msp" => Ok(Self::Msp),
            "bt" => Ok(Self::Bt),
            "bsp" => Ok(Self::Bsp),
            other => Err(Error::Config(format!("unknown reduction method `{other}` (expected mt, msp, bt or bsp)"))),
        }
    }
}

/// Outcome of reducing one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub method: ReductionMethod,
    pub original_order: usize,
    pub retained_order: usize,
    /// `2 Σ_{j>r} σ_j`; only for balanced methods.
    pub bound: Option<f64>,
    pub hinf_error_estimate: f64,
    pub dc_gain_error: f64,
    /// Eigenvalues of the original block not present in the reduced one, as `[re, im]`.
    pub removed_eigenvalues: Vec<[f64; 2]>,
}

/// `2 Σ_{j>r} σ_j`.
pub fn error_bound(spectrum: &HankelSpectrum, r: usize) -> f64 {
    2.0 * spectrum.sigma.iter().skip(r).sum::<f64>()
}

fn check_order(ss: &StateSpaceModel, r: usize) -> Result<()> {
    if r > ss.order() {
        return Err(Error::InvalidOrder { requested: r, available: ss.order() });
    }
    Ok(())
}

/// Keep the leading `r` states: `(A₁₁, B₁, C₁, D)`.
pub fn truncate(ss: &StateSpaceModel, r: usize) -> Result<StateSpaceModel> {
    check_order(ss, r)?;
    Ok(StateSpaceModel {
        a: ss.a.view((0, 0), (r, r)).into_owned(),
        b: ss.b.rows(0, r).into_owned(),
        c: ss.c.columns(0, r).into_owned(),
        d: ss.d.clone(),
        is_diagonal: ss.is_diagonal,
        take_real_output: ss.take_real_output,
    })
}

/// Residualize the trailing `n - r` states (set them to equilibrium).
///
/// For `take_real_output` systems only the real part of the feedthrough
/// correction `C₂ (I - A₂₂)^{-1} B₂` reaches the output, so `D_r` stays real.
pub fn singular_perturbation(ss: &StateSpaceModel, r: usize) -> Result<StateSpaceModel> {
    check_order(ss, r)?;
    let n = ss.order();
    let m = n - r;
    if m == 0 {
        return Ok(ss.clone());
    }
    let a11 = ss.a.view((0, 0), (r, r));
    let a12 = ss.a.view((0, r), (r, m));
    let a21 = ss.a.view((r, 0), (m, r));
    let a22 = ss.a.view((r, r), (m, m));
    let (b1, b2) = (ss.b.rows(0, r), ss.b.rows(r, m));
    let (c1, c2) = (ss.c.columns(0, r), ss.c.columns(r, m));

    let lu = (ComplexMatrix::identity(m, m) - a22).lu();
    let u = lu.u();
    let dmax = u.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let dmin = u.diagonal().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    if dmax == 0.0 || dmin < 1e-14 * dmax.max(1.0) {
        return Err(Error::MatrixSingular);
    }
    let solve = |rhs: ComplexMatrix| lu.solve(&rhs).ok_or(Error::MatrixSingular);
    let x_a21 = solve(a21.into_owned())?;
    let x_b2 = solve(b2.into_owned())?;

    let correction = c2 * &x_b2;
    let correction = if ss.take_real_output { correction.map(|z| Complex64::new(z.re, 0.0)) } else { correction };
    Ok(StateSpaceModel {
        a: a11 + a12 * &x_a21,
        b: b1 + a12 * &x_b2,
        c: c1 + c2 * &x_a21,
        d: &ss.d + correction,
        is_diagonal: ss.is_diagonal,
        take_real_output: ss.take_real_output,
    })
}

fn modal_order(ss: &StateSpaceModel) -> Vec<usize> {
    let lambda = ss.diag();
    let weight: Vec<f64> = (0..ss.order()).map(|j| ss.c.column(j).norm() * ss.b.row(j).norm()).collect();
    let mut perm: Vec<usize> = (0..ss.order()).collect();
    perm.sort_by(|&i, &j| {
        lambda[j]
            .norm()
            .total_cmp(&lambda[i].norm())
            .then_with(|| weight[j].total_cmp(&weight[i]))
    });
    perm
}

/// Permute a diagonal system so `|λ_1| ≥ |λ_2| ≥ …`; equal moduli are
/// ordered by `‖C_j‖ ‖B_j‖`, larger first. Returns the permuted system and
/// the permutation (new state `k` is old state `perm[k]`).
pub fn sort_modal(ss: &StateSpaceModel) -> Result<(StateSpaceModel, Vec<usize>)> {
    if !ss.is_diagonal {
        return Err(Error::DimensionMismatch("modal sorting needs a diagonal realization".into()));
    }
    let perm = modal_order(ss);
    Ok((ss.permute_states(&perm), perm))
}

/// Diagonalize `A` by an eigenvector similarity transform.
fn rediagonalize(ss: &StateSpaceModel) -> Result<StateSpaceModel> {
    if ss.order() == 0 {
        return Ok(StateSpaceModel { is_diagonal: true, ..ss.clone() });
    }
    let eig = eig_dense(&ss.a, true)?;
    let v = eig.vectors;
    let v_inv = eig.left.expect("left vectors requested").adjoint();
    Ok(StateSpaceModel {
        a: ComplexMatrix::from_diagonal(&DVector::from_vec(eig.values)),
        b: &v_inv * &ss.b,
        c: &ss.c * &v,
        d: ss.d.clone(),
        is_diagonal: true,
        take_real_output: ss.take_real_output,
    })
}

/// Per-mode gain `‖B_j‖ ‖C_j‖ / (1 - |λ_j|²)`, the Hankel singular value
/// the mode would have on its own.
fn mode_gains(ss: &StateSpaceModel) -> Vec<f64> {
    ss.diag()
        .iter()
        .enumerate()
        .map(|(j, l)| ss.b.row(j).norm() * ss.c.column(j).norm() / (1.0 - l.norm_sqr()))
        .collect()
}

/// Drop modes that are numerically unreachable or unobservable, which
/// would otherwise make the balancing transformation blow up.
fn trim_negligible_modes(ss: &StateSpaceModel, sigma_1: f64) -> Result<StateSpaceModel> {
    let gains = mode_gains(ss);
    let threshold = SIGMA_REL_TOL * sigma_1;
    let mut keep: Vec<usize> = (0..ss.order()).filter(|&j| gains[j] >= threshold).collect();
    let kept = keep.len();
    keep.extend((0..ss.order()).filter(|&j| gains[j] < threshold));
    truncate(&ss.permute_states(&keep), kept)
}

fn dc_gain(ss: &StateSpaceModel) -> Result<ComplexMatrix> {
    frequency_response(ss, 0.0)
}

fn removed_eigenvalues(original: &[Complex64], retained: &[Complex64]) -> Vec<[f64; 2]> {
    let mut pool: Vec<Complex64> = original.to_vec();
    for r in retained {
        if let Some((idx, _)) = pool
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (*a - r).norm().total_cmp(&(*b - r).norm()))
        {
            pool.swap_remove(idx);
        }
    }
    pool.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    pool.iter().map(|z| [z.re, z.im]).collect()
}

/// Reduce a diagonal block to order `r` and return it in diagonal form.
///
/// Modal methods sort by eigenvalue modulus and truncate or residualize.
/// Balanced methods balance, truncate or residualize, then re-diagonalize
/// with the eigenvectors of the reduced state matrix. The report carries
/// the H∞ bound (balanced methods), the grid-estimated H∞ error and the DC
/// gain error.
pub fn reduce_block(ss: &StateSpaceModel, r: usize, method: ReductionMethod) -> Result<(StateSpaceModel, ReductionReport)> {
    if !ss.is_diagonal {
        return Err(Error::DimensionMismatch("reduction expects a diagonal realization".into()));
    }
    check_order(ss, r)?;
    let mut bound = None;
    let (reduced, removed) = match method {
        ReductionMethod::Mt | ReductionMethod::Msp => {
            let (sorted, _) = sort_modal(ss)?;
            let reduced = if method == ReductionMethod::Mt {
                truncate(&sorted, r)?
            } else {
                singular_perturbation(&sorted, r)?
            };
            let removed = sorted.diag()[r..].iter().map(|z| [z.re, z.im]).collect();
            (reduced, removed)
        }
        ReductionMethod::Bt | ReductionMethod::Bsp => {
            let spectrum = hankel_singular_values(ss)?;
            bound = Some(error_bound(&spectrum, r));
            let trimmed = trim_negligible_modes(ss, spectrum.largest())?;
            let balanced = balanced_realization(&trimmed, SIGMA_REL_TOL)?.system;
            let keep = r.min(balanced.order());
            let reduced = if method == ReductionMethod::Bt {
                truncate(&balanced, keep)?
            } else {
                singular_perturbation(&balanced, keep)?
            };
            let reduced = rediagonalize(&reduced)?;
            let removed = removed_eigenvalues(&ss.diag(), &reduced.diag());
            (reduced, removed)
        }
    };
    let error_system = ss.difference(&reduced)?;
    let report = ReductionReport {
        method,
        original_order: ss.order(),
        retained_order: reduced.order(),
        bound,
        hinf_error_estimate: hinf_norm_estimate(&error_system, REPORT_GRID)?,
        dc_gain_error: (dc_gain(ss)? - dc_gain(&reduced)?).norm(),
        removed_eigenvalues: removed,
    };
    Ok((reduced, report))
}

/// Reduce one LRU to `r` states.
///
/// Modal methods select the retained `(ν, φ, B̃, C)` entries directly, so
/// retained eigenvalues are bit-identical; the residualized feedthrough of
/// MSP is added to `D`. Balanced methods map the re-diagonalized block back
/// through [`LruParams::from_modal_perturbed`].
pub fn reduce_lru(p: &LruParams, r: usize, method: ReductionMethod) -> Result<(LruParams, ReductionReport)> {
    let ss = p.to_state_space();
    let (reduced, report) = reduce_block(&ss, r, method)?;
    let d: DMatrix<f64> = reduced.d.map(|z| z.re);
    let params = match method {
        ReductionMethod::Mt | ReductionMethod::Msp => {
            let perm = modal_order(&ss);
            let kept = &perm[..r];
            LruParams {
                nu: kept.iter().map(|&j| p.nu[j]).collect(),
                phi: kept.iter().map(|&j| p.phi[j]).collect(),
                b_tilde: ComplexMatrix::from_fn(r, p.n_inputs(), |i, m| p.b_tilde[(kept[i], m)]),
                c: ComplexMatrix::from_fn(p.n_outputs(), r, |o, i| p.c[(o, kept[i])]),
                d,
            }
        }
        ReductionMethod::Bt | ReductionMethod::Bsp => {
            LruParams::from_modal_perturbed(&reduced.diag(), &reduced.b, &reduced.c, &d)?
        }
    };
    Ok((params, report))
}

/// Reduce every LRU of a model to `r` states. Layers are processed in
/// parallel; reports are in layer order.
pub fn reduce_model(m: &DeepSsm, r: usize, method: ReductionMethod) -> Result<(DeepSsm, Vec<ReductionReport>)> {
    let reduced: Vec<(LruParams, ReductionReport)> =
        m.layers.par_iter().map(|l| reduce_lru(&l.lru, r, method)).collect::<Result<_>>()?;
    let mut out = m.clone();
    out.config.n_x = r;
    let mut reports = Vec::with_capacity(reduced.len());
    for (layer, (lru, report)) in out.layers.iter_mut().zip(reduced) {
        layer.lru = lru;
        reports.push(report);
    }
    Ok((out, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lru::{LruInit, LruState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lru(seed: u64, n: usize) -> LruParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LruParams::init(&mut rng, n, 2, 2, &LruInit { r_min: 0.2, r_max: 0.95 });
        p.d = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        p
    }

    #[test]
    fn full_order_model_reduction_is_a_plug_in_replacement() {
        use crate::deep_ssm::DeepSsmConfig;
        use crate::lru::LruInit;
        let cfg = DeepSsmConfig { n_x: 6, d_model: 4, ..DeepSsmConfig::default() };
        let m = DeepSsm::init(&mut ChaCha8Rng::seed_from_u64(40), &cfg, &LruInit::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let u = DMatrix::from_fn(1, 200, |_, _| rng.random_range(-1.0..1.0));
        let y = m.forward(&u);
        for method in ReductionMethod::ALL {
            let (red, reports) = reduce_model(&m, 6, method).unwrap();
            assert_eq!(reports.len(), 2);
            assert!((red.forward(&u) - &y).amax() <= 1e-7, "{method}");
        }
        let (red, _) = reduce_model(&m, 2, ReductionMethod::Bsp).unwrap();
        red.validate().unwrap();
        assert_eq!(red.layers[0].lru.n_states(), 2);
    }

    #[test]
    fn method_names_round_trip() {
        for m in ReductionMethod::ALL {
            assert_eq!(m.to_string().parse::<ReductionMethod>().unwrap(), m);
        }
        assert!("foo".parse::<ReductionMethod>().is_err());
    }

    #[test]
    fn error_bound_arithmetic() {
        let s = HankelSpectrum::new(vec![3.0, 1.0, 0.5]);
        assert_eq!(error_bound(&s, 1), 3.0);
        assert_eq!(error_bound(&s, 3), 0.0);
    }

    #[test]
    fn truncation_extremes() {
        let ss = random_lru(1, 5).to_state_space();
        assert_eq!(truncate(&ss, 5).unwrap(), ss);
        let stat = truncate(&ss, 0).unwrap();
        assert_eq!(stat.order(), 0);
        assert_eq!(stat.d, ss.d);
        let three = truncate(&ss, 3).unwrap();
        assert_eq!(three.diag(), ss.diag()[..3].to_vec());
        assert!(matches!(truncate(&ss, 6), Err(Error::InvalidOrder { .. })));
    }

    #[test]
    fn singular_perturbation_to_static_gain() {
        let ss = random_lru(2, 4).to_state_space();
        let sp = singular_perturbation(&ss, 0).unwrap();
        assert_eq!(sp.order(), 0);
        let inv = (ComplexMatrix::identity(4, 4) - &ss.a).try_inverse().unwrap();
        let expected = (&ss.c * inv * &ss.b).map(|z| z.re) + ss.d.map(|z| z.re);
        assert!((sp.d.map(|z| z.re) - expected).amax() < 1e-12);
        assert!(sp.d.iter().all(|z| z.im == 0.0));
        assert_eq!(singular_perturbation(&ss, 4).unwrap(), ss);
    }

    #[test]
    fn modal_sort_orders_by_modulus_and_keeps_transfer_function() {
        let ss = random_lru(3, 6).to_state_space();
        let (sorted, perm) = sort_modal(&ss).unwrap();
        let mods: Vec<f64> = sorted.diag().iter().map(|z| z.norm()).collect();
        assert!(mods.windows(2).all(|w| w[0] >= w[1]));
        let mut seen = perm.clone();
        seen.sort();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        for k in 0..32 {
            let w = k as f64 * 0.1;
            let d = frequency_response(&ss, w).unwrap() - frequency_response(&sorted, w).unwrap();
            assert!(d.norm() < 1e-12);
        }
        let (again, perm2) = sort_modal(&sorted).unwrap();
        assert_eq!(perm2, (0..6).collect::<Vec<_>>());
        assert_eq!(again, sorted);
    }

    #[test]
    fn modal_sort_breaks_ties_by_contribution() {
        let l = Complex64::from_polar(0.7, 1.0);
        let ss = StateSpaceModel::diagonal(
            &[l, l.conj()],
            ComplexMatrix::from_row_slice(2, 1, &[Complex64::new(0.1, 0.0), Complex64::new(1.0, 0.0)]),
            ComplexMatrix::from_row_slice(1, 2, &[Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]),
            ComplexMatrix::zeros(1, 1),
            true,
        )
        .unwrap();
        let (_, perm) = sort_modal(&ss).unwrap();
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn full_order_reduction_is_exact() {
        let ss = random_lru(4, 5).to_state_space();
        for m in ReductionMethod::ALL {
            let (_, rep) = reduce_block(&ss, 5, m).unwrap();
            assert!(rep.hinf_error_estimate <= 1e-9, "{m}: {}", rep.hinf_error_estimate);
            assert_eq!(rep.retained_order, 5);
        }
    }

    #[test]
    fn mt_keeps_largest_modes_exactly() {
        let ss = random_lru(5, 6).to_state_space();
        let (red, rep) = reduce_block(&ss, 3, ReductionMethod::Mt).unwrap();
        let mut mods: Vec<Complex64> = ss.diag();
        mods.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        assert_eq!(red.diag(), mods[..3].to_vec());
        assert_eq!(rep.removed_eigenvalues.len(), 3);
        assert!(rep.bound.is_none());
    }

    #[test]
    fn bt_respects_hinf_bound() {
        for seed in 0..5 {
            let ss = random_lru(100 + seed, 8).to_state_space();
            let (_, rep) = reduce_block(&ss, 4, ReductionMethod::Bt).unwrap();
            let sigma = hankel_singular_values(&ss).unwrap().sigma;
            let bound = 2.0 * sigma[4..].iter().sum::<f64>();
            assert!((rep.bound.unwrap() - bound).abs() < 1e-12);
            assert!(rep.hinf_error_estimate <= bound + 1e-6);
        }
    }

    #[test]
    fn singular_perturbation_methods_preserve_dc_gain() {
        for seed in 0..5 {
            let ss = random_lru(200 + seed, 7).to_state_space();
            let g = frequency_response(&ss, 0.0).unwrap();
            for m in [ReductionMethod::Msp, ReductionMethod::Bsp] {
                for r in 0..7 {
                    let (red, rep) = reduce_block(&ss, r, m).unwrap();
                    assert!(rep.dc_gain_error <= 1e-9 * (1.0 + g.norm()), "{m} r={r}");
                    assert!(red.diag().iter().all(|z| z.norm() < 1.0));
                }
            }
        }
    }

    #[test]
    fn reduce_lru_full_order_is_io_equivalent() {
        let p = random_lru(6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = DMatrix::from_fn(2, 300, |_, _| rng.random_range(-1.0..1.0));
        let y = p.simulate_sequential(&u, &LruState::zeros(5));
        for m in ReductionMethod::ALL {
            let (q, _) = reduce_lru(&p, 5, m).unwrap();
            let yq = q.simulate_sequential(&u, &LruState::zeros(5));
            assert!((yq - &y).amax() <= 1e-8, "{m}");
        }
    }

    #[test]
    fn zero_modes_are_pure_feedthrough() {
        let mut p = random_lru(8, 5);
        p.nu[1] = f64::INFINITY;
        p.nu[3] = f64::INFINITY;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = DMatrix::from_fn(2, 100, |_, _| rng.random_range(-1.0..1.0));
        let y = p.simulate_sequential(&u, &LruState::zeros(5));

        // MSP folds the instantaneous contribution of the zero modes into D.
        let (msp, _) = reduce_lru(&p, 3, ReductionMethod::Msp).unwrap();
        assert!((msp.simulate_sequential(&u, &LruState::zeros(3)) - &y).amax() <= 1e-12);

        // MT drops it: the difference is exactly Re(C₂ B₂) u.
        let (mt, _) = reduce_lru(&p, 3, ReductionMethod::Mt).unwrap();
        let b = p.effective_b();
        let mut feed = ComplexMatrix::zeros(2, 2);
        for j in [1, 3] {
            feed += p.c.column(j) * b.row(j);
        }
        let expected = &y - feed.map(|z| z.re) * &u;
        assert!((mt.simulate_sequential(&u, &LruState::zeros(3)) - expected).amax() <= 1e-12);
    }

    #[test]
    fn balanced_reduction_handles_unobservable_modes() {
        let mut p = random_lru(10, 6);
        p.c.column_mut(2).fill(Complex64::new(0.0, 0.0));
        p.b_tilde.row_mut(4).fill(Complex64::new(0.0, 0.0));
        let ss = p.to_state_space();
        for m in [ReductionMethod::Bt, ReductionMethod::Bsp] {
            let (red, rep) = reduce_block(&ss, 4, m).unwrap();
            assert_eq!(red.order(), 4);
            assert!(rep.hinf_error_estimate <= 1e-8, "{m}: {}", rep.hinf_error_estimate);
            let (q, _) = reduce_lru(&p, 3, m).unwrap();
            assert_eq!(q.n_states(), 3);
        }
    }
}
