//! Loss, regularizers, gradients, AdamW and the sub-sequence training loop.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sequence;
use crate::deep_ssm::DeepSsm;
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, hankel_singular_values, ComplexMatrix};
use crate::lru::{LruInit, LruParams};

/// Hankel singular values at or below this get zero gradient.
pub const SIGMA_FLOOR: f64 = 1e-9;
/// Relative noise level of `σ_j` obtained from the eigenvalues of `PQ`;
/// smaller values are treated like the absolute floor.
pub const SIGMA_REL_FLOOR: f64 = 1e-7;
/// Relative eigenvalue separation below which the spectrum counts as clustered.
pub const CLUSTER_TOL: f64 = 1e-10;
/// Step of the finite-difference fallback for clustered blocks.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    None,
    ModalL1,
    HankelNuclear,
    HankelL2,
}

impl RegKind {
    pub const ALL: [RegKind; 4] = [Self::None, Self::ModalL1, Self::HankelNuclear, Self::HankelL2];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::ModalL1 => "modal_l1",
            Self::HankelNuclear => "hankel_nuclear",
            Self::HankelL2 => "hankel_l2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub subseq_len: usize,
    pub overlap: f64,
    pub reg_strength: f64,
    pub reg_kind: RegKind,
    /// Leading samples of each sub-sequence excluded from the loss.
    pub n_skip: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps; 0 means run all epochs.
    pub max_steps: usize,
    /// Eigenvalue modulus ring used at initialization.
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 8,
            subseq_len: 500,
            overlap: 0.0,
            reg_strength: 0.0,
            reg_kind: RegKind::None,
            n_skip: 200,
            weight_decay: 0.0,
            seed: 0,
            max_steps: 0,
            r_min: LruInit::default().r_min,
            r_max: LruInit::default().r_max,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.subseq_len == 0 {
            return bad("batch_size and subseq_len must be at least 1");
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad("overlap must be in [0, 1)");
        }
        if !(self.reg_strength.is_finite() && self.weight_decay.is_finite()) || self.reg_strength < 0.0 || self.weight_decay < 0.0 {
            return bad("reg_strength and weight_decay must be non-negative");
        }
        if self.n_skip >= self.subseq_len {
            return bad("n_skip must be smaller than subseq_len");
        }
        if !(0.0 <= self.r_min && self.r_min < self.r_max && self.r_max < 1.0) {
            return bad("need 0 <= r_min < r_max < 1");
        }
        Ok(())
    }

    pub fn lru_init(&self) -> LruInit {
        LruInit { r_min: self.r_min, r_max: self.r_max }
    }
}

/// Mean of `(y - ŷ)²` over channels and the time steps after `n_skip`.
pub fn mse_loss(y: &DMatrix<f64>, y_hat: &DMatrix<f64>, n_skip: usize) -> Result<f64> {
    if y.shape() != y_hat.shape() {
        return Err(Error::LengthMismatch(format!("{:?} vs {:?}", y.shape(), y_hat.shape())));
    }
    if y.ncols() <= n_skip {
        return Err(Error::LengthMismatch(format!("length {} does not exceed n_skip {n_skip}", y.ncols())));
    }
    let (tail, tail_hat) = (y.columns(n_skip, y.ncols() - n_skip), y_hat.columns(n_skip, y.ncols() - n_skip));
    Ok((tail - tail_hat).norm_squared() / (tail.len() as f64))
}

/// `Σ_layers Σ_j |λ_j| = Σ exp(-exp ν_j)`.
pub fn reg_modal_l1(m: &DeepSsm) -> f64 {
    m.layers.iter().flat_map(|l| &l.lru.nu).map(|nu| (-nu.exp()).exp()).sum()
}

/// Sum of the Hankel singular values of every LRU.
pub fn reg_hankel_nuclear(m: &DeepSsm) -> Result<f64> {
    m.layers.iter().map(|l| lru_hankel_nuclear(&l.lru)).sum()
}

/// `Σ_layers trace(P Q) = Σ σ_j²`.
pub fn reg_hankel_l2(m: &DeepSsm) -> f64 {
    m.layers.iter().map(|l| lru_hankel_l2(&l.lru)).sum()
}

pub fn lru_hankel_nuclear(lru: &LruParams) -> Result<f64> {
    Ok(hankel_singular_values(&lru.to_state_space())?.nuclear_norm())
}

pub fn lru_hankel_l2(lru: &LruParams) -> f64 {
    let g = GrammianParts::new(lru);
    let (p, q) = g.grammians();
    (p * q).trace().re
}

pub fn regularizer(m: &DeepSsm, kind: RegKind) -> Result<f64> {
    match kind {
        RegKind::None => Ok(0.0),
        RegKind::ModalL1 => Ok(reg_modal_l1(m)),
        RegKind::HankelNuclear => reg_hankel_nuclear(m),
        RegKind::HankelL2 => Ok(reg_hankel_l2(m)),
    }
}

fn zero_lru_grad(lru: &LruParams) -> LruParams {
    LruParams::zeros(lru.n_states(), lru.n_inputs(), lru.n_outputs())
}

/// Gradient of `Σ_j |λ_j|` for one LRU.
pub fn modal_l1_gradients(lru: &LruParams) -> LruParams {
    let mut g = zero_lru_grad(lru);
    for (gn, nu) in g.nu.iter_mut().zip(&lru.nu) {
        let e = nu.exp();
        *gn = -e * (-e).exp();
    }
    g
}

/// Closed-form Grammians of the diagonal realization with `B = diag(γ) B̃`:
/// `P_ij = M_ij r_ij`, `M = B B*`, `r_ij = 1 / (1 - λ_i conj(λ_j))` and
/// `Q_ij = N_ij q_ij`, `N = C* C`, `q_ij = 1 / (1 - conj(λ_i) λ_j)`.
struct GrammianParts {
    lambda: Vec<Complex64>,
    b: ComplexMatrix,
    m: ComplexMatrix,
    n: ComplexMatrix,
    r: ComplexMatrix,
    q: ComplexMatrix,
}

impl GrammianParts {
    fn new(lru: &LruParams) -> Self {
        let lambda = lru.eigenvalues();
        let b = lru.effective_b();
        let m = &b * b.adjoint();
        let n = lru.c.adjoint() * &lru.c;
        let k = lambda.len();
        let one = Complex64::new(1.0, 0.0);
        let r = ComplexMatrix::from_fn(k, k, |i, j| (one - lambda[i] * lambda[j].conj()).inv());
        let q = ComplexMatrix::from_fn(k, k, |i, j| (one - lambda[i].conj() * lambda[j]).inv());
        Self { lambda, b, m, n, r, q }
    }

    fn grammians(&self) -> (ComplexMatrix, ComplexMatrix) {
        (self.m.component_mul(&self.r), self.n.component_mul(&self.q))
    }

    /// Pull `∂L/∂P`, `∂L/∂Q` back to the LRU parameters.
    fn backprop(&self, lru: &LruParams, g_p: &ComplexMatrix, g_q: &ComplexMatrix) -> LruParams {
        let k = self.lambda.len();
        let lam = &self.lambda;
        let mut g_lambda = vec![Complex64::new(0.0, 0.0); k];

        let g_m = self.r.map(|z| z.conj()).component_mul(g_p);
        let g_r = self.m.map(|z| z.conj()).component_mul(g_p);
        let g_n = self.q.map(|z| z.conj()).component_mul(g_q);
        let g_qq = self.n.map(|z| z.conj()).component_mul(g_q);
        for i in 0..k {
            for j in 0..k {
                // den = 1 - λ_i conj(λ_j)
                let g_den = -(self.r[(i, j)] * self.r[(i, j)]).conj() * g_r[(i, j)];
                g_lambda[i] += -g_den * lam[j];
                g_lambda[j] += -g_den.conj() * lam[i];
                // den' = 1 - conj(λ_i) λ_j
                let g_den2 = -(self.q[(i, j)] * self.q[(i, j)]).conj() * g_qq[(i, j)];
                g_lambda[j] += -g_den2 * lam[i];
                g_lambda[i] += -g_den2.conj() * lam[j];
            }
        }
        let g_b = (&g_m + g_m.adjoint()) * &self.b;
        let g_c = &lru.c * (&g_n + g_n.adjoint());

        let gamma = lru.gamma_norm();
        let mut grad = zero_lru_grad(lru);
        let mut g_gamma = vec![0.0; k];
        for j in 0..k {
            for m in 0..lru.n_inputs() {
                let gb = g_b[(j, m)];
                grad.b_tilde[(j, m)] = gb * gamma[j];
                g_gamma[j] += (lru.b_tilde[(j, m)].conj() * gb).re;
            }
        }
        let (g_nu, g_phi) = lru.chain_to_nu_phi(&g_lambda, &g_gamma);
        grad.nu = g_nu;
        grad.phi = g_phi;
        grad.c = g_c;
        grad
    }
}

/// Gradient of `trace(P Q)` for one LRU.
pub fn hankel_l2_gradients(lru: &LruParams) -> LruParams {
    let parts = GrammianParts::new(lru);
    let (p, q) = parts.grammians();
    // d tr(PQ) = Re tr(Q dP) + Re tr(P dQ) → ∂/∂P = Q^H = Q, ∂/∂Q = P
    parts.backprop(lru, &q, &p)
}

/// Right null vector of `a` from the smallest singular triplet. Only the
/// `V` factor is used: the matching column of `U` is not reliable when the
/// singular value is at round-off level.
fn right_null_vector(a: &ComplexMatrix) -> Option<nalgebra::DVector<Complex64>> {
    let svd = a.clone().svd(false, true);
    let idx = svd.singular_values.imin();
    Some(svd.v_t?.row(idx).adjoint())
}

/// Exact gradient of `Σ_j σ_j` for one LRU with respect to `(ν, φ, B̃, C)`.
///
/// With `dμ_j = w_j* d(PQ) v_j / (w_j* v_j)` and `dσ_j = dμ_j / (2σ_j)`,
/// `d Σσ = Re tr(G d(PQ))` where `G = Σ_j v_j w_j* / (2σ_j w_j* v_j)`.
/// Singular values at or below `max(SIGMA_FLOOR, SIGMA_REL_FLOOR σ_1)`
/// contribute nothing. Returns [`Error::ClusteredSpectrum`] when an
/// eigenvalue that does contribute is not simple.
pub fn hankel_sv_gradients(lru: &LruParams) -> Result<LruParams> {
    let parts = GrammianParts::new(lru);
    let (p, q) = parts.grammians();
    let pq = &p * &q;
    let k = pq.nrows();
    let mu = eigenvalues(&pq)?;
    let mu_max = mu.iter().map(|z| z.re).fold(0.0, f64::max);
    let floor = SIGMA_FLOOR.max(SIGMA_REL_FLOOR * mu_max.max(0.0).sqrt());
    let mut g = ComplexMatrix::zeros(k, k);
    for (j, &mu_j) in mu.iter().enumerate() {
        let sigma = mu_j.re.max(0.0).sqrt();
        if sigma <= floor {
            continue;
        }
        let gap = mu
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, z)| (z - mu_j).norm())
            .fold(f64::INFINITY, f64::min);
        if gap <= CLUSTER_TOL * mu_max {
            return Err(Error::ClusteredSpectrum(gap / mu_max));
        }
        let shifted = &pq - ComplexMatrix::from_diagonal_element(k, k, mu_j);
        let v = right_null_vector(&shifted).ok_or(Error::EigenNoConvergence)?;
        let w = right_null_vector(&shifted.adjoint()).ok_or(Error::EigenNoConvergence)?;
        let wv = w.dotc(&v);
        if wv.norm() <= CLUSTER_TOL {
            return Err(Error::ClusteredSpectrum(wv.norm()));
        }
        g += &v * w.adjoint() * (Complex64::new(0.5 / sigma, 0.0) / wv);
    }
    // d Σσ = Re tr(G dP Q) + Re tr(G P dQ) → ∂/∂P = (Q G)^H, ∂/∂Q = (G P)^H
    let g_p = (&q * &g).adjoint();
    let g_q = (&g * &p).adjoint();
    Ok(parts.backprop(lru, &g_p, &g_q))
}

/// Visit the `(ν, φ, B̃, C)` scalars of an LRU.
fn visit_lru(lru: &mut LruParams, f: &mut dyn FnMut(&mut f64)) {
    lru.nu.iter_mut().for_each(&mut *f);
    lru.phi.iter_mut().for_each(&mut *f);
    for z in lru.b_tilde.iter_mut().chain(lru.c.iter_mut()) {
        f(&mut z.re);
        f(&mut z.im);
    }
}

/// Central finite-difference gradient of a per-LRU scalar.
pub fn lru_fd_gradient(lru: &LruParams, step: f64, f: &dyn Fn(&LruParams) -> Result<f64>) -> Result<LruParams> {
    let mut values = Vec::new();
    visit_lru(&mut lru.clone(), &mut |v| values.push(*v));
    let mut grads = Vec::with_capacity(values.len());
    let mut probe = lru.clone();
    for i in 0..values.len() {
        let mut eval = |delta: f64| {
            let mut idx = 0;
            visit_lru(&mut probe, &mut |v| {
                *v = values[idx] + if idx == i { delta } else { 0.0 };
                idx += 1;
            });
            f(&probe)
        };
        grads.push((eval(step)? - eval(-step)?) / (2.0 * step));
    }
    let mut grad = zero_lru_grad(lru);
    let mut it = grads.into_iter();
    visit_lru(&mut grad, &mut |v| *v = it.next().expect("same layout"));
    Ok(grad)
}

/// Gradient of the regularizer contribution of one LRU. Clustered spectra
/// fall back to finite differences; the flag reports whether that happened.
pub fn lru_reg_gradients(lru: &LruParams, kind: RegKind) -> Result<(LruParams, bool)> {
    match kind {
        RegKind::None => Ok((zero_lru_grad(lru), false)),
        RegKind::ModalL1 => Ok((modal_l1_gradients(lru), false)),
        RegKind::HankelL2 => Ok((hankel_l2_gradients(lru), false)),
        RegKind::HankelNuclear => match hankel_sv_gradients(lru) {
            Ok(g) => Ok((g, false)),
            Err(Error::ClusteredSpectrum(_)) | Err(Error::EigenNoConvergence) => {
                Ok((lru_fd_gradient(lru, FD_STEP, &lru_hankel_nuclear)?, true))
            }
            Err(e) => Err(e),
        },
    }
}

/// Scalar parts of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    pub mse: f64,
    pub reg: f64,
}

/// One training window, borrowed from a sequence.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub u: nalgebra::DMatrixView<'a, f64>,
    pub y: nalgebra::DMatrixView<'a, f64>,
}

impl<'a> Window<'a> {
    pub fn whole(seq: &'a Sequence) -> Self {
        Self { u: seq.u.columns(0, seq.len()), y: seq.y.columns(0, seq.len()) }
    }
}

fn effective_count(batch: &[Window<'_>], n_skip: usize) -> Result<f64> {
    let mut count = 0usize;
    for w in batch {
        if w.u.ncols() != w.y.ncols() {
            return Err(Error::LengthMismatch(format!("u has {} samples, y has {}", w.u.ncols(), w.y.ncols())));
        }
        if w.y.ncols() <= n_skip {
            return Err(Error::LengthMismatch(format!("window of {} samples with n_skip {n_skip}", w.y.ncols())));
        }
        count += (w.y.ncols() - n_skip) * w.y.nrows();
    }
    if count == 0 {
        return Err(Error::LengthMismatch("empty batch".into()));
    }
    Ok(count as f64)
}

/// `(1/N_eff) Σ (y - ŷ)² + γ R(θ)` over a batch.
pub fn total_loss(m: &DeepSsm, batch: &[Window<'_>], n_skip: usize, reg_kind: RegKind, gamma: f64) -> Result<LossParts> {
    let count = effective_count(batch, n_skip)?;
    let sse: Vec<f64> = batch
        .par_iter()
        .map(|w| {
            let y_hat = m.forward(&w.u.into_owned());
            let t = w.y.ncols() - n_skip;
            (w.y.columns(n_skip, t) - y_hat.columns(n_skip, t)).norm_squared()
        })
        .collect();
    let mse = sse.iter().sum::<f64>() / count;
    let reg = if gamma > 0.0 { regularizer(m, reg_kind)? } else { 0.0 };
    finish(mse, reg, gamma)
}

fn finish(mse: f64, reg: f64, gamma: f64) -> Result<LossParts> {
    let loss = mse + gamma * reg;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(LossParts { loss, mse, reg })
}

/// Gradient in the flat layout of [`DeepSsm::layout`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub parts: LossParts,
    pub values: Vec<f64>,
    /// LRU blocks whose regularizer gradient used finite differences.
    pub fd_fallbacks: usize,
}

/// Exact gradient of [`total_loss`]. Per-window contributions are computed
/// in parallel and summed in window order.
pub fn gradients(m: &DeepSsm, batch: &[Window<'_>], n_skip: usize, reg_kind: RegKind, gamma: f64) -> Result<Gradients> {
    let count = effective_count(batch, n_skip)?;
    let per_window: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|w| {
            let (y_hat, cache) = m.forward_cached(&w.u.into_owned());
            let mut dy = DMatrix::zeros(y_hat.nrows(), y_hat.ncols());
            let mut sse = 0.0;
            for k in n_skip..y_hat.ncols() {
                for o in 0..y_hat.nrows() {
                    let e = y_hat[(o, k)] - w.y[(o, k)];
                    sse += e * e;
                    dy[(o, k)] = 2.0 * e / count;
                }
            }
            (sse, m.backward(&cache, &dy).flatten())
        })
        .collect();
    let mut values = vec![0.0; m.n_params()];
    let mut sse = 0.0;
    for (s, g) in &per_window {
        sse += s;
        values.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let mut reg = 0.0;
    let mut fd_fallbacks = 0;
    if gamma > 0.0 && reg_kind != RegKind::None {
        reg = regularizer(m, reg_kind)?;
        let mut reg_model = m.clone();
        reg_model.visit_mut(&mut |_, v| *v = 0.0);
        let per_layer: Vec<(LruParams, bool)> =
            m.layers.iter().map(|l| lru_reg_gradients(&l.lru, reg_kind)).collect::<Result<_>>()?;
        for (layer, (g, fallback)) in reg_model.layers.iter_mut().zip(per_layer) {
            layer.lru = g;
            fd_fallbacks += usize::from(fallback);
        }
        values.iter_mut().zip(reg_model.flatten()).for_each(|(a, b)| *a += gamma * b);
    }
    let parts = finish(sse / count, reg, gamma)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(Gradients { parts, values, fd_fallbacks })
}

/// First and second moment estimates of AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    /// One update. `decay[i]` selects the slots subject to weight decay.
    pub fn step(&self, params: &mut [f64], grads: &[f64], decay: &[bool], state: &mut AdamState) {
        assert!(params.len() == grads.len() && params.len() == decay.len() && params.len() == state.m.len());
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            if decay[i] {
                params[i] -= self.lr * self.weight_decay * params[i];
            }
            let g = grads[i];
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = state.m[i] / c1;
            let v_hat = state.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Start of one window inside a source sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub sequence: usize,
    pub start: usize,
}

/// `max(1, floor(N (1 - overlap)))`.
pub fn window_stride(len: usize, overlap: f64) -> usize {
    ((len as f64 * (1.0 - overlap)).floor() as usize).max(1)
}

/// All windows of length `len` with the overlap-derived stride.
pub fn enumerate_windows(lengths: &[usize], len: usize, overlap: f64) -> Result<Vec<WindowRef>> {
    let stride = window_stride(len, overlap);
    let mut out = Vec::new();
    for (sequence, &total) in lengths.iter().enumerate() {
        if total < len {
            return Err(Error::SequenceTooShort { len: total, window: len });
        }
        let mut start = 0;
        while start + len <= total {
            out.push(WindowRef { sequence, start });
            start += stride;
        }
    }
    Ok(out)
}

/// Seeded shuffled batches of windows; one epoch per call.
pub fn make_subsequences(
    lengths: &[usize],
    len: usize,
    overlap: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<WindowRef>>> {
    let mut windows = enumerate_windows(lengths, len, overlap)?;
    windows.shuffle(rng);
    Ok(windows.chunks(batch_size.max(1)).map(<[WindowRef]>::to_vec).collect())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
    pub reg: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DeepSsm,
    pub optimizer: AdamState,
    pub history: Vec<StepLog>,
}

/// Optimize `model` on sub-sequences of `data`, writing one JSON line per
/// step to `log` when given.
pub fn train(
    mut model: DeepSsm,
    data: &[Sequence],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let lengths: Vec<usize> = data.iter().map(Sequence::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let decay: Vec<bool> = model.layout().iter().map(|t| t.group.decays()).collect();
    let mut state = AdamState::new(decay.len());
    let mut params = model.flatten();
    let mut history = Vec::new();
    let started = Instant::now();
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        for batch in make_subsequences(&lengths, cfg.subseq_len, cfg.overlap, cfg.batch_size, &mut rng)? {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
            let windows: Vec<Window<'_>> = batch
                .iter()
                .map(|w| {
                    let s = &data[w.sequence];
                    Window { u: s.u.columns(w.start, cfg.subseq_len), y: s.y.columns(w.start, cfg.subseq_len) }
                })
                .collect();
            let g = gradients(&model, &windows, cfg.n_skip, cfg.reg_kind, cfg.reg_strength)?;
            opt.step(&mut params, &g.values, &decay, &mut state);
            model.unflatten(&params)?;
            step += 1;
            let entry = StepLog {
                step,
                epoch,
                loss: g.parts.loss,
                mse: g.parts.mse,
                reg: g.parts.reg,
                grad_norm: g.values.iter().map(|v| v * v).sum::<f64>().sqrt(),
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            };
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&entry)?)?;
            }
            history.push(entry);
        }
    }
    Ok(TrainOutcome { model, optimizer: state, history })
}

/// Worst relative error of one parameter group in a gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    pub analytic_norm: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub reg_kind: RegKind,
    pub groups: Vec<GroupCheck>,
    pub worst_rel_err: f64,
}

/// Groups with a gradient norm below this are compared in absolute terms.
pub const GRADCHECK_NORM_FLOOR: f64 = 1e-6;

/// Compare [`gradients`] against central differences of [`total_loss`],
/// group by group, with error `‖a - n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn gradcheck(
    m: &DeepSsm,
    batch: &[Window<'_>],
    n_skip: usize,
    reg_kind: RegKind,
    gamma: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = gradients(m, batch, n_skip, reg_kind, gamma)?.values;
    let base = m.flatten();
    let tags = m.layout();
    let mut probe = m.clone();
    let mut numeric = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        probe.unflatten(&p)?;
        let up = total_loss(&probe, batch, n_skip, reg_kind, gamma)?.loss;
        p[i] = base[i] - step;
        probe.unflatten(&p)?;
        let down = total_loss(&probe, batch, n_skip, reg_kind, gamma)?.loss;
        numeric[i] = (up - down) / (2.0 * step);
    }
    let mut groups: Vec<GroupCheck> = Vec::new();
    let mut names: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
    names.dedup();
    for name in names {
        let idx: Vec<usize> = (0..tags.len()).filter(|&i| tags[i].to_string() == name).collect();
        let norm = |v: &dyn Fn(usize) -> f64| idx.iter().map(|&i| v(i).powi(2)).sum::<f64>().sqrt();
        let a = norm(&|i| analytic[i]);
        let n = norm(&|i| numeric[i]);
        let diff = norm(&|i| analytic[i] - numeric[i]);
        groups.push(GroupCheck { group: name, analytic_norm: a, rel_err: diff / a.max(n).max(GRADCHECK_NORM_FLOOR) });
    }
    let worst_rel_err = groups.iter().map(|g| g.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { reg_kind, groups, worst_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep_ssm::{DeepSsmConfig, Nonlinearity, NormKind};
    use crate::linalg::{hankel_singular_values, StateSpaceModel};
    use rand::Rng;

    fn random_lru(seed: u64, n: usize, n_u: usize, n_y: usize) -> LruParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LruParams::init(&mut rng, n, n_u, n_y, &LruInit { r_min: 0.3, r_max: 0.9 })
    }

    fn lru_rel_err(a: &LruParams, b: &LruParams) -> f64 {
        let mut va = Vec::new();
        let mut vb = Vec::new();
        visit_lru(&mut a.clone(), &mut |v| va.push(*v));
        visit_lru(&mut b.clone(), &mut |v| vb.push(*v));
        let diff: f64 = va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb)
    }

    #[test]
    fn mse_examples() {
        let y = DMatrix::from_row_slice(1, 2, &[7.0, 1.0]);
        let yh = DMatrix::from_row_slice(1, 2, &[-3.0, 3.0]);
        assert_eq!(mse_loss(&y, &yh, 1).unwrap(), 4.0);
        assert_eq!(mse_loss(&y, &y, 0).unwrap(), 0.0);
        assert!(matches!(mse_loss(&y, &yh, 2), Err(Error::LengthMismatch(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(3, 20, |_, _| rng.random::<f64>());
        let b = DMatrix::from_fn(3, 20, |_, _| rng.random::<f64>());
        let mut brute = 0.0;
        for k in 5..20 {
            for o in 0..3 {
                brute += (a[(o, k)] - b[(o, k)]).powi(2);
            }
        }
        assert!((mse_loss(&a, &b, 5).unwrap() - brute / 45.0).abs() < 1e-15);
    }

    fn scalar_lru(nu: f64, phi: f64, b: Complex64, c: Complex64) -> LruParams {
        LruParams {
            nu: vec![nu],
            phi: vec![phi],
            b_tilde: ComplexMatrix::from_element(1, 1, b),
            c: ComplexMatrix::from_element(1, 1, c),
            d: DMatrix::zeros(1, 1),
        }
    }

    #[test]
    fn modal_l1_closed_form() {
        let lru = scalar_lru(0.0, 0.0, Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        assert!((modal_l1_gradients(&lru).nu[0] + (-1.0f64).exp()).abs() < 1e-15);
        let fd = lru_fd_gradient(&lru, 1e-6, &|l| Ok((-l.nu[0].exp()).exp())).unwrap();
        assert!((fd.nu[0] - modal_l1_gradients(&lru).nu[0]).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for k in -20..20 {
            let v = (-(k as f64 * 0.2).exp()).exp();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn hankel_regularizer_examples() {
        // λ = 0 (ν → ∞), B = C = 1: σ = 1
        let lru = scalar_lru(f64::INFINITY, 0.0, Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        assert!((lru_hankel_nuclear(&lru).unwrap() - 1.0).abs() < 1e-15);
        assert!((lru_hankel_l2(&lru) - 1.0).abs() < 1e-15);

        let mut lru = random_lru(3, 4, 2, 3);
        let base = lru_hankel_nuclear(&lru).unwrap();
        let l2 = lru_hankel_l2(&lru);
        let sigma = hankel_singular_values(&lru.to_state_space()).unwrap().sigma;
        assert!((l2 - sigma.iter().map(|s| s * s).sum::<f64>()).abs() < 1e-10 * l2);
        lru.c *= Complex64::new(2.0, 0.0);
        assert!((lru_hankel_nuclear(&lru).unwrap() - 2.0 * base).abs() < 1e-10 * base);
        lru.c.fill(Complex64::new(0.0, 0.0));
        assert_eq!(lru_hankel_nuclear(&lru).unwrap(), 0.0);
        assert_eq!(lru_hankel_l2(&lru), 0.0);
    }

    #[test]
    fn scalar_hankel_gradient_closed_form() {
        // σ = γ |b̃| |c| / (1 - |λ|²) = |b̃| |c| / sqrt(1 - |λ|²), |λ|² = exp(-2 e^ν)
        // dσ/dν = -½ |b̃||c| (1 - a)^{-3/2} · 2 e^ν a, a = exp(-2 e^ν)
        let (b, c) = (Complex64::new(0.6, -0.3), Complex64::new(-1.1, 0.4));
        for nu in [-1.0, -0.3, 0.5] {
            let lru = scalar_lru(nu, 0.2, b, c);
            let a = (-2.0 * f64::exp(nu)).exp();
            let expected = -b.norm() * c.norm() * (1.0 - a).powf(-1.5) * nu.exp() * a;
            let g = hankel_sv_gradients(&lru).unwrap();
            assert!((g.nu[0] - expected).abs() < 1e-6 * expected.abs(), "{} vs {expected}", g.nu[0]);
            assert!(g.phi[0].abs() < 1e-12);
        }
    }

    #[test]
    fn hankel_gradient_is_zero_at_zero_output() {
        let mut lru = random_lru(4, 3, 2, 2);
        lru.c.fill(Complex64::new(0.0, 0.0));
        let g = hankel_sv_gradients(&lru).unwrap();
        assert!(g.c.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn hankel_gradients_match_finite_differences() {
        for seed in 0..5 {
            let lru = random_lru(10 + seed, 3, 2, 2);
            let g = hankel_sv_gradients(&lru).unwrap();
            let fd = lru_fd_gradient(&lru, 1e-5, &lru_hankel_nuclear).unwrap();
            assert!(lru_rel_err(&g, &fd) < 1e-5, "seed {seed}: {}", lru_rel_err(&g, &fd));
            let g2 = hankel_l2_gradients(&lru);
            let fd2 = lru_fd_gradient(&lru, 1e-5, &|l| Ok(lru_hankel_l2(l))).unwrap();
            assert!(lru_rel_err(&g2, &fd2) < 1e-6);
        }
    }

    #[test]
    fn regularizers_are_permutation_invariant() {
        let lru = random_lru(20, 5, 2, 2);
        let perm = [3, 0, 4, 1, 2];
        let permuted = LruParams {
            nu: perm.iter().map(|&i| lru.nu[i]).collect(),
            phi: perm.iter().map(|&i| lru.phi[i]).collect(),
            b_tilde: ComplexMatrix::from_fn(5, 2, |i, m| lru.b_tilde[(perm[i], m)]),
            c: ComplexMatrix::from_fn(2, 5, |o, i| lru.c[(o, perm[i])]),
            d: lru.d.clone(),
        };
        let l1 = |l: &LruParams| l.nu.iter().map(|nu| (-nu.exp()).exp()).sum::<f64>();
        assert!((l1(&lru) - l1(&permuted)).abs() < 1e-14);
        let (a, b) = (lru_hankel_nuclear(&lru).unwrap(), lru_hankel_nuclear(&permuted).unwrap());
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn hankel_nuclear_is_similarity_invariant() {
        let lru = random_lru(21, 4, 2, 2);
        let ss = lru.to_state_space();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let t = ComplexMatrix::from_fn(4, 4, |i, j| {
            Complex64::new(rng.random_range(-0.5..0.5) + if i == j { 2.0 } else { 0.0 }, rng.random_range(-0.5..0.5))
        });
        let t_inv = t.clone().try_inverse().unwrap();
        let other: StateSpaceModel = ss.similarity(&t, &t_inv);
        let a = hankel_singular_values(&ss).unwrap().nuclear_norm();
        let b = hankel_singular_values(&other).unwrap().nuclear_norm();
        assert!((a - b).abs() < 1e-8 * a);
    }

    #[test]
    fn clustered_spectrum_is_reported_and_falls_back() {
        // two identical decoupled modes: PQ has a double eigenvalue
        let mut lru = random_lru(30, 1, 1, 1);
        lru.nu = vec![lru.nu[0]; 2];
        lru.phi = vec![lru.phi[0]; 2];
        lru.b_tilde = ComplexMatrix::from_row_slice(2, 2, &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
        lru.c = lru.b_tilde.clone();
        lru.d = DMatrix::zeros(2, 2);
        assert!(matches!(hankel_sv_gradients(&lru), Err(Error::ClusteredSpectrum(_))));
        let (g, fallback) = lru_reg_gradients(&lru, RegKind::HankelNuclear).unwrap();
        assert!(fallback);
        assert!(g.nu.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adamw_hand_computed_steps() {
        let opt = AdamW::new(0.1, 0.0);
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        opt.step(&mut p, &[0.0, 0.0], &[true, true], &mut s);
        assert_eq!(p, vec![1.0, -2.0]);

        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        opt.step(&mut p, &[0.5, -4.0], &[true, true], &mut s);
        // m̂ = g, v̂ = g²: Δ = -lr g / (|g| + ε)
        assert!((p[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);

        let opt = AdamW::new(0.1, 0.5);
        let mut p = vec![2.0, 2.0];
        let mut s = AdamState::new(2);
        opt.step(&mut p, &[0.0, 0.0], &[true, false], &mut s);
        assert_eq!(p, vec![2.0 * (1.0 - 0.05), 2.0]);
    }

    #[test]
    fn window_counts() {
        assert_eq!(enumerate_windows(&[20], 10, 0.0).unwrap().len(), 2);
        assert_eq!(enumerate_windows(&[20], 10, 0.5).unwrap().len(), 3);
        assert_eq!(window_stride(10, 0.99), 1);
        assert!(matches!(enumerate_windows(&[5], 10, 0.0), Err(Error::SequenceTooShort { len: 5, window: 10 })));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let lens: Vec<usize> = (0..3).map(|_| rng.random_range(10..200)).collect();
            let n = rng.random_range(1..10);
            let overlap = rng.random_range(0.0..0.95);
            let stride = window_stride(n, overlap);
            let brute: usize = lens.iter().map(|&l| (0..l).filter(|s| s % stride == 0 && s + n <= l).count()).sum();
            assert_eq!(enumerate_windows(&lens, n, overlap).unwrap().len(), brute);
        }
        let a = make_subsequences(&[100, 60], 10, 0.5, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = make_subsequences(&[100, 60], 10, 0.5, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    fn tiny_model(seed: u64) -> DeepSsm {
        let cfg = DeepSsmConfig {
            n_in: 1,
            n_out: 1,
            d_model: 4,
            n_x: 3,
            n_layers: 2,
            nonlinearity: Nonlinearity::Mlp { hidden: 4 },
            norm: NormKind::LayerNorm,
            n_skip_loss: 0,
        };
        DeepSsm::init(&mut ChaCha8Rng::seed_from_u64(seed), &cfg, &LruInit::default()).unwrap()
    }

    fn tiny_sequence(seed: u64, t: usize) -> Sequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sequence {
            name: "s".into(),
            u: DMatrix::from_fn(1, t, |_, _| rng.random_range(-1.0..1.0)),
            y: DMatrix::from_fn(1, t, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn full_gradient_check_all_regularizers() {
        let m = tiny_model(1);
        let seq = tiny_sequence(2, 16);
        let batch = [Window::whole(&seq)];
        for kind in RegKind::ALL {
            let report = gradcheck(&m, &batch, 2, kind, 1.0, 1e-5).unwrap();
            assert!(report.worst_rel_err <= 1e-5, "{kind:?}: {:#?}", report.groups);
        }
    }

    #[test]
    fn gamma_zero_is_pure_mse() {
        let m = tiny_model(3);
        let seq = tiny_sequence(4, 30);
        let batch = [Window::whole(&seq)];
        let a = gradients(&m, &batch, 5, RegKind::HankelNuclear, 0.0).unwrap();
        let b = gradients(&m, &batch, 5, RegKind::None, 0.0).unwrap();
        assert_eq!(a.values, b.values);
        let direct = mse_loss(&seq.y, &m.forward(&seq.u), 5).unwrap();
        assert!((a.parts.loss - direct).abs() < 1e-15);
    }

    #[test]
    fn training_decreases_loss_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let teacher = LruParams::init(&mut rng, 2, 1, 1, &LruInit::default());
        let u = DMatrix::from_fn(1, 400, |_, _| rng.random_range(-1.0..1.0));
        let y = teacher.simulate_sequential(&u, &crate::lru::LruState::zeros(2));
        let data = vec![Sequence { name: "lin".into(), u, y }];
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            epochs: 100,
            batch_size: 4,
            subseq_len: 100,
            overlap: 0.5,
            n_skip: 10,
            max_steps: 50,
            ..TrainConfig::default()
        };
        let mut log = Vec::new();
        let out = train(tiny_model(9), &data, &cfg, Some(&mut log)).unwrap();
        assert_eq!(out.history.len(), 50);
        let first: f64 = out.history[..5].iter().map(|h| h.loss).sum();
        let last: f64 = out.history[45..].iter().map(|h| h.loss).sum();
        assert!(last < first, "{first} -> {last}");
        let text = String::from_utf8(log).unwrap();
        assert_eq!(text.lines().count(), 50);
        let entry: StepLog = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(entry.step, 1);
        let again = train(tiny_model(9), &data, &cfg, None).unwrap();
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn modal_l1_shrinks_eigenvalues_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = DMatrix::from_fn(1, 400, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(1, 400, |_, _| rng.random_range(-1.0..1.0));
        let data = vec![Sequence { name: "noise".into(), u, y }];
        let m = tiny_model(12);
        let max_mod = |m: &DeepSsm| {
            m.layers.iter().flat_map(|l| l.lru.eigenvalues()).map(|z| z.norm()).fold(0.0, f64::max)
        };
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 1000,
            subseq_len: 100,
            n_skip: 10,
            reg_kind: RegKind::ModalL1,
            reg_strength: 1.0,
            max_steps: 200,
            ..TrainConfig::default()
        };
        let out = train(m.clone(), &data, &cfg, None).unwrap();
        assert!(max_mod(&out.model) < max_mod(&m));
    }
}
