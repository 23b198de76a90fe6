//! The Linear Recurrent Unit.
//!
//! A diagonal complex LTI block
//!
//! ```text
//! x_k = diag(λ) x_{k-1} + diag(γ) B̃ u_k
//! y_k = Re[C x_k] + D u_k
//! ```
//!
//! with `λ_j = exp(-exp(ν_j) + i exp(φ_j))` and `γ_j = sqrt(1 - |λ_j|²)`.
//! Since `exp(ν_j) > 0` for every real `ν_j`, `|λ_j| < 1` holds for any
//! stored parameter value; `ν` is kept unconstrained.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, to_complex, ComplexMatrix, StateSpaceModel};
use crate::serde_mat;

/// Stability margin required when converting modal data back to LRU form.
pub const MODULUS_MARGIN: f64 = 1e-9;
/// Phase assigned to real non-negative eigenvalues by [`LruParams::from_modal_perturbed`].
pub const PHASE_PERTURBATION: f64 = 1e-12;

/// Learnable parameters of one LRU.
///
/// When used as a gradient container, complex entries hold
/// `∂L/∂Re + i ∂L/∂Im`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LruParams {
    pub nu: Vec<f64>,
    pub phi: Vec<f64>,
    #[serde(with = "serde_mat::complex")]
    pub b_tilde: ComplexMatrix,
    #[serde(with = "serde_mat::complex")]
    pub c: ComplexMatrix,
    #[serde(with = "serde_mat::real")]
    pub d: DMatrix<f64>,
}

/// Hidden state at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LruState {
    pub x: Vec<Complex64>,
}

impl LruState {
    pub fn zeros(n: usize) -> Self {
        Self { x: vec![Complex64::new(0.0, 0.0); n] }
    }
}

/// Initialization ring for the eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LruInit {
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for LruInit {
    fn default() -> Self {
        Self { r_min: 0.5, r_max: 0.99 }
    }
}

/// States of one simulated sequence, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LruTrace {
    pub x_re: DMatrix<f64>,
    pub x_im: DMatrix<f64>,
}

/// Element of the associative scan: the affine map `x -> a ⊙ x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanElement {
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

impl ScanElement {
    /// `(a₁, b₁) ∘ (a₂, b₂) = (a₁ ⊙ a₂, a₂ ⊙ b₁ + b₂)`: apply `self` first, then `next`.
    pub fn combine(&self, next: &ScanElement) -> ScanElement {
        ScanElement {
            a: self.a.iter().zip(&next.a).map(|(x, y)| x * y).collect(),
            b: self.b.iter().zip(&next.a).zip(&next.b).map(|((b1, a2), b2)| a2 * b1 + b2).collect(),
        }
    }
}

fn neg_expm1_sqrt(x: f64) -> f64 {
    (-(-x).exp_m1()).sqrt()
}

impl LruParams {
    /// All-zero parameters (a valid gradient accumulator).
    pub fn zeros(n_x: usize, n_u: usize, n_y: usize) -> Self {
        Self {
            nu: vec![0.0; n_x],
            phi: vec![0.0; n_x],
            b_tilde: ComplexMatrix::zeros(n_x, n_u),
            c: ComplexMatrix::zeros(n_y, n_x),
            d: DMatrix::zeros(n_y, n_u),
        }
    }

    /// Random parameters: `|λ|` uniform in `[r_min, r_max]`, phase uniform in
    /// `(0, 2π)`, `B̃`, `C` complex Gaussian with `E|z|² = 1/n_x`, `D = 0`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, n_x: usize, n_u: usize, n_y: usize, init: &LruInit) -> Self {
        let mut nu = Vec::with_capacity(n_x);
        let mut phi = Vec::with_capacity(n_x);
        for _ in 0..n_x {
            let r = if init.r_max > init.r_min { rng.random_range(init.r_min..init.r_max) } else { init.r_min };
            let theta = loop {
                let t = rng.random_range(0.0..TAU);
                if t > 0.0 {
                    break t;
                }
            };
            nu.push((-r.ln()).ln());
            phi.push(theta.ln());
        }
        let std = (0.5 / n_x.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut z = || Complex64::new(normal.sample(rng), normal.sample(rng));
        let b_tilde = ComplexMatrix::from_fn(n_x, n_u, |_, _| z());
        let c = ComplexMatrix::from_fn(n_y, n_x, |_, _| z());
        Self { nu, phi, b_tilde, c, d: DMatrix::zeros(n_y, n_u) }
    }

    pub fn n_states(&self) -> usize {
        self.nu.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.b_tilde.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nu.len();
        if self.phi.len() != n
            || self.b_tilde.nrows() != n
            || self.c.ncols() != n
            || self.d.shape() != (self.c.nrows(), self.b_tilde.ncols())
        {
            return Err(Error::DimensionMismatch(format!(
                "LRU with {} nu, {} phi, B̃ {:?}, C {:?}, D {:?}",
                n,
                self.phi.len(),
                self.b_tilde.shape(),
                self.c.shape(),
                self.d.shape()
            )));
        }
        Ok(())
    }

    /// `λ_j = exp(-exp(ν_j) + i exp(φ_j))`.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.nu
            .iter()
            .zip(&self.phi)
            .map(|(&nu, &phi)| Complex64::new(-nu.exp(), phi.exp()).exp())
            .collect()
    }

    /// `γ_j = sqrt(1 - |λ_j|²) = sqrt(1 - exp(-2 exp(ν_j)))`.
    pub fn gamma_norm(&self) -> Vec<f64> {
        self.nu.iter().map(|&nu| neg_expm1_sqrt(2.0 * nu.exp())).collect()
    }

    /// `B = diag(γ) B̃`.
    pub fn effective_b(&self) -> ComplexMatrix {
        let gamma = self.gamma_norm();
        let mut b = self.b_tilde.clone();
        for (i, g) in gamma.iter().enumerate() {
            b.row_mut(i).iter_mut().for_each(|v| *v *= g);
        }
        b
    }

    /// Diagonal complex realization with real-part readout.
    pub fn to_state_space(&self) -> StateSpaceModel {
        StateSpaceModel {
            a: ComplexMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues())),
            b: self.effective_b(),
            c: self.c.clone(),
            d: to_complex(&self.d),
            is_diagonal: true,
            take_real_output: true,
        }
    }

    /// The `2 n_x` conjugate-closed realization
    /// `(diag(A, A*), [B; B*], ½[C  C*], D)`, whose output is already real.
    pub fn to_conjugate_real_form(&self) -> StateSpaceModel {
        let lambda = DVector::from_vec(self.eigenvalues());
        let a = ComplexMatrix::from_diagonal(&lambda);
        let b = self.effective_b();
        let n = self.n_states();
        let mut bb = ComplexMatrix::zeros(2 * n, self.n_inputs());
        bb.rows_mut(0, n).copy_from(&b);
        bb.rows_mut(n, n).copy_from(&b.map(|z| z.conj()));
        let mut cc = ComplexMatrix::zeros(self.n_outputs(), 2 * n);
        cc.columns_mut(0, n).copy_from(&(&self.c * Complex64::new(0.5, 0.0)));
        cc.columns_mut(n, n).copy_from(&self.c.map(|z| z.conj() * 0.5));
        StateSpaceModel {
            a: block_diag(&a, &a.map(|z| z.conj())),
            b: bb,
            c: cc,
            d: to_complex(&self.d),
            is_diagonal: true,
            take_real_output: false,
        }
    }

    /// Inverse of the eigenvalue / input-normalization parameterization.
    ///
    /// `b` is the effective input matrix; `B̃ = diag(1/γ) b`.
    pub fn from_modal(lambda: &[Complex64], b: &ComplexMatrix, c: &ComplexMatrix, d: &DMatrix<f64>) -> Result<Self> {
        let n = lambda.len();
        if b.nrows() != n || c.ncols() != n || d.shape() != (c.nrows(), b.ncols()) {
            return Err(Error::DimensionMismatch("from_modal dimensions".into()));
        }
        let mut nu = Vec::with_capacity(n);
        let mut phi = Vec::with_capacity(n);
        let mut b_tilde = b.clone();
        for (j, lam) in lambda.iter().enumerate() {
            let modulus = lam.norm();
            if modulus >= 1.0 - MODULUS_MARGIN {
                return Err(Error::UnstableEigenvalue(modulus));
            }
            if lam.im == 0.0 && lam.re >= 0.0 {
                return Err(Error::PhaseDegenerate(lam.re));
            }
            let mut theta = lam.im.atan2(lam.re);
            if theta <= 0.0 {
                theta += TAU;
            }
            nu.push((-modulus.ln()).ln());
            phi.push(theta.ln());
            let gamma = neg_expm1_sqrt(-2.0 * modulus.ln());
            b_tilde.row_mut(j).iter_mut().for_each(|v| *v /= gamma);
        }
        Ok(Self { nu, phi, b_tilde, c: c.clone(), d: d.clone() })
    }

    /// [`from_modal`](Self::from_modal) after nudging real non-negative
    /// eigenvalues off the positive real axis by a phase of `1e-12`
    /// (an exact zero is first given modulus `1e-300`).
    pub fn from_modal_perturbed(
        lambda: &[Complex64],
        b: &ComplexMatrix,
        c: &ComplexMatrix,
        d: &DMatrix<f64>,
    ) -> Result<Self> {
        let lambda: Vec<Complex64> = lambda
            .iter()
            .map(|&l| {
                if l.im == 0.0 && l.re >= 0.0 {
                    Complex64::from_polar(l.re.max(1e-300), PHASE_PERTURBATION)
                } else {
                    l
                }
            })
            .collect();
        Self::from_modal(&lambda, b, c, d)
    }

    fn check_input(&self, u: &DMatrix<f64>, x0: &LruState) {
        assert_eq!(u.nrows(), self.n_inputs(), "input channel count");
        assert_eq!(x0.x.len(), self.n_states(), "initial state size");
    }

    fn input_drive(&self, u: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let b = self.effective_b();
        (b.map(|z| z.re) * u, b.map(|z| z.im) * u)
    }

    fn readout(&self, u: &DMatrix<f64>, trace: &LruTrace) -> DMatrix<f64> {
        self.c.map(|z| z.re) * &trace.x_re - self.c.map(|z| z.im) * &trace.x_im + &self.d * u
    }

    /// Step-by-step recurrence. `u` holds one input vector per column.
    pub fn simulate_sequential(&self, u: &DMatrix<f64>, x0: &LruState) -> DMatrix<f64> {
        self.forward_traced(u, x0).0
    }

    /// Sequential forward pass that also returns the state trajectory.
    pub fn forward_traced(&self, u: &DMatrix<f64>, x0: &LruState) -> (DMatrix<f64>, LruTrace) {
        self.check_input(u, x0);
        let (n, steps) = (self.n_states(), u.ncols());
        let lambda = self.eigenvalues();
        let (bu_re, bu_im) = self.input_drive(u);
        let mut x_re = DMatrix::zeros(n, steps);
        let mut x_im = DMatrix::zeros(n, steps);
        let mut x = x0.x.clone();
        for k in 0..steps {
            for j in 0..n {
                x[j] = lambda[j] * x[j] + Complex64::new(bu_re[(j, k)], bu_im[(j, k)]);
                x_re[(j, k)] = x[j].re;
                x_im[(j, k)] = x[j].im;
            }
        }
        let trace = LruTrace { x_re, x_im };
        (self.readout(u, &trace), trace)
    }

    /// Same map as [`simulate_sequential`](Self::simulate_sequential),
    /// evaluated as a chunked associative scan over the per-step elements
    /// `(λ, B u_k)`. Chunks are processed in parallel.
    pub fn simulate_scan(&self, u: &DMatrix<f64>, x0: &LruState) -> DMatrix<f64> {
        self.check_input(u, x0);
        let (n, steps) = (self.n_states(), u.ncols());
        let lambda = self.eigenvalues();
        let (bu_re, bu_im) = self.input_drive(u);
        let chunk = (steps / (4 * rayon::current_num_threads())).max(256);
        let drive = |k: usize| -> Vec<Complex64> {
            (0..n).map(|j| Complex64::new(bu_re[(j, k)], bu_im[(j, k)])).collect()
        };

        // Local scans from a zero state, plus each chunk's aggregate element.
        let starts: Vec<usize> = (0..steps).step_by(chunk).collect();
        let locals: Vec<(Vec<Vec<Complex64>>, ScanElement)> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + chunk).min(steps);
                let mut acc = ScanElement { a: vec![Complex64::new(1.0, 0.0); n], b: vec![Complex64::new(0.0, 0.0); n] };
                let mut states = Vec::with_capacity(end - start);
                for k in start..end {
                    acc = acc.combine(&ScanElement { a: lambda.clone(), b: drive(k) });
                    states.push(acc.b.clone());
                }
                (states, acc)
            })
            .collect();

        // Carry-in state of every chunk.
        let mut carries = Vec::with_capacity(locals.len());
        let mut carry = x0.x.clone();
        for (_, agg) in &locals {
            carries.push(carry.clone());
            carry = agg.a.iter().zip(&agg.b).zip(&carry).map(|((a, b), x)| a * x + b).collect();
        }

        let mut x_re = DMatrix::zeros(n, steps);
        let mut x_im = DMatrix::zeros(n, steps);
        for (((states, _), carry), &start) in locals.iter().zip(&carries).zip(&starts) {
            let mut power = vec![Complex64::new(1.0, 0.0); n];
            for (offset, s) in states.iter().enumerate() {
                for j in 0..n {
                    power[j] *= lambda[j];
                    let x = s[j] + power[j] * carry[j];
                    x_re[(j, start + offset)] = x.re;
                    x_im[(j, start + offset)] = x.im;
                }
            }
        }
        self.readout(u, &LruTrace { x_re, x_im })
    }

    /// Reverse-mode pass through the recurrence (initial state `0`).
    ///
    /// Returns the parameter gradient and the gradient with respect to `u`.
    pub fn backward(&self, u: &DMatrix<f64>, trace: &LruTrace, dy: &DMatrix<f64>) -> (LruParams, DMatrix<f64>) {
        let (n, steps) = (self.n_states(), u.ncols());
        let lambda = self.eigenvalues();
        let (c_re, c_im) = (self.c.map(|z| z.re), self.c.map(|z| z.im));

        let g_c_re = dy * trace.x_re.transpose();
        let g_c_im = -(dy * trace.x_im.transpose());
        let direct_re = c_re.transpose() * dy;
        let direct_im = -(c_im.transpose() * dy);

        let mut g_re = DMatrix::zeros(n, steps);
        let mut g_im = DMatrix::zeros(n, steps);
        let mut g_lambda = vec![Complex64::new(0.0, 0.0); n];
        let mut carry = vec![Complex64::new(0.0, 0.0); n];
        for k in (0..steps).rev() {
            for j in 0..n {
                let g = Complex64::new(direct_re[(j, k)], direct_im[(j, k)]) + lambda[j].conj() * carry[j];
                carry[j] = g;
                g_re[(j, k)] = g.re;
                g_im[(j, k)] = g.im;
                if k > 0 {
                    let x_prev = Complex64::new(trace.x_re[(j, k - 1)], trace.x_im[(j, k - 1)]);
                    g_lambda[j] += x_prev.conj() * g;
                }
            }
        }

        let b = self.effective_b();
        let g_b_re = &g_re * u.transpose();
        let g_b_im = &g_im * u.transpose();
        let du = b.map(|z| z.re).transpose() * &g_re + b.map(|z| z.im).transpose() * &g_im + self.d.transpose() * dy;

        let gamma = self.gamma_norm();
        let mut g_b_tilde = ComplexMatrix::zeros(n, self.n_inputs());
        let mut g_gamma = vec![0.0; n];
        for j in 0..n {
            for m in 0..self.n_inputs() {
                let gb = Complex64::new(g_b_re[(j, m)], g_b_im[(j, m)]);
                g_b_tilde[(j, m)] = gb * gamma[j];
                let bt = self.b_tilde[(j, m)];
                g_gamma[j] += bt.re * gb.re + bt.im * gb.im;
            }
        }
        let (g_nu, g_phi) = self.chain_to_nu_phi(&g_lambda, &g_gamma);
        let g_c = ComplexMatrix::from_fn(self.n_outputs(), n, |i, j| Complex64::new(g_c_re[(i, j)], g_c_im[(i, j)]));
        let grad = LruParams { nu: g_nu, phi: g_phi, b_tilde: g_b_tilde, c: g_c, d: dy * u.transpose() };
        (grad, du)
    }

    /// Map gradients with respect to `λ_j` (complex convention) and `γ_j`
    /// onto `ν_j` and `φ_j`.
    pub fn chain_to_nu_phi(&self, g_lambda: &[Complex64], g_gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lambda = self.eigenvalues();
        let mut g_nu = vec![0.0; self.n_states()];
        let mut g_phi = vec![0.0; self.n_states()];
        for j in 0..self.n_states() {
            let e_nu = self.nu[j].exp();
            // λ = exp(s): ∂L/∂s = conj(λ) ∂L/∂λ
            let g_s = lambda[j].conj() * g_lambda[j];
            let a = (-2.0 * e_nu).exp();
            let gamma = neg_expm1_sqrt(2.0 * e_nu);
            let dgamma_dnu = if gamma > 0.0 { a * e_nu / gamma } else { 0.0 };
            g_nu[j] = -e_nu * g_s.re + dgamma_dnu * g_gamma[j];
            g_phi[j] = self.phi[j].exp() * g_s.im;
        }
        (g_nu, g_phi)
    }
}
