//! Deep stack of LRU layers.
//!
//! ```text
//! U_k     = W_in u_k + b_in
//! ũ_k     = Norm(s_k)           per layer, s_0 = U
//! y       = LRU(ũ)              whole sequence
//! s_k    ← s_k + f(y_k)         static nonlinearity + skip
//! ŷ_k     = W_out s_k + b_out
//! ```
//!
//! Sequences are stored as matrices with one time step per column.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lru::{LruInit, LruParams, LruState, LruTrace};
use crate::serde_mat;

pub const FORMAT_VERSION: u32 = 1;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Nonlinearity {
    Mlp { hidden: usize },
    Glu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    LayerNorm,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepSsmConfig {
    pub n_in: usize,
    pub n_out: usize,
    pub d_model: usize,
    pub n_x: usize,
    pub n_layers: usize,
    pub nonlinearity: Nonlinearity,
    pub norm: NormKind,
    /// Leading samples ignored when scoring a simulation.
    pub n_skip_loss: usize,
}

impl Default for DeepSsmConfig {
    fn default() -> Self {
        Self {
            n_in: 1,
            n_out: 1,
            d_model: 8,
            n_x: 12,
            n_layers: 2,
            nonlinearity: Nonlinearity::Mlp { hidden: 16 },
            norm: NormKind::LayerNorm,
            n_skip_loss: 0,
        }
    }
}

impl DeepSsmConfig {
    /// Checks the configuration of a model to be initialized.
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 {
            return Err(Error::Config("n_x must be at least 1".into()));
        }
        self.validate_shape()
    }

    /// Like [`validate`](Self::validate) but accepts `n_x = 0`, the static
    /// model left after reducing every block to order zero.
    pub fn validate_shape(&self) -> Result<()> {
        let counts = [
            ("n_in", self.n_in),
            ("n_out", self.n_out),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let Nonlinearity::Mlp { hidden: 0 } = self.nonlinearity {
            return Err(Error::Config("mlp hidden width must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    #[serde(with = "serde_mat::vector")]
    pub gain: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub bias: DVector<f64>,
}

/// Weights of the static nonlinearity.
///
/// MLP: `W₂ GELU(W₁ v + b₁) + b₂`. GLU: `(W₁ v + b₁) ⊙ sigmoid(W₂ v + b₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinParams {
    #[serde(with = "serde_mat::real")]
    pub w1: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub b1: DVector<f64>,
    #[serde(with = "serde_mat::real")]
    pub w2: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub b2: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub norm: Option<LayerNormParams>,
    pub lru: LruParams,
    pub nonlin: NonlinParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSsm {
    pub config: DeepSsmConfig,
    #[serde(with = "serde_mat::real")]
    pub input_proj: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub input_bias: DVector<f64>,
    #[serde(with = "serde_mat::real")]
    pub output_proj: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub output_bias: DVector<f64>,
    pub layers: Vec<Layer>,
}

/// Which parameter a flat slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    InputProj,
    InputBias,
    OutputProj,
    OutputBias,
    NormGain,
    NormBias,
    Nu,
    Phi,
    BTilde,
    C,
    D,
    NonlinW1,
    NonlinB1,
    NonlinW2,
    NonlinB2,
}

impl ParamGroup {
    /// Groups excluded from decoupled weight decay.
    pub fn decays(self) -> bool {
        !matches!(self, Self::Nu | Self::Phi | Self::NormGain | Self::NormBias)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::InputProj => "input_proj",
            Self::InputBias => "input_bias",
            Self::OutputProj => "output_proj",
            Self::OutputBias => "output_bias",
            Self::NormGain => "norm_gain",
            Self::NormBias => "norm_bias",
            Self::Nu => "nu",
            Self::Phi => "phi",
            Self::BTilde => "b_tilde",
            Self::C => "c",
            Self::D => "d",
            Self::NonlinW1 => "nonlin_w1",
            Self::NonlinB1 => "nonlin_b1",
            Self::NonlinW2 => "nonlin_w2",
            Self::NonlinB2 => "nonlin_b2",
        }
    }
}

/// Location of one flat parameter slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamTag {
    pub layer: Option<usize>,
    pub group: ParamGroup,
}

impl std::fmt::Display for ParamTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer{l}.{}", self.group.name()),
            None => f.write_str(self.group.name()),
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(v - mean) / sqrt(var + ε) ⊙ gain + bias` with the population variance.
pub fn layer_norm(v: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let (xhat, _) = normalize(v);
    xhat.iter().zip(gain).zip(bias).map(|((x, g), b)| x * g + b).collect()
}

/// Returns the standardized vector and `1 / sqrt(var + ε)`.
fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (v.iter().map(|x| (x - mean) * inv_std).collect(), inv_std)
}

fn add_bias(mut m: DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        col += b;
    }
    m
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("positive std");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

impl NonlinParams {
    fn init<R: Rng + ?Sized>(rng: &mut R, d: usize, kind: Nonlinearity) -> Self {
        let hidden = match kind {
            Nonlinearity::Mlp { hidden } => hidden,
            Nonlinearity::Glu => d,
        };
        let w1 = random_matrix(rng, hidden, d);
        let w2 = match kind {
            Nonlinearity::Mlp { .. } => random_matrix(rng, d, hidden),
            Nonlinearity::Glu => random_matrix(rng, d, d),
        };
        Self { w1, b1: DVector::zeros(hidden), w2, b2: DVector::zeros(d) }
    }

    /// Applies the nonlinearity to every column.
    pub fn apply(&self, kind: Nonlinearity, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(kind, y).0
    }

    fn forward(&self, kind: Nonlinearity, y: &DMatrix<f64>) -> (DMatrix<f64>, NonlinCache) {
        match kind {
            Nonlinearity::Mlp { .. } => {
                let pre = add_bias(&self.w1 * y, &self.b1);
                let act = pre.map(gelu);
                let out = add_bias(&self.w2 * &act, &self.b2);
                (out, NonlinCache { pre, act })
            }
            Nonlinearity::Glu => {
                let pre = add_bias(&self.w1 * y, &self.b1);
                let gate_pre = add_bias(&self.w2 * y, &self.b2);
                let act = gate_pre.map(sigmoid);
                (pre.component_mul(&act), NonlinCache { pre, act })
            }
        }
    }

    fn backward(&self, kind: Nonlinearity, y: &DMatrix<f64>, cache: &NonlinCache, dz: &DMatrix<f64>) -> (NonlinParams, DMatrix<f64>) {
        match kind {
            Nonlinearity::Mlp { .. } => {
                let g_w2 = dz * cache.act.transpose();
                let g_b2 = row_sums(dz);
                let d_act = self.w2.transpose() * dz;
                let d_pre = d_act.zip_map(&cache.pre, |g, h| g * gelu_grad(h));
                let g_w1 = &d_pre * y.transpose();
                let g_b1 = row_sums(&d_pre);
                let dy = self.w1.transpose() * &d_pre;
                (NonlinParams { w1: g_w1, b1: g_b1, w2: g_w2, b2: g_b2 }, dy)
            }
            Nonlinearity::Glu => {
                let d_pre = dz.component_mul(&cache.act);
                let d_gate = DMatrix::from_fn(dz.nrows(), dz.ncols(), |i, k| {
                    let s = cache.act[(i, k)];
                    dz[(i, k)] * cache.pre[(i, k)] * s * (1.0 - s)
                });
                let g_w1 = &d_pre * y.transpose();
                let g_w2 = &d_gate * y.transpose();
                let dy = self.w1.transpose() * &d_pre + self.w2.transpose() * &d_gate;
                (NonlinParams { w1: g_w1, b1: row_sums(&d_pre), w2: g_w2, b2: row_sums(&d_gate) }, dy)
            }
        }
    }
}

struct NonlinCache {
    pre: DMatrix<f64>,
    /// GELU output (MLP) or gate sigmoid (GLU)
    act: DMatrix<f64>,
}

struct LayerCache {
    normed: DMatrix<f64>,
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    trace: LruTrace,
    y: DMatrix<f64>,
    nonlin: NonlinCache,
}

/// Intermediate values of a forward pass, consumed by [`DeepSsm::backward`].
pub struct ForwardCache {
    u: DMatrix<f64>,
    layers: Vec<LayerCache>,
    last: DMatrix<f64>,
}

impl Layer {
    fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &DeepSsmConfig, lru_init: &LruInit) -> Self {
        let d = cfg.d_model;
        let norm = match cfg.norm {
            NormKind::LayerNorm => Some(LayerNormParams { gain: DVector::from_element(d, 1.0), bias: DVector::zeros(d) }),
            NormKind::None => None,
        };
        let lru = LruParams::init(rng, cfg.n_x, d, d, lru_init);
        let nonlin = NonlinParams::init(rng, d, cfg.nonlinearity);
        Self { norm, lru, nonlin }
    }

    fn apply_norm(&self, s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let Some(norm) = &self.norm else {
            return (s.clone(), DMatrix::zeros(0, 0), Vec::new());
        };
        let mut xhat = DMatrix::zeros(s.nrows(), s.ncols());
        let mut inv_std = Vec::with_capacity(s.ncols());
        for k in 0..s.ncols() {
            let (col, is) = normalize(s.column(k).as_slice());
            xhat.set_column(k, &DVector::from_vec(col));
            inv_std.push(is);
        }
        let normed = add_bias(DMatrix::from_diagonal(&norm.gain) * &xhat, &norm.bias);
        (normed, xhat, inv_std)
    }

    /// One layer over a whole sequence (`d_model × T`).
    pub fn forward(&self, kind: Nonlinearity, s: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(kind, s).0
    }

    fn forward_cached(&self, kind: Nonlinearity, s: &DMatrix<f64>) -> (DMatrix<f64>, LayerCache) {
        let (normed, xhat, inv_std) = self.apply_norm(s);
        let (y, trace) = self.lru.forward_traced(&normed, &LruState::zeros(self.lru.n_states()));
        let (z, nonlin) = self.nonlin.forward(kind, &y);
        (s + z, LayerCache { normed, xhat, inv_std, trace, y, nonlin })
    }

    fn backward(&self, kind: Nonlinearity, cache: &LayerCache, ds: &DMatrix<f64>) -> (Layer, DMatrix<f64>) {
        let (g_nonlin, dy) = self.nonlin.backward(kind, &cache.y, &cache.nonlin, ds);
        let (g_lru, d_normed) = self.lru.backward(&cache.normed, &cache.trace, &dy);
        let (g_norm, d_in) = match &self.norm {
            None => (None, d_normed),
            Some(norm) => {
                let g_bias = row_sums(&d_normed);
                let g_gain = row_sums(&d_normed.component_mul(&cache.xhat));
                let d = d_normed.nrows() as f64;
                let mut d_in = DMatrix::zeros(d_normed.nrows(), d_normed.ncols());
                for k in 0..d_normed.ncols() {
                    let dxhat = d_normed.column(k).component_mul(&norm.gain);
                    let xhat = cache.xhat.column(k);
                    let mean_d = dxhat.sum() / d;
                    let mean_dx = dxhat.dot(&xhat) / d;
                    let col = (dxhat - DVector::from_element(xhat.len(), mean_d) - xhat * mean_dx) * cache.inv_std[k];
                    d_in.set_column(k, &col);
                }
                (Some(LayerNormParams { gain: g_gain, bias: g_bias }), d_in)
            }
        };
        (Layer { norm: g_norm, lru: g_lru, nonlin: g_nonlin }, ds + d_in)
    }
}

impl DeepSsm {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, config: &DeepSsmConfig, lru_init: &LruInit) -> Result<Self> {
        config.validate()?;
        let input_proj = random_matrix(rng, config.d_model, config.n_in);
        let output_proj = random_matrix(rng, config.n_out, config.d_model);
        let layers = (0..config.n_layers).map(|_| Layer::init(rng, config, lru_init)).collect();
        Ok(Self {
            config: config.clone(),
            input_proj,
            input_bias: DVector::zeros(config.d_model),
            output_proj,
            output_bias: DVector::zeros(config.n_out),
            layers,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate_shape()?;
        let shape_err = |what: &str| Err(Error::DimensionMismatch(what.to_string()));
        if self.input_proj.shape() != (cfg.d_model, cfg.n_in) || self.input_bias.len() != cfg.d_model {
            return shape_err("input projection");
        }
        if self.output_proj.shape() != (cfg.n_out, cfg.d_model) || self.output_bias.len() != cfg.n_out {
            return shape_err("output projection");
        }
        if self.layers.len() != cfg.n_layers {
            return shape_err("layer count differs from n_layers");
        }
        let d = cfg.d_model;
        let hidden = match cfg.nonlinearity {
            Nonlinearity::Mlp { hidden } => hidden,
            Nonlinearity::Glu => d,
        };
        for layer in &self.layers {
            layer.lru.validate()?;
            if layer.lru.n_states() != cfg.n_x || layer.lru.n_inputs() != d || layer.lru.n_outputs() != d {
                return shape_err("LRU shape");
            }
            match (&layer.norm, cfg.norm) {
                (Some(n), NormKind::LayerNorm) if n.gain.len() == d && n.bias.len() == d => {}
                (None, NormKind::None) => {}
                _ => return shape_err("normalization parameters"),
            }
            let nl = &layer.nonlin;
            let w2_cols = match cfg.nonlinearity {
                Nonlinearity::Mlp { .. } => hidden,
                Nonlinearity::Glu => d,
            };
            if nl.w1.shape() != (hidden, d) || nl.b1.len() != hidden || nl.w2.shape() != (d, w2_cols) || nl.b2.len() != d {
                return shape_err("nonlinearity weights");
            }
        }
        Ok(())
    }

    fn check_input(&self, u: &DMatrix<f64>) {
        assert_eq!(u.nrows(), self.config.n_in, "input has {} channels, model expects {}", u.nrows(), self.config.n_in);
    }

    /// Simulate from zero initial state; `u` is `n_in × T`, the result `n_out × T`.
    pub fn forward(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        self.check_input(u);
        let kind = self.config.nonlinearity;
        let s = self
            .layers
            .iter()
            .fold(add_bias(&self.input_proj * u, &self.input_bias), |s, layer| layer.forward(kind, &s));
        add_bias(&self.output_proj * s, &self.output_bias)
    }

    /// [`forward`](Self::forward) over independent sequences in parallel.
    pub fn forward_batch(&self, inputs: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        inputs.par_iter().map(|u| self.forward(u)).collect()
    }

    pub fn forward_cached(&self, u: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        self.check_input(u);
        let kind = self.config.nonlinearity;
        let mut s = add_bias(&self.input_proj * u, &self.input_bias);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward_cached(kind, &s);
            caches.push(cache);
            s = next;
        }
        let y = add_bias(&self.output_proj * &s, &self.output_bias);
        (y, ForwardCache { u: u.clone(), layers: caches, last: s })
    }

    /// Gradient of a scalar loss given `dy = ∂L/∂ŷ`, in the same shape as the model.
    pub fn backward(&self, cache: &ForwardCache, dy: &DMatrix<f64>) -> DeepSsm {
        let kind = self.config.nonlinearity;
        let g_out = dy * cache.last.transpose();
        let g_out_b = row_sums(dy);
        let mut ds = self.output_proj.transpose() * dy;
        let mut g_layers = Vec::with_capacity(self.layers.len());
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (g, d_prev) = layer.backward(kind, lc, &ds);
            g_layers.push(g);
            ds = d_prev;
        }
        g_layers.reverse();
        DeepSsm {
            config: self.config.clone(),
            input_proj: &ds * cache.u.transpose(),
            input_bias: row_sums(&ds),
            output_proj: g_out,
            output_bias: g_out_b,
            layers: g_layers,
        }
    }

    /// Visit every learnable scalar in a fixed order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(ParamTag, &mut f64)) {
        fn all(m: &mut [f64], tag: ParamTag, f: &mut dyn FnMut(ParamTag, &mut f64)) {
            m.iter_mut().for_each(|v| f(tag, v));
        }
        let top = |group| ParamTag { layer: None, group };
        all(self.input_proj.as_mut_slice(), top(ParamGroup::InputProj), f);
        all(self.input_bias.as_mut_slice(), top(ParamGroup::InputBias), f);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let tag = |group| ParamTag { layer: Some(l), group };
            if let Some(norm) = &mut layer.norm {
                all(norm.gain.as_mut_slice(), tag(ParamGroup::NormGain), f);
                all(norm.bias.as_mut_slice(), tag(ParamGroup::NormBias), f);
            }
            all(&mut layer.lru.nu, tag(ParamGroup::Nu), f);
            all(&mut layer.lru.phi, tag(ParamGroup::Phi), f);
            for z in layer.lru.b_tilde.iter_mut() {
                f(tag(ParamGroup::BTilde), &mut z.re);
                f(tag(ParamGroup::BTilde), &mut z.im);
            }
            for z in layer.lru.c.iter_mut() {
                f(tag(ParamGroup::C), &mut z.re);
                f(tag(ParamGroup::C), &mut z.im);
            }
            all(layer.lru.d.as_mut_slice(), tag(ParamGroup::D), f);
            all(layer.nonlin.w1.as_mut_slice(), tag(ParamGroup::NonlinW1), f);
            all(layer.nonlin.b1.as_mut_slice(), tag(ParamGroup::NonlinB1), f);
            all(layer.nonlin.w2.as_mut_slice(), tag(ParamGroup::NonlinW2), f);
            all(layer.nonlin.b2.as_mut_slice(), tag(ParamGroup::NonlinB2), f);
        }
        all(self.output_proj.as_mut_slice(), top(ParamGroup::OutputProj), f);
        all(self.output_bias.as_mut_slice(), top(ParamGroup::OutputBias), f);
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }

    pub fn layout(&self) -> Vec<ParamTag> {
        let mut tags = Vec::new();
        self.clone().visit_mut(&mut |t, _| tags.push(t));
        tags
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().visit_mut(&mut |_, v| out.push(*v));
        out
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        let n = self.n_params();
        if values.len() != n {
            return Err(Error::LengthMismatch(format!("{} values for {n} parameters", values.len())));
        }
        let mut it = values.iter();
        self.visit_mut(&mut |_, v| *v = *it.next().expect("length checked"));
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile { format_version: FORMAT_VERSION, model: self.clone() };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Per-sample evaluator carrying the LRU states.
    pub fn stepper(&self) -> Stepper<'_> {
        Stepper { model: self, states: self.layers.iter().map(|l| LruState::zeros(l.lru.n_states())).collect() }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    model: DeepSsm,
}

/// Online evaluation one sample at a time.
pub struct Stepper<'a> {
    model: &'a DeepSsm,
    states: Vec<LruState>,
}

impl Stepper<'_> {
    pub fn step(&mut self, u: &[f64]) -> Vec<f64> {
        let m = self.model;
        let kind = m.config.nonlinearity;
        let mut s = &m.input_proj * DVector::from_column_slice(u) + &m.input_bias;
        for (layer, state) in m.layers.iter().zip(&mut self.states) {
            let normed = match &layer.norm {
                Some(n) => DVector::from_vec(layer_norm(s.as_slice(), n.gain.as_slice(), n.bias.as_slice())),
                None => s.clone(),
            };
            let lambda = layer.lru.eigenvalues();
            let b = layer.lru.effective_b();
            let mut y = &layer.lru.d * &normed;
            for j in 0..lambda.len() {
                let drive: num_complex::Complex64 = (0..normed.len()).map(|m| b[(j, m)] * normed[m]).sum();
                state.x[j] = lambda[j] * state.x[j] + drive;
                for o in 0..y.len() {
                    y[o] += (layer.lru.c[(o, j)] * state.x[j]).re;
                }
            }
            let z = layer.nonlin.apply(kind, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()));
            s += z.column(0);
        }
        (&m.output_proj * s + &m.output_bias).as_slice().to_vec()
    }
}
