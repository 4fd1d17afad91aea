//! Multi-head self-attention prototype generator.
//!
//! The K support embeddings of one class are stacked into `X` (`K x d_model`).
//! Each head computes `softmax(X Wq (X Wk)^T / sqrt(d_k)) X Wv`; the heads are
//! concatenated and mixed by `Wo`. Every support row is then refined as
//! `LayerNorm(Dropout(x + z Wfc))`, and the prototype is the mean of the refined
//! rows. There is no positional encoding, so the prototype does not depend on
//! the order of the supports.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::densemath::{Gradients, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
}

impl AttentionConfig {
    pub const DEFAULT_HEADS: usize = 4;
    pub const DEFAULT_DROPOUT: f64 = 0.1;
    pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

    /// Four heads with `d_k = d_v = d_model / 4` (at least 1), dropout 0.1.
    pub fn for_dim(d_model: usize) -> Self {
        let per_head = (d_model / Self::DEFAULT_HEADS).max(1);
        Self {
            heads: Self::DEFAULT_HEADS,
            d_model,
            d_k: per_head,
            d_v: per_head,
            dropout_rate: Self::DEFAULT_DROPOUT,
            layer_norm_eps: Self::DEFAULT_LAYER_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_k == 0 || self.d_v == 0 {
            return Err(Error::Config(format!(
                "heads, d_model, d_k and d_v must be positive (got {}, {}, {}, {})",
                self.heads, self.d_model, self.d_k, self.d_v
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable matrices of the generator. The same layout doubles as a gradient
/// or momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub config: AttentionConfig,
    /// Per head, `d_model x d_k`.
    pub w_q: Vec<Matrix>,
    /// Per head, `d_model x d_k`.
    pub w_k: Vec<Matrix>,
    /// Per head, `d_model x d_v`.
    pub w_v: Vec<Matrix>,
    /// `(heads * d_v) x d_model`.
    pub w_o: Matrix,
    /// `d_model x d_model`.
    pub w_fc: Matrix,
    /// `1 x d_model`.
    pub ln_gamma: Matrix,
    /// `1 x d_model`.
    pub ln_beta: Matrix,
}

impl GeneratorParams {
    /// Projections uniform in `+-sqrt(6 / (fan_in + fan_out))`, `gamma = 1`,
    /// `beta = 0`.
    pub fn init(config: AttentionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        let c = &config;
        let mut w_q = Vec::with_capacity(c.heads);
        let mut w_k = Vec::with_capacity(c.heads);
        let mut w_v = Vec::with_capacity(c.heads);
        for _ in 0..c.heads {
            w_q.push(glorot(&mut rng, c.d_model, c.d_k));
            w_k.push(glorot(&mut rng, c.d_model, c.d_k));
            w_v.push(glorot(&mut rng, c.d_model, c.d_v));
        }
        let w_o = glorot(&mut rng, c.heads * c.d_v, c.d_model);
        let w_fc = glorot(&mut rng, c.d_model, c.d_model);
        Ok(Self {
            config,
            w_q,
            w_k,
            w_v,
            w_o,
            w_fc,
            ln_gamma: Matrix::filled(1, c.d_model, 1.0),
            ln_beta: Matrix::zeros(1, c.d_model),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for m in out.matrices_mut() {
            m.data_mut().fill(0.0);
        }
        out
    }

    /// Expected `(rows, cols)` of every named matrix under `config`, in
    /// canonical order.
    pub fn layout(config: &AttentionConfig) -> Vec<(String, (usize, usize))> {
        let c = config;
        let mut out = Vec::with_capacity(3 * c.heads + 4);
        for h in 0..c.heads {
            out.push((format!("w_q.{h}"), (c.d_model, c.d_k)));
            out.push((format!("w_k.{h}"), (c.d_model, c.d_k)));
            out.push((format!("w_v.{h}"), (c.d_model, c.d_v)));
        }
        out.push(("w_o".into(), (c.heads * c.d_v, c.d_model)));
        out.push(("w_fc".into(), (c.d_model, c.d_model)));
        out.push(("ln_gamma".into(), (1, c.d_model)));
        out.push(("ln_beta".into(), (1, c.d_model)));
        out
    }

    /// All matrices in [`GeneratorParams::layout`] order.
    pub fn matrices(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(3 * self.w_q.len() + 4);
        for h in 0..self.w_q.len() {
            out.push(&self.w_q[h]);
            out.push(&self.w_k[h]);
            out.push(&self.w_v[h]);
        }
        out.extend([&self.w_o, &self.w_fc, &self.ln_gamma, &self.ln_beta]);
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(3 * self.w_q.len() + 4);
        for ((q, k), v) in self.w_q.iter_mut().zip(&mut self.w_k).zip(&mut self.w_v) {
            out.push(q);
            out.push(k);
            out.push(v);
        }
        out.extend([&mut self.w_o, &mut self.w_fc, &mut self.ln_gamma, &mut self.ln_beta]);
        out
    }

    pub fn named_matrices(&self) -> Vec<(String, &Matrix)> {
        Self::layout(&self.config)
            .into_iter()
            .map(|(name, _)| name)
            .zip(self.matrices())
            .collect()
    }

    /// Builds parameters from matrices given in layout order, checking shapes.
    pub fn from_matrices(config: AttentionConfig, matrices: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(&config);
        if matrices.len() != layout.len() {
            return Err(Error::Usage(format!(
                "expected {} matrices, got {}",
                layout.len(),
                matrices.len()
            )));
        }
        for ((name, shape), m) in layout.iter().zip(&matrices) {
            if m.shape() != *shape {
                return Err(Error::Usage(format!(
                    "matrix {name} is {}x{}, config requires {}x{}",
                    m.rows(),
                    m.cols(),
                    shape.0,
                    shape.1
                )));
            }
            if !m.is_finite() {
                return Err(Error::Usage(format!("matrix {name} has non-finite entries")));
            }
        }
        let mut it = matrices.into_iter();
        let mut w_q = Vec::with_capacity(config.heads);
        let mut w_k = Vec::with_capacity(config.heads);
        let mut w_v = Vec::with_capacity(config.heads);
        for _ in 0..config.heads {
            w_q.extend(it.next());
            w_k.extend(it.next());
            w_v.extend(it.next());
        }
        let mut next = || it.next().expect("length checked against layout");
        Ok(Self {
            config,
            w_q,
            w_k,
            w_v,
            w_o: next(),
            w_fc: next(),
            ln_gamma: next(),
            ln_beta: next(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    /// Records every matrix as a leaf on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            w_q: self.w_q.iter().map(|m| tape.leaf(m.clone())).collect(),
            w_k: self.w_k.iter().map(|m| tape.leaf(m.clone())).collect(),
            w_v: self.w_v.iter().map(|m| tape.leaf(m.clone())).collect(),
            w_o: tape.leaf(self.w_o.clone()),
            w_fc: tape.leaf(self.w_fc.clone()),
            ln_gamma: tape.leaf(self.ln_gamma.clone()),
            ln_beta: tape.leaf(self.ln_beta.clone()),
        }
    }
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::new(fan_in, fan_out, data).expect("length matches shape")
}

/// Tape handles of the generator parameters.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub w_q: Vec<Var>,
    pub w_k: Vec<Var>,
    pub w_v: Vec<Var>,
    pub w_o: Var,
    pub w_fc: Var,
    pub ln_gamma: Var,
    pub ln_beta: Var,
}

impl ParamVars {
    /// Collects parameter gradients into a [`GeneratorParams`]-shaped buffer.
    pub fn gradients(&self, grads: &Gradients, params: &GeneratorParams) -> GeneratorParams {
        let pick = |v: Var, m: &Matrix| grads.get_or_zeros(v, m.shape());
        GeneratorParams {
            config: params.config,
            w_q: self.w_q.iter().zip(&params.w_q).map(|(&v, m)| pick(v, m)).collect(),
            w_k: self.w_k.iter().zip(&params.w_k).map(|(&v, m)| pick(v, m)).collect(),
            w_v: self.w_v.iter().zip(&params.w_v).map(|(&v, m)| pick(v, m)).collect(),
            w_o: pick(self.w_o, &params.w_o),
            w_fc: pick(self.w_fc, &params.w_fc),
            ln_gamma: pick(self.ln_gamma, &params.ln_gamma),
            ln_beta: pick(self.ln_beta, &params.ln_beta),
        }
    }
}

/// Train mode draws dropout masks from the given generator; eval mode is
/// deterministic and never drops.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl core::fmt::Debug for Mode<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Mode::Eval => f.write_str("Eval"),
            Mode::Train(_) => f.write_str("Train"),
        }
    }
}

/// Inverted dropout mask: each entry is `0` with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data).expect("length matches shape")
}

/// Tape handles produced by one generator pass.
#[derive(Debug, Clone)]
pub struct PrototypeVars {
    /// `1 x d_model`.
    pub prototype: Var,
    /// `K x d_model`, one refined row per support sample.
    pub refined: Var,
    /// Per head, the `K x K` attention weights.
    pub attention: Vec<Var>,
}

pub(crate) fn stack_supports(supports: &[&[f64]], d_model: usize) -> Result<Matrix> {
    if supports.is_empty() {
        return Err(Error::Usage("generator needs at least one support vector".into()));
    }
    for s in supports {
        if s.len() != d_model {
            return Err(Error::shape("generate_prototype", (1, d_model), (1, s.len())));
        }
    }
    Matrix::from_rows(supports)
}

/// Records the generator forward pass for one class on `tape`.
pub fn record_prototype(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &AttentionConfig,
    supports: &[&[f64]],
    mode: Mode<'_>,
) -> Result<PrototypeVars> {
    let x_value = stack_supports(supports, config.d_model)?;
    let k = x_value.rows();
    let x = tape.leaf(x_value);
    let scale = 1.0 / libm::sqrt(config.d_k as f64);

    let mut heads = Vec::with_capacity(config.heads);
    let mut attention = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let q = tape.matmul(x, vars.w_q[h])?;
        let keys = tape.matmul(x, vars.w_k[h])?;
        let v = tape.matmul(x, vars.w_v[h])?;
        let keys_t = tape.transpose(keys);
        let logits = tape.matmul(q, keys_t)?;
        let logits = tape.scale(logits, scale);
        let weights = tape.softmax_rows(logits);
        heads.push(tape.matmul(weights, v)?);
        attention.push(weights);
    }
    let concat = tape.concat_cols(&heads)?;
    let mixed = tape.matmul(concat, vars.w_o)?;
    let projected = tape.matmul(mixed, vars.w_fc)?;
    let mut residual = tape.add(x, projected)?;
    if let Mode::Train(rng) = mode {
        if config.dropout_rate > 0.0 {
            let mask = dropout_mask(k, config.d_model, config.dropout_rate, rng);
            residual = tape.mask(residual, mask)?;
        }
    }
    let refined = tape.layer_norm_rows(residual, vars.ln_gamma, vars.ln_beta, config.layer_norm_eps)?;
    let prototype = tape.mean_rows(refined);
    Ok(PrototypeVars {
        prototype,
        refined,
        attention,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub prototype: Vec<f64>,
    pub refined: Matrix,
    pub attention: Vec<Matrix>,
}

/// Generated prototype of one class from its support embeddings.
pub fn generate_prototype(params: &GeneratorParams, supports: &[&[f64]], mode: Mode<'_>) -> Result<Generated> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = record_prototype(&mut tape, &vars, &params.config, supports, mode)?;
    Ok(Generated {
        prototype: tape.value(out.prototype).data().to_vec(),
        refined: tape.value(out.refined).clone(),
        attention: out.attention.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}
