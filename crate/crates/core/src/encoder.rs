//! Transformer encoder: token + position + segment embeddings feeding a
//! stack of post-norm self-attention blocks. Instantiated once for the task
//! sequence and once for the knowledge sequence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, Tensor, TensorError};
use crate::tokenize::EncodedSequence;

/// Layer-norm epsilon used everywhere in the model.
pub const LN_EPS: f64 = 1e-12;
/// Additive key bias that removes masked positions from attention.
pub const MASK_BIAS: f64 = -1e9;
/// Standard deviation for random weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sequence length {len} exceeds the position table ({max})")]
    TooLong { len: usize, max: usize },
    #[error("bad encoder config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hidden size; every per-token representation is a d-vector.
    pub d: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub n_segments: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(EncoderError::BadConfig(format!(
                "hidden size {} must be a positive multiple of {} heads",
                self.d, self.n_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(EncoderError::BadConfig("d_ff must be positive".into()));
        }
        if self.vocab_size < 4 {
            return Err(EncoderError::BadConfig(
                "vocab_size must cover the reserved ids".into(),
            ));
        }
        if self.n_segments == 0 {
            return Err(EncoderError::BadConfig("n_segments must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::BadConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}

pub(crate) fn normal_param(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, INIT_STD).expect("valid normal");
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::param(rows, cols, data).expect("sized data")
}

pub(crate) fn zeros_param(rows: usize, cols: usize) -> Tensor {
    let t = Tensor::zeros(rows, cols);
    t.set_requires_grad(true);
    t
}

pub(crate) fn ones_param(rows: usize, cols: usize) -> Tensor {
    Tensor::param(rows, cols, vec![1.0; rows * cols]).expect("sized data")
}

/// One attention block's parameters.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub q_w: Tensor,
    pub q_b: Tensor,
    pub k_w: Tensor,
    pub k_b: Tensor,
    pub v_w: Tensor,
    pub v_b: Tensor,
    pub o_w: Tensor,
    pub o_b: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
}

impl LayerWeights {
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> LayerWeights {
        let d = cfg.d;
        LayerWeights {
            q_w: normal_param(d, d, rng),
            q_b: zeros_param(1, d),
            k_w: normal_param(d, d, rng),
            k_b: zeros_param(1, d),
            v_w: normal_param(d, d, rng),
            v_b: zeros_param(1, d),
            o_w: normal_param(d, d, rng),
            o_b: zeros_param(1, d),
            ln1_g: ones_param(1, d),
            ln1_b: zeros_param(1, d),
            ff1_w: normal_param(d, cfg.d_ff, rng),
            ff1_b: zeros_param(1, cfg.d_ff),
            ff2_w: normal_param(cfg.d_ff, d, rng),
            ff2_b: zeros_param(1, d),
            ln2_g: ones_param(1, d),
            ln2_b: zeros_param(1, d),
        }
    }

    pub fn deep_copy(&self) -> LayerWeights {
        LayerWeights {
            q_w: self.q_w.deep_copy(),
            q_b: self.q_b.deep_copy(),
            k_w: self.k_w.deep_copy(),
            k_b: self.k_b.deep_copy(),
            v_w: self.v_w.deep_copy(),
            v_b: self.v_b.deep_copy(),
            o_w: self.o_w.deep_copy(),
            o_b: self.o_b.deep_copy(),
            ln1_g: self.ln1_g.deep_copy(),
            ln1_b: self.ln1_b.deep_copy(),
            ff1_w: self.ff1_w.deep_copy(),
            ff1_b: self.ff1_b.deep_copy(),
            ff2_w: self.ff2_w.deep_copy(),
            ff2_b: self.ff2_b.deep_copy(),
            ln2_g: self.ln2_g.deep_copy(),
            ln2_b: self.ln2_b.deep_copy(),
        }
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        let pairs: [(&str, &Tensor); 16] = [
            ("attn.q.w", &self.q_w),
            ("attn.q.b", &self.q_b),
            ("attn.k.w", &self.k_w),
            ("attn.k.b", &self.k_b),
            ("attn.v.w", &self.v_w),
            ("attn.v.b", &self.v_b),
            ("attn.o.w", &self.o_w),
            ("attn.o.b", &self.o_b),
            ("ln1.g", &self.ln1_g),
            ("ln1.b", &self.ln1_b),
            ("ffn.1.w", &self.ff1_w),
            ("ffn.1.b", &self.ff1_b),
            ("ffn.2.w", &self.ff2_w),
            ("ffn.2.b", &self.ff2_b),
            ("ln2.g", &self.ln2_g),
            ("ln2.b", &self.ln2_b),
        ];
        for (name, t) in pairs {
            out.push((format!("{prefix}.{name}"), (*t).clone()));
        }
    }
}

/// All parameters of one encoder.
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub seg_emb: Tensor,
    pub emb_ln_g: Tensor,
    pub emb_ln_b: Tensor,
    pub layers: Vec<LayerWeights>,
}

impl EncoderWeights {
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> EncoderWeights {
        EncoderWeights {
            tok_emb: normal_param(cfg.vocab_size, cfg.d, rng),
            pos_emb: normal_param(cfg.max_positions, cfg.d, rng),
            seg_emb: normal_param(cfg.n_segments, cfg.d, rng),
            emb_ln_g: ones_param(1, cfg.d),
            emb_ln_b: zeros_param(1, cfg.d),
            layers: (0..cfg.n_layers).map(|_| LayerWeights::init(cfg, rng)).collect(),
        }
    }

    pub fn deep_copy(&self) -> EncoderWeights {
        EncoderWeights {
            tok_emb: self.tok_emb.deep_copy(),
            pos_emb: self.pos_emb.deep_copy(),
            seg_emb: self.seg_emb.deep_copy(),
            emb_ln_g: self.emb_ln_g.deep_copy(),
            emb_ln_b: self.emb_ln_b.deep_copy(),
            layers: self.layers.iter().map(LayerWeights::deep_copy).collect(),
        }
    }

    /// Every tensor with its stable dotted name, in a fixed traversal order.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.emb.tok"), self.tok_emb.clone()),
            (format!("{prefix}.emb.pos"), self.pos_emb.clone()),
            (format!("{prefix}.emb.seg"), self.seg_emb.clone()),
            (format!("{prefix}.emb_ln.g"), self.emb_ln_g.clone()),
            (format!("{prefix}.emb_ln.b"), self.emb_ln_b.clone()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.named(&format!("{prefix}.layer.{i}"), &mut out);
        }
        out
    }

    pub fn set_requires_grad(&self, flag: bool) {
        for (_, t) in self.named_tensors("w") {
            t.set_requires_grad(flag);
        }
    }
}

/// Sum of token, position, and segment embeddings, layer-normed and dropped
/// out.
pub fn embed(
    g: &Graph,
    input: &EncodedSequence,
    w: &EncoderWeights,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, EncoderError> {
    if input.len() > cfg.max_positions {
        return Err(EncoderError::TooLong {
            len: input.len(),
            max: cfg.max_positions,
        });
    }
    let tok = g.embedding(&w.tok_emb, &input.token_ids)?;
    let positions: Vec<usize> = (0..input.len()).collect();
    let pos = g.embedding(&w.pos_emb, &positions)?;
    let segments: Vec<usize> = input.segment_ids.iter().map(|&s| s as usize).collect();
    let seg = g.embedding(&w.seg_emb, &segments)?;
    let sum = g.add(&g.add(&tok, &pos)?, &seg)?;
    let normed = g.layer_norm(&sum, &w.emb_ln_g, &w.emb_ln_b, LN_EPS)?;
    Ok(g.dropout(&normed, cfg.dropout, rng)?)
}

/// Multi-head self-attention with an additive key mask.
pub(crate) fn attention(
    g: &Graph,
    x: &Tensor,
    mask: &[bool],
    lw: &LayerWeights,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, TensorError> {
    let q = g.add_row(&g.matmul(x, &lw.q_w)?, &lw.q_b)?;
    let k = g.add_row(&g.matmul(x, &lw.k_w)?, &lw.k_b)?;
    let v = g.add_row(&g.matmul(x, &lw.v_w)?, &lw.v_b)?;

    let key_bias: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 0.0 } else { MASK_BIAS })
        .collect();
    let key_bias = Tensor::from_vec(1, mask.len(), key_bias)?;

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = g.slice_cols(&q, h * dh, dh)?;
        let kh = g.slice_cols(&k, h * dh, dh)?;
        let vh = g.slice_cols(&v, h * dh, dh)?;
        let scores = g.scale(&g.matmul(&qh, &g.transpose(&kh)?)?, scale)?;
        let scores = g.add_row(&scores, &key_bias)?;
        let probs = g.softmax_rows(&scores)?;
        let probs = g.dropout(&probs, cfg.dropout, rng)?;
        heads.push(g.matmul(&probs, &vh)?);
    }
    let head_refs: Vec<&Tensor> = heads.iter().collect();
    let merged = g.concat_cols(&head_refs)?;
    g.add_row(&g.matmul(&merged, &lw.o_w)?, &lw.o_b)
}

/// One post-norm block: attention and feed-forward, each with residual and
/// layer-norm.
pub fn encoder_block(
    g: &Graph,
    x: &Tensor,
    mask: &[bool],
    lw: &LayerWeights,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, TensorError> {
    let attn = attention(g, x, mask, lw, cfg, rng)?;
    let attn = g.dropout(&attn, cfg.dropout, rng)?;
    let x = g.layer_norm(&g.add(x, &attn)?, &lw.ln1_g, &lw.ln1_b, LN_EPS)?;

    let ff = g.add_row(&g.matmul(&x, &lw.ff1_w)?, &lw.ff1_b)?;
    let ff = g.gelu(&ff)?;
    let ff = g.add_row(&g.matmul(&ff, &lw.ff2_w)?, &lw.ff2_b)?;
    let ff = g.dropout(&ff, cfg.dropout, rng)?;
    g.layer_norm(&g.add(&x, &ff)?, &lw.ln2_g, &lw.ln2_b, LN_EPS)
}

/// Runs the block stack. Zero layers is the identity.
pub fn encoder_forward(
    g: &Graph,
    x: &Tensor,
    mask: &[bool],
    w: &EncoderWeights,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, TensorError> {
    if mask.len() != x.rows() || x.cols() != cfg.d {
        return Err(TensorError::ShapeMismatch {
            op: "encoder_forward",
            lhs: x.shape(),
            rhs: (mask.len(), cfg.d),
        });
    }
    let mut h = x.clone();
    for lw in &w.layers {
        h = encoder_block(g, &h, mask, lw, cfg, rng)?;
    }
    Ok(h)
}

/// Full pass from an encoded sequence to per-token representations.
pub fn encode(
    g: &Graph,
    input: &EncodedSequence,
    w: &EncoderWeights,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, EncoderError> {
    let x = embed(g, input, w, cfg, rng)?;
    Ok(encoder_forward(g, &x, &input.attention_mask, w, cfg, rng)?)
}
