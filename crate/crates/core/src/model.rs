//! The full model: task encoder and knowledge encoder feeding a fusion layer
//! over the concatenated sequences, topped by a span head or a classification
//! head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::{
    encode, encoder_block, normal_param, zeros_param, EncoderConfig, EncoderError, EncoderWeights,
    LayerWeights,
};
use crate::kb::SelectionMode;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::tokenize::{build_triple_input, EncodedSequence, SegScheme, Vocabulary};
use crate::verbalize::{ExpansionType, KnowledgeUnit};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("fusion depth {k} exceeds donor layer count {donor}")]
    DepthTooLarge { k: usize, donor: usize },
    #[error("dimension mismatch: donor width {donor} vs fusion width {expected}")]
    DimMismatch { donor: usize, expected: usize },
    #[error("{which} input length {got} does not match configured length {want}")]
    BadLength {
        which: &'static str,
        got: usize,
        want: usize,
    },
    #[error("knowledge source does not match cached_kb = {cached}")]
    ModeMismatch { cached: bool },
    #[error("span window [{lo}, {hi}] is empty or out of range for {len} positions")]
    EmptyWindow { lo: usize, hi: usize, len: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The fusion layer candidate applied over the concatenated sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Linear,
    Recurrent,
    TransformerEncoder,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Linear => "linear",
            FusionKind::Recurrent => "recurrent",
            FusionKind::TransformerEncoder => "transformer_encoder",
        }
    }

    pub fn by_name(name: &str) -> Option<FusionKind> {
        match name {
            "linear" => Some(FusionKind::Linear),
            "recurrent" => Some(FusionKind::Recurrent),
            "transformer_encoder" | "te" => Some(FusionKind::TransformerEncoder),
            _ => None,
        }
    }
}

/// Output head: span extraction or sequence classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Qa,
    Classification { classes: usize },
}

impl HeadKind {
    /// Width of the classification head; 2 when unused so shapes stay
    /// config-determined.
    pub fn classes(&self) -> usize {
        match self {
            HeadKind::Qa => 2,
            HeadKind::Classification { classes } => *classes,
        }
    }
}

/// Parameter group labels used for learning-rate assignment, freezing, and
/// checkpoint bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Task,
    Kb,
    Fusion,
    Head,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Task => "task",
            Group::Kb => "kb",
            Group::Fusion => "fusion",
            Group::Head => "head",
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Group::Task => 0,
            Group::Kb => 1,
            Group::Fusion => 2,
            Group::Head => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Group> {
        match b {
            0 => Some(Group::Task),
            1 => Some(Group::Kb),
            2 => Some(Group::Fusion),
            3 => Some(Group::Head),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task_encoder: EncoderConfig,
    pub kb_encoder: EncoderConfig,
    /// Task sequence length M.
    pub task_len: usize,
    /// Token budget for the question region of the task sequence.
    pub max_question: usize,
    /// Knowledge sequence length N.
    pub kb_len: usize,
    pub fusion: FusionKind,
    /// Fusion stack depth k.
    pub fusion_depth: usize,
    /// Freeze the knowledge encoder and feed precomputed unit embeddings.
    pub cached_kb: bool,
    /// Per-unit sequence length in cached mode.
    pub cached_triple_len: usize,
    /// Keep the per-unit [CLS]/[SEP] rows in the cached concatenation.
    pub cached_keep_specials: bool,
    pub head: HeadKind,
    pub seg: SegScheme,
    pub expansion: ExpansionType,
    pub selection: SelectionMode,
    /// Cap on selected knowledge records per example.
    pub max_triples: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.task_encoder.validate()?;
        self.kb_encoder.validate()?;
        if self.task_encoder.d != self.kb_encoder.d {
            return Err(ModelError::BadConfig(format!(
                "encoders disagree on hidden size: {} vs {}",
                self.task_encoder.d, self.kb_encoder.d
            )));
        }
        if self.task_len < self.max_question + 3 {
            return Err(ModelError::BadConfig(format!(
                "task_len {} cannot fit max_question {} plus specials",
                self.task_len, self.max_question
            )));
        }
        if self.kb_len == 0 {
            return Err(ModelError::BadConfig("kb_len must be positive".into()));
        }
        if self.task_encoder.max_positions < self.task_len {
            return Err(ModelError::BadConfig(format!(
                "task encoder covers {} positions, task_len is {}",
                self.task_encoder.max_positions, self.task_len
            )));
        }
        let kb_need = if self.cached_kb {
            self.cached_triple_len
        } else {
            self.kb_len
        };
        if self.kb_encoder.max_positions < kb_need {
            return Err(ModelError::BadConfig(format!(
                "kb encoder covers {} positions, needs {kb_need}",
                self.kb_encoder.max_positions
            )));
        }
        if self.fusion_depth == 0 {
            return Err(ModelError::BadConfig("fusion_depth must be at least 1".into()));
        }
        if self.cached_triple_len < 3 {
            return Err(ModelError::BadConfig(
                "cached_triple_len must fit [CLS] token [SEP]".into(),
            ));
        }
        if let HeadKind::Classification { classes } = self.head {
            if classes < 2 {
                return Err(ModelError::BadConfig(format!(
                    "classification needs at least 2 classes, got {classes}"
                )));
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.task_encoder.d
    }

    /// Fused sequence length M + N.
    pub fn fused_len(&self) -> usize {
        self.task_len + self.kb_len
    }

    /// Block hyperparameters for transformer-encoder fusion: same width,
    /// head count, and dropout as the task encoder, no fresh position table.
    pub fn fusion_block_cfg(&self) -> EncoderConfig {
        EncoderConfig {
            d: self.task_encoder.d,
            n_heads: self.task_encoder.n_heads,
            d_ff: self.task_encoder.d_ff,
            n_layers: self.fusion_depth,
            max_positions: self.fused_len(),
            vocab_size: 4,
            n_segments: 2,
            dropout: self.task_encoder.dropout,
        }
    }

    /// SHA-256 over the canonical serialized config. Checkpoints embed this
    /// so weights never load under a different architecture.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hasher.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One recurrent fusion layer: gate projections plus a learned initial
/// state.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
    pub h0: Tensor,
    pub c0: Tensor,
}

impl LstmLayer {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> LstmLayer {
        LstmLayer {
            wx: normal_param(d, 4 * d, rng),
            wh: normal_param(d, 4 * d, rng),
            b: zeros_param(1, 4 * d),
            h0: zeros_param(1, d),
            c0: zeros_param(1, d),
        }
    }

    fn deep_copy(&self) -> LstmLayer {
        LstmLayer {
            wx: self.wx.deep_copy(),
            wh: self.wh.deep_copy(),
            b: self.b.deep_copy(),
            h0: self.h0.deep_copy(),
            c0: self.c0.deep_copy(),
        }
    }
}

/// Fusion layer parameters for the configured kind.
#[derive(Debug, Clone)]
pub enum FusionWeights {
    Linear {
        w: Tensor,
        b: Tensor,
    },
    Recurrent {
        layers: Vec<LstmLayer>,
        proj_w: Tensor,
        proj_b: Tensor,
    },
    Te {
        layers: Vec<LayerWeights>,
    },
}

impl FusionWeights {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> FusionWeights {
        let d = cfg.d();
        match cfg.fusion {
            FusionKind::Linear => FusionWeights::Linear {
                w: normal_param(d, d, rng),
                b: zeros_param(1, d),
            },
            FusionKind::Recurrent => FusionWeights::Recurrent {
                layers: (0..cfg.fusion_depth).map(|_| LstmLayer::init(d, rng)).collect(),
                proj_w: normal_param(d, d, rng),
                proj_b: zeros_param(1, d),
            },
            FusionKind::TransformerEncoder => {
                let block_cfg = cfg.fusion_block_cfg();
                FusionWeights::Te {
                    layers: (0..cfg.fusion_depth)
                        .map(|_| LayerWeights::init(&block_cfg, rng))
                        .collect(),
                }
            }
        }
    }

    pub fn deep_copy(&self) -> FusionWeights {
        match self {
            FusionWeights::Linear { w, b } => FusionWeights::Linear {
                w: w.deep_copy(),
                b: b.deep_copy(),
            },
            FusionWeights::Recurrent { layers, proj_w, proj_b } => FusionWeights::Recurrent {
                layers: layers.iter().map(LstmLayer::deep_copy).collect(),
                proj_w: proj_w.deep_copy(),
                proj_b: proj_b.deep_copy(),
            },
            FusionWeights::Te { layers } => FusionWeights::Te {
                layers: layers.iter().map(LayerWeights::deep_copy).collect(),
            },
        }
    }

    fn named(&self, out: &mut Vec<(String, Group, Tensor)>) {
        match self {
            FusionWeights::Linear { w, b } => {
                out.push(("fusion.linear.w".into(), Group::Fusion, w.clone()));
                out.push(("fusion.linear.b".into(), Group::Fusion, b.clone()));
            }
            FusionWeights::Recurrent { layers, proj_w, proj_b } => {
                for (i, l) in layers.iter().enumerate() {
                    let base = format!("fusion.recurrent.layer.{i}");
                    out.push((format!("{base}.wx"), Group::Fusion, l.wx.clone()));
                    out.push((format!("{base}.wh"), Group::Fusion, l.wh.clone()));
                    out.push((format!("{base}.b"), Group::Fusion, l.b.clone()));
                    out.push((format!("{base}.h0"), Group::Fusion, l.h0.clone()));
                    out.push((format!("{base}.c0"), Group::Fusion, l.c0.clone()));
                }
                out.push(("fusion.recurrent.proj.w".into(), Group::Fusion, proj_w.clone()));
                out.push(("fusion.recurrent.proj.b".into(), Group::Fusion, proj_b.clone()));
            }
            FusionWeights::Te { layers } => {
                let mut named = Vec::new();
                for (i, l) in layers.iter().enumerate() {
                    l.named(&format!("fusion.te.layer.{i}"), &mut named);
                }
                out.extend(named.into_iter().map(|(n, t)| (n, Group::Fusion, t)));
            }
        }
    }
}

/// Every model parameter, grouped. Both heads are always present so the
/// tensor manifest is a pure function of the config.
#[derive(Debug, Clone)]
pub struct RoofWeights {
    pub task: EncoderWeights,
    pub kb: EncoderWeights,
    pub fusion: FusionWeights,
    pub qa_w: Tensor,
    pub qa_b: Tensor,
    pub cls_w: Tensor,
    pub cls_b: Tensor,
}

impl RoofWeights {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> RoofWeights {
        let d = cfg.d();
        RoofWeights {
            task: EncoderWeights::init(&cfg.task_encoder, rng),
            kb: EncoderWeights::init(&cfg.kb_encoder, rng),
            fusion: FusionWeights::init(cfg, rng),
            qa_w: normal_param(d, 2, rng),
            qa_b: zeros_param(1, 2),
            cls_w: normal_param(d, cfg.head.classes(), rng),
            cls_b: zeros_param(1, cfg.head.classes()),
        }
    }

    /// Every tensor with its stable name and group, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Group, Tensor)> {
        let mut out: Vec<(String, Group, Tensor)> = Vec::new();
        out.extend(
            self.task
                .named_tensors("task")
                .into_iter()
                .map(|(n, t)| (n, Group::Task, t)),
        );
        out.extend(
            self.kb
                .named_tensors("kb")
                .into_iter()
                .map(|(n, t)| (n, Group::Kb, t)),
        );
        self.fusion.named(&mut out);
        out.push(("head.qa.w".into(), Group::Head, self.qa_w.clone()));
        out.push(("head.qa.b".into(), Group::Head, self.qa_b.clone()));
        out.push(("head.cls.w".into(), Group::Head, self.cls_w.clone()));
        out.push(("head.cls.b".into(), Group::Head, self.cls_b.clone()));
        out
    }

    pub fn deep_copy(&self) -> RoofWeights {
        RoofWeights {
            task: self.task.deep_copy(),
            kb: self.kb.deep_copy(),
            fusion: self.fusion.deep_copy(),
            qa_w: self.qa_w.deep_copy(),
            qa_b: self.qa_b.deep_copy(),
            cls_w: self.cls_w.deep_copy(),
            cls_b: self.cls_b.deep_copy(),
        }
    }
}

/// Precomputed knowledge rows for cached mode: unit embeddings concatenated
/// to the knowledge length, zero-filled and masked out past the content.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedKb {
    pub rows: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub mask: Vec<bool>,
}

/// Knowledge input for one forward pass.
pub enum KbSource<'a> {
    /// Assembled knowledge sequence, encoded with gradients.
    Online(&'a EncodedSequence),
    /// Frozen precomputed rows.
    Cached(&'a CachedKb),
}

/// One forward pass: fused representations, the combined mask, and the head
/// logits (per-position start/end pairs, or one class row).
pub struct Forward {
    pub fused: Tensor,
    pub mask: Vec<bool>,
    pub logits: Tensor,
}

pub struct RoofModel {
    pub cfg: ModelConfig,
    pub weights: RoofWeights,
}

impl RoofModel {
    /// Validates the config and draws fresh weights from `seed`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<RoofModel, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = RoofWeights::init(&cfg, &mut rng);
        if cfg.cached_kb {
            weights.kb.set_requires_grad(false);
        }
        Ok(RoofModel { cfg, weights })
    }

    /// Full pass from encoded inputs to head logits.
    pub fn forward(
        &self,
        g: &Graph,
        task_input: &EncodedSequence,
        kb: KbSource,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward, ModelError> {
        if task_input.len() != self.cfg.task_len {
            return Err(ModelError::BadLength {
                which: "task",
                got: task_input.len(),
                want: self.cfg.task_len,
            });
        }
        let task_emb = encode(g, task_input, &self.weights.task, &self.cfg.task_encoder, rng)?;

        let (kb_emb, kb_mask) = match kb {
            KbSource::Online(seq) => {
                if self.cfg.cached_kb {
                    return Err(ModelError::ModeMismatch { cached: true });
                }
                if seq.len() != self.cfg.kb_len {
                    return Err(ModelError::BadLength {
                        which: "knowledge",
                        got: seq.len(),
                        want: self.cfg.kb_len,
                    });
                }
                let emb = encode(g, seq, &self.weights.kb, &self.cfg.kb_encoder, rng)?;
                (emb, seq.attention_mask.clone())
            }
            KbSource::Cached(c) => {
                if !self.cfg.cached_kb {
                    return Err(ModelError::ModeMismatch { cached: false });
                }
                if c.n != self.cfg.kb_len || c.d != self.cfg.d() {
                    return Err(ModelError::BadLength {
                        which: "knowledge",
                        got: c.n,
                        want: self.cfg.kb_len,
                    });
                }
                (Tensor::from_vec(c.n, c.d, c.rows.clone())?, c.mask.clone())
            }
        };

        let mut mask = task_input.attention_mask.clone();
        mask.extend_from_slice(&kb_mask);
        let fused = self.fuse(g, &task_emb, &kb_emb, &mask, rng)?;
        let logits = match self.cfg.head {
            HeadKind::Qa => self.qa_head(g, &fused)?,
            HeadKind::Classification { .. } => self.cls_head(g, &fused, &mask)?,
        };
        Ok(Forward { fused, mask, logits })
    }

    /// Concatenates the two sequences and applies the fusion candidate.
    pub fn fuse(
        &self,
        g: &Graph,
        task_emb: &Tensor,
        kb_emb: &Tensor,
        mask: &[bool],
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor, ModelError> {
        let cat = g.concat_rows(&[task_emb, kb_emb])?;
        if mask.len() != cat.rows() {
            return Err(ModelError::BadLength {
                which: "fusion mask",
                got: mask.len(),
                want: cat.rows(),
            });
        }
        match &self.weights.fusion {
            FusionWeights::Linear { w, b } => Ok(g.add_row(&g.matmul(&cat, w)?, b)?),
            FusionWeights::Recurrent { layers, proj_w, proj_b } => {
                let mut h = cat;
                for layer in layers {
                    h = lstm_over_sequence(g, &h, mask, layer, self.cfg.d())?;
                }
                Ok(g.add_row(&g.matmul(&h, proj_w)?, proj_b)?)
            }
            FusionWeights::Te { layers } => {
                let block_cfg = self.cfg.fusion_block_cfg();
                let mut h = cat;
                for lw in layers {
                    h = encoder_block(g, &h, mask, lw, &block_cfg, rng)?;
                }
                Ok(h)
            }
        }
    }

    /// Per-position start/end logits, shape (M+N) x 2.
    pub fn qa_head(&self, g: &Graph, fused: &Tensor) -> Result<Tensor, ModelError> {
        Ok(g.add_row(&g.matmul(fused, &self.weights.qa_w)?, &self.weights.qa_b)?)
    }

    /// Class logits from the mean of unmasked fused rows, shape 1 x e.
    pub fn cls_head(&self, g: &Graph, fused: &Tensor, mask: &[bool]) -> Result<Tensor, ModelError> {
        let pooled = g.mean_rows_masked(fused, mask)?;
        Ok(g.add_row(&g.matmul(&pooled, &self.weights.cls_w)?, &self.weights.cls_b)?)
    }

    /// Encodes each unit separately under the frozen knowledge encoder and
    /// concatenates the resulting rows, truncated to the knowledge length.
    /// Runs off-graph: no gradient ever reaches the encoder.
    pub fn encode_cached_units(
        &self,
        units: &[KnowledgeUnit],
        vocab: &Vocabulary,
    ) -> Result<CachedKb, ModelError> {
        let n = self.cfg.kb_len;
        let d = self.cfg.d();
        let mut rows = vec![0.0; n * d];
        let mut mask = vec![false; n];
        let mut filled = 0usize;
        let g = Graph::eval();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for unit in units {
            if filled >= n {
                break;
            }
            let seq = build_triple_input(unit, vocab, self.cfg.cached_triple_len);
            let out = encode(&g, &seq, &self.weights.kb, &self.cfg.kb_encoder, &mut rng)?;
            let data = out.data();
            let (lo, hi) = if self.cfg.cached_keep_specials {
                (0, seq.true_length)
            } else {
                (1, seq.true_length - 1)
            };
            for r in lo..hi {
                if filled >= n {
                    break;
                }
                rows[filled * d..(filled + 1) * d].copy_from_slice(&data[r * d..(r + 1) * d]);
                mask[filled] = true;
                filled += 1;
            }
        }
        Ok(CachedKb { rows, n, d, mask })
    }

    /// Replaces transformer-encoder fusion blocks with deep copies of the
    /// task encoder's last k layers.
    pub fn init_fusion_from_task_encoder(&mut self) -> Result<(), ModelError> {
        if self.cfg.fusion != FusionKind::TransformerEncoder {
            return Err(ModelError::BadConfig(
                "fusion initialization from an encoder needs transformer_encoder fusion".into(),
            ));
        }
        self.weights.fusion =
            fusion_from_encoder(&self.weights.task, self.cfg.fusion_depth, self.cfg.d())?;
        Ok(())
    }
}

/// Copies the donor's last `k` layers, in order, as fusion blocks.
pub fn fusion_from_encoder(
    donor: &EncoderWeights,
    k: usize,
    expect_d: usize,
) -> Result<FusionWeights, ModelError> {
    if donor.layers.len() < k {
        return Err(ModelError::DepthTooLarge {
            k,
            donor: donor.layers.len(),
        });
    }
    let donor_d = donor.layers[donor.layers.len() - k].q_w.rows();
    if donor_d != expect_d {
        return Err(ModelError::DimMismatch {
            donor: donor_d,
            expected: expect_d,
        });
    }
    let start = donor.layers.len() - k;
    Ok(FusionWeights::Te {
        layers: donor.layers[start..].iter().map(LayerWeights::deep_copy).collect(),
    })
}

/// Runs one recurrent layer along the sequence, skipping masked positions:
/// the state carries over them and their output rows are zero, so padding
/// content never enters the recurrence.
fn lstm_over_sequence(
    g: &Graph,
    x: &Tensor,
    mask: &[bool],
    layer: &LstmLayer,
    d: usize,
) -> Result<Tensor, TensorError> {
    let mut h = layer.h0.clone();
    let mut c = layer.c0.clone();
    let zero_row = Tensor::zeros(1, d);
    let mut rows: Vec<Tensor> = Vec::with_capacity(x.rows());
    for t in 0..x.rows() {
        if !mask[t] {
            rows.push(zero_row.clone());
            continue;
        }
        let xt = g.slice_rows(x, t, 1)?;
        let gates = g.add(
            &g.add(&g.matmul(&xt, &layer.wx)?, &g.matmul(&h, &layer.wh)?)?,
            &layer.b,
        )?;
        let i = g.sigmoid(&g.slice_cols(&gates, 0, d)?)?;
        let f = g.sigmoid(&g.slice_cols(&gates, d, d)?)?;
        let cand = g.tanh(&g.slice_cols(&gates, 2 * d, d)?)?;
        let o = g.sigmoid(&g.slice_cols(&gates, 3 * d, d)?)?;
        c = g.add(&g.mul(&f, &c)?, &g.mul(&i, &cand)?)?;
        h = g.mul(&o, &g.tanh(&c)?)?;
        rows.push(h.clone());
    }
    let refs: Vec<&Tensor> = rows.iter().collect();
    g.concat_rows(&refs)
}

/// Picks the best answer span inside `[p_lo, p_hi]`: maximize start + end
/// logit with start <= end, ties resolved to the smallest start, then the
/// smallest end. Single left-to-right scan.
pub fn predict_span(
    logits: &Tensor,
    p_lo: usize,
    p_hi: usize,
) -> Result<(usize, usize), ModelError> {
    let (rows, cols) = logits.shape();
    if cols != 2 {
        return Err(ModelError::BadLength {
            which: "span logits",
            got: cols,
            want: 2,
        });
    }
    if p_lo > p_hi || p_hi >= rows {
        return Err(ModelError::EmptyWindow {
            lo: p_lo,
            hi: p_hi,
            len: rows,
        });
    }
    let data = logits.data();
    let start = |i: usize| data[i * 2];
    let end = |i: usize| data[i * 2 + 1];

    let mut best_start = p_lo;
    let mut best_sum = f64::NEG_INFINITY;
    let mut answer = (p_lo, p_lo);
    for j in p_lo..=p_hi {
        if start(j) > start(best_start) {
            best_start = j;
        }
        let sum = start(best_start) + end(j);
        if sum > best_sum {
            best_sum = sum;
            answer = (best_start, j);
        }
    }
    Ok(answer)
}

/// Span loss: mean of the start and end cross-entropies, each a softmax over
/// all M + N positions.
pub fn qa_loss(
    g: &Graph,
    logits: &Tensor,
    start_target: usize,
    end_target: usize,
) -> Result<Tensor, TensorError> {
    let start_row = g.transpose(&g.slice_cols(logits, 0, 1)?)?;
    let end_row = g.transpose(&g.slice_cols(logits, 1, 1)?)?;
    let ce_start = g.cross_entropy_from_logits(&start_row, &[start_target], usize::MAX)?;
    let ce_end = g.cross_entropy_from_logits(&end_row, &[end_target], usize::MAX)?;
    g.scale(&g.add(&ce_start, &ce_end)?, 0.5)
}

/// Classification loss: cross-entropy of the single class row.
pub fn cls_loss(g: &Graph, logits: &Tensor, label: usize) -> Result<Tensor, TensorError> {
    g.cross_entropy_from_logits(logits, &[label], usize::MAX)
}
