//! Desk-scale knowledge-fused transformer.
//!
//! Two small BERT-style encoders read a task sequence and a verbalized
//! knowledge-base sequence. Their outputs are concatenated and passed through
//! a fusion layer (the "roof"), which feeds a span-extraction head or a
//! sequence classification head. Everything runs on a minimal f64
//! reverse-mode autodiff engine in [`tensor`], so the whole model is
//! gradient-checkable end to end.
//!
//! Module map:
//! - [`kb`]: TSV triple store and string-match triple selection
//! - [`verbalize`]: triple-to-text expansion (Exp0/Exp1/Exp2) and assembly
//! - [`tokenize`]: whitespace vocabulary and fixed-length sequence building
//! - [`tensor`]: tensors, the op graph, backward, gradient checking
//! - [`encoder`]: embeddings plus post-LN transformer encoder blocks
//! - [`model`]: the two-encoder model, fusion variants, heads, span decode
//! - [`data`] / [`pipeline`]: dataset records and example preparation
//! - [`train`]: parameter groups, optimizers, LR schedules, training loop
//! - [`checkpoint`]: binary weight serialization with config hash
//! - [`metrics`]: evaluation metrics
//! - [`synth`]: deterministic toy corpora for demos and tests

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod kb;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod tokenize;
pub mod train;
pub mod verbalize;

pub use kb::{KnowledgeBase, SelectionMode, Triple};
pub use model::{FusionKind, HeadKind, ModelConfig, RoofModel};
pub use tensor::{Graph, Mode, Tensor};
pub use tokenize::{SegScheme, Vocabulary};
pub use train::TrainConfig;
pub use verbalize::{ExpansionType, VerbalizerConfig};
