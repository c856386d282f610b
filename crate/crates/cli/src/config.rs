//! Flat dotted-key run configuration.
//!
//! A config file is `key = value` lines with `#` comments. Unknown keys and
//! duplicates are rejected. Command-line flags override file values. The
//! resolved snapshot written after training round-trips: feeding it back
//! reproduces the identical run.
//!
//! `verbalizer.preset`, `model.head`, and `train.optimizer` apply before the
//! keys that refine them, whatever their position in the file, so piece-wise
//! overrides never depend on line order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use roofer_core::encoder::EncoderConfig;
use roofer_core::metrics::MetricKind;
use roofer_core::model::{FusionKind, HeadKind, ModelConfig};
use roofer_core::tokenize::SegScheme;
use roofer_core::train::{OptimizerKind, SchedulerKind, TrainConfig};
use roofer_core::verbalize::{ExpansionType, VerbalizerConfig};
use roofer_core::SelectionMode;

/// Everything a command needs: model and trainer settings, verbalizer,
/// vocabulary cap, metric choice, and the three paths.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// `vocab_size` stays 0 until a vocabulary is built or loaded.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub verbalizer: VerbalizerConfig,
    pub vocab_max: usize,
    /// None picks the head's natural metric at eval time.
    pub metric: Option<MetricKind>,
    pub data: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Desk-scale defaults. The full-scale reference values these shrink are
    /// listed in the README next to each key.
    pub fn desk_default() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                task_encoder: EncoderConfig {
                    d: 32,
                    n_heads: 4,
                    d_ff: 64,
                    n_layers: 2,
                    max_positions: 64,
                    vocab_size: 0,
                    n_segments: 2,
                    dropout: 0.1,
                },
                kb_encoder: EncoderConfig {
                    d: 32,
                    n_heads: 4,
                    d_ff: 64,
                    n_layers: 2,
                    max_positions: 32,
                    vocab_size: 0,
                    n_segments: 2,
                    dropout: 0.1,
                },
                task_len: 64,
                max_question: 16,
                kb_len: 32,
                fusion: FusionKind::TransformerEncoder,
                fusion_depth: 2,
                cached_kb: false,
                cached_triple_len: 16,
                cached_keep_specials: true,
                head: HeadKind::Qa,
                seg: SegScheme::Type1,
                expansion: ExpansionType::Exp1,
                selection: SelectionMode::NoTail,
                max_triples: 4,
            },
            train: TrainConfig {
                base_lr: 3e-4,
                fusion_lr_multiplier: 10.0,
                optimizer: OptimizerKind::adamw_default(),
                scheduler: SchedulerKind::LinearDecay,
                epochs: 3,
                batch_size: 8,
                seed: 42,
                grad_clip: None,
            },
            verbalizer: VerbalizerConfig::english(),
            vocab_max: 256,
            metric: None,
            data: None,
            kb: None,
            out: None,
        }
    }

    /// Applies a config file on top of `self`.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut pairs: Vec<(String, String, usize)> = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`, got {raw:?}", i + 1);
            };
            let key = key.trim().to_string();
            if !seen.insert(key.clone()) {
                bail!("config line {}: duplicate key {key}", i + 1);
            }
            pairs.push((key, value.trim().to_string(), i + 1));
        }
        pairs.sort_by_key(|(key, _, _)| key_priority(key));
        for (key, value, line) in &pairs {
            self.apply(key, value)
                .with_context(|| format!("config line {line}"))?;
        }
        Ok(())
    }

    /// Sets one dotted key. Shared by the file loader and the flag overlay.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "task_encoder.d" => m.task_encoder.d = p_usize(key, value)?,
            "task_encoder.n_heads" => m.task_encoder.n_heads = p_usize(key, value)?,
            "task_encoder.d_ff" => m.task_encoder.d_ff = p_usize(key, value)?,
            "task_encoder.n_layers" => m.task_encoder.n_layers = p_usize(key, value)?,
            "task_encoder.max_positions" => m.task_encoder.max_positions = p_usize(key, value)?,
            "task_encoder.n_segments" => m.task_encoder.n_segments = p_usize(key, value)?,
            "task_encoder.dropout" => m.task_encoder.dropout = p_f64(key, value)?,
            "kb_encoder.d" => m.kb_encoder.d = p_usize(key, value)?,
            "kb_encoder.n_heads" => m.kb_encoder.n_heads = p_usize(key, value)?,
            "kb_encoder.d_ff" => m.kb_encoder.d_ff = p_usize(key, value)?,
            "kb_encoder.n_layers" => m.kb_encoder.n_layers = p_usize(key, value)?,
            "kb_encoder.max_positions" => m.kb_encoder.max_positions = p_usize(key, value)?,
            "kb_encoder.n_segments" => m.kb_encoder.n_segments = p_usize(key, value)?,
            "kb_encoder.dropout" => m.kb_encoder.dropout = p_f64(key, value)?,
            "model.task_len" => m.task_len = p_usize(key, value)?,
            "model.max_question" => m.max_question = p_usize(key, value)?,
            "model.kb_len" => m.kb_len = p_usize(key, value)?,
            "model.fusion" => {
                m.fusion = FusionKind::by_name(value)
                    .ok_or_else(|| anyhow!("{key}: expected linear, recurrent, or te, got {value:?}"))?;
            }
            "model.fusion_depth" => m.fusion_depth = p_usize(key, value)?,
            "model.cached_kb" => m.cached_kb = p_bool(key, value)?,
            "model.cached_triple_len" => m.cached_triple_len = p_usize(key, value)?,
            "model.cached_keep_specials" => m.cached_keep_specials = p_bool(key, value)?,
            "model.head" => {
                m.head = match value {
                    "qa" => HeadKind::Qa,
                    "classification" => HeadKind::Classification { classes: 2 },
                    _ => bail!("{key}: expected qa or classification, got {value:?}"),
                };
            }
            "model.classes" => {
                let HeadKind::Classification { classes } = &mut m.head else {
                    bail!("{key} requires model.head = classification");
                };
                *classes = p_usize(key, value)?;
            }
            "model.seg" => {
                m.seg = match value {
                    "type1" => SegScheme::Type1,
                    "type2" => SegScheme::Type2,
                    _ => bail!("{key}: expected type1 or type2, got {value:?}"),
                };
            }
            "model.expansion" => m.expansion = parse_expansion(key, value)?,
            "model.selection" => m.selection = parse_selection(key, value)?,
            "model.max_triples" => m.max_triples = p_usize(key, value)?,
            "train.base_lr" => t.base_lr = p_f64(key, value)?,
            "train.fusion_lr_multiplier" => t.fusion_lr_multiplier = p_f64(key, value)?,
            "train.optimizer" => {
                t.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adamw" => OptimizerKind::adamw_default(),
                    _ => bail!("{key}: expected sgd or adamw, got {value:?}"),
                };
            }
            "train.adamw.beta1" => *adamw_field(t, key, AdamwField::Beta1)? = p_f64(key, value)?,
            "train.adamw.beta2" => *adamw_field(t, key, AdamwField::Beta2)? = p_f64(key, value)?,
            "train.adamw.eps" => *adamw_field(t, key, AdamwField::Eps)? = p_f64(key, value)?,
            "train.adamw.weight_decay" => {
                *adamw_field(t, key, AdamwField::WeightDecay)? = p_f64(key, value)?
            }
            "train.scheduler" => {
                t.scheduler = match value {
                    "linear_decay" => SchedulerKind::LinearDecay,
                    "cosine_decay" => SchedulerKind::CosineDecay,
                    _ => bail!("{key}: expected linear_decay or cosine_decay, got {value:?}"),
                };
            }
            "train.epochs" => t.epochs = p_usize(key, value)?,
            "train.batch_size" => t.batch_size = p_usize(key, value)?,
            "train.seed" => {
                t.seed = value
                    .parse()
                    .map_err(|_| anyhow!("{key}: expected an integer, got {value:?}"))?;
            }
            "train.grad_clip" => {
                t.grad_clip = if value == "none" {
                    None
                } else {
                    Some(p_f64(key, value)?)
                };
            }
            "verbalizer.preset" => {
                self.verbalizer = VerbalizerConfig::by_name(value)
                    .ok_or_else(|| anyhow!("{key}: expected english or chinese, got {value:?}"))?;
            }
            "verbalizer.connector_1" => self.verbalizer.connector_1 = value.to_string(),
            "verbalizer.connector_2" => self.verbalizer.connector_2 = value.to_string(),
            "verbalizer.pronoun" => self.verbalizer.pronoun = value.to_string(),
            "verbalizer.spaced" => self.verbalizer.spaced = p_bool(key, value)?,
            "vocab.max_size" => self.vocab_max = p_usize(key, value)?,
            "eval.metric" => self.metric = Some(parse_metric(key, value)?),
            "data.path" => self.data = Some(PathBuf::from(value)),
            "kb.path" => self.kb = Some(PathBuf::from(value)),
            "out.dir" => self.out = Some(PathBuf::from(value)),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Renders every key in canonical order. Floats print with `{}`, which
    /// round-trips f64 exactly, so a re-fed snapshot reproduces the run.
    pub fn render_resolved(&self) -> String {
        let m = &self.model;
        let te = &m.task_encoder;
        let ke = &m.kb_encoder;
        let t = &self.train;
        let v = &self.verbalizer;
        let mut s = String::from("# resolved run configuration\n");
        let mut kv = |k: &str, val: String| writeln!(s, "{k} = {val}").expect("write to string");
        kv("task_encoder.d", te.d.to_string());
        kv("task_encoder.n_heads", te.n_heads.to_string());
        kv("task_encoder.d_ff", te.d_ff.to_string());
        kv("task_encoder.n_layers", te.n_layers.to_string());
        kv("task_encoder.max_positions", te.max_positions.to_string());
        kv("task_encoder.n_segments", te.n_segments.to_string());
        kv("task_encoder.dropout", te.dropout.to_string());
        kv("kb_encoder.d", ke.d.to_string());
        kv("kb_encoder.n_heads", ke.n_heads.to_string());
        kv("kb_encoder.d_ff", ke.d_ff.to_string());
        kv("kb_encoder.n_layers", ke.n_layers.to_string());
        kv("kb_encoder.max_positions", ke.max_positions.to_string());
        kv("kb_encoder.n_segments", ke.n_segments.to_string());
        kv("kb_encoder.dropout", ke.dropout.to_string());
        kv("model.task_len", m.task_len.to_string());
        kv("model.max_question", m.max_question.to_string());
        kv("model.kb_len", m.kb_len.to_string());
        kv("model.fusion", short_fusion_name(m.fusion).to_string());
        kv("model.fusion_depth", m.fusion_depth.to_string());
        kv("model.cached_kb", m.cached_kb.to_string());
        kv("model.cached_triple_len", m.cached_triple_len.to_string());
        kv("model.cached_keep_specials", m.cached_keep_specials.to_string());
        match &m.head {
            HeadKind::Qa => kv("model.head", "qa".to_string()),
            HeadKind::Classification { classes } => {
                kv("model.head", "classification".to_string());
                kv("model.classes", classes.to_string());
            }
        }
        kv("model.seg", m.seg.name().to_string());
        kv("model.expansion", m.expansion.name().to_string());
        kv("model.selection", selection_name(m.selection).to_string());
        kv("model.max_triples", m.max_triples.to_string());
        kv("train.base_lr", t.base_lr.to_string());
        kv("train.fusion_lr_multiplier", t.fusion_lr_multiplier.to_string());
        match &t.optimizer {
            OptimizerKind::Sgd => kv("train.optimizer", "sgd".to_string()),
            OptimizerKind::AdamW { beta1, beta2, eps, weight_decay } => {
                kv("train.optimizer", "adamw".to_string());
                kv("train.adamw.beta1", beta1.to_string());
                kv("train.adamw.beta2", beta2.to_string());
                kv("train.adamw.eps", eps.to_string());
                kv("train.adamw.weight_decay", weight_decay.to_string());
            }
        }
        let sched = match &t.scheduler {
            SchedulerKind::LinearDecay => "linear_decay",
            SchedulerKind::CosineDecay => "cosine_decay",
        };
        kv("train.scheduler", sched.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.seed", t.seed.to_string());
        let clip = match t.grad_clip {
            None => "none".to_string(),
            Some(c) => c.to_string(),
        };
        kv("train.grad_clip", clip);
        kv("verbalizer.preset", v.preset.clone());
        kv("verbalizer.connector_1", v.connector_1.clone());
        kv("verbalizer.connector_2", v.connector_2.clone());
        kv("verbalizer.pronoun", v.pronoun.clone());
        kv("verbalizer.spaced", v.spaced.to_string());
        kv("vocab.max_size", self.vocab_max.to_string());
        if let Some(metric) = self.metric {
            kv("eval.metric", metric.name().to_string());
        }
        if let Some(p) = &self.data {
            kv("data.path", p.display().to_string());
        }
        if let Some(p) = &self.kb {
            kv("kb.path", p.display().to_string());
        }
        if let Some(p) = &self.out {
            kv("out.dir", p.display().to_string());
        }
        s
    }
}

/// Keys that other keys refine must apply first.
fn key_priority(key: &str) -> u8 {
    match key {
        "verbalizer.preset" | "model.head" | "train.optimizer" => 0,
        _ => 1,
    }
}

enum AdamwField {
    Beta1,
    Beta2,
    Eps,
    WeightDecay,
}

fn adamw_field<'a>(
    t: &'a mut TrainConfig,
    key: &str,
    field: AdamwField,
) -> Result<&'a mut f64> {
    let OptimizerKind::AdamW { beta1, beta2, eps, weight_decay } = &mut t.optimizer else {
        bail!("{key} requires train.optimizer = adamw");
    };
    Ok(match field {
        AdamwField::Beta1 => beta1,
        AdamwField::Beta2 => beta2,
        AdamwField::Eps => eps,
        AdamwField::WeightDecay => weight_decay,
    })
}

fn p_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| anyhow!("{key}: expected an integer, got {value:?}"))
}

fn p_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| anyhow!("{key}: expected a number, got {value:?}"))
}

fn p_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

pub fn parse_expansion(key: &str, value: &str) -> Result<ExpansionType> {
    match value {
        "exp0" => Ok(ExpansionType::Exp0),
        "exp1" => Ok(ExpansionType::Exp1),
        "exp2" => Ok(ExpansionType::Exp2),
        _ => bail!("{key}: expected exp0, exp1, or exp2, got {value:?}"),
    }
}

pub fn parse_selection(key: &str, value: &str) -> Result<SelectionMode> {
    match value {
        "no_tail" => Ok(SelectionMode::NoTail),
        "has_tail" => Ok(SelectionMode::HasTail),
        _ => bail!("{key}: expected no_tail or has_tail, got {value:?}"),
    }
}

pub fn selection_name(mode: SelectionMode) -> &'static str {
    match mode {
        SelectionMode::NoTail => "no_tail",
        SelectionMode::HasTail => "has_tail",
    }
}

/// The flag-facing spelling: `te` rather than `transformer_encoder`.
fn short_fusion_name(fusion: FusionKind) -> &'static str {
    match fusion {
        FusionKind::Linear => "linear",
        FusionKind::Recurrent => "recurrent",
        FusionKind::TransformerEncoder => "te",
    }
}

fn parse_metric(key: &str, value: &str) -> Result<MetricKind> {
    match value {
        "exact_match" => Ok(MetricKind::ExactMatch),
        "accuracy" => Ok(MetricKind::Accuracy),
        "f1" => Ok(MetricKind::F1Binary),
        "matthews" => Ok(MetricKind::Matthews),
        "pearson_spearman" => Ok(MetricKind::PearsonSpearman),
        _ => bail!(
            "{key}: expected exact_match, accuracy, f1, matthews, or pearson_spearman, got {value:?}"
        ),
    }
}
