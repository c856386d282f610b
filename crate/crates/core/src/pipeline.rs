//! Glue between raw records and model-ready examples: knowledge selection
//! and verbalization per example, sequence building, and gold-target
//! placement inside the task sequence.

use thiserror::Error;

use crate::data::{ClsInput, ClsRecord, QaInput, QaRecord};
use crate::kb::{select_triples, KnowledgeBase};
use crate::model::{CachedKb, HeadKind, KbSource, ModelError, RoofModel};
use crate::tokenize::{build_kb_input, build_task_input, token_count, EncodedSequence, Vocabulary};
use crate::verbalize::{assemble_knowledge, expand, KnowledgeUnit, VerbalizerConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("record {id}: label {label} outside {classes} classes")]
    BadLabel {
        id: String,
        label: usize,
        classes: usize,
    },
    #[error("model head does not accept {0} records")]
    HeadMismatch(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Knowledge input owned by an example.
#[derive(Debug, Clone)]
pub enum KbData {
    Online(EncodedSequence),
    Cached(CachedKb),
}

impl KbData {
    pub fn source(&self) -> KbSource<'_> {
        match self {
            KbData::Online(seq) => KbSource::Online(seq),
            KbData::Cached(c) => KbSource::Cached(c),
        }
    }
}

/// Training or inference target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Gold answer span in task-sequence coordinates, inclusive.
    Span { start: usize, end: usize },
    Class(usize),
    /// Unlabeled input.
    None,
}

/// One model-ready example.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub task: EncodedSequence,
    pub kb: KbData,
    pub target: Target,
    /// Task-sequence positions holding paragraph tokens, inclusive; None
    /// when the paragraph is empty after truncation.
    pub window: Option<(usize, usize)>,
    /// The paragraph tokens that survived truncation, for mapping predicted
    /// spans back to text.
    pub paragraph_tokens: Vec<String>,
}

/// Counters for examples the preparation step had to drop or clip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineStats {
    /// Labeled QA examples whose gold span fell beyond the truncated
    /// paragraph; they are dropped, not mislabeled.
    pub dropped_truncated_answers: usize,
}

/// Selects and verbalizes the knowledge units for one paragraph of text.
pub fn knowledge_for_text(
    model: &RoofModel,
    kb: &KnowledgeBase,
    text: &str,
    verbalizer: &VerbalizerConfig,
) -> Vec<KnowledgeUnit> {
    let triples = select_triples(kb, text, model.cfg.selection, model.cfg.max_triples);
    expand(&triples, model.cfg.expansion, verbalizer)
}

fn kb_data_for_text(
    model: &RoofModel,
    kb: &KnowledgeBase,
    text: &str,
    vocab: &Vocabulary,
    verbalizer: &VerbalizerConfig,
) -> Result<KbData, ModelError> {
    let units = knowledge_for_text(model, kb, text, verbalizer);
    if model.cfg.cached_kb {
        Ok(KbData::Cached(model.encode_cached_units(&units, vocab)?))
    } else {
        let passage = assemble_knowledge(&units);
        Ok(KbData::Online(build_kb_input(
            &passage,
            vocab,
            model.cfg.seg,
            model.cfg.kb_len,
        )))
    }
}

fn build_example(
    model: &RoofModel,
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    verbalizer: &VerbalizerConfig,
    id: &str,
    question: &str,
    paragraph: &str,
    selection_text: &str,
    target: Target,
) -> Result<Example, ModelError> {
    let cfg = &model.cfg;
    let task = build_task_input(question, paragraph, vocab, cfg.seg, cfg.max_question, cfg.task_len);

    let q_len = token_count(question).min(cfg.max_question);
    let max_para = cfg.task_len - cfg.max_question - 3;
    let para_tokens: Vec<String> = paragraph
        .split_whitespace()
        .take(max_para)
        .map(str::to_string)
        .collect();
    let p_lo = q_len + 2;
    let window = if para_tokens.is_empty() {
        None
    } else {
        Some((p_lo, p_lo + para_tokens.len() - 1))
    };

    Ok(Example {
        id: id.to_string(),
        task,
        kb: kb_data_for_text(model, kb, selection_text, vocab, verbalizer)?,
        target,
        window,
        paragraph_tokens: para_tokens,
    })
}

/// Prepares labeled QA examples. Gold spans shift into task-sequence
/// coordinates (past [CLS], the question, and its [SEP]); examples whose
/// answer was truncated away are counted and dropped.
pub fn prepare_qa_examples(
    model: &RoofModel,
    records: &[QaRecord],
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    verbalizer: &VerbalizerConfig,
) -> Result<(Vec<Example>, PipelineStats), PipelineError> {
    if model.cfg.head != HeadKind::Qa {
        return Err(PipelineError::HeadMismatch("span"));
    }
    let mut out = Vec::with_capacity(records.len());
    let mut stats = PipelineStats::default();
    for r in records {
        let q_len = token_count(&r.question).min(model.cfg.max_question);
        let max_para = model.cfg.task_len - model.cfg.max_question - 3;
        let kept = token_count(&r.paragraph).min(max_para);
        if r.answer_end_token >= kept {
            stats.dropped_truncated_answers += 1;
            continue;
        }
        let offset = q_len + 2;
        let target = Target::Span {
            start: offset + r.answer_start_token,
            end: offset + r.answer_end_token,
        };
        out.push(build_example(
            model,
            kb,
            vocab,
            verbalizer,
            &r.id,
            &r.question,
            &r.paragraph,
            &r.paragraph,
            target,
        )?);
    }
    Ok((out, stats))
}

/// Prepares unlabeled QA inputs for prediction.
pub fn prepare_qa_inputs(
    model: &RoofModel,
    inputs: &[QaInput],
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    verbalizer: &VerbalizerConfig,
) -> Result<Vec<Example>, PipelineError> {
    if model.cfg.head != HeadKind::Qa {
        return Err(PipelineError::HeadMismatch("span"));
    }
    inputs
        .iter()
        .map(|r| {
            build_example(
                model, kb, vocab, verbalizer, &r.id, &r.question, &r.paragraph, &r.paragraph,
                Target::None,
            )
            .map_err(PipelineError::from)
        })
        .collect()
}

fn cls_texts(r1: &str, r2: Option<&str>) -> (String, String) {
    let second = r2.unwrap_or("").to_string();
    let selection = if second.is_empty() {
        r1.to_string()
    } else {
        format!("{r1} {second}")
    };
    (second, selection)
}

/// Prepares labeled classification examples. Sentence 1 fills the question
/// region, sentence 2 (when present) the paragraph region; knowledge is
/// selected from both.
pub fn prepare_cls_examples(
    model: &RoofModel,
    records: &[ClsRecord],
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    verbalizer: &VerbalizerConfig,
) -> Result<(Vec<Example>, PipelineStats), PipelineError> {
    let classes = match model.cfg.head {
        HeadKind::Classification { classes } => classes,
        HeadKind::Qa => return Err(PipelineError::HeadMismatch("class")),
    };
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if r.label >= classes {
            return Err(PipelineError::BadLabel {
                id: r.id.clone(),
                label: r.label,
                classes,
            });
        }
        let (second, selection) = cls_texts(&r.sentence1, r.sentence2.as_deref());
        out.push(build_example(
            model,
            kb,
            vocab,
            verbalizer,
            &r.id,
            &r.sentence1,
            &second,
            &selection,
            Target::Class(r.label),
        )?);
    }
    Ok((out, PipelineStats::default()))
}

/// Prepares unlabeled classification inputs for prediction.
pub fn prepare_cls_inputs(
    model: &RoofModel,
    inputs: &[ClsInput],
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    verbalizer: &VerbalizerConfig,
) -> Result<Vec<Example>, PipelineError> {
    if !matches!(model.cfg.head, HeadKind::Classification { .. }) {
        return Err(PipelineError::HeadMismatch("class"));
    }
    inputs
        .iter()
        .map(|r| {
            let (second, selection) = cls_texts(&r.sentence1, r.sentence2.as_deref());
            build_example(
                model,
                kb,
                vocab,
                verbalizer,
                &r.id,
                &r.sentence1,
                &second,
                &selection,
                Target::None,
            )
            .map_err(PipelineError::from)
        })
        .collect()
}

/// Surface text for a predicted span, in task-sequence coordinates.
pub fn span_text(example: &Example, start: usize, end: usize) -> String {
    let Some((p_lo, p_hi)) = example.window else {
        return String::new();
    };
    if start < p_lo || end > p_hi || start > end {
        return String::new();
    }
    example.paragraph_tokens[start - p_lo..=end - p_lo].join(" ")
}

/// Texts feeding vocabulary construction for a QA dataset.
pub fn qa_vocab_corpus(records: &[QaRecord]) -> Vec<String> {
    records
        .iter()
        .flat_map(|r| [r.question.clone(), r.paragraph.clone()])
        .collect()
}

/// Texts feeding vocabulary construction for a classification dataset.
pub fn cls_vocab_corpus(records: &[ClsRecord]) -> Vec<String> {
    records
        .iter()
        .flat_map(|r| {
            let mut v = vec![r.sentence1.clone()];
            v.extend(r.sentence2.clone());
            v
        })
        .collect()
}

/// Every knowledge record verbalized under the configured expansion, so the
/// vocabulary covers connector words and entity tokens.
pub fn kb_vocab_corpus(
    kb: &KnowledgeBase,
    expansion: crate::verbalize::ExpansionType,
    verbalizer: &VerbalizerConfig,
) -> Vec<String> {
    expand(kb.triples(), expansion, verbalizer)
        .into_iter()
        .map(|u| u.text)
        .collect()
}
