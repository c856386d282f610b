//! Tab-separated triple store and paragraph-driven triple selection.
//!
//! Selection is plain case-folded substring matching: a triple qualifies when
//! its head occurs in the paragraph (and, in the stricter mode, its tail as
//! well). Matches are ordered by the position of the first head occurrence,
//! with KB file order breaking ties, which keeps triples that share a head
//! adjacent in the output.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;
use serde::{Deserialize, Serialize};

use crate::tokenize::token_count;
use crate::verbalize::{assemble_knowledge, expand, ExpansionType, VerbalizerConfig};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {0}: expected 3 non-empty tab-separated fields")]
    MalformedLine(usize),
    #[error("knowledge base contains no triples")]
    EmptyKb,
    #[error("statistics need a non-empty paragraph corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One head/relation/tail record. `source_line` is the 1-based line in the
/// KB file it was parsed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub source_line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Head must occur in the paragraph.
    NoTail,
    /// Head and tail must both occur in the paragraph.
    HasTail,
}

#[derive(Debug)]
pub struct KnowledgeBase {
    triples: Vec<Triple>,
    /// Distinct head -> indices into `triples`, in file order.
    head_index: HashMap<String, Vec<usize>>,
}

impl KnowledgeBase {
    pub fn from_lines(text: &str) -> Result<KnowledgeBase, KbError> {
        let mut triples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 3 {
                return Err(KbError::MalformedLine(line_no));
            }
            let trimmed: Vec<&str> = fields.iter().map(|f| f.trim()).collect();
            if trimmed.iter().any(|f| f.is_empty()) {
                return Err(KbError::MalformedLine(line_no));
            }
            triples.push(Triple {
                head: trimmed[0].to_string(),
                relation: trimmed[1].to_string(),
                tail: trimmed[2].to_string(),
                source_line: line_no,
            });
        }
        if triples.is_empty() {
            return Err(KbError::EmptyKb);
        }
        let mut head_index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, t) in triples.iter().enumerate() {
            head_index.entry(t.head.clone()).or_default().push(i);
        }
        Ok(KnowledgeBase { triples, head_index })
    }

    pub fn load(path: &Path) -> Result<KnowledgeBase, KbError> {
        KnowledgeBase::from_lines(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn distinct_heads(&self) -> usize {
        self.head_index.len()
    }
}

/// Selects the triples whose head (and tail, for [`SelectionMode::HasTail`])
/// occurs case-folded in `paragraph`, ordered by first head occurrence and
/// then KB file order, capped at `max_triples`.
pub fn select_triples(
    kb: &KnowledgeBase,
    paragraph: &str,
    mode: SelectionMode,
    max_triples: usize,
) -> Vec<Triple> {
    let para = paragraph.to_lowercase();
    let mut hits: Vec<(usize, usize)> = Vec::new(); // (byte position, triple index)
    for (head, indices) in &kb.head_index {
        let Some(pos) = para.find(&head.to_lowercase()) else {
            continue;
        };
        for &i in indices {
            if mode == SelectionMode::HasTail && !para.contains(&kb.triples[i].tail.to_lowercase())
            {
                continue;
            }
            hits.push((pos, i));
        }
    }
    hits.sort_unstable_by_key(|&(pos, i)| (pos, i));
    hits.truncate(max_triples);
    hits.into_iter().map(|(_, i)| kb.triples[i].clone()).collect()
}

/// Settings that determine how selected triples are verbalized and packed
/// when computing corpus statistics.
#[derive(Debug, Clone)]
pub struct KbStatsContext {
    pub expansion: ExpansionType,
    pub verbalizer: VerbalizerConfig,
    pub mode: SelectionMode,
    pub max_triples: usize,
    /// Token capacity of the knowledge sequence (one slot goes to the
    /// leading marker, the rest to units and their separators).
    pub max_total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbStats {
    /// Mean knowledge-token count per paragraph: unit tokens plus one
    /// separator per kept unit, excluding padding and the leading marker.
    pub mean_selected_tokens: f64,
    pub mean_triple_count: f64,
}

/// Per-paragraph selected-token length under the context's packing rule:
/// units are kept whole, in order, while `1 + sum(len_i + 1) <= max_total`.
pub fn selected_token_length(kb: &KnowledgeBase, paragraph: &str, ctx: &KbStatsContext) -> usize {
    let triples = select_triples(kb, paragraph, ctx.mode, ctx.max_triples);
    let units = expand(&triples, ctx.expansion, &ctx.verbalizer);
    let passage = assemble_knowledge(&units);
    let mut used = 1; // leading marker
    let mut tokens = 0;
    for text in &passage.units {
        let len = token_count(text) + 1;
        if used + len > ctx.max_total {
            break;
        }
        used += len;
        tokens += len;
    }
    tokens
}

/// Mean selected-token length and mean selected-triple count over a corpus
/// of paragraphs.
pub fn kb_stats(
    kb: &KnowledgeBase,
    corpus: &[String],
    ctx: &KbStatsContext,
) -> Result<KbStats, KbError> {
    if corpus.is_empty() {
        return Err(KbError::EmptyCorpus);
    }
    let mut token_sum = 0usize;
    let mut triple_sum = 0usize;
    for para in corpus {
        token_sum += selected_token_length(kb, para, ctx);
        triple_sum += select_triples(kb, para, ctx.mode, ctx.max_triples).len();
    }
    let n = corpus.len() as f64;
    Ok(KbStats {
        mean_selected_tokens: token_sum as f64 / n,
        mean_triple_count: triple_sum as f64 / n,
    })
}
