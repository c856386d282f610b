//! Whitespace tokenizer, vocabulary, and fixed-length sequence building.
//!
//! Sequences come out at exactly the configured length with:
//! - task layout  `[CLS] question… [SEP] paragraph… [SEP] [PAD]…`
//! - knowledge layout `[CLS] unit… [SEP] unit… [SEP] … [PAD]…`
//! - single-unit layout `[CLS] unit… [SEP] [PAD]…`
//!
//! Segment ids follow one of two schemes. Type 1 is the classic two-segment
//! assignment (question/knowledge vs paragraph/padding); type 2 gives the
//! whole task sequence segment 1 and the whole knowledge sequence segment 0
//! so the two encoders see globally distinct segments.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;
use serde::{Deserialize, Serialize};

use crate::verbalize::{KnowledgePassage, KnowledgeUnit};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("vocabulary needs a non-empty corpus")]
    EmptyCorpus,
    #[error("vocabulary file line {line}: expected reserved token {expected:?}")]
    BadReserved { line: usize, expected: &'static str },
    #[error("vocabulary file line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Whitespace token count of `text`.
pub fn token_count(text: &str) -> usize {
    tokens(text).count()
}

/// Case-preserving token/id table with four fixed reserved entries.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn with_reserved() -> Vocabulary {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for tok in RESERVED {
            v.push(tok.to_string());
        }
        v
    }

    fn push(&mut self, token: String) {
        self.token_to_id.insert(token.clone(), self.id_to_token.len());
        self.id_to_token.push(token);
    }

    /// Builds a vocabulary from a corpus: tokens ranked by descending
    /// frequency, ties broken lexicographically, truncated to `max_size`
    /// entries including the reserved four.
    pub fn build(corpus: &[String], max_size: usize) -> Result<Vocabulary, TokenizeError> {
        assert!(max_size >= 5, "max_size must leave room beyond reserved ids");
        if corpus.is_empty() {
            return Err(TokenizeError::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for tok in tokens(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut v = Vocabulary::with_reserved();
        for (tok, _) in ranked {
            if v.len() >= max_size {
                break;
            }
            if v.token_to_id.contains_key(tok) {
                continue; // a reserved literal appearing in the corpus
            }
            v.push(tok.to_string());
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// Whitespace-splits and maps each token, falling back to `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokens(text)
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    /// Space-joins the tokens for the given ids. Unknown ids render as the
    /// `[UNK]` literal.
    pub fn decode(&self, ids: &[usize]) -> String {
        let parts: Vec<&str> = ids
            .iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK_ID]))
            .collect();
        parts.join(" ")
    }

    /// One token per line, reserved entries first.
    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        let mut out = String::new();
        for tok in &self.id_to_token {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, TokenizeError> {
        let text = fs::read_to_string(path)?;
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if i < RESERVED.len() {
                if line != RESERVED[i] {
                    return Err(TokenizeError::BadReserved {
                        line: i + 1,
                        expected: RESERVED[i],
                    });
                }
            } else if v.token_to_id.contains_key(line) {
                return Err(TokenizeError::DuplicateToken {
                    line: i + 1,
                    token: line.to_string(),
                });
            }
            v.push(line.to_string());
        }
        if v.len() < RESERVED.len() {
            return Err(TokenizeError::BadReserved {
                line: v.len() + 1,
                expected: RESERVED[v.len()],
            });
        }
        Ok(v)
    }
}

/// Segment-id assignment scheme shared by both sequence kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegScheme {
    /// Task: question region 0, paragraph region 1, padding 0.
    /// Knowledge: content 0, padding 1.
    Type1,
    /// Task: all 1. Knowledge: all 0.
    Type2,
}

impl SegScheme {
    pub fn name(self) -> &'static str {
        match self {
            SegScheme::Type1 => "type1",
            SegScheme::Type2 => "type2",
        }
    }
}

/// A fixed-length model input. All four vectors have exactly the configured
/// sequence length; `true_length` counts the non-[PAD] prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<bool>,
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn pad_to(&mut self, total: usize, pad_segment: u8) {
        debug_assert!(self.token_ids.len() <= total);
        self.true_length = self.token_ids.len();
        while self.token_ids.len() < total {
            self.token_ids.push(PAD_ID);
            self.segment_ids.push(pad_segment);
            self.attention_mask.push(false);
        }
        self.attention_mask.truncate(total);
        debug_assert_eq!(self.token_ids.len(), total);
        debug_assert_eq!(self.segment_ids.len(), total);
        debug_assert_eq!(self.attention_mask.len(), total);
    }
}

/// Builds `[CLS] question [SEP] paragraph [SEP]` padded to `total_len`.
/// The question is truncated to `max_question` tokens and the paragraph to
/// `total_len - max_question - 3`, so the layout always fits.
pub fn build_task_input(
    question: &str,
    paragraph: &str,
    vocab: &Vocabulary,
    seg: SegScheme,
    max_question: usize,
    total_len: usize,
) -> EncodedSequence {
    assert!(
        total_len >= max_question + 3,
        "task length must fit the question region plus specials"
    );
    let max_paragraph = total_len - max_question - 3;
    let mut q_ids = vocab.encode(question);
    q_ids.truncate(max_question);
    let mut p_ids = vocab.encode(paragraph);
    p_ids.truncate(max_paragraph);

    let q_len = q_ids.len();
    let p_len = p_ids.len();
    let mut token_ids = Vec::with_capacity(total_len);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&q_ids);
    token_ids.push(SEP_ID);
    token_ids.extend_from_slice(&p_ids);
    token_ids.push(SEP_ID);

    let (segment_ids, pad_segment): (Vec<u8>, u8) = match seg {
        SegScheme::Type1 => {
            let mut s = vec![0u8; q_len + 2]; // [CLS] question [SEP]
            s.extend(std::iter::repeat(1u8).take(p_len + 1)); // paragraph [SEP]
            (s, 0)
        }
        SegScheme::Type2 => (vec![1u8; q_len + p_len + 3], 1),
    };

    let mut seq = EncodedSequence {
        attention_mask: vec![true; token_ids.len()],
        token_ids,
        segment_ids,
        true_length: 0,
    };
    seq.pad_to(total_len, pad_segment);
    seq
}

/// Builds `[CLS] unit [SEP] unit [SEP] …` padded to `total_len`. Units are
/// kept whole, in order; the first unit that would overflow is dropped along
/// with everything after it.
pub fn build_kb_input(
    knowledge: &KnowledgePassage,
    vocab: &Vocabulary,
    seg: SegScheme,
    total_len: usize,
) -> EncodedSequence {
    assert!(total_len >= 1, "knowledge length must fit [CLS]");
    let mut token_ids = Vec::with_capacity(total_len);
    token_ids.push(CLS_ID);
    for text in &knowledge.units {
        let ids = vocab.encode(text);
        if token_ids.len() + ids.len() + 1 > total_len {
            break;
        }
        token_ids.extend_from_slice(&ids);
        token_ids.push(SEP_ID);
    }

    let content = token_ids.len();
    let (segment_ids, pad_segment): (Vec<u8>, u8) = match seg {
        SegScheme::Type1 => (vec![0u8; content], 1),
        SegScheme::Type2 => (vec![0u8; content], 0),
    };
    let mut seq = EncodedSequence {
        attention_mask: vec![true; content],
        token_ids,
        segment_ids,
        true_length: 0,
    };
    seq.pad_to(total_len, pad_segment);
    seq
}

/// Builds `[CLS] unit [SEP]` padded to `total_len`, truncating the unit to
/// `total_len - 2` tokens. Segment ids are all 0.
pub fn build_triple_input(
    unit: &KnowledgeUnit,
    vocab: &Vocabulary,
    total_len: usize,
) -> EncodedSequence {
    assert!(total_len >= 3, "single-unit length must fit [CLS] x [SEP]");
    let mut ids = vocab.encode(&unit.text);
    ids.truncate(total_len - 2);
    let mut token_ids = Vec::with_capacity(total_len);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&ids);
    token_ids.push(SEP_ID);
    let content = token_ids.len();
    let mut seq = EncodedSequence {
        attention_mask: vec![true; content],
        segment_ids: vec![0u8; content],
        token_ids,
        true_length: 0,
    };
    seq.pad_to(total_len, 0);
    seq
}
