//! Turns selected triples into natural-language knowledge units.
//!
//! Three expansion levels:
//! - `Exp0`: the raw fields, joined per language preset
//! - `Exp1`: a templated sentence, e.g. "Bill Gates is a founder of Microsoft"
//! - `Exp2`: `Exp1` with consecutive same-head sentences merged into one unit,
//!   the repeated head replaced by a pronoun
//!
//! Units are kept as an ordered list so the sequence builder can close each
//! one with a separator token.

use crate::kb::Triple;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionType {
    Exp0,
    Exp1,
    Exp2,
}

impl ExpansionType {
    pub fn name(self) -> &'static str {
        match self {
            ExpansionType::Exp0 => "exp0",
            ExpansionType::Exp1 => "exp1",
            ExpansionType::Exp2 => "exp2",
        }
    }
}

/// Language-specific template pieces. `connector_1` sits between head and
/// relation, `connector_2` between relation and tail. `spaced` controls
/// whether pieces are joined with spaces (English) or concatenated (Chinese).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbalizerConfig {
    pub preset: String,
    pub connector_1: String,
    pub connector_2: String,
    pub pronoun: String,
    pub spaced: bool,
}

impl VerbalizerConfig {
    /// "head is a relation of tail", merged heads become "it".
    pub fn english() -> VerbalizerConfig {
        VerbalizerConfig {
            preset: "english".to_string(),
            connector_1: "is a".to_string(),
            connector_2: "of".to_string(),
            pronoun: "it".to_string(),
            spaced: true,
        }
    }

    /// "head的relation是tail" without spaces, merged heads become "它".
    pub fn chinese() -> VerbalizerConfig {
        VerbalizerConfig {
            preset: "chinese".to_string(),
            connector_1: "的".to_string(),
            connector_2: "是".to_string(),
            pronoun: "它".to_string(),
            spaced: false,
        }
    }

    pub fn by_name(name: &str) -> Option<VerbalizerConfig> {
        match name {
            "english" => Some(VerbalizerConfig::english()),
            "chinese" => Some(VerbalizerConfig::chinese()),
            _ => None,
        }
    }

    fn join(&self, parts: &[&str]) -> String {
        if self.spaced {
            parts.join(" ")
        } else {
            parts.concat()
        }
    }

    fn plain(&self, t: &Triple) -> String {
        self.join(&[&t.head, &t.relation, &t.tail])
    }

    fn sentence(&self, subject: &str, t: &Triple) -> String {
        self.join(&[
            subject,
            &self.connector_1,
            &t.relation,
            &self.connector_2,
            &t.tail,
        ])
    }
}

/// One verbalized unit and the triples it came from. A unit holds several
/// triples only after an `Exp2` merge, and then they all share a head.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeUnit {
    pub text: String,
    pub source_triples: Vec<Triple>,
}

/// Ordered unit texts ready for sequence building; every unit is followed
/// by a separator token when encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgePassage {
    pub units: Vec<String>,
}

/// Verbalizes `triples` in order under the chosen expansion.
pub fn expand(triples: &[Triple], exp: ExpansionType, cfg: &VerbalizerConfig) -> Vec<KnowledgeUnit> {
    match exp {
        ExpansionType::Exp0 => triples
            .iter()
            .map(|t| KnowledgeUnit {
                text: cfg.plain(t),
                source_triples: vec![t.clone()],
            })
            .collect(),
        ExpansionType::Exp1 => triples
            .iter()
            .map(|t| KnowledgeUnit {
                text: cfg.sentence(&t.head, t),
                source_triples: vec![t.clone()],
            })
            .collect(),
        ExpansionType::Exp2 => {
            let mut units: Vec<KnowledgeUnit> = Vec::new();
            for t in triples {
                match units.last_mut() {
                    Some(prev) if prev.source_triples[0].head == t.head => {
                        prev.text.push_str(", ");
                        prev.text.push_str(&cfg.sentence(&cfg.pronoun, t));
                        prev.source_triples.push(t.clone());
                    }
                    _ => units.push(KnowledgeUnit {
                        text: cfg.sentence(&t.head, t),
                        source_triples: vec![t.clone()],
                    }),
                }
            }
            units
        }
    }
}

/// Packages units for the sequence builder without altering their text.
pub fn assemble_knowledge(units: &[KnowledgeUnit]) -> KnowledgePassage {
    KnowledgePassage {
        units: units.iter().map(|u| u.text.clone()).collect(),
    }
}
