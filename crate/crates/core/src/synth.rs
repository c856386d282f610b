//! Seeded toy corpora: small QA and classification datasets with a matching
//! knowledge file, for smoke tests and overfit runs.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClsRecord, QaRecord};

/// A generated dataset plus the tab-separated knowledge lines that go with
/// it.
#[derive(Debug, Clone)]
pub struct ToyData<T> {
    pub records: Vec<T>,
    pub kb_lines: Vec<String>,
}

impl<T> ToyData<T> {
    /// The knowledge lines as one writable file body.
    pub fn kb_text(&self) -> String {
        let mut out = self.kb_lines.join("\n");
        out.push('\n');
        out
    }
}

const PEOPLE: [&str; 12] = [
    "ada", "ben", "cara", "dev", "edna", "finn", "gil", "hana", "ivo", "juno", "kai", "lena",
];
const PLACES: [&str; 8] = [
    "oslo",
    "quito",
    "accra",
    "perth",
    "new york",
    "la paz",
    "hanoi",
    "turin",
];
const ITEMS: [&str; 8] = [
    "maps", "kites", "boots", "lamps", "rope", "clocks", "tea", "nails",
];
const OBJECTS: [&str; 8] = [
    "film", "novel", "soup", "bridge", "garden", "engine", "mural", "sonata",
];
const GOOD_VERBS: [&str; 3] = ["praises", "enjoys", "recommends"];
const BAD_VERBS: [&str; 3] = ["pans", "dislikes", "returns"];

/// Generates `n` span-extraction examples over a fixed template world.
///
/// Each paragraph reads `{person} lives in {place} and sells {item}`, half
/// with a leading adverb; the question asks for the place, the item, or the
/// person, so gold spans land on varied positions and the place answers can
/// be two tokens long. The (person, place, item) combination is distinct per
/// example, so no paragraph repeats with a different gold span. Knowledge
/// lines map each person to their place and item, plus a few heads that
/// never occur in any paragraph.
pub fn toy_qa(n: usize, seed: u64) -> ToyData<QaRecord> {
    assert!(
        n <= PEOPLE.len() * PLACES.len() * ITEMS.len() / 2,
        "toy_qa pool exhausted: asked for {n} distinct paragraphs"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut kb_lines = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut used = std::collections::HashSet::new();

    for i in 0..n {
        let (person, place, item) = loop {
            let combo = (
                PEOPLE[rng.gen_range(0..PEOPLE.len())],
                PLACES[rng.gen_range(0..PLACES.len())],
                ITEMS[rng.gen_range(0..ITEMS.len())],
            );
            if used.insert(combo) {
                break combo;
            }
        };
        let place_len = crate::tokenize::token_count(place);

        // Alternating prefix shifts every gold position by one, which keeps
        // span supervision spread over many positions instead of clumping on
        // a fixed pair.
        let prefix = ["", "nowadays "][(i / 3) % 2];
        let off = crate::tokenize::token_count(prefix);
        let paragraph = format!("{prefix}{person} lives in {place} and sells {item}");
        let (question, start, end) = match i % 3 {
            0 => (
                format!("where does {person} live"),
                off + 3,
                off + 3 + place_len - 1,
            ),
            1 => (
                format!("what does {person} sell"),
                off + 5 + place_len,
                off + 5 + place_len,
            ),
            _ => (format!("who sells {item}"), off, off),
        };
        records.push(QaRecord {
            id: format!("qa-{i:03}"),
            question,
            paragraph,
            answer_start_token: start,
            answer_end_token: end,
        });

        for line in [
            format!("{person}\tresident\t{place}"),
            format!("{person}\tvendor\t{item}"),
        ] {
            if seen.insert(line.clone()) {
                kb_lines.push(line);
            }
        }
    }
    // Heads absent from every paragraph: selection must skip these.
    for line in [
        "zeppelin\tkind\tairship".to_string(),
        "quartz\tkind\tmineral".to_string(),
    ] {
        if seen.insert(line.clone()) {
            kb_lines.push(line);
        }
    }
    ToyData { records, kb_lines }
}

/// Generates `n` binary classification examples: `{person} {verb} the
/// {object}` labeled by verb polarity, alternating single sentences and
/// pairs. Knowledge lines map objects to a category.
pub fn toy_classification(n: usize, seed: u64) -> ToyData<ClsRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut kb_lines = Vec::new();
    let mut seen = std::collections::HashSet::new();

    for i in 0..n {
        let person = PEOPLE[rng.gen_range(0..PEOPLE.len())];
        let object = OBJECTS[rng.gen_range(0..OBJECTS.len())];
        let label = rng.gen_range(0..2usize);
        let verb = if label == 1 {
            GOOD_VERBS[rng.gen_range(0..GOOD_VERBS.len())]
        } else {
            BAD_VERBS[rng.gen_range(0..BAD_VERBS.len())]
        };
        let sentence2 = (i % 2 == 1).then(|| format!("a note on the {object}"));
        records.push(ClsRecord {
            id: format!("cls-{i:03}"),
            sentence1: format!("{person} {verb} the {object}"),
            sentence2,
            label,
        });

        let line = format!("{object}\tcategory\twork");
        if seen.insert(line.clone()) {
            kb_lines.push(line);
        }
    }
    ToyData { records, kb_lines }
}
