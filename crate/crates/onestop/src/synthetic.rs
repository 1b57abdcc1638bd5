//! A small synthetic corpus for smoke tests, demos, and overfitting checks.
//!
//! Every document states two attribute facts about one subject:
//!
//! ```text
//! the color of the house is red . the size of the house is small .
//! ```
//!
//! and the question asks for one of the two attributes, with the answer
//! being that attribute's value span. The vocabulary is closed and tiny, the
//! mapping from question to answer is deterministic, and some values are
//! multi-token — enough structure to exercise generation, span extraction,
//! and windowing end to end without real data.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RawRecord;

const ATTRIBUTES: &[&str] = &[
    "color",
    "size",
    "weight",
    "price",
    "age",
    "shape",
    "height",
    "temperature",
];

const SUBJECTS: &[&str] = &[
    "house", "river", "engine", "garden", "bridge", "market", "castle", "forest", "lantern",
    "harbor",
];

const VALUES: &[&str] = &[
    "red",
    "blue",
    "green",
    "small",
    "large",
    "heavy",
    "light",
    "ancient",
    "modern",
    "round",
    "square",
    "tall",
    "short",
    "warm",
    "cold",
    "dark blue",
    "pale green",
    "very old",
    "quite new",
    "ten meters",
];

/// Appends one fact sentence and returns the character span of the value.
fn sentence(doc: &mut String, attr: &str, subj: &str, val: &str) -> (usize, usize) {
    doc.push_str("the ");
    doc.push_str(attr);
    doc.push_str(" of the ");
    doc.push_str(subj);
    doc.push_str(" is ");
    let start = doc.len();
    doc.push_str(val);
    let end = doc.len();
    doc.push_str(" .");
    (start, end)
}

/// Generates `n` records deterministically from `seed`. Each document holds
/// two facts about one subject; the question targets one of them at random,
/// so answers land in either sentence.
pub fn generate_records(n: usize, seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let subj = *SUBJECTS.choose(&mut rng).expect("non-empty");
        let attr1 = *ATTRIBUTES.choose(&mut rng).expect("non-empty");
        let attr2 = loop {
            let a = *ATTRIBUTES.choose(&mut rng).expect("non-empty");
            if a != attr1 {
                break a;
            }
        };
        let val1 = *VALUES.choose(&mut rng).expect("non-empty");
        let val2 = *VALUES.choose(&mut rng).expect("non-empty");

        let mut document = String::new();
        let span1 = sentence(&mut document, attr1, subj, val1);
        document.push(' ');
        let span2 = sentence(&mut document, attr2, subj, val2);
        debug_assert!(document.is_ascii(), "char offsets assume ascii text");

        let (attr_q, (start, end)) = if rng.random_bool(0.5) {
            (attr1, span1)
        } else {
            (attr2, span2)
        };
        out.push(RawRecord {
            document,
            question: format!("what is the {attr_q} of the {subj} ?"),
            answer_start_char: start,
            answer_end_char: end,
        });
    }
    out
}
