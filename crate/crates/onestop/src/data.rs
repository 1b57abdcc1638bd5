//! Corpus handling: tokenisation with character offsets, vocabulary
//! construction, JSONL loading with per-line rejection reporting, document
//! windowing, and padded batching.
//!
//! The tokeniser is deliberately simple — lowercase, whitespace-split, with
//! leading/trailing ASCII punctuation peeled off as single-character tokens —
//! and, crucially, idempotent: tokenising the space-joined token texts gives
//! the tokens back. Prepared corpora can therefore be fed through the
//! pipeline again without drift.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved vocabulary ids. Real tokens start at [`FIRST_REAL_ID`].
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;
pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];
pub const FIRST_REAL_ID: u32 = RESERVED.len() as u32;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid window config: {0}")]
    WindowConfig(String),
    #[error("example {index}: {msg}")]
    BadExample { index: usize, msg: String },
}

/// A token with its half-open character span in the source text. Offsets
/// count `char`s, not bytes, and always refer to the original string; `text`
/// is lowercased.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_peelable(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// Lowercasing whitespace tokeniser that splits off leading and trailing
/// ASCII punctuation as their own tokens. Interior punctuation (hyphens,
/// apostrophes) stays attached.
pub fn tokenize(text: &str) -> Vec<TokenSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let (mut s, mut e) = (chunk_start, i);
        while s < e && is_peelable(chars[s]) {
            out.push(TokenSpan {
                text: chars[s].to_string(),
                start: s,
                end: s + 1,
            });
            s += 1;
        }
        let mut trailing = Vec::new();
        while e > s && is_peelable(chars[e - 1]) {
            trailing.push(TokenSpan {
                text: chars[e - 1].to_string(),
                start: e - 1,
                end: e,
            });
            e -= 1;
        }
        if s < e {
            let text: String = chars[s..e].iter().collect::<String>().to_lowercase();
            out.push(TokenSpan { text, start: s, end: e });
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Joins token texts with single spaces — the canonical surface form used in
/// prepared corpora and generated output.
pub fn join_tokens(tokens: &[impl AsRef<str>]) -> String {
    tokens
        .iter()
        .map(|t| t.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// Vocabulary

pub struct Vocabulary {
    tokens: Vec<String>, // indexed by id, includes the reserved entries
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from a token stream: tokens seen at least `min_count` times are
    /// kept, ordered by descending count then lexicographically, after the
    /// reserved entries.
    pub fn build<'a>(tokens: impl Iterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_real_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Builds a vocabulary from an explicit list of real tokens, keeping
    /// their order after the reserved ids.
    pub fn from_real_tokens(real: impl Iterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(real);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries are always present
    }

    /// Id for a token, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(|s| s.as_str())
            .unwrap_or(RESERVED[UNK as usize])
    }

    pub fn encode(&self, tokens: &[TokenSpan]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(&t.text)).collect()
    }

    /// Space-joined surface form, skipping structural ids (pad/bos/eos/sep).
    pub fn decode(&self, ids: &[u32]) -> String {
        let texts: Vec<&str> = ids
            .iter()
            .filter(|&&id| id != PAD && id != BOS && id != EOS && id != SEP)
            .map(|&id| self.token(id))
            .collect();
        texts.join(" ")
    }

    /// One non-reserved token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.tokens[RESERVED.len()..] {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let reader = BufReader::new(File::open(path)?);
        let mut real = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.is_empty() {
                real.push(line);
            }
        }
        Ok(Self::from_real_tokens(real.into_iter()))
    }
}

// ---------------------------------------------------------------------------
// Corpus records

/// One line of a corpus file. `answer_start_char`/`answer_end_char` are a
/// half-open character range into `document`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct RawRecord {
    pub document: String,
    pub question: String,
    pub answer_start_char: usize,
    pub answer_end_char: usize,
}

/// Why a corpus line was dropped. Loading never aborts on bad lines; callers
/// decide whether the rejection rate is acceptable.
#[derive(Clone, Debug, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

/// A record after tokenisation, with the answer resolved to an inclusive
/// token index range within `doc`.
#[derive(Clone, Debug)]
pub struct TokenizedRecord {
    pub line: usize,
    pub doc: Vec<TokenSpan>,
    pub question: Vec<TokenSpan>,
    pub span: (usize, usize),
}

/// Records paired with their 1-based line numbers, plus the lines that were
/// dropped.
pub type ParsedCorpus = (Vec<(usize, RawRecord)>, Vec<Rejection>);

/// Parses JSONL, skipping blank lines; each malformed line becomes one
/// rejection. Line numbers are 1-based.
pub fn parse_corpus(reader: impl BufRead) -> Result<ParsedCorpus, DataError> {
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(&line) {
            Ok(r) => records.push((line_no, r)),
            Err(e) => rejections.push(Rejection {
                line: line_no,
                reason: format!("malformed json: {e}"),
            }),
        }
    }
    Ok((records, rejections))
}

/// Resolves the character-level answer span to token indices and validates
/// that the span covers whole tokens (tokenising the answer text must
/// reproduce the covered document tokens exactly).
pub fn tokenize_record(line: usize, raw: &RawRecord) -> Result<TokenizedRecord, Rejection> {
    let reject = |reason: String| Rejection { line, reason };
    let doc = tokenize(&raw.document);
    if doc.is_empty() {
        return Err(reject("document has no tokens".into()));
    }
    let question = tokenize(&raw.question);
    if question.is_empty() {
        return Err(reject("question has no tokens".into()));
    }
    let (a, b) = (raw.answer_start_char, raw.answer_end_char);
    let doc_chars = raw.document.chars().count();
    if a >= b || b > doc_chars {
        return Err(reject(format!(
            "answer char range {a}..{b} invalid for a {doc_chars}-char document"
        )));
    }
    let covered: Vec<usize> = doc
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start < b && t.end > a)
        .map(|(i, _)| i)
        .collect();
    let (first, last) = match (covered.first(), covered.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(reject("answer range covers no tokens".into())),
    };
    let answer_text: String = raw
        .document
        .chars()
        .skip(a)
        .take(b - a)
        .collect();
    let answer_tokens: Vec<String> = tokenize(&answer_text).into_iter().map(|t| t.text).collect();
    let covered_tokens: Vec<String> = doc[first..=last].iter().map(|t| t.text.clone()).collect();
    if answer_tokens != covered_tokens {
        return Err(reject(format!(
            "answer text {answer_text:?} does not align with token boundaries"
        )));
    }
    Ok(TokenizedRecord {
        line,
        doc,
        question,
        span: (first, last),
    })
}

// ---------------------------------------------------------------------------
// Windowing

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub window: usize,
    pub stride: usize,
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.window == 0 {
            return Err(DataError::WindowConfig("window must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(DataError::WindowConfig(format!(
                "stride must be in 1..={} (window), got {}",
                self.window, self.stride
            )));
        }
        Ok(())
    }
}

/// Half-open token ranges starting at 0, stride, 2*stride, …; the first start
/// whose window reaches the end of the document is the last one emitted.
pub fn windows(len: usize, cfg: &WindowConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + cfg.window).min(len);
        out.push((start, end));
        if start + cfg.window >= len {
            break;
        }
        start += cfg.stride;
    }
    out
}

/// Picks the window containing the span with the most slack on its tighter
/// side (ties go to the earlier window). Returns the window range and the
/// span re-based to window-local indices; `None` if no window contains the
/// whole span (possible when `stride == window` and the span straddles a
/// boundary).
pub fn assign_window(
    win: &[(usize, usize)],
    span: (usize, usize),
) -> Option<((usize, usize), (usize, usize))> {
    let (s, e) = span;
    let mut best: Option<(usize, (usize, usize))> = None;
    for &(ws, we) in win {
        if ws <= s && e < we {
            let margin = (s - ws).min(we - 1 - e);
            if best.is_none_or(|(m, _)| margin > m) {
                best = Some((margin, (ws, we)));
            }
        }
    }
    best.map(|(_, (ws, we))| ((ws, we), (s - ws, e - ws)))
}

/// Character offsets of the inclusive token range `span` inside the
/// space-joined text of `tokens`.
fn joined_char_span(tokens: &[TokenSpan], span: (usize, usize)) -> (usize, usize) {
    let mut pos = 0;
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        let len = t.text.chars().count();
        if i == span.0 {
            start = pos;
        }
        if i == span.1 {
            return (start, pos + len);
        }
        pos += len + 1; // the joining space
    }
    unreachable!("span validated against token range");
}

/// Result of preparing a corpus: windowed records (each a valid input record
/// again, so preparation is idempotent) plus everything that was dropped.
pub struct Prepared {
    pub records: Vec<RawRecord>,
    pub rejections: Vec<Rejection>,
    /// Lines that parsed and tokenised successfully.
    pub accepted_lines: usize,
    /// Total lines that carried a record (parsed or not).
    pub total_lines: usize,
}

/// Full preparation pipeline: parse, tokenise, window, re-base spans, and
/// re-render each record over the canonical token text.
pub fn prepare(reader: impl BufRead, cfg: &WindowConfig) -> Result<Prepared, DataError> {
    cfg.validate()?;
    let (raw, mut rejections) = parse_corpus(reader)?;
    let total_lines = raw.len() + rejections.len();
    let mut records = Vec::new();
    let mut accepted_lines = 0;
    for (line, r) in &raw {
        let tok = match tokenize_record(*line, r) {
            Ok(t) => t,
            Err(rej) => {
                rejections.push(rej);
                continue;
            }
        };
        accepted_lines += 1;
        let win = windows(tok.doc.len(), cfg);
        let Some(((ws, we), local)) = assign_window(&win, tok.span) else {
            rejections.push(Rejection {
                line: *line,
                reason: format!(
                    "answer span {:?} straddles window boundaries (window {}, stride {})",
                    tok.span, cfg.window, cfg.stride
                ),
            });
            continue;
        };
        let window_tokens = &tok.doc[ws..we];
        let (a, b) = joined_char_span(window_tokens, local);
        let document = join_tokens(
            &window_tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>(),
        );
        let question = join_tokens(
            &tok.question.iter().map(|t| t.text.as_str()).collect::<Vec<_>>(),
        );
        records.push(RawRecord {
            document,
            question,
            answer_start_char: a,
            answer_end_char: b,
        });
    }
    rejections.sort_by_key(|r| r.line);
    Ok(Prepared {
        records,
        rejections,
        accepted_lines,
        total_lines,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::other)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Training examples and batches

/// A model-ready example: encoded document window, encoded question with a
/// trailing `<eos>`, and the inclusive answer token span.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub doc: Vec<u32>,
    pub question: Vec<u32>,
    pub start: usize,
    pub end: usize,
}

/// Encodes tokenised records, enforcing the model's length limits. Records
/// over the limits are rejected rather than truncated.
pub fn build_examples(
    records: &[TokenizedRecord],
    vocab: &Vocabulary,
    max_doc: usize,
    max_question: usize,
) -> (Vec<Example>, Vec<Rejection>) {
    let mut examples = Vec::new();
    let mut rejections = Vec::new();
    for r in records {
        if r.doc.len() > max_doc {
            rejections.push(Rejection {
                line: r.line,
                reason: format!("document has {} tokens, limit {max_doc}", r.doc.len()),
            });
            continue;
        }
        // One slot goes to the trailing <eos>.
        if r.question.len() + 1 > max_question {
            rejections.push(Rejection {
                line: r.line,
                reason: format!(
                    "question has {} tokens, limit {}",
                    r.question.len(),
                    max_question - 1
                ),
            });
            continue;
        }
        let mut question = vocab.encode(&r.question);
        question.push(EOS);
        examples.push(Example {
            doc: vocab.encode(&r.doc),
            question,
            start: r.span.0,
            end: r.span.1,
        });
    }
    (examples, rejections)
}

/// Examples padded to rectangular id matrices. True lengths are kept, so
/// [`Batch::examples`] reverses the padding exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub doc: Vec<Vec<u32>>,
    pub doc_len: Vec<usize>,
    pub question: Vec<Vec<u32>>,
    pub question_len: Vec<usize>,
    pub start: Vec<usize>,
    pub end: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Result<Batch, DataError> {
        if examples.is_empty() {
            return Err(DataError::BadExample {
                index: 0,
                msg: "empty batch".into(),
            });
        }
        for (i, e) in examples.iter().enumerate() {
            let bad = |msg: String| DataError::BadExample { index: i, msg };
            if e.doc.is_empty() || e.question.is_empty() {
                return Err(bad("empty document or question".into()));
            }
            if e.question.last() != Some(&EOS) {
                return Err(bad("question must end with <eos>".into()));
            }
            if e.start > e.end || e.end >= e.doc.len() {
                return Err(bad(format!(
                    "span {}..={} out of range for {}-token document",
                    e.start,
                    e.end,
                    e.doc.len()
                )));
            }
        }
        let doc_w = examples.iter().map(|e| e.doc.len()).max().unwrap_or(1);
        let q_w = examples.iter().map(|e| e.question.len()).max().unwrap_or(1);
        let pad_to = |ids: &[u32], w: usize| {
            let mut row = ids.to_vec();
            row.resize(w, PAD);
            row
        };
        Ok(Batch {
            doc: examples.iter().map(|e| pad_to(&e.doc, doc_w)).collect(),
            doc_len: examples.iter().map(|e| e.doc.len()).collect(),
            question: examples.iter().map(|e| pad_to(&e.question, q_w)).collect(),
            question_len: examples.iter().map(|e| e.question.len()).collect(),
            start: examples.iter().map(|e| e.start).collect(),
            end: examples.iter().map(|e| e.end).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.doc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc.is_empty()
    }

    /// Strips padding back off.
    pub fn examples(&self) -> Vec<Example> {
        (0..self.len())
            .map(|i| Example {
                doc: self.doc[i][..self.doc_len[i]].to_vec(),
                question: self.question[i][..self.question_len[i]].to_vec(),
                start: self.start[i],
                end: self.end[i],
            })
            .collect()
    }
}

/// Chunks examples into batches of at most `batch_size`, preserving order.
pub fn make_batches(examples: &[Example], batch_size: usize) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::BadExample {
            index: 0,
            msg: "batch size must be at least 1".into(),
        });
    }
    examples
        .chunks(batch_size)
        .map(Batch::from_examples)
        .collect()
}
