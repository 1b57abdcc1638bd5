//! Decoding and question–answer pair generation.
//!
//! Two generation routes are provided:
//!
//! * [`generate_qa_pairs`] — the joint route: one encoder pass per window,
//!   after which the decoder both emits the question and (through the hidden
//!   state at its `<eos>` step) conditions the span heads.
//! * [`pipeline_qa_pairs`] — the two-pass baseline: a question-generation
//!   model produces the question, then a separate span model re-encodes the
//!   document and replays the question to locate the answer.
//!
//! Search is written against the [`TokenScorer`] trait rather than the model
//! directly so that greedy and beam search can be verified against exhaustive
//! enumeration on small hand-built scorers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, Vocabulary, WindowConfig, BOS, EOS};
use crate::model::{DecodeState, EncodedDoc, OneStopModel};
use crate::numcore::{log_softmax, NumError, NumResult, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid inference config: {0}")]
    Config(String),
    #[error("document has no tokens")]
    EmptyDocument,
}

/// How to pick the next token during question generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// Anything that can autoregressively score next tokens. `step` consumes a
/// token and returns unnormalised logits for the following position.
pub trait TokenScorer<S: Scalar> {
    type State: Clone;
    fn start(&self) -> NumResult<Self::State>;
    fn step(&self, state: &mut Self::State, token: u32) -> NumResult<Vec<S>>;
}

/// A finished decode: the emitted tokens (always ending in `<eos>`), their
/// cumulative and per-token log-probability, and the scorer state after the
/// final content token — for the model scorer this holds the hidden state
/// that predicted `<eos>`.
pub struct SearchResult<St> {
    pub tokens: Vec<u32>,
    pub sum_logp: f64,
    pub mean_logp: f64,
    pub state: St,
}

fn argmax_first<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

fn check_max_len(max_len: usize) -> Result<(), InferError> {
    if max_len == 0 {
        return Err(InferError::Config("max_len must be at least 1".into()));
    }
    Ok(())
}

/// Greedy decoding: always the highest-probability token (lowest id on
/// ties). `<eos>` is forced once the sequence would otherwise exceed
/// `max_len` tokens.
pub fn greedy_search<S: Scalar, Sc: TokenScorer<S>>(
    scorer: &Sc,
    max_len: usize,
) -> Result<SearchResult<Sc::State>, InferError> {
    check_max_len(max_len)?;
    let mut state = scorer.start()?;
    let mut logits = scorer.step(&mut state, BOS)?;
    let mut tokens = Vec::new();
    let mut sum_logp = 0.0;
    loop {
        let lps = log_softmax(&logits);
        let next = if tokens.len() + 1 >= max_len {
            EOS
        } else {
            argmax_first(&lps) as u32
        };
        sum_logp += lps[next as usize].into_f64();
        tokens.push(next);
        if next == EOS {
            break;
        }
        logits = scorer.step(&mut state, next)?;
    }
    let mean_logp = sum_logp / tokens.len() as f64;
    Ok(SearchResult {
        tokens,
        sum_logp,
        mean_logp,
        state,
    })
}

/// Beam search with slot-consuming termination. Each round ranks every
/// continuation of every live hypothesis by cumulative log-probability
/// (ties: lower token id, then older hypothesis) and keeps the top `width`
/// minus already-finished slots. Selecting `<eos>` retires the hypothesis
/// and permanently consumes its slot. Finished hypotheses are ranked by
/// per-token mean log-probability. With `width == 1` this reduces exactly
/// to greedy search.
pub fn beam_search<S: Scalar, Sc: TokenScorer<S>>(
    scorer: &Sc,
    width: usize,
    max_len: usize,
) -> Result<SearchResult<Sc::State>, InferError> {
    check_max_len(max_len)?;
    if width == 0 {
        return Err(InferError::Config("beam width must be at least 1".into()));
    }
    struct Live<St> {
        tokens: Vec<u32>,
        sum_logp: f64,
        state: St,
        lps: Vec<f64>,
    }
    let mut state0 = scorer.start()?;
    let logits0 = scorer.step(&mut state0, BOS)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        sum_logp: 0.0,
        state: state0,
        lps: log_softmax(&logits0)
            .into_iter()
            .map(Scalar::into_f64)
            .collect(),
    }];
    let mut finished: Vec<SearchResult<Sc::State>> = Vec::new();
    while !live.is_empty() && finished.len() < width {
        let slots = width - finished.len();
        let mut cands: Vec<(usize, u32, f64)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            if h.tokens.len() + 1 >= max_len {
                cands.push((hi, EOS, h.sum_logp + h.lps[EOS as usize]));
            } else {
                for (t, lp) in h.lps.iter().enumerate() {
                    cands.push((hi, t as u32, h.sum_logp + lp));
                }
            }
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
        let mut next_live = Vec::new();
        for &(hi, tok, sum_logp) in cands.iter().take(slots) {
            let h = &live[hi];
            let mut tokens = h.tokens.clone();
            tokens.push(tok);
            if tok == EOS {
                let mean_logp = sum_logp / tokens.len() as f64;
                finished.push(SearchResult {
                    tokens,
                    sum_logp,
                    mean_logp,
                    state: h.state.clone(),
                });
            } else {
                let mut state = h.state.clone();
                let logits = scorer.step(&mut state, tok)?;
                next_live.push(Live {
                    tokens,
                    sum_logp,
                    state,
                    lps: log_softmax(&logits)
                        .into_iter()
                        .map(Scalar::into_f64)
                        .collect(),
                });
            }
        }
        live = next_live;
    }
    finished.sort_by(|a, b| b.mean_logp.total_cmp(&a.mean_logp));
    finished.into_iter().next().ok_or_else(|| {
        InferError::Config("beam search produced no finished hypotheses".into())
    })
}

/// [`TokenScorer`] backed by the model's incremental decoder against one
/// encoded document.
pub struct ModelScorer<'a, S: Scalar> {
    pub model: &'a OneStopModel<S>,
    pub enc: &'a EncodedDoc<S>,
}

impl<'a, S: Scalar> TokenScorer<S> for ModelScorer<'a, S> {
    type State = DecodeState<S>;

    fn start(&self) -> NumResult<Self::State> {
        self.model.start_decode(self.enc)
    }

    fn step(&self, state: &mut Self::State, token: u32) -> NumResult<Vec<S>> {
        self.model.decode_step(state, token)
    }
}

/// A generated question plus the decoder hidden state at its `<eos>` step,
/// which is what conditions the span heads.
pub struct GeneratedQuestion<S: Scalar> {
    pub tokens: Vec<u32>,
    pub sum_logp: f64,
    pub mean_logp: f64,
    pub q_eos: Tensor<S>,
}

pub fn generate_question<S: Scalar>(
    model: &OneStopModel<S>,
    enc: &EncodedDoc<S>,
    mode: DecodeMode,
) -> Result<GeneratedQuestion<S>, InferError> {
    let scorer = ModelScorer { model, enc };
    let max_len = model.config.max_question;
    let result = match mode {
        DecodeMode::Greedy => greedy_search(&scorer, max_len)?,
        DecodeMode::Beam(width) => beam_search(&scorer, width, max_len)?,
    };
    let q_eos = result
        .state
        .last_hidden
        .clone()
        .expect("search always feeds at least <bos>");
    Ok(GeneratedQuestion {
        tokens: result.tokens,
        sum_logp: result.sum_logp,
        mean_logp: result.mean_logp,
        q_eos,
    })
}

/// Picks the answer span by exact enumeration: over all `(i, j)` with
/// `i <= j`, span length at most `max_answer_len`, and `j < doc_len`,
/// maximise `ln p_start[i] + ln p_end[j]`. Earlier spans win ties. Returns
/// the span and its log-probability.
pub fn extract_span<S: Scalar>(
    p_start: &[S],
    p_end: &[S],
    doc_len: usize,
    max_answer_len: usize,
) -> (usize, usize, f64) {
    let n = doc_len.min(p_start.len()).min(p_end.len());
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for (i, ps) in p_start.iter().enumerate().take(n) {
        let lp_start = ps.into_f64().ln();
        let hi = n.min(i + max_answer_len);
        for (j, pe) in p_end.iter().enumerate().take(hi).skip(i) {
            let score = lp_start + pe.into_f64().ln();
            if score > best.2 {
                best = (i, j, score);
            }
        }
    }
    best
}

/// One generated question–answer pair, with document-level token indices
/// (inclusive end) and the joint log-score
/// `sum log p(question tokens) + ln p_start + ln p_end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub window_start: usize,
    pub window_end: usize,
    pub question: String,
    pub question_tokens: Vec<u32>,
    pub answer: String,
    pub answer_start: usize,
    pub answer_end: usize,
    pub log_score: f64,
}

#[derive(Clone, Debug)]
pub struct QaConfig {
    pub window: WindowConfig,
    pub mode: DecodeMode,
    pub max_answer_len: usize,
    pub top_n: usize,
}

impl QaConfig {
    fn validate(&self, max_doc: usize) -> Result<(), InferError> {
        self.window
            .validate()
            .map_err(|e| InferError::Config(e.to_string()))?;
        if self.window.window > max_doc {
            return Err(InferError::Config(format!(
                "window {} exceeds the model's maximum document length {}",
                self.window.window, max_doc
            )));
        }
        if self.max_answer_len == 0 {
            return Err(InferError::Config("max_answer_len must be at least 1".into()));
        }
        if self.top_n == 0 {
            return Err(InferError::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deduplicates by surface form, keeping the best-scoring copy (the earlier
/// window on ties), then ranks by score (earlier window on ties) and keeps
/// the top `top_n`.
pub fn dedup_and_rank(pairs: Vec<QaPair>, top_n: usize) -> Vec<QaPair> {
    let mut kept: Vec<QaPair> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for pair in pairs {
        let key = (pair.question.clone(), pair.answer.clone());
        match index.get(&key) {
            Some(&i) => {
                if pair.log_score > kept[i].log_score {
                    kept[i] = pair;
                }
            }
            None => {
                index.insert(key, kept.len());
                kept.push(pair);
            }
        }
    }
    kept.sort_by(|a, b| {
        b.log_score
            .total_cmp(&a.log_score)
            .then(a.window_start.cmp(&b.window_start))
    });
    kept.truncate(top_n);
    kept
}

#[allow(clippy::too_many_arguments)]
fn assemble_pair<S: Scalar>(
    texts: &[String],
    (ws, we): (usize, usize),
    vocab: &Vocabulary,
    question_tokens: Vec<u32>,
    question_sum_logp: f64,
    p_start: &[S],
    p_end: &[S],
    max_answer_len: usize,
) -> QaPair {
    let (s, e, span_logp) = extract_span(p_start, p_end, we - ws, max_answer_len);
    QaPair {
        window_start: ws,
        window_end: we,
        question: vocab.decode(&question_tokens),
        question_tokens,
        answer: data::join_tokens(&texts[ws + s..=ws + e]),
        answer_start: ws + s,
        answer_end: ws + e,
        log_score: question_sum_logp + span_logp,
    }
}

fn doc_tokens_and_ids(
    vocab: &Vocabulary,
    doc_text: &str,
) -> Result<(Vec<String>, Vec<u32>), InferError> {
    let spans = data::tokenize(doc_text);
    if spans.is_empty() {
        return Err(InferError::EmptyDocument);
    }
    let ids = vocab.encode(&spans);
    let texts = spans.into_iter().map(|s| s.text).collect();
    Ok((texts, ids))
}

/// Joint question–answer generation: one encoder pass per window drives both
/// the question decoder and, through the `<eos>` hidden state it produces,
/// the span heads.
pub fn generate_qa_pairs<S: Scalar>(
    model: &OneStopModel<S>,
    vocab: &Vocabulary,
    doc_text: &str,
    cfg: &QaConfig,
) -> Result<Vec<QaPair>, InferError> {
    cfg.validate(model.config.max_doc)?;
    let (texts, ids) = doc_tokens_and_ids(vocab, doc_text)?;
    let mut pairs = Vec::new();
    for (ws, we) in data::windows(ids.len(), &cfg.window) {
        let window_ids = &ids[ws..we];
        let enc = model.encode_doc(window_ids, window_ids.len())?;
        let generated = generate_question(model, &enc, cfg.mode)?;
        let (p_start, p_end) = model.span_distributions(&enc, &generated.q_eos)?;
        pairs.push(assemble_pair(
            &texts,
            (ws, we),
            vocab,
            generated.tokens,
            generated.sum_logp,
            &p_start,
            &p_end,
            cfg.max_answer_len,
        ));
    }
    Ok(dedup_and_rank(pairs, cfg.top_n))
}

/// Two-pass baseline: `qg` generates the question from its own encoder pass,
/// then `span` re-encodes the window, replays the generated question, and
/// extracts the answer. With the same model in both roles this produces
/// identical pairs to [`generate_qa_pairs`] at twice the encoder passes.
pub fn pipeline_qa_pairs<S: Scalar>(
    qg: &OneStopModel<S>,
    span: &OneStopModel<S>,
    vocab: &Vocabulary,
    doc_text: &str,
    cfg: &QaConfig,
) -> Result<Vec<QaPair>, InferError> {
    cfg.validate(qg.config.max_doc.min(span.config.max_doc))?;
    let (texts, ids) = doc_tokens_and_ids(vocab, doc_text)?;
    let mut pairs = Vec::new();
    for (ws, we) in data::windows(ids.len(), &cfg.window) {
        let window_ids = &ids[ws..we];
        let enc_q = qg.encode_doc(window_ids, window_ids.len())?;
        let generated = generate_question(qg, &enc_q, cfg.mode)?;
        let enc_s = span.encode_doc(window_ids, window_ids.len())?;
        let q_eos = span.force_decode(&enc_s, &generated.tokens)?;
        let (p_start, p_end) = span.span_distributions(&enc_s, &q_eos)?;
        pairs.push(assemble_pair(
            &texts,
            (ws, we),
            vocab,
            generated.tokens,
            generated.sum_logp,
            &p_start,
            &p_end,
            cfg.max_answer_len,
        ));
    }
    Ok(dedup_and_rank(pairs, cfg.top_n))
}
