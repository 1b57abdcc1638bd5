//! Evaluation metrics: corpus BLEU and ROUGE for generated questions, and
//! exact-match / token-overlap F1 for extracted answer spans.
//!
//! All text metrics operate on pre-tokenized sequences so that scores are
//! computed over exactly the tokens the model saw. BLEU is corpus-level
//! (n-gram counts pooled before the precision quotient); ROUGE is
//! macro-averaged (per-pair F1, then the mean).

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("hypothesis/reference counts differ: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("no pairs to score")]
    Empty,
    #[error("max_n must be at least 1")]
    BadOrder,
}

type Tokens = [String];

fn ngram_counts(tokens: &Tokens, n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn clipped_matches(hyp: &HashMap<&[String], usize>, rf: &HashMap<&[String], usize>) -> usize {
    hyp.iter()
        .map(|(gram, &c)| c.min(rf.get(gram).copied().unwrap_or(0)))
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct BleuReport {
    pub bleu: f64,
    /// Modified n-gram precisions for n = 1 ..= max_n.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
}

/// Corpus-level BLEU with clipped modified n-gram precision and a brevity
/// penalty. Counts are pooled over the whole corpus before dividing.
/// Add-one smoothing applies to orders two and above only, so a corpus with
/// no unigram overlap scores exactly zero while short-but-correct outputs
/// are not annihilated by a missing higher-order n-gram.
pub fn corpus_bleu(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    max_n: usize,
) -> Result<BleuReport, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::Empty);
    }
    if max_n == 0 {
        return Err(MetricsError::BadOrder);
    }
    let mut precisions = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let mut matches = 0usize;
        let mut total = 0usize;
        for (h, r) in hyps.iter().zip(refs.iter()) {
            let hc = ngram_counts(h, n);
            total += hc.values().sum::<usize>();
            matches += clipped_matches(&hc, &ngram_counts(r, n));
        }
        let p = if n == 1 {
            if total == 0 {
                0.0
            } else {
                matches as f64 / total as f64
            }
        } else {
            (matches + 1) as f64 / (total + 1) as f64
        };
        precisions.push(p);
    }
    let hyp_tokens: usize = hyps.iter().map(Vec::len).sum();
    let ref_tokens: usize = refs.iter().map(Vec::len).sum();
    let brevity_penalty = if hyp_tokens == 0 {
        0.0
    } else if hyp_tokens >= ref_tokens {
        1.0
    } else {
        (1.0 - ref_tokens as f64 / hyp_tokens as f64).exp()
    };
    let bleu = if precisions[0] == 0.0 {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_tokens,
        ref_tokens,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RougeReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Pairs that contributed a score.
    pub scored: usize,
    /// Pairs skipped because the reference had no n-grams of this order.
    pub skipped: usize,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro-averaged ROUGE-N: per-pair clipped n-gram precision/recall/F1,
/// averaged over pairs whose reference has at least one n-gram.
pub fn rouge_n(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    n: usize,
) -> Result<RougeReport, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::Empty);
    }
    if n == 0 {
        return Err(MetricsError::BadOrder);
    }
    let mut sums = (0.0, 0.0, 0.0);
    let mut scored = 0usize;
    let mut skipped = 0usize;
    for (h, r) in hyps.iter().zip(refs.iter()) {
        let rc = ngram_counts(r, n);
        let ref_total: usize = rc.values().sum();
        if ref_total == 0 {
            skipped += 1;
            continue;
        }
        let hc = ngram_counts(h, n);
        let hyp_total: usize = hc.values().sum();
        let m = clipped_matches(&hc, &rc) as f64;
        let p = if hyp_total == 0 {
            0.0
        } else {
            m / hyp_total as f64
        };
        let rec = m / ref_total as f64;
        sums.0 += p;
        sums.1 += rec;
        sums.2 += f1(p, rec);
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricsError::Empty);
    }
    let k = scored as f64;
    Ok(RougeReport {
        precision: sums.0 / k,
        recall: sums.1 / k,
        f1: sums.2 / k,
        scored,
        skipped,
    })
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len(a: &Tokens, b: &Tokens) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Macro-averaged ROUGE-L: longest-common-subsequence precision/recall/F1
/// per pair, averaged over pairs with a non-empty reference.
pub fn rouge_l(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<RougeReport, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sums = (0.0, 0.0, 0.0);
    let mut scored = 0usize;
    let mut skipped = 0usize;
    for (h, r) in hyps.iter().zip(refs.iter()) {
        if r.is_empty() {
            skipped += 1;
            continue;
        }
        let l = lcs_len(h, r) as f64;
        let p = if h.is_empty() { 0.0 } else { l / h.len() as f64 };
        let rec = l / r.len() as f64;
        sums.0 += p;
        sums.1 += rec;
        sums.2 += f1(p, rec);
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricsError::Empty);
    }
    let k = scored as f64;
    Ok(RougeReport {
        precision: sums.0 / k,
        recall: sums.1 / k,
        f1: sums.2 / k,
        scored,
        skipped,
    })
}

/// Aggregate question-quality metrics for an evaluation run.
#[derive(Clone, Debug, Serialize)]
pub struct QuestionMetrics {
    pub pairs: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge1: RougeReport,
    pub rouge2: RougeReport,
    pub rouge_l: RougeReport,
}

impl QuestionMetrics {
    pub fn compute(
        hyps: &[Vec<String>],
        refs: &[Vec<String>],
    ) -> Result<QuestionMetrics, MetricsError> {
        Ok(QuestionMetrics {
            pairs: hyps.len(),
            bleu1: corpus_bleu(hyps, refs, 1)?.bleu,
            bleu2: corpus_bleu(hyps, refs, 2)?.bleu,
            bleu3: corpus_bleu(hyps, refs, 3)?.bleu,
            bleu4: corpus_bleu(hyps, refs, 4)?.bleu,
            rouge1: rouge_n(hyps, refs, 1)?,
            rouge2: rouge_n(hyps, refs, 2)?,
            rouge_l: rouge_l(hyps, refs)?,
        })
    }
}

/// Span-extraction metrics over token-index spans (inclusive ends).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpanMetrics {
    pub pairs: usize,
    /// Fraction of predictions matching the gold span exactly.
    pub exact_match: f64,
    /// Mean per-pair F1 over the sets of covered token indices.
    pub token_f1: f64,
}

impl SpanMetrics {
    pub fn compute(
        pred: &[(usize, usize)],
        gold: &[(usize, usize)],
    ) -> Result<SpanMetrics, MetricsError> {
        if pred.len() != gold.len() {
            return Err(MetricsError::LengthMismatch {
                hyps: pred.len(),
                refs: gold.len(),
            });
        }
        if pred.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut em = 0usize;
        let mut f1_sum = 0.0;
        for (&p, &g) in pred.iter().zip(gold.iter()) {
            if p == g {
                em += 1;
            }
            f1_sum += span_token_f1(p, g);
        }
        let n = pred.len() as f64;
        Ok(SpanMetrics {
            pairs: pred.len(),
            exact_match: em as f64 / n,
            token_f1: f1_sum / n,
        })
    }
}

/// F1 between the token-index sets covered by two inclusive spans.
pub fn span_token_f1(pred: (usize, usize), gold: (usize, usize)) -> f64 {
    let (ps, pe) = pred;
    let (gs, ge) = gold;
    if ps > pe || gs > ge {
        return 0.0;
    }
    let lo = ps.max(gs);
    let hi = pe.min(ge);
    let overlap = if lo > hi { 0 } else { hi - lo + 1 } as f64;
    let p = overlap / (pe - ps + 1) as f64;
    let r = overlap / (ge - gs + 1) as f64;
    f1(p, r)
}
