//! The joint question-generation / answer-extraction model.
//!
//! One encoder–decoder transformer serves both tasks. The encoder reads a
//! document window; the decoder generates the question. The decoder hidden
//! state at the step that predicts `<eos>` (called `q_eos` here) conditions
//! two pointer heads that score every document position as the answer start
//! or end. Training blends the losses:
//!
//! ```text
//! phi_total = lambda * phi_lm + (1 - lambda) * (phi_start + phi_end)
//! ```
//!
//! where `phi_lm` is the summed token cross-entropy of the question and
//! `phi_start`/`phi_end` are cross-entropies of the span heads. `lambda = 1`
//! is pure question generation, `lambda = 0` pure span extraction, and the
//! blend trains both at once. The output vocabulary projection is tied to
//! the input embedding (plus a free bias).

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Batch, BOS, RESERVED};
use crate::numcore::{
    Checkpoint, CheckpointError, Mask, NodeId, NumError, NumResult, ParamId, Params, Reduction,
    Scalar, Tensor,
};
use crate::transformer::{
    decoder_step, init_decoder_cache, layers, DecoderCache, DropoutMode, Graph,
};
use crate::transformer::{DecoderLayerIds, EncoderLayerIds};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint config: {0}")]
    ConfigJson(#[from] serde_json::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Model width `m` (embedding and hidden size).
    pub dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Maximum document-window length in tokens.
    pub max_doc: usize,
    /// Maximum question length in tokens, including the trailing `<eos>`.
    pub max_question: usize,
    pub dropout: f64,
    pub eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 8000,
            dim: 768,
            ffn_dim: 3072,
            heads: 4,
            enc_layers: 6,
            dec_layers: 6,
            max_doc: 160,
            max_question: 32,
            dropout: 0.1,
            eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// A deliberately small profile for tests and smoke runs.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            dim: 64,
            ffn_dim: 256,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            max_doc: 160,
            max_question: 32,
            dropout: 0.0,
            eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.vocab_size <= RESERVED.len() {
            return fail(format!(
                "vocab_size {} leaves no room for real tokens",
                self.vocab_size
            ));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.ffn_dim == 0 || self.enc_layers == 0 || self.dec_layers == 0 {
            return fail("ffn_dim and layer counts must be positive".into());
        }
        if self.max_doc == 0 || self.max_question < 2 {
            return fail("max_doc must be >= 1 and max_question >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.eps <= 0.0 {
            return fail("eps must be positive".into());
        }
        Ok(())
    }

    fn dec_positions(&self) -> usize {
        // Denoising pretraining decodes documents, so the decoder needs
        // positions for whichever side is longer (+1 for the shifted input).
        self.max_doc.max(self.max_question) + 1
    }
}

struct ModelIds {
    embed: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc_layers: Vec<EncoderLayerIds>,
    dec_layers: Vec<DecoderLayerIds>,
    lm_bias: ParamId,
    w_start: ParamId,
    w_end: ParamId,
}

/// Loss nodes for one example, all living on the caller's graph. `phi_total`
/// is the lambda-blended scalar; the raw parts are kept for logging and for
/// gradient-flow assertions.
pub struct ExampleNodes {
    pub phi_lm: NodeId,
    pub phi_start: NodeId,
    pub phi_end: NodeId,
    pub phi_total: NodeId,
    /// `[1, doc_len_padded]` raw span scores (pre-softmax).
    pub start_scores: NodeId,
    pub end_scores: NodeId,
    /// `[1, m]` decoder hidden state at the `<eos>`-predicting step.
    pub q_eos: NodeId,
}

/// Per-batch scalar loss values, extracted for logging.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LossBreakdown {
    pub phi_lm: f64,
    pub phi_start: f64,
    pub phi_end: f64,
    pub phi_total: f64,
    pub lambda: f64,
}

/// A document run through the encoder once, ready for any number of decode
/// passes against it.
pub struct EncodedDoc<S: Scalar> {
    pub hidden: Tensor<S>,
    pub keep: Vec<bool>,
    pub doc: Vec<u32>,
    pub len: usize,
}

/// Incremental decoding state: the transformer K/V cache plus the hidden
/// state of the most recent step (the candidate `q_eos`).
pub struct DecodeState<S: Scalar> {
    cache: DecoderCache<S>,
    pub last_hidden: Option<Tensor<S>>,
}

impl<S: Scalar> Clone for DecodeState<S> {
    fn clone(&self) -> Self {
        DecodeState {
            cache: self.cache.clone(),
            last_hidden: self.last_hidden.clone(),
        }
    }
}

impl<S: Scalar> DecodeState<S> {
    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

pub struct OneStopModel<S: Scalar> {
    pub config: ModelConfig,
    pub params: Params<S>,
    ids: ModelIds,
    encode_count: AtomicU64,
}

impl<S: Scalar> OneStopModel<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let (v, m) = (config.vocab_size, config.dim);
        let embed = params.add("embed", Tensor::randn(vec![v, m], layers::INIT_STD, &mut rng));
        let enc_pos = params.add(
            "enc.pos",
            Tensor::randn(vec![config.max_doc, m], layers::INIT_STD, &mut rng),
        );
        let dec_pos = params.add(
            "dec.pos",
            Tensor::randn(vec![config.dec_positions(), m], layers::INIT_STD, &mut rng),
        );
        let enc_layers = (0..config.enc_layers)
            .map(|i| {
                layers::init_encoder_layer(
                    &mut params,
                    &format!("enc.l{i}"),
                    m,
                    config.ffn_dim,
                    &mut rng,
                )
            })
            .collect();
        let dec_layers = (0..config.dec_layers)
            .map(|i| {
                layers::init_decoder_layer(
                    &mut params,
                    &format!("dec.l{i}"),
                    m,
                    config.ffn_dim,
                    &mut rng,
                )
            })
            .collect();
        let lm_bias = params.add("lm.bias", Tensor::zeros(vec![v]));
        let w_start = params.add(
            "span.w_start",
            Tensor::randn(vec![m, m], layers::INIT_STD, &mut rng),
        );
        let w_end = params.add(
            "span.w_end",
            Tensor::randn(vec![m, m], layers::INIT_STD, &mut rng),
        );
        Ok(OneStopModel {
            config,
            params,
            ids: ModelIds {
                embed,
                enc_pos,
                dec_pos,
                enc_layers,
                dec_layers,
                lm_bias,
                w_start,
                w_end,
            },
            encode_count: AtomicU64::new(0),
        })
    }

    /// How many times the encoder has run (forward passes over a document).
    pub fn encode_count(&self) -> u64 {
        self.encode_count.load(Ordering::Relaxed)
    }

    pub fn lm_bias_id(&self) -> ParamId {
        self.ids.lm_bias
    }

    pub fn span_weight_ids(&self) -> (ParamId, ParamId) {
        (self.ids.w_start, self.ids.w_end)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let config = serde_json::to_value(&self.config)?;
        Checkpoint::from_params(config, &self.params).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let ckpt = Checkpoint::load(path)?;
        let config: ModelConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Self::new(config, 0)?;
        ckpt.apply_to(&mut model.params)?;
        Ok(model)
    }

    // ---- shared graph pieces ---------------------------------------------

    fn embed_tokens(
        &self,
        g: &mut Graph<S>,
        tokens: &[u32],
        pos_table: ParamId,
        first_pos: usize,
    ) -> NumResult<NodeId> {
        let table = g.p(self.ids.embed);
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let tok = g.tape.gather(table, &ids)?;
        let pos_node = g.p(pos_table);
        let positions: Vec<usize> = (first_pos..first_pos + tokens.len()).collect();
        let pos = g.tape.gather(pos_node, &positions)?;
        g.tape.add(tok, pos)
    }

    /// Encoder forward over a (possibly padded) document row.
    fn encode_on_graph(
        &self,
        g: &mut Graph<S>,
        doc: &[u32],
        doc_len: usize,
        drop: &mut DropoutMode,
    ) -> NumResult<(NodeId, Vec<bool>)> {
        if doc.is_empty() || doc_len == 0 || doc_len > doc.len() {
            return Err(NumError::Invalid {
                op: "encode",
                msg: format!("document length {doc_len} invalid for {} tokens", doc.len()),
            });
        }
        self.encode_count.fetch_add(1, Ordering::Relaxed);
        let x = self.embed_tokens(g, doc, self.ids.enc_pos, 0)?;
        let keep: Vec<bool> = (0..doc.len()).map(|i| i < doc_len).collect();
        let h = layers::encoder_stack(
            g,
            &self.ids.enc_layers,
            self.config.heads,
            self.config.eps,
            x,
            &keep,
            drop,
        )?;
        Ok((h, keep))
    }

    /// Vocabulary logits for decoder hidden states, with the projection tied
    /// to the embedding table.
    fn lm_logits(&self, g: &mut Graph<S>, hidden: NodeId) -> NumResult<NodeId> {
        let embed = g.p(self.ids.embed);
        let et = g.tape.transpose(embed)?;
        let logits = g.tape.matmul(hidden, et)?;
        let bias = g.p(self.ids.lm_bias);
        g.tape.add_bias(logits, bias)
    }

    /// Raw span scores for one head: `transpose((enc @ W) @ q_eos^T)`,
    /// shape `[1, doc_len]`.
    fn span_scores(
        &self,
        g: &mut Graph<S>,
        w: ParamId,
        enc: NodeId,
        q_eos: NodeId,
    ) -> NumResult<NodeId> {
        let wn = g.p(w);
        let proj = g.tape.matmul(enc, wn)?;
        let qt = g.tape.transpose(q_eos)?;
        let scores = g.tape.matmul(proj, qt)?;
        g.tape.transpose(scores)
    }

    // ---- training forward --------------------------------------------------

    /// Builds the full joint loss for one example on `g`. The question must
    /// be unpadded and end with `<eos>`; the document row may carry padding
    /// beyond `doc_len`.
    #[allow(clippy::too_many_arguments)]
    pub fn example_nodes(
        &self,
        g: &mut Graph<S>,
        doc: &[u32],
        doc_len: usize,
        question: &[u32],
        span: (usize, usize),
        lambda: f64,
        drop: &mut DropoutMode,
    ) -> NumResult<ExampleNodes> {
        if question.is_empty() {
            return Err(NumError::Invalid {
                op: "example_nodes",
                msg: "empty question".into(),
            });
        }
        if span.0 > span.1 || span.1 >= doc_len {
            return Err(NumError::Invalid {
                op: "example_nodes",
                msg: format!("span {span:?} out of range for doc_len {doc_len}"),
            });
        }
        let (enc, keep) = self.encode_on_graph(g, doc, doc_len, drop)?;

        // Teacher forcing: inputs are <bos> then all but the final token;
        // targets are the question itself (whose last token is <eos>).
        let mut dec_in = Vec::with_capacity(question.len());
        dec_in.push(BOS);
        dec_in.extend_from_slice(&question[..question.len() - 1]);
        let x = self.embed_tokens(g, &dec_in, self.ids.dec_pos, 0)?;
        let hidden = layers::decoder_stack_full(
            g,
            &self.ids.dec_layers,
            self.config.heads,
            self.config.eps,
            x,
            enc,
            &keep,
            drop,
        )?;
        let logits = self.lm_logits(g, hidden)?;
        let targets: Vec<usize> = question.iter().map(|&t| t as usize).collect();
        let phi_lm = g
            .tape
            .cross_entropy(logits, &targets, Reduction::Sum, None)?;

        // The hidden state at the step that predicts <eos> conditions the
        // span heads — the same state used when generation emits <eos>.
        let q_eos = g.tape.row(hidden, question.len() - 1)?;
        let start_scores = self.span_scores(g, self.ids.w_start, enc, q_eos)?;
        let end_scores = self.span_scores(g, self.ids.w_end, enc, q_eos)?;
        let span_mask = Mask::broadcast_keys(1, &keep);
        let phi_start =
            g.tape
                .cross_entropy(start_scores, &[span.0], Reduction::Sum, Some(&span_mask))?;
        let phi_end =
            g.tape
                .cross_entropy(end_scores, &[span.1], Reduction::Sum, Some(&span_mask))?;

        let lm_part = g.tape.scale(phi_lm, S::from_f64(lambda))?;
        let span_sum = g.tape.add(phi_start, phi_end)?;
        let span_part = g.tape.scale(span_sum, S::from_f64(1.0 - lambda))?;
        let phi_total = g.tape.add(lm_part, span_part)?;
        Ok(ExampleNodes {
            phi_lm,
            phi_start,
            phi_end,
            phi_total,
            start_scores,
            end_scores,
            q_eos,
        })
    }

    /// Mean of the per-example blended losses over a batch, plus the scalar
    /// breakdown for logging.
    pub fn batch_loss(
        &self,
        g: &mut Graph<S>,
        batch: &Batch,
        lambda: f64,
        drop: &mut DropoutMode,
    ) -> NumResult<(NodeId, LossBreakdown)> {
        let n = batch.len();
        let mut total: Option<NodeId> = None;
        let mut sums = [0.0f64; 4];
        for i in 0..n {
            let nodes = self.example_nodes(
                g,
                &batch.doc[i],
                batch.doc_len[i],
                &batch.question[i][..batch.question_len[i]],
                (batch.start[i], batch.end[i]),
                lambda,
                drop,
            )?;
            sums[0] += g.tape.scalar_value(nodes.phi_lm).into_f64();
            sums[1] += g.tape.scalar_value(nodes.phi_start).into_f64();
            sums[2] += g.tape.scalar_value(nodes.phi_end).into_f64();
            sums[3] += g.tape.scalar_value(nodes.phi_total).into_f64();
            total = Some(match total {
                None => nodes.phi_total,
                Some(t) => g.tape.add(t, nodes.phi_total)?,
            });
        }
        let total = total.ok_or(NumError::Invalid {
            op: "batch_loss",
            msg: "empty batch".into(),
        })?;
        let mean = g.tape.scale(total, S::from_f64(1.0 / n as f64))?;
        let b = n as f64;
        Ok((
            mean,
            LossBreakdown {
                phi_lm: sums[0] / b,
                phi_start: sums[1] / b,
                phi_end: sums[2] / b,
                phi_total: sums[3] / b,
                lambda,
            },
        ))
    }

    // ---- inference ----------------------------------------------------------

    /// One encoder pass, with the hidden states extracted for reuse across
    /// any number of decode runs.
    pub fn encode_doc(&self, doc: &[u32], doc_len: usize) -> NumResult<EncodedDoc<S>> {
        let mut g = Graph::new(&self.params);
        let (h, keep) = self.encode_on_graph(&mut g, doc, doc_len, &mut DropoutMode::Eval)?;
        Ok(EncodedDoc {
            hidden: g.tape.value(h).clone(),
            keep,
            doc: doc.to_vec(),
            len: doc_len,
        })
    }

    pub fn start_decode(&self, enc: &EncodedDoc<S>) -> NumResult<DecodeState<S>> {
        let mut g = Graph::new(&self.params);
        let enc_node = g.tape.constant(enc.hidden.clone());
        let cache = init_decoder_cache(&mut g, &self.ids.dec_layers, enc_node, enc.keep.clone())?;
        Ok(DecodeState {
            cache,
            last_hidden: None,
        })
    }

    /// Feeds one token and returns the vocabulary logits for the next
    /// position. The state's `last_hidden` is updated to this step's hidden
    /// state.
    pub fn decode_step(&self, state: &mut DecodeState<S>, token: u32) -> NumResult<Vec<S>> {
        let pos = state.cache.len();
        let mut g = Graph::new(&self.params);
        let x = self.embed_tokens(&mut g, &[token], self.ids.dec_pos, pos)?;
        let h = decoder_step(
            &mut g,
            &self.ids.dec_layers,
            self.config.heads,
            self.config.eps,
            &mut state.cache,
            x,
        )?;
        state.last_hidden = Some(g.tape.value(h).clone());
        let logits = self.lm_logits(&mut g, h)?;
        Ok(g.tape.value(logits).data().to_vec())
    }

    /// Replays a complete question (ending in `<eos>`) through the
    /// incremental decoder, exactly as generation would have produced it,
    /// and returns the hidden state of the `<eos>`-predicting step.
    pub fn force_decode(&self, enc: &EncodedDoc<S>, question: &[u32]) -> NumResult<Tensor<S>> {
        if question.is_empty() {
            return Err(NumError::Invalid {
                op: "force_decode",
                msg: "empty question".into(),
            });
        }
        let mut state = self.start_decode(enc)?;
        let mut inputs = Vec::with_capacity(question.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&question[..question.len() - 1]);
        for &tok in &inputs {
            self.decode_step(&mut state, tok)?;
        }
        Ok(state.last_hidden.expect("at least one step ran"))
    }

    /// Start/end probability vectors over document positions for a given
    /// `q_eos` hidden state. Padded positions have exactly zero probability.
    pub fn span_distributions(
        &self,
        enc: &EncodedDoc<S>,
        q_eos: &Tensor<S>,
    ) -> NumResult<(Vec<S>, Vec<S>)> {
        let mut g = Graph::new(&self.params);
        let enc_node = g.tape.constant(enc.hidden.clone());
        let q_node = g.tape.constant(q_eos.clone());
        let mask = Mask::broadcast_keys(1, &enc.keep);
        let s_scores = self.span_scores(&mut g, self.ids.w_start, enc_node, q_node)?;
        let e_scores = self.span_scores(&mut g, self.ids.w_end, enc_node, q_node)?;
        let s_probs = g.tape.softmax(s_scores, Some(&mask))?;
        let e_probs = g.tape.softmax(e_scores, Some(&mask))?;
        Ok((
            g.tape.value(s_probs).data().to_vec(),
            g.tape.value(e_probs).data().to_vec(),
        ))
    }
}
