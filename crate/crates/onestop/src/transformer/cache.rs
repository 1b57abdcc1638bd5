//! Incremental decoding with cached keys and values.
//!
//! During generation the decoder consumes one token at a time. Recomputing
//! self-attention keys/values for the whole prefix every step would be
//! quadratic in work per token, so the cache keeps each layer's projected
//! K/V matrices and grows them by one row per step. Cross-attention K/V
//! depend only on the encoder output and are projected once up front.
//!
//! Tensors inside the cache share their storage, so cloning a cache (as beam
//! search does per hypothesis) is cheap.

use crate::numcore::{Mask, NodeId, NumResult, Scalar, Tensor};

use super::layers::{attention_projected, ffn_sublayer, residual_norm, DecoderLayerIds};
use super::{DropoutMode, Graph};

#[derive(Clone)]
struct LayerKv<S: Scalar> {
    k: Option<Tensor<S>>,
    v: Option<Tensor<S>>,
}

/// Per-layer decoding state for one hypothesis.
#[derive(Clone)]
pub struct DecoderCache<S: Scalar> {
    self_kv: Vec<LayerKv<S>>,
    cross_k: Vec<Tensor<S>>,
    cross_v: Vec<Tensor<S>>,
    enc_keep: Vec<bool>,
    len: usize,
}

impl<S: Scalar> DecoderCache<S> {
    /// Number of tokens consumed so far (equals the next position index).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Projects the encoder output through every decoder layer's cross-attention
/// K/V weights, yielding an empty cache positioned at step zero.
pub fn init_decoder_cache<S: Scalar>(
    g: &mut Graph<S>,
    layers: &[DecoderLayerIds],
    enc_out: NodeId,
    enc_keep: Vec<bool>,
) -> NumResult<DecoderCache<S>> {
    let mut cross_k = Vec::with_capacity(layers.len());
    let mut cross_v = Vec::with_capacity(layers.len());
    for layer in layers {
        let wk = g.p(layer.cross_attn.wk);
        let wv = g.p(layer.cross_attn.wv);
        let k = g.tape.matmul(enc_out, wk)?;
        let v = g.tape.matmul(enc_out, wv)?;
        cross_k.push(g.tape.value(k).clone());
        cross_v.push(g.tape.value(v).clone());
    }
    Ok(DecoderCache {
        self_kv: vec![LayerKv { k: None, v: None }; layers.len()],
        cross_k,
        cross_v,
        enc_keep,
        len: 0,
    })
}

/// Advances the decoder by one token. `x` is the `[1, m]` embedded input for
/// the current position (token embedding plus position `cache.len()`);
/// returns the `[1, m]` hidden state for that position.
///
/// Row `t` of a full teacher-forced pass and the step-`t` output of this
/// function agree: causal masking makes row `t` depend only on rows `0..=t`,
/// which is exactly what the cache holds.
pub fn decoder_step<S: Scalar>(
    g: &mut Graph<S>,
    layers: &[DecoderLayerIds],
    heads: usize,
    eps: f64,
    cache: &mut DecoderCache<S>,
    x: NodeId,
) -> NumResult<NodeId> {
    let mut h = x;
    let cross_mask = Mask::broadcast_keys(1, &cache.enc_keep);
    for (li, layer) in layers.iter().enumerate() {
        // Self-attention over the grown prefix. No mask: every cached
        // position is in the past, so causality holds by construction.
        let wq = g.p(layer.self_attn.wq);
        let wk = g.p(layer.self_attn.wk);
        let wv = g.p(layer.self_attn.wv);
        let q = g.tape.matmul(h, wq)?;
        let k_new = g.tape.matmul(h, wk)?;
        let v_new = g.tape.matmul(h, wv)?;
        let kv = &mut cache.self_kv[li];
        let k_all = match &kv.k {
            Some(prev) => prev.vstack(g.tape.value(k_new))?,
            None => g.tape.value(k_new).clone(),
        };
        let v_all = match &kv.v {
            Some(prev) => prev.vstack(g.tape.value(v_new))?,
            None => g.tape.value(v_new).clone(),
        };
        kv.k = Some(k_all.clone());
        kv.v = Some(v_all.clone());
        let k_node = g.tape.constant(k_all);
        let v_node = g.tape.constant(v_all);
        let attn = attention_projected(
            g,
            layer.self_attn.wo,
            heads,
            q,
            k_node,
            v_node,
            None,
            &mut DropoutMode::Eval,
        )?;
        h = residual_norm(g, &layer.norm1, h, attn, eps, &mut DropoutMode::Eval)?;

        let wq_c = g.p(layer.cross_attn.wq);
        let q_c = g.tape.matmul(h, wq_c)?;
        let ck = g.tape.constant(cache.cross_k[li].clone());
        let cv = g.tape.constant(cache.cross_v[li].clone());
        let attn_c = attention_projected(
            g,
            layer.cross_attn.wo,
            heads,
            q_c,
            ck,
            cv,
            Some(&cross_mask),
            &mut DropoutMode::Eval,
        )?;
        h = residual_norm(g, &layer.norm2, h, attn_c, eps, &mut DropoutMode::Eval)?;

        h = ffn_sublayer(g, &layer.ffn, &layer.norm3, h, eps, &mut DropoutMode::Eval)?;
    }
    cache.len += 1;
    Ok(h)
}
