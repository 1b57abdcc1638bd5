//! Attention and feed-forward sublayers plus the encoder/decoder stacks
//! assembled from them.
//!
//! The repeated unit is: multi-head scaled dot-product attention, a residual
//! connection normalised by layer norm, then a two-layer ReLU feed-forward
//! network with its own residual and norm. Encoder layers are exactly that
//! unit; decoder layers insert a cross-attention sublayer (attending over the
//! encoder output) between the causal self-attention and the feed-forward.

use rand::Rng;

use crate::numcore::{Mask, NodeId, NumError, NumResult, ParamId, Params, Scalar, Tensor};

use super::{DropoutMode, Graph};

/// Standard deviation for weight initialisation; norms start at identity.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// Query/key/value/output projections, all `[m, m]` with head `i` occupying
/// columns `i*dk .. (i+1)*dk` of the q/k/v projections.
#[derive(Clone, Copy, Debug)]
pub struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerIds {
    pub attn: AttnIds,
    pub norm1: NormIds,
    pub ffn: FfnIds,
    pub norm2: NormIds,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayerIds {
    pub self_attn: AttnIds,
    pub norm1: NormIds,
    pub cross_attn: AttnIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
    pub norm3: NormIds,
}

pub fn init_norm<S: Scalar>(params: &mut Params<S>, prefix: &str, m: usize) -> NormIds {
    NormIds {
        gain: params.add(format!("{prefix}.gain"), Tensor::ones(vec![m])),
        bias: params.add(format!("{prefix}.bias"), Tensor::zeros(vec![m])),
    }
}

pub fn init_attn<S: Scalar, R: Rng>(
    params: &mut Params<S>,
    prefix: &str,
    m: usize,
    rng: &mut R,
) -> AttnIds {
    let mut w = |name: &str, rng: &mut R| {
        params.add(format!("{prefix}.{name}"), Tensor::randn(vec![m, m], INIT_STD, rng))
    };
    AttnIds {
        wq: w("wq", rng),
        wk: w("wk", rng),
        wv: w("wv", rng),
        wo: w("wo", rng),
    }
}

pub fn init_ffn<S: Scalar, R: Rng>(
    params: &mut Params<S>,
    prefix: &str,
    m: usize,
    hidden: usize,
    rng: &mut R,
) -> FfnIds {
    FfnIds {
        w1: params.add(
            format!("{prefix}.w1"),
            Tensor::randn(vec![m, hidden], INIT_STD, rng),
        ),
        b1: params.add(format!("{prefix}.b1"), Tensor::zeros(vec![hidden])),
        w2: params.add(
            format!("{prefix}.w2"),
            Tensor::randn(vec![hidden, m], INIT_STD, rng),
        ),
        b2: params.add(format!("{prefix}.b2"), Tensor::zeros(vec![m])),
    }
}

pub fn init_encoder_layer<S: Scalar, R: Rng>(
    params: &mut Params<S>,
    prefix: &str,
    m: usize,
    hidden: usize,
    rng: &mut R,
) -> EncoderLayerIds {
    EncoderLayerIds {
        attn: init_attn(params, &format!("{prefix}.attn"), m, rng),
        norm1: init_norm(params, &format!("{prefix}.norm1"), m),
        ffn: init_ffn(params, &format!("{prefix}.ffn"), m, hidden, rng),
        norm2: init_norm(params, &format!("{prefix}.norm2"), m),
    }
}

pub fn init_decoder_layer<S: Scalar, R: Rng>(
    params: &mut Params<S>,
    prefix: &str,
    m: usize,
    hidden: usize,
    rng: &mut R,
) -> DecoderLayerIds {
    DecoderLayerIds {
        self_attn: init_attn(params, &format!("{prefix}.self_attn"), m, rng),
        norm1: init_norm(params, &format!("{prefix}.norm1"), m),
        cross_attn: init_attn(params, &format!("{prefix}.cross_attn"), m, rng),
        norm2: init_norm(params, &format!("{prefix}.norm2"), m),
        ffn: init_ffn(params, &format!("{prefix}.ffn"), m, hidden, rng),
        norm3: init_norm(params, &format!("{prefix}.norm3"), m),
    }
}

/// Attention over already-projected queries/keys/values (`[t, m]` each,
/// columns packed per head): per head, `softmax(Q Kᵀ / sqrt(dk)) V`, heads
/// concatenated and passed through the output projection.
#[allow(clippy::too_many_arguments)]
pub fn attention_projected<S: Scalar>(
    g: &mut Graph<S>,
    wo: ParamId,
    heads: usize,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: Option<&Mask>,
    drop: &mut DropoutMode,
) -> NumResult<NodeId> {
    let m = g.tape.value(q).cols();
    if !m.is_multiple_of(heads) {
        return Err(NumError::Invalid {
            op: "attention",
            msg: format!("model width {m} not divisible by {heads} heads"),
        });
    }
    let dk = m / heads;
    let scale = S::from_f64(1.0 / (dk as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.tape.slice_cols(q, h * dk, dk)?;
        let kh = g.tape.slice_cols(k, h * dk, dk)?;
        let vh = g.tape.slice_cols(v, h * dk, dk)?;
        let kt = g.tape.transpose(kh)?;
        let scores = g.tape.matmul(qh, kt)?;
        let scaled = g.tape.scale(scores, scale)?;
        let probs = g.tape.softmax(scaled, mask)?;
        let probs = drop.apply(&mut g.tape, probs)?;
        outs.push(g.tape.matmul(probs, vh)?);
    }
    let concat = g.tape.concat_cols(&outs)?;
    let wo_node = g.p(wo);
    g.tape.matmul(concat, wo_node)
}

/// Projects `x_q` / `x_kv` through the layer's q/k/v weights and runs
/// [`attention_projected`].
pub fn multi_head_attention<S: Scalar>(
    g: &mut Graph<S>,
    ids: &AttnIds,
    heads: usize,
    x_q: NodeId,
    x_kv: NodeId,
    mask: Option<&Mask>,
    drop: &mut DropoutMode,
) -> NumResult<NodeId> {
    let wq = g.p(ids.wq);
    let wk = g.p(ids.wk);
    let wv = g.p(ids.wv);
    let q = g.tape.matmul(x_q, wq)?;
    let k = g.tape.matmul(x_kv, wk)?;
    let v = g.tape.matmul(x_kv, wv)?;
    attention_projected(g, ids.wo, heads, q, k, v, mask, drop)
}

/// Residual combination shared by every sublayer: the input plus the
/// sublayer's contribution, dropout over the sum, then layer norm.
pub fn residual_norm<S: Scalar>(
    g: &mut Graph<S>,
    norm: &NormIds,
    x: NodeId,
    delta: NodeId,
    eps: f64,
    drop: &mut DropoutMode,
) -> NumResult<NodeId> {
    let sum = g.tape.add(x, delta)?;
    let sum = drop.apply(&mut g.tape, sum)?;
    let gain = g.p(norm.gain);
    let bias = g.p(norm.bias);
    g.tape.layer_norm(sum, gain, bias, eps)
}

#[allow(clippy::too_many_arguments)]
pub fn attention_sublayer<S: Scalar>(
    g: &mut Graph<S>,
    attn: &AttnIds,
    norm: &NormIds,
    heads: usize,
    x_q: NodeId,
    x_kv: NodeId,
    mask: Option<&Mask>,
    eps: f64,
    drop: &mut DropoutMode,
) -> NumResult<NodeId> {
    let a = multi_head_attention(g, attn, heads, x_q, x_kv, mask, drop)?;
    residual_norm(g, norm, x_q, a, eps, drop)
}

pub fn ffn_sublayer<S: Scalar>(
    g: &mut Graph<S>,
    ffn: &FfnIds,
    norm: &NormIds,
    x: NodeId,
    eps: f64,
    drop: &mut DropoutMode,
) -> NumResult<NodeId> {
    let w1 = g.p(ffn.w1);
    let b1 = g.p(ffn.b1);
    let w2 = g.p(ffn.w2);
    let b2 = g.p(ffn.b2);
    let h = g.tape.matmul(x, w1)?;
    let h = g.tape.add_bias(h, b1)?;
    let h = g.tape.relu(h)?;
    let y = g.tape.matmul(h, w2)?;
    let y = g.tape.add_bias(y, b2)?;
    residual_norm(g, norm, x, y, eps, drop)
}

/// Runs the full encoder: each layer is self-attention (keys restricted to
/// `keep`) followed by the feed-forward sublayer. `x` is `[t, m]` embedded
/// input; the result has the same shape.
pub fn encoder_stack<S: Scalar>(
    g: &mut Graph<S>,
    layers: &[EncoderLayerIds],
    heads: usize,
    eps: f64,
    x: NodeId,
    keep: &[bool],
    drop: &mut DropoutMode,
) -> NumResult<NodeId> {
    let t = g.tape.value(x).rows();
    if keep.len() != t {
        return Err(NumError::Invalid {
            op: "encoder_stack",
            msg: format!("{} keep flags for {} positions", keep.len(), t),
        });
    }
    let mask = Mask::broadcast_keys(t, keep);
    let mut h = x;
    for layer in layers {
        h = attention_sublayer(
            g, &layer.attn, &layer.norm1, heads, h, h, Some(&mask), eps, drop,
        )?;
        h = ffn_sublayer(g, &layer.ffn, &layer.norm2, h, eps, drop)?;
    }
    Ok(h)
}

/// Runs the decoder over a whole target prefix at once (teacher forcing):
/// causal self-attention, cross-attention over `enc_out` (keys restricted to
/// `enc_keep`), feed-forward. Returns `[t, m]` hidden states.
#[allow(clippy::too_many_arguments)]
pub fn decoder_stack_full<S: Scalar>(
    g: &mut Graph<S>,
    layers: &[DecoderLayerIds],
    heads: usize,
    eps: f64,
    x: NodeId,
    enc_out: NodeId,
    enc_keep: &[bool],
    drop: &mut DropoutMode,
) -> NumResult<NodeId> {
    let t = g.tape.value(x).rows();
    let causal = Mask::causal(t);
    let cross = Mask::broadcast_keys(t, enc_keep);
    let mut h = x;
    for layer in layers {
        h = attention_sublayer(
            g,
            &layer.self_attn,
            &layer.norm1,
            heads,
            h,
            h,
            Some(&causal),
            eps,
            drop,
        )?;
        h = attention_sublayer(
            g,
            &layer.cross_attn,
            &layer.norm2,
            heads,
            h,
            enc_out,
            Some(&cross),
            eps,
            drop,
        )?;
        h = ffn_sublayer(g, &layer.ffn, &layer.norm3, h, eps, drop)?;
    }
    Ok(h)
}
