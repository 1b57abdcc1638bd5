use std::collections::HashMap;

use rand::Rng;

use super::error::{NumError, NumResult};
use super::params::{ParamId, Params};
use super::scalar::Scalar;
use super::tensor::{Mask, Tensor};

/// Additive constant applied to masked logits before normalisation. Large
/// enough that `exp` underflows to exactly zero for any reasonable logit.
const MASK_FILL: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Offsets that map a flattened output batch index to the 2-D blocks of the
/// two matmul operands. Precomputed in the forward pass, reused in backward.
#[derive(Clone, Debug)]
struct MatDims {
    n: usize,
    k: usize,
    p: usize,
    a_offsets: Vec<usize>,
    b_offsets: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Op<S: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    AddBias { x: NodeId, bias: NodeId },
    Mul(NodeId, NodeId),
    Scale { x: NodeId, factor: S },
    MatMul { a: NodeId, b: NodeId, dims: MatDims },
    Transpose(NodeId),
    Relu(NodeId),
    Softmax { x: NodeId },
    MaskFill { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: S },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, reduction: Reduction, log_probs: Tensor<S> },
    Gather { table: NodeId, ids: Vec<usize> },
    Row { x: NodeId, index: usize },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    SumAll(NodeId),
    MeanAll(NodeId),
    Dropout { x: NodeId, keep: Vec<bool>, scale: S },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Reverse-mode autodiff tape. Forward operations append nodes; `backward`
/// walks the recorded list in reverse, accumulating gradients by addition so
/// that values feeding several consumers (diamond graphs) sum both paths.
///
/// A tape represents one computation graph. Parameters live outside in a
/// [`Params`] store and are imported as leaves via [`Tape::param`]; after
/// `backward`, their gradients can be read back with [`Tape::param_grad`].
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Convenience for `[1]`-shaped loss nodes.
    pub fn scalar_value(&self, id: NodeId) -> S {
        debug_assert_eq!(self.nodes[id.0].value.numel(), 1);
        self.nodes[id.0].value.data()[0]
    }

    /// Imports a tensor that does not require gradients.
    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Imports a tensor that requires gradients (ad-hoc leaf, mostly tests).
    pub fn var(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Imports a parameter as a gradient-tracked leaf. Calling this twice for
    /// the same parameter returns the same node, so every use within one
    /// graph shares a single gradient accumulator (weight tying relies on
    /// this).
    pub fn param(&mut self, params: &Params<S>, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(params.get(id).clone(), Op::Leaf, true);
        self.param_nodes.insert(id, node);
        node
    }

    pub fn param_node(&self, id: ParamId) -> Option<NodeId> {
        self.param_nodes.get(&id).copied()
    }

    /// Gradient of a parameter after `backward`, if it was used in the graph.
    pub fn param_grad(&self, id: ParamId) -> Option<&[S]> {
        self.param_node(id).and_then(|n| self.grad(n))
    }

    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor<S>> {
        let g = self.grad(id)?;
        Some(
            Tensor::from_vec(self.nodes[id.0].value.shape().to_vec(), g.to_vec())
                .expect("gradient has the node's shape"),
        )
    }

    // ---- forward operations -------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NumResult<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(NumError::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// `[r, c] + [c]`: adds a bias row vector to every row.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NumResult<NodeId> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if tx.rank() != 2 || tb.rank() != 1 || tb.shape()[0] != tx.cols() {
            return Err(NumError::ShapeMismatch {
                op: "add_bias",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(tx.data()[i * c + j] + tb.data()[j]);
            }
        }
        let value = Tensor::from_vec(vec![r, c], data)?;
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NumResult<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(NumError::ShapeMismatch {
                op: "mul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: NodeId, factor: S) -> NumResult<NodeId> {
        let tx = &self.nodes[x.0].value;
        let data = tx.data().iter().map(|v| *v * factor).collect();
        let value = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Scale { x, factor }, ng))
    }

    /// Matrix product `[..., n, k] x [..., k, p] -> [..., n, p]`. Leading
    /// batch dimensions broadcast against each other (equal, 1, or absent).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NumResult<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mismatch = || NumError::ShapeMismatch {
            op: "matmul",
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        };
        if ta.rank() < 2 || tb.rank() < 2 {
            return Err(mismatch());
        }
        let (n, ka) = (ta.shape()[ta.rank() - 2], ta.shape()[ta.rank() - 1]);
        let (kb, p) = (tb.shape()[tb.rank() - 2], tb.shape()[tb.rank() - 1]);
        if ka != kb {
            return Err(mismatch());
        }
        let a_batch = &ta.shape()[..ta.rank() - 2];
        let b_batch = &tb.shape()[..tb.rank() - 2];
        let (out_batch, a_offsets, b_offsets) =
            broadcast_batches(a_batch, b_batch, n * ka, kb * p).ok_or_else(mismatch)?;

        let batches = a_offsets.len();
        let mut out = vec![S::zero(); batches * n * p];
        for bi in 0..batches {
            let (ao, bo, co) = (a_offsets[bi], b_offsets[bi], bi * n * p);
            let (ad, bd) = (ta.data(), tb.data());
            for i in 0..n {
                for kk in 0..ka {
                    let aik = ad[ao + i * ka + kk];
                    let brow = &bd[bo + kk * p..bo + (kk + 1) * p];
                    let orow = &mut out[co + i * p..co + (i + 1) * p];
                    for j in 0..p {
                        orow[j] = orow[j] + aik * brow[j];
                    }
                }
            }
        }
        let mut shape = out_batch;
        shape.push(n);
        shape.push(p);
        let value = Tensor::from_vec(shape, out)?;
        let ng = self.needs(a) || self.needs(b);
        let dims = MatDims {
            n,
            k: ka,
            p,
            a_offsets,
            b_offsets,
        };
        Ok(self.push(value, Op::MatMul { a, b, dims }, ng))
    }

    pub fn transpose(&mut self, x: NodeId) -> NumResult<NodeId> {
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 2 {
            return Err(NumError::BadShape {
                op: "transpose",
                expected: "rank-2 tensor",
                shape: tx.shape().to_vec(),
            });
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = tx.data()[i * c + j];
            }
        }
        let value = Tensor::from_vec(vec![c, r], data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Transpose(x), ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NumResult<NodeId> {
        let tx = &self.nodes[x.0].value;
        let data = tx
            .data()
            .iter()
            .map(|v| if *v > S::zero() { *v } else { S::zero() })
            .collect();
        let value = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Relu(x), ng))
    }

    /// Adds `-1e9` to positions the mask excludes. Gradient passes through
    /// unchanged (the fill is an additive constant).
    pub fn mask_fill(&mut self, x: NodeId, mask: &Mask) -> NumResult<NodeId> {
        let tx = &self.nodes[x.0].value;
        if tx.shape() != mask.shape() {
            return Err(NumError::ShapeMismatch {
                op: "mask_fill",
                left: tx.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        let fill = S::from_f64(MASK_FILL);
        let data = tx
            .data()
            .iter()
            .zip(mask.keep().iter())
            .map(|(v, &k)| if k { *v } else { *v + fill })
            .collect();
        let value = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::MaskFill { x }, ng))
    }

    /// Softmax over the last axis, numerically stabilised by subtracting the
    /// row maximum. Masked positions get `-1e9` added before normalisation,
    /// which drives their probability to exactly zero; a row with nothing
    /// left unmasked is an error.
    pub fn softmax(&mut self, x: NodeId, mask: Option<&Mask>) -> NumResult<NodeId> {
        let tx = &self.nodes[x.0].value;
        if let Some(m) = mask {
            if m.shape() != tx.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "softmax",
                    left: tx.shape().to_vec(),
                    right: m.shape().to_vec(),
                });
            }
        }
        let width = *tx.shape().last().expect("non-empty shape");
        let rows = tx.numel() / width;
        let fill = S::from_f64(MASK_FILL);
        let mut out = vec![S::zero(); tx.numel()];
        for r in 0..rows {
            let xs = &tx.data()[r * width..(r + 1) * width];
            let keep = mask.map(|m| &m.keep()[r * width..(r + 1) * width]);
            if let Some(k) = keep {
                if !k.iter().any(|&b| b) {
                    return Err(NumError::FullyMaskedRow { row: r });
                }
            }
            let masked: Vec<S> = xs
                .iter()
                .enumerate()
                .map(|(i, v)| match keep {
                    Some(k) if !k[i] => *v + fill,
                    _ => *v,
                })
                .collect();
            let max = masked.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            let exps: Vec<S> = masked
                .iter()
                .map(|v| {
                    let e = (*v - max).exp();
                    z = z + e;
                    e
                })
                .collect();
            for (i, e) in exps.into_iter().enumerate() {
                out[r * width + i] = e / z;
            }
        }
        let value = Tensor::from_vec(tx.shape().to_vec(), out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Softmax { x }, ng))
    }

    /// Layer normalisation over the last axis with learned gain and bias:
    /// `(x - mean) / sqrt(var + eps) * gain + bias`, population variance.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> NumResult<NodeId> {
        let (tx, tg, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        );
        let width = *tx.shape().last().expect("non-empty shape");
        if tg.rank() != 1 || tg.shape()[0] != width {
            return Err(NumError::ShapeMismatch {
                op: "layer_norm",
                left: tx.shape().to_vec(),
                right: tg.shape().to_vec(),
            });
        }
        if tb.shape() != tg.shape() {
            return Err(NumError::ShapeMismatch {
                op: "layer_norm",
                left: tg.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let eps_s = S::from_f64(eps);
        let rows = tx.numel() / width;
        let w = S::from_usize(width);
        let mut out = vec![S::zero(); tx.numel()];
        for r in 0..rows {
            let xs = &tx.data()[r * width..(r + 1) * width];
            let mean = xs.iter().cloned().sum::<S>() / w;
            let var = xs
                .iter()
                .map(|v| (*v - mean) * (*v - mean))
                .sum::<S>()
                / w;
            let inv = S::one() / (var + eps_s).sqrt();
            for i in 0..width {
                out[r * width + i] = (xs[i] - mean) * inv * tg.data()[i] + tb.data()[i];
            }
        }
        let value = Tensor::from_vec(tx.shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                eps: eps_s,
            },
            ng,
        ))
    }

    /// Negative log-likelihood of per-row target classes under a log-softmax
    /// of the logits. Rows are summed or averaged per `reduction`. An
    /// optional mask excludes positions from the normalisation (additive
    /// `-1e9`, as in [`Tape::softmax`]); the target index itself must be kept.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        reduction: Reduction,
        mask: Option<&Mask>,
    ) -> NumResult<NodeId> {
        let tl = &self.nodes[logits.0].value;
        if tl.rank() != 2 {
            return Err(NumError::BadShape {
                op: "cross_entropy",
                expected: "rank-2 logits [rows, classes]",
                shape: tl.shape().to_vec(),
            });
        }
        let (rows, classes) = (tl.rows(), tl.cols());
        if targets.len() != rows {
            return Err(NumError::Invalid {
                op: "cross_entropy",
                msg: format!("{} targets for {} rows", targets.len(), rows),
            });
        }
        if let Some(m) = mask {
            if m.shape() != tl.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "cross_entropy",
                    left: tl.shape().to_vec(),
                    right: m.shape().to_vec(),
                });
            }
        }
        let fill = S::from_f64(MASK_FILL);
        let mut log_probs = vec![S::zero(); rows * classes];
        let mut total = S::zero();
        for r in 0..rows {
            let t = targets[r];
            if t >= classes {
                return Err(NumError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    size: classes,
                });
            }
            let keep = mask.map(|m| &m.keep()[r * classes..(r + 1) * classes]);
            if let Some(k) = keep {
                if !k[t] {
                    return Err(NumError::Invalid {
                        op: "cross_entropy",
                        msg: format!("target {t} in row {r} is masked"),
                    });
                }
            }
            let xs = &tl.data()[r * classes..(r + 1) * classes];
            let masked: Vec<S> = xs
                .iter()
                .enumerate()
                .map(|(i, v)| match keep {
                    Some(k) if !k[i] => *v + fill,
                    _ => *v,
                })
                .collect();
            let max = masked.iter().cloned().fold(S::neg_infinity(), S::max);
            let lse = masked
                .iter()
                .map(|v| (*v - max).exp())
                .sum::<S>()
                .ln()
                + max;
            for i in 0..classes {
                log_probs[r * classes + i] = masked[i] - lse;
            }
            total = total - (masked[t] - lse);
        }
        if reduction == Reduction::Mean {
            total = total / S::from_usize(rows);
        }
        let log_probs = Tensor::from_vec(vec![rows, classes], log_probs)?;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                reduction,
                log_probs,
            },
            ng,
        ))
    }

    /// Row lookup: `table[ids[i], :]` stacked into `[ids.len(), cols]`.
    /// Backward scatter-adds, so repeated ids accumulate.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NumResult<NodeId> {
        let tt = &self.nodes[table.0].value;
        if tt.rank() != 2 {
            return Err(NumError::BadShape {
                op: "gather",
                expected: "rank-2 table",
                shape: tt.shape().to_vec(),
            });
        }
        if ids.is_empty() {
            return Err(NumError::Invalid {
                op: "gather",
                msg: "empty id list".into(),
            });
        }
        let (rows, cols) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumError::IndexOutOfRange {
                    op: "gather",
                    index: id,
                    size: rows,
                });
            }
            data.extend_from_slice(tt.row_slice(id));
        }
        let value = Tensor::from_vec(vec![ids.len(), cols], data)?;
        let ng = self.needs(table);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Selects one row of a matrix as `[1, cols]`.
    pub fn row(&mut self, x: NodeId, index: usize) -> NumResult<NodeId> {
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 2 {
            return Err(NumError::BadShape {
                op: "row",
                expected: "rank-2 tensor",
                shape: tx.shape().to_vec(),
            });
        }
        if index >= tx.rows() {
            return Err(NumError::IndexOutOfRange {
                op: "row",
                index,
                size: tx.rows(),
            });
        }
        let value = Tensor::from_vec(vec![1, tx.cols()], tx.row_slice(index).to_vec())?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Row { x, index }, ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NumResult<NodeId> {
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 2 {
            return Err(NumError::BadShape {
                op: "slice_cols",
                expected: "rank-2 tensor",
                shape: tx.shape().to_vec(),
            });
        }
        if len == 0 || start + len > tx.cols() {
            return Err(NumError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                size: tx.cols(),
            });
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&tx.data()[i * c + start..i * c + start + len]);
        }
        let value = Tensor::from_vec(vec![r, len], data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceCols { x, start, len }, ng))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NumResult<NodeId> {
        if parts.is_empty() {
            return Err(NumError::Invalid {
                op: "concat_cols",
                msg: "no parts".into(),
            });
        }
        let rows = self.nodes[parts[0].0].value.rows();
        let mut total_cols = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.rank() != 2 || t.rows() != rows {
                return Err(NumError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.nodes[parts[0].0].value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            total_cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row_slice(i));
            }
        }
        let value = Tensor::from_vec(vec![rows, total_cols], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NumResult<NodeId> {
        let total = self.nodes[x.0].value.data().iter().cloned().sum::<S>();
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(total), Op::SumAll(x), ng))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NumResult<NodeId> {
        let t = &self.nodes[x.0].value;
        let total = t.data().iter().cloned().sum::<S>() / S::from_usize(t.numel());
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(total), Op::MeanAll(x), ng))
    }

    /// Inverted dropout: keeps each element with probability `1 - rate` and
    /// scales survivors by `1 / (1 - rate)`. `rate == 0` is a no-op.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> NumResult<NodeId> {
        if rate == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::Invalid {
                op: "dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        let tx = &self.nodes[x.0].value;
        let keep: Vec<bool> = (0..tx.numel()).map(|_| rng.random::<f64>() >= rate).collect();
        let scale = S::from_f64(1.0 / (1.0 - rate));
        let data = tx
            .data()
            .iter()
            .zip(keep.iter())
            .map(|(v, &k)| if k { *v * scale } else { S::zero() })
            .collect();
        let value = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, keep, scale }, ng))
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradients are stored on the tape and
    /// read back via [`Tape::grad`] / [`Tape::param_grad`]; every
    /// gradient-tracked node reachable from the loss ends up populated.
    pub fn backward(&mut self, loss: NodeId) -> NumResult<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NumError::BadShape {
                op: "backward",
                expected: "scalar loss",
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // nothing trainable feeds the loss
        }
        self.grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let g = self.grads[idx].take().expect("checked above");
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[S]) {
        // `nodes` is only read here; `grads` is the only thing mutated.
        macro_rules! buf {
            ($id:expr) => {{
                let id: NodeId = $id;
                if self.nodes[id.0].needs_grad {
                    let numel = self.nodes[id.0].value.numel();
                    Some(
                        self.grads[id.0]
                            .get_or_insert_with(|| vec![S::zero(); numel])
                            .as_mut_slice() as *mut [S],
                    )
                } else {
                    None
                }
            }};
        }
        // SAFETY of the raw pointers below: inputs of a node always precede it
        // on the tape, so an input buffer is never the `g` borrowed by the
        // caller; two different input slots may alias only when an op uses the
        // same node twice, and those arms accumulate sequentially.
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = buf!(a) {
                    let ga = unsafe { &mut *ga };
                    for (o, gi) in ga.iter_mut().zip(g) {
                        *o = *o + *gi;
                    }
                }
                if let Some(gb) = buf!(b) {
                    let gb = unsafe { &mut *gb };
                    for (o, gi) in gb.iter_mut().zip(g) {
                        *o = *o + *gi;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                let cols = self.nodes[bias.0].value.numel();
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for (o, gi) in gx.iter_mut().zip(g) {
                        *o = *o + *gi;
                    }
                }
                if let Some(gb) = buf!(bias) {
                    let gb = unsafe { &mut *gb };
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % cols] = gb[i % cols] + *gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (
                    self.nodes[a.0].value.clone(),
                    self.nodes[b.0].value.clone(),
                );
                if let Some(ga) = buf!(a) {
                    let ga = unsafe { &mut *ga };
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * bv.data()[i];
                    }
                }
                if let Some(gb) = buf!(b) {
                    let gb = unsafe { &mut *gb };
                    for i in 0..g.len() {
                        gb[i] = gb[i] + g[i] * av.data()[i];
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i] * factor;
                    }
                }
            }
            Op::MatMul { a, b, dims } => {
                let MatDims {
                    n,
                    k,
                    p,
                    a_offsets,
                    b_offsets,
                } = dims;
                let (av, bv) = (
                    self.nodes[a.0].value.clone(),
                    self.nodes[b.0].value.clone(),
                );
                if let Some(ga) = buf!(a) {
                    let ga = unsafe { &mut *ga };
                    for bi in 0..a_offsets.len() {
                        let (ao, bo, co) = (a_offsets[bi], b_offsets[bi], bi * n * p);
                        for i in 0..n {
                            for j in 0..p {
                                let gij = g[co + i * p + j];
                                for kk in 0..k {
                                    ga[ao + i * k + kk] =
                                        ga[ao + i * k + kk] + gij * bv.data()[bo + kk * p + j];
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = buf!(b) {
                    let gb = unsafe { &mut *gb };
                    for bi in 0..a_offsets.len() {
                        let (ao, bo, co) = (a_offsets[bi], b_offsets[bi], bi * n * p);
                        for i in 0..n {
                            for kk in 0..k {
                                let aik = av.data()[ao + i * k + kk];
                                for j in 0..p {
                                    gb[bo + kk * p + j] =
                                        gb[bo + kk * p + j] + aik * g[co + i * p + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    let (r, c) = {
                        let t = &self.nodes[x.0].value;
                        (t.rows(), t.cols())
                    };
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = gx[i * c + j] + g[j * r + i];
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.clone();
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for i in 0..g.len() {
                        if xv.data()[i] > S::zero() {
                            gx[i] = gx[i] + g[i];
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let s = self.nodes[idx].value.clone();
                let width = *s.shape().last().expect("non-empty");
                let rows = s.numel() / width;
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for r in 0..rows {
                        let sv = &s.data()[r * width..(r + 1) * width];
                        let gv = &g[r * width..(r + 1) * width];
                        let dot = sv
                            .iter()
                            .zip(gv.iter())
                            .map(|(si, gi)| *si * *gi)
                            .sum::<S>();
                        for i in 0..width {
                            gx[r * width + i] = gx[r * width + i] + sv[i] * (gv[i] - dot);
                        }
                    }
                }
            }
            Op::MaskFill { x } => {
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i];
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.nodes[x.0].value.clone();
                let gv = self.nodes[gain.0].value.clone();
                let width = *xv.shape().last().expect("non-empty");
                let rows = xv.numel() / width;
                let w = S::from_usize(width);
                // Recompute row statistics rather than caching them.
                let mut xhat = vec![S::zero(); xv.numel()];
                let mut inv_std = vec![S::zero(); rows];
                for r in 0..rows {
                    let xs = &xv.data()[r * width..(r + 1) * width];
                    let mean = xs.iter().cloned().sum::<S>() / w;
                    let var = xs.iter().map(|v| (*v - mean) * (*v - mean)).sum::<S>() / w;
                    let inv = S::one() / (var + eps).sqrt();
                    inv_std[r] = inv;
                    for i in 0..width {
                        xhat[r * width + i] = (xs[i] - mean) * inv;
                    }
                }
                if let Some(gb) = buf!(bias) {
                    let gb = unsafe { &mut *gb };
                    for r in 0..rows {
                        for i in 0..width {
                            gb[i] = gb[i] + g[r * width + i];
                        }
                    }
                }
                if let Some(gg) = buf!(gain) {
                    let gg = unsafe { &mut *gg };
                    for r in 0..rows {
                        for i in 0..width {
                            gg[i] = gg[i] + g[r * width + i] * xhat[r * width + i];
                        }
                    }
                }
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for r in 0..rows {
                        let gr = &g[r * width..(r + 1) * width];
                        let xh = &xhat[r * width..(r + 1) * width];
                        let mut sum_dxhat = S::zero();
                        let mut sum_dxhat_xhat = S::zero();
                        let dxhat: Vec<S> = (0..width)
                            .map(|i| {
                                let d = gr[i] * gv.data()[i];
                                sum_dxhat = sum_dxhat + d;
                                sum_dxhat_xhat = sum_dxhat_xhat + d * xh[i];
                                d
                            })
                            .collect();
                        let f = inv_std[r] / w;
                        for i in 0..width {
                            let term =
                                w * dxhat[i] - sum_dxhat - xh[i] * sum_dxhat_xhat;
                            gx[r * width + i] = gx[r * width + i] + f * term;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                reduction,
                log_probs,
            } => {
                let scale = match reduction {
                    Reduction::Sum => g[0],
                    Reduction::Mean => g[0] / S::from_usize(targets.len()),
                };
                let classes = log_probs.cols();
                if let Some(gl) = buf!(logits) {
                    let gl = unsafe { &mut *gl };
                    for (r, &t) in targets.iter().enumerate() {
                        for i in 0..classes {
                            let p = log_probs.data()[r * classes + i].exp();
                            let onehot = if i == t { S::one() } else { S::zero() };
                            gl[r * classes + i] = gl[r * classes + i] + scale * (p - onehot);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let cols = self.nodes[table.0].value.cols();
                if let Some(gt) = buf!(table) {
                    let gt = unsafe { &mut *gt };
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            gt[id * cols + j] = gt[id * cols + j] + g[r * cols + j];
                        }
                    }
                }
            }
            Op::Row { x, index } => {
                let cols = self.nodes[x.0].value.cols();
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for j in 0..cols {
                        gx[index * cols + j] = gx[index * cols + j] + g[j];
                    }
                }
            }
            Op::SliceCols { x, start, len } => {
                let (rows, cols) = {
                    let t = &self.nodes[x.0].value;
                    (t.rows(), t.cols())
                };
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for i in 0..rows {
                        for j in 0..len {
                            gx[i * cols + start + j] = gx[i * cols + start + j] + g[i * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let rows = self.nodes[idx].value.rows();
                let total = self.nodes[idx].value.cols();
                let mut offset = 0;
                for part in parts {
                    let cols = self.nodes[part.0].value.cols();
                    if let Some(gp) = buf!(part) {
                        let gp = unsafe { &mut *gp };
                        for i in 0..rows {
                            for j in 0..cols {
                                gp[i * cols + j] = gp[i * cols + j] + g[i * total + offset + j];
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for v in gx.iter_mut() {
                        *v = *v + g[0];
                    }
                }
            }
            Op::MeanAll(x) => {
                let numel = self.nodes[x.0].value.numel();
                let f = g[0] / S::from_usize(numel);
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for v in gx.iter_mut() {
                        *v = *v + f;
                    }
                }
            }
            Op::Dropout { x, keep, scale } => {
                if let Some(gx) = buf!(x) {
                    let gx = unsafe { &mut *gx };
                    for i in 0..g.len() {
                        if keep[i] {
                            gx[i] = gx[i] + g[i] * scale;
                        }
                    }
                }
            }
        }
    }
}

/// Right-aligned broadcast of two batch-dimension lists. Returns the output
/// batch shape and, per flattened output batch index, the element offset of
/// the corresponding 2-D block in each operand.
fn broadcast_batches(
    a_batch: &[usize],
    b_batch: &[usize],
    a_block: usize,
    b_block: usize,
) -> Option<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let ndim = a_batch.len().max(b_batch.len());
    let mut out = vec![1usize; ndim];
    for (i, slot) in out.iter_mut().enumerate() {
        let ad = dim_from_right(a_batch, ndim, i);
        let bd = dim_from_right(b_batch, ndim, i);
        *slot = match (ad, bd) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            _ => return None,
        };
    }
    // Strides (in elements) for each operand over the output batch dims;
    // broadcast dimensions get stride zero.
    let mut a_strides = vec![0usize; ndim];
    let mut b_strides = vec![0usize; ndim];
    let mut acc = a_block;
    for i in (0..ndim).rev() {
        let ad = dim_from_right(a_batch, ndim, i);
        if ad != 1 {
            a_strides[i] = acc;
        }
        acc *= ad;
    }
    let mut acc = b_block;
    for i in (0..ndim).rev() {
        let bd = dim_from_right(b_batch, ndim, i);
        if bd != 1 {
            b_strides[i] = acc;
        }
        acc *= bd;
    }
    let total: usize = out.iter().product();
    let mut a_offsets = Vec::with_capacity(total);
    let mut b_offsets = Vec::with_capacity(total);
    for flat in 0..total {
        let (mut rem, mut ao, mut bo) = (flat, 0usize, 0usize);
        for i in (0..ndim).rev() {
            let idx = rem % out[i];
            rem /= out[i];
            ao += idx * a_strides[i];
            bo += idx * b_strides[i];
        }
        a_offsets.push(ao);
        b_offsets.push(bo);
    }
    Some((out, a_offsets, b_offsets))
}

fn dim_from_right(dims: &[usize], ndim: usize, i: usize) -> usize {
    // i indexes the output batch dims left-to-right; align `dims` at the right.
    let pad = ndim - dims.len();
    if i < pad {
        1
    } else {
        dims[i - pad]
    }
}

/// Log-softmax of a plain slice (no autodiff) — used on decoder logits when
/// scoring generation hypotheses.
pub fn log_softmax<S: Scalar>(xs: &[S]) -> Vec<S> {
    let max = xs.iter().cloned().fold(S::neg_infinity(), S::max);
    let lse = xs.iter().map(|v| (*v - max).exp()).sum::<S>().ln() + max;
    xs.iter().map(|v| *v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2<S: Scalar>(r: usize, c: usize, v: Vec<f64>) -> Tensor<S> {
        Tensor::from_vec(vec![r, c], v.into_iter().map(S::from_f64).collect()).unwrap()
    }

    #[test]
    fn matmul_known_value() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(1, 2, vec![1.0, 2.0]));
        let b = tape.constant(t2(2, 1, vec![3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_identity_round_trip() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t2(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]));
        let i3 = tape.constant(Tensor::eye(3));
        let y = tape.matmul(x, i3).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(vec![2, 3]));
        let b = tape.constant(Tensor::ones(vec![4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        match err {
            NumError::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![4, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn matmul_broadcasts_batch_dims() {
        // [2, 2, 3] x [3, 2] -> [2, 2, 2], the single right matrix reused.
        let mut tape = Tape::<f64>::new();
        let a_data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let a = tape.constant(Tensor::from_vec(vec![2, 2, 3], a_data.clone()).unwrap());
        let b = tape.constant(t2(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2, 2]);
        // Row [0,1,2] x B = [0*1+1*0+2*1, 0+1+2] = [2, 3]
        assert_eq!(&tape.value(c).data()[0..2], &[2.0, 3.0]);
        // Last row [9,10,11] -> [9+11, 10+11] = [20, 21]
        assert_eq!(&tape.value(c).data()[6..8], &[20.0, 21.0]);
    }

    #[test]
    fn softmax_frozen_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t2(1, 3, vec![1.0, 2.0, 3.0]));
        let s = tape.softmax(x, None).unwrap();
        let expect = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (got, want) in tape.value(s).data().iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let sum: f64 = tape.value(s).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_no_overflow_and_uniform() {
        let mut tape = Tape::<f64>::new();
        let big = tape.constant(t2(1, 2, vec![1000.0, 0.0]));
        let s = tape.softmax(big, None).unwrap();
        assert!(tape.value(s).data()[0] > 0.999999);
        assert!(tape.value(s).is_finite());
        let even = tape.constant(t2(1, 2, vec![0.0, 0.0]));
        let s2 = tape.softmax(even, None).unwrap();
        assert_eq!(tape.value(s2).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_mask_zeroes_and_renormalises() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t2(1, 3, vec![5.0, 1.0, 1.0]));
        let mask = Mask::from_keep(vec![1, 3], vec![false, true, true]).unwrap();
        let s = tape.softmax(x, Some(&mask)).unwrap();
        let d = tape.value(s).data();
        assert_eq!(d[0], 0.0, "masked position must be exactly zero");
        assert!((d[1] - 0.5).abs() < 1e-12);
        assert!((d[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_fully_masked_row() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let mask = Mask::from_keep(vec![2, 2], vec![true, true, false, false]).unwrap();
        let err = tape.softmax(x, Some(&mask)).unwrap_err();
        assert_eq!(err, NumError::FullyMaskedRow { row: 1 });
    }

    #[test]
    fn cross_entropy_uniform_is_ln_classes() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(t2(1, 4, vec![0.0; 4]));
        let loss = tape
            .cross_entropy(logits, &[2], Reduction::Sum, None)
            .unwrap();
        assert!((tape.scalar_value(loss) - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_tiny() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(t2(1, 2, vec![20.0, 0.0]));
        let loss = tape
            .cross_entropy(logits, &[0], Reduction::Sum, None)
            .unwrap();
        assert!(tape.scalar_value(loss) < 1e-6);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(t2(1, 3, vec![0.0; 3]));
        let err = tape
            .cross_entropy(logits, &[3], Reduction::Sum, None)
            .unwrap_err();
        assert!(matches!(err, NumError::IndexOutOfRange { index: 3, size: 3, .. }));
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t2(1, 4, vec![1.0, 2.0, 3.0, 4.0]));
        let gain = tape.constant(Tensor::ones(vec![4]));
        let bias = tape.constant(Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        let mean = 2.5;
        let var = 1.25;
        let inv = 1.0 / (var + 1e-5f64).sqrt();
        for (i, xv) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let want = (xv - mean) * inv;
            assert!((tape.value(y).data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_and_row_and_slice() {
        let mut tape = Tape::<f64>::new();
        let table = tape.constant(t2(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let rows = tape.gather(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(rows).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let r1 = tape.row(rows, 1).unwrap();
        assert_eq!(tape.value(r1).data(), &[0.0, 1.0]);
        let sl = tape.slice_cols(rows, 1, 1).unwrap();
        assert_eq!(tape.value(sl).data(), &[5.0, 1.0, 5.0]);
        let cc = tape.concat_cols(&[rows, rows]).unwrap();
        assert_eq!(tape.value(cc).shape(), &[3, 4]);
        assert_eq!(tape.value(cc).row_slice(0), &[4.0, 5.0, 4.0, 5.0]);
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // y = sum(x * x): dy/dx = 2x, with x feeding Mul twice.
        let mut tape = Tape::<f64>::new();
        let x = tape.var(t2(1, 3, vec![1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.sum_all(sq).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn weight_tied_leaf_shares_gradient() {
        // The same parameter imported twice gets one node and hence one
        // accumulator that sees both uses.
        let mut params = Params::<f64>::new();
        let w = params.add("w", t2(1, 2, vec![3.0, 4.0]));
        let mut tape = Tape::<f64>::new();
        let n1 = tape.param(&params, w);
        let n2 = tape.param(&params, w);
        assert_eq!(n1, n2);
        let s = tape.mul(n1, n2).unwrap(); // w^2
        let y = tape.sum_all(s).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.param_grad(w).unwrap(), &[6.0, 8.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(t2(2, 2, vec![1.0; 4]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, NumError::BadShape { .. }));
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_survivors() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(vec![1, 1000]));
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let d = tape.value(y).data();
        assert!(d.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
        let kept = d.iter().filter(|&&v| v != 0.0).count();
        assert!((300..700).contains(&kept), "kept {kept} of 1000");
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let xs = [1.0f64, 2.0, 3.0];
        let ls = log_softmax(&xs);
        assert!((ls[0].exp() - 0.09003057317038046).abs() < 1e-12);
    }
}
