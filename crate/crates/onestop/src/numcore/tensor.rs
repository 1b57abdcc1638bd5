use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::error::{NumError, NumResult};
use super::scalar::Scalar;

/// Dense row-major tensor. The value is immutable after construction; data is
/// shared behind an `Arc`, so clones are cheap and safe to pass across
/// threads. Gradients never live here — they are held by the [`Tape`]
/// (see `tape.rs`) for whichever graph the tensor participates in.
///
/// [`Tape`]: super::tape::Tape
#[derive(Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} elements]", self.data.len())
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor, checking that the shape is made of positive extents
    /// and that its product matches the data length.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<S>) -> NumResult<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumError::BadShape {
                op: "tensor",
                expected: "non-empty shape with positive extents",
                shape,
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![S::zero(); numel]),
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: S) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![v; numel]),
        }
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::one())
    }

    /// Identity matrix, used by tests that pin projections to the identity.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![S::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = S::one();
        }
        Tensor {
            shape: vec![n, n],
            data: Arc::new(data),
        }
    }

    /// Samples from N(0, std^2). All initialisation goes through the caller's
    /// seeded generator so runs are reproducible.
    pub fn randn<R: Rng>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..numel)
            .map(|_| S::from_f64(dist.sample(rng)))
            .collect();
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Number of rows when viewed as a matrix (rank 2 only).
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2, "rows() needs a rank-2 tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2, "cols() needs a rank-2 tensor");
        self.shape[1]
    }

    pub fn get2(&self, r: usize, c: usize) -> S {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[S] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks `self` (rank 2) with another matrix of the same width below it.
    /// Inference uses this to grow key/value caches one row at a time.
    pub fn vstack(&self, below: &Tensor<S>) -> NumResult<Tensor<S>> {
        if self.rank() != 2 || below.rank() != 2 || self.cols() != below.cols() {
            return Err(NumError::ShapeMismatch {
                op: "vstack",
                left: self.shape.clone(),
                right: below.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(self.numel() + below.numel());
        data.extend_from_slice(self.data());
        data.extend_from_slice(below.data());
        Tensor::from_vec(vec![self.rows() + below.rows(), self.cols()], data)
    }

    /// Converts element type; `f32 -> f64` is exact, the reverse rounds.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| T::from_f64(v.into_f64())).collect()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.into_f64()).collect()
    }

    /// Largest absolute element-wise difference, for test assertions.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shapes differ");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.into_f64() - b.into_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a copy with one element nudged by `delta` (finite differences).
    pub fn perturbed(&self, index: usize, delta: S) -> Tensor<S> {
        let mut data = self.data.as_ref().clone();
        data[index] = data[index] + delta;
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }
}

/// Boolean keep-mask with the same shape as the tensor it applies to.
/// `true` means "this position participates"; `false` positions are excluded
/// from attention/softmax by adding a large negative constant to their logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn from_keep(shape: impl Into<Vec<usize>>, keep: Vec<bool>) -> NumResult<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != keep.len() {
            return Err(NumError::DataLength {
                shape,
                len: keep.len(),
            });
        }
        Ok(Mask { shape, keep })
    }

    pub fn all(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Mask {
            shape,
            keep: vec![true; numel],
        }
    }

    /// `[t, t]` lower-triangular mask: position i may attend to j <= i.
    pub fn causal(t: usize) -> Self {
        let mut keep = vec![false; t * t];
        for i in 0..t {
            for j in 0..=i {
                keep[i * t + j] = true;
            }
        }
        Mask {
            shape: vec![t, t],
            keep,
        }
    }

    /// `[rows, keys.len()]` mask that repeats a per-key keep vector for every
    /// query row — the usual padding mask for attention over a document.
    pub fn broadcast_keys(rows: usize, keys: &[bool]) -> Self {
        let mut keep = Vec::with_capacity(rows * keys.len());
        for _ in 0..rows {
            keep.extend_from_slice(keys);
        }
        Mask {
            shape: vec![rows, keys.len()],
            keep,
        }
    }

    pub fn and(&self, other: &Mask) -> NumResult<Mask> {
        if self.shape != other.shape {
            return Err(NumError::ShapeMismatch {
                op: "mask_and",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Mask {
            shape: self.shape.clone(),
            keep: self
                .keep
                .iter()
                .zip(other.keep.iter())
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }
}
