use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Element type of every tensor in the engine.
///
/// Day-to-day training runs in `f32`; gradient checking rebuilds the same
/// graphs in `f64` so that central finite differences have enough headroom.
/// The trait is sealed in spirit: only the two float widths make sense here.
pub trait Scalar: Float + Sum + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;

    /// Shorthand used all over the tape code.
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}
