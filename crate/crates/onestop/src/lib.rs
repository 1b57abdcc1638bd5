//! Joint question generation and answer extraction over text documents,
//! built on a small reverse-mode autodiff engine — no external ML runtime.
//!
//! The crate trains a single encoder–decoder transformer whose loss blends a
//! question-generation term with answer-span terms, weighted by a mixing
//! coefficient lambda, and ships batch tooling (`onestop` binary) for
//! preparing corpora, training, generating question–answer pairs, and
//! scoring them.

pub mod config;
pub mod data;
pub mod inference;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod synthetic;
pub mod training;
pub mod transformer;

/// The guide under `book/` compiled as doc-tests, so every code block in it
/// builds and runs against the current crate on `cargo test`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
