//! Detection, analysis, causal masking, and re-ranking built on
//! question-to-evidence attention in long multimodal contexts.
//!
//! The pipeline, end to end:
//!
//! 1. [`niah`] constructs synthetic interleaved text/image haystacks with a
//!    single evidence needle inserted at a controlled depth, covering four
//!    task variants (text, embedded image, rendered text, identical image)
//!    plus a haystack-composition sweep.
//! 2. [`backend`] defines the model contract — prompt layout, span-aggregated
//!    attention masses, masked greedy generation, head inventory — and ships
//!    two reference backends: a planted-head oracle with constructed
//!    attention rows and a tiny real-softmax decoder.
//! 3. [`detector`] scores every head by its average question-to-needle
//!    attention mass, subtracts a null-question baseline, averages over a
//!    detection set, and selects the top fraction of eligible heads.
//! 4. [`analyzer`] quantifies head-set structure: score-mass sparsity,
//!    cross-condition overlap, layer distributions, and base-vs-adapted
//!    preservation.
//! 5. [`masker`] zeroes the post-softmax weights of selected heads
//!    (prefill+decode or decode-only) and measures retrieval accuracy on
//!    length x depth grids, with random-head controls and cross-length
//!    transfer.
//! 6. [`reranker`] reuses selected heads as a training-free relevance signal
//!    over candidate pages or layout regions, with candidate batching caps
//!    and macro/micro Recall@k reporting.
//! 7. [`adapter`] binds the same backend contract to declared production
//!    architectures: inventory and eligibility mapping, vision-token
//!    accounting, and in-pass mass aggregation.
//!
//! All randomness flows from explicit seeds; repeated runs with identical
//! inputs produce byte-identical artifacts.

pub mod adapter;
pub mod analyzer;
pub mod backend;
pub mod detector;
pub mod error;
pub mod masker;
pub mod niah;
pub mod persist;
pub mod reranker;
pub mod rng;

pub use error::{Error, Result};
