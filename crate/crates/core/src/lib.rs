//! Spoken dialect identification toolkit.
//!
//! Utterances are represented in three vector spaces: word counts, phone
//! n-gram ("senone") counts and i-vectors extracted against a GMM universal
//! background model. Four classifiers (per-dialect Kneser-Ney trigram models,
//! Bernoulli naive Bayes, maximum entropy and a one-vs-rest linear SVM) turn
//! those representations into per-class scores, which can be normalized and
//! fused across systems and evaluated with accuracy, macro precision and
//! macro recall.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise. Reductions always happen in a
//! fixed order so results are bitwise identical in both modes.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod container;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod ivector;
pub mod par;
pub mod synth;
pub mod vsm;

pub use error::{Error, Result};
