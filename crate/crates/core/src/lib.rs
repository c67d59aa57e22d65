//! Paraphrase generation for delexicalized utterances.
//!
//! The crate groups utterances into signature-keyed paraphrase sets,
//! reformats them into training pairs, trains a transformer encoder-decoder
//! whose output layer can copy source positions, decodes n-best paraphrases
//! with beam search, and scores them with intrinsic metrics and with an
//! extrinsic augmentation pipeline (exact-match acceptor plus a small joint
//! intent/slot model).

pub mod corpus;
pub mod embedder;
pub mod error;
pub mod fst;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod nlu;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
