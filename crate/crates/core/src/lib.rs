//! Soft embedding augmentation for neural dialogue generation.
//!
//! The training method replaces selected input tokens with convex mixtures of
//! their distributional neighbors' embeddings and trains the decoder against
//! the matching soft label distribution, alternating augmented and plain
//! optimizer steps. The crate bundles everything needed to run the
//! experiments end to end:
//!
//! * [`corpus`]: tokenization, vocabulary, JSONL dialogue corpus I/O.
//! * [`neighbors`]: CBOW word vectors with negative sampling and cosine
//!   neighbor queries.
//! * [`augment`]: target selection, soft word sets, embedding fusion.
//! * [`seq2seq`]: attentional encoder/decoder with hand-written backprop and
//!   beam search.
//! * [`training`]: losses, Adam, the alternating train loop, perplexity.
//! * [`metrics`]: Dist-n, Ent-n, Sen-n, BLEU-4, NIST-4, average length.
//! * [`checkpoint`], [`config`], [`commands`]: the experiment harness behind
//!   the `softaug` binary.
//!
//! All randomness is derived from a single `u64` seed through named streams
//! ([`seeding`]), so every artifact a run produces is reproducible byte for
//! byte.

pub mod augment;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod neighbors;
pub mod seeding;
pub mod seq2seq;
pub mod training;

pub use error::{Error, Result};
