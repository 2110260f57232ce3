//! Statistical automatic post-editing (APE).
//!
//! The crate learns correction rules from `(source, mt, post-edit)` triplets
//! and applies them to new machine translation output. It is organised
//! bottom-up:
//!
//! * [`corpus`]: sentences, triplets, the joint `mt#src` representation.
//! * [`metrics`]: TER with shifts, corpus BLEU, APE precision, repetition rate.
//! * [`align`]: IBM Model 1, symmetrisation, monolingual Levenshtein alignment.
//! * [`lm`]: n-gram language models (add-one and interpolated Kneser-Ney).
//! * [`tm`]: phrase extraction, translation/reordering estimation, dense
//!   features and neg-impact pruning.
//! * [`decoder`]: log-linear stack decoding with forced/inclusive constraints.
//! * [`optimize`]: n-best line-search tuning and shallow reranking.
//! * [`online`]: instance selection, dynamic knowledge base, negative feedback.
//! * [`qe`]: combining quality-estimation signals with APE output.
//! * [`pipeline`]: training a complete system from triplets.

pub mod align;
pub mod corpus;
mod edit;
pub mod decoder;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod online;
pub mod optimize;
pub mod pipeline;
pub mod qe;
pub mod tm;

pub use align::{LexiconModel, WordAlignment};
pub use corpus::{JointSentence, Sentence, Triplet};
pub use decoder::{DecodeOptions, DecodeResult, Decoder, DecoderInput, Feature, FeatureWeights};
pub use error::{ApeError, Result};
pub use lm::{NGramLM, Smoothing};
pub use metrics::{EditBreakdown, EvalReport, TerAlignment};
pub use tm::{PhraseEntry, PhraseTable};
