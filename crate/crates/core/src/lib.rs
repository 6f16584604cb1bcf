//! Text generation by copying phrases out of an indexed document collection.
//!
//! The pipeline: [`corpus`] ingests and tokenizes documents; [`segmenter`]
//! splits training documents into copied phrases and fallback tokens;
//! [`encoder`] maps prefixes to query vectors and documents to per-token
//! start/end rows; [`index`] stores those rows and runs the coarse-to-fine
//! candidate search; [`decoder`] generates by repeatedly selecting the
//! best-fitting phrase; [`training`] fits the toy encoder with the phrase and
//! token losses; [`metrics`] scores repetition and diversity.

pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod fixtures;
pub mod index;
pub mod math;
pub mod metrics;
pub mod par;
pub mod segmenter;
pub mod training;

pub use corpus::{Corpus, Document, TokenId, Vocabulary};
pub use encoder::{EncoderBackend, PrefixState, ToyBackend, ToyParams};
pub use par::Exec;
