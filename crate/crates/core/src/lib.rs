//! Similar-question retrieval.
//!
//! The crate covers the whole offline and online path: corpus ingestion and
//! synthetic corpora, tokenization, skip-gram word embeddings, an LSTM
//! question encoder trained on generated pairs, a metadata-aware inverted
//! index for candidate retrieval, the query pipeline, and evaluation.

mod binio;
pub mod corpus;
pub mod datagen;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod manifest;
pub mod pipeline;
pub mod synth;
pub mod text;

pub use corpus::{Corpus, IngestReport, Question, QuestionId};
pub use embed::{EmbeddingTable, SkipGramConfig};
pub use encoder::{EncoderParams, QuestionVector, TrainConfig, TrainingPair};
pub use error::{Error, Result};
pub use eval::{kendall_tau, spearman_rho, LabelSet};
pub use index::{CandidateSet, InvertedIndex, RuleSet};
pub use manifest::EngineManifest;
pub use pipeline::{Engine, QueryOptions, RankedResult, VectorCache};
pub use text::{EntityDictionary, SynonymDictionary, TokenizeMode, Tokenizer, Vocabulary};
