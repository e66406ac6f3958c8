//! Fixtures shared by the benchmarks under `benches/`.

use std::path::PathBuf;

use simq_core::embed::EmbeddingTable;
use simq_core::encoder::{EncodeOptions, SimilarityKind};
use simq_core::synth::{synth_corpus, TemplateBank};
use simq_core::text::{build_vocab, TokenizeMode, Tokenizer};
use simq_core::{Corpus, Engine, EncoderParams, EntityDictionary, RuleSet};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn entities() -> EntityDictionary {
    EntityDictionary::load(&data_dir().join("entities.tsv")).expect("bundled entities")
}

pub fn rules() -> RuleSet {
    RuleSet::load(&data_dir().join("rules.jsonl")).expect("bundled rules")
}

/// Synthetic corpus of `n` questions, tokenized against the bundled entity dictionary.
pub fn corpus(n: usize, seed: u64, entities: &EntityDictionary) -> Corpus {
    let bank = TemplateBank::load(&data_dir().join("templates.json")).expect("bundled templates");
    synth_corpus(n, seed, &bank)
        .and_then(|c| c.tokenized(&Tokenizer::dictionary(entities)))
        .expect("synthetic corpus")
}

/// Randomly initialised embeddings over the corpus vocabulary.
pub fn table(corpus: &Corpus, dim: usize) -> EmbeddingTable {
    let vocab = build_vocab(corpus, 1).expect("vocabulary");
    EmbeddingTable::init(vocab, dim, 1).expect("embedding table")
}

/// Untrained engine over a synthetic corpus; scoring cost does not depend on training.
pub fn engine(n: usize, dim: usize, hidden: usize, params: EncoderParams) -> Engine {
    assert_eq!(params.input_dim(), dim);
    assert_eq!(params.hidden_dim(), hidden);
    let entities = entities();
    let corpus = corpus(n, 7, &entities);
    let table = table(&corpus, dim);
    Engine::build(
        corpus,
        table,
        params,
        entities,
        rules(),
        TokenizeMode::Dictionary,
        EncodeOptions {
            similarity: SimilarityKind::Cosine,
            ..EncodeOptions::default()
        },
    )
    .expect("engine")
}
