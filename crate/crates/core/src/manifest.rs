//! Engine directories: every artifact the query path needs, described by an
//! `engine.json` manifest so a single path addresses the whole engine.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::EmbeddingTable;
use crate::encoder::{EncodeOptions, EncoderParams};
use crate::error::{Error, Result};
use crate::index::{InvertedIndex, RuleSet};
use crate::pipeline::{Engine, VectorCache};
use crate::text::{EntityDictionary, TokenizeMode, Vocabulary};

pub const MANIFEST_FILE: &str = "engine.json";
pub const MANIFEST_FORMAT: &str = "SIMQ-ENGINE";
pub const MANIFEST_VERSION: &str = "v1";

/// File names inside the engine directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineFiles {
    pub corpus: String,
    pub vocab: String,
    pub embeddings: String,
    pub encoder: String,
    pub index: String,
    pub rules: String,
    pub entities: String,
    pub vectors: String,
}

impl Default for EngineFiles {
    fn default() -> Self {
        EngineFiles {
            corpus: "corpus.jsonl".into(),
            vocab: "vocab.txt".into(),
            embeddings: "embeddings.txt".into(),
            encoder: "encoder.bin".into(),
            index: "index.bin".into(),
            rules: "rules.jsonl".into(),
            entities: "entities.tsv".into(),
            vectors: "vectors.bin".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineDims {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub questions: usize,
    pub cached_vectors: usize,
    pub postings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineManifest {
    pub format: String,
    pub version: String,
    pub files: EngineFiles,
    pub dims: EngineDims,
    pub tokenize_mode: TokenizeMode,
    pub encode: EncodeOptions,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    /// Free-form record of the settings that produced the artifacts.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EngineManifest {
    pub fn for_engine(engine: &Engine, config: serde_json::Value) -> Self {
        EngineManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION.into(),
            files: EngineFiles::default(),
            dims: dims_of(engine),
            tokenize_mode: engine.mode,
            encode: engine.encode,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: EngineManifest = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::BadMagic { kind: "engine manifest" });
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn path(&self, dir: &Path, name: &str) -> PathBuf {
        dir.join(name)
    }
}

fn dims_of(engine: &Engine) -> EngineDims {
    EngineDims {
        vocab_size: engine.table.vocab().len(),
        embedding_dim: engine.table.dim(),
        hidden_dim: engine.params.hidden_dim(),
        questions: engine.corpus.len(),
        cached_vectors: engine.cache.len(),
        postings: engine.index.len(),
    }
}

impl Engine {
    /// Writes every component and the manifest into `dir` (created if needed).
    pub fn save_dir(&self, dir: &Path, config: serde_json::Value) -> Result<EngineManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = EngineManifest::for_engine(self, config);
        let f = &m.files;
        self.corpus.save(&dir.join(&f.corpus))?;
        self.table.vocab().save(&dir.join(&f.vocab))?;
        self.table.save(&dir.join(&f.embeddings))?;
        self.params.save(&dir.join(&f.encoder))?;
        self.index.save(&dir.join(&f.index))?;
        write_text(&dir.join(&f.rules), &self.rules.to_jsonl())?;
        write_text(&dir.join(&f.entities), &self.entities.to_tsv())?;
        self.cache.save(&dir.join(&f.vectors))?;
        m.save(dir)?;
        Ok(m)
    }

    /// Loads an engine directory and checks its parts against each other
    /// and against the manifest.
    pub fn load_dir(dir: &Path) -> Result<(Engine, EngineManifest)> {
        let m = EngineManifest::load(dir)?;
        let f = &m.files;
        let entities = EntityDictionary::load(&dir.join(&f.entities))?;
        let vocab = Vocabulary::load(&dir.join(&f.vocab))?;
        let table = EmbeddingTable::load(&dir.join(&f.embeddings))?.with_vocab(vocab)?;
        let params = EncoderParams::load(&dir.join(&f.encoder))?;
        let index = InvertedIndex::load(&dir.join(&f.index))?;
        let rules = RuleSet::load(&dir.join(&f.rules))?;
        let cache = VectorCache::load(&dir.join(&f.vectors))?;
        let corpus = Corpus::load(&dir.join(&f.corpus))?
            .tokenized(&crate::text::Tokenizer::new(m.tokenize_mode, &entities))?;
        let engine = Engine {
            corpus,
            table,
            params,
            index,
            rules,
            entities,
            mode: m.tokenize_mode,
            encode: m.encode,
            cache,
        };
        engine.check()?;
        for (_, ids) in engine.index.postings() {
            if let Some(id) = ids
                .iter()
                .find(|&&id| engine.corpus.get(id).is_none_or(|q| !q.answered))
            {
                return Err(Error::invalid(format!(
                    "index posts question {id}, which is not an answered corpus question"
                )));
            }
        }
        let found = dims_of(&engine);
        if found != m.dims {
            return Err(Error::DimensionMismatch(format!(
                "manifest records {:?} but the files hold {:?}",
                m.dims, found
            )));
        }
        Ok((engine, m))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the pieces of an engine from separate files, as produced by the
/// individual build stages, and assembles them.
#[derive(Debug, Clone)]
pub struct EngineSources {
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub embeddings: PathBuf,
    pub encoder: PathBuf,
    pub index: PathBuf,
    pub rules: PathBuf,
    pub entities: PathBuf,
    pub mode: TokenizeMode,
    pub encode: EncodeOptions,
}

impl EngineSources {
    /// Loads every file, recomputes the vector cache, and checks the stored
    /// index against a fresh build from the same corpus and rules.
    pub fn assemble(&self) -> Result<Engine> {
        let entities = EntityDictionary::load(&self.entities)?;
        let vocab = Vocabulary::load(&self.vocab)?;
        let table = EmbeddingTable::load(&self.embeddings)?.with_vocab(vocab)?;
        let params = EncoderParams::load(&self.encoder)?;
        let rules = RuleSet::load(&self.rules)?;
        let stored = InvertedIndex::load(&self.index)?;
        let corpus = Corpus::load(&self.corpus)?
            .tokenized(&crate::text::Tokenizer::new(self.mode, &entities))?;
        let engine = Engine::build(corpus, table, params, entities, rules, self.mode, self.encode)?;
        if engine.index != stored {
            return Err(Error::invalid(
                "index file does not match the corpus, entities and rules given",
            ));
        }
        Ok(engine)
    }
}
