//! The query path: tokenize, extract keywords, retrieve candidates, score
//! them against the query vector, threshold, and rank.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::corpus::{Corpus, Question, QuestionId};
use crate::embed::EmbeddingTable;
use crate::encoder::{encode_with, score, EncodeOptions, EncoderParams, QuestionVector};
use crate::error::{Error, Result};
use crate::index::{CandidateSet, InvertedIndex, MetaMatch, RetrieveOptions, Retriever, RuleSet};
use crate::text::{EntityDictionary, TokenizeMode, Tokenizer};

pub const VECTOR_MAGIC: &str = "SIMQ-VEC v1";
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub id: QuestionId,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryOptions {
    pub k: usize,
    pub threshold: f64,
    pub retrieve: RetrieveOptions,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            retrieve: RetrieveOptions::default(),
        }
    }
}

/// Sorts by score descending, then id ascending; keeps at most `k` scores
/// at or above `threshold` and assigns ranks.
pub fn rank_scores(mut scored: Vec<(QuestionId, f64)>, k: usize, threshold: f64) -> Vec<RankedResult> {
    scored.retain(|&(_, s)| s >= threshold);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (id, score))| RankedResult { id, score, rank: i + 1 })
        .collect()
}

/// Encoded question vectors keyed by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorCache {
    hidden_dim: usize,
    vectors: BTreeMap<QuestionId, QuestionVector>,
}

impl VectorCache {
    pub fn new(hidden_dim: usize) -> Self {
        VectorCache {
            hidden_dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn insert(&mut self, id: QuestionId, v: QuestionVector) -> Result<()> {
        if v.dim() != self.hidden_dim {
            return Err(Error::DimensionMismatch(format!(
                "vector of dim {} in a cache of dim {}",
                v.dim(),
                self.hidden_dim
            )));
        }
        self.vectors.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: QuestionId) -> Option<&QuestionVector> {
        self.vectors.get(&id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (QuestionId, &QuestionVector)> {
        self.vectors.iter().map(|(&id, v)| (id, v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(VECTOR_MAGIC);
        w.u32(self.hidden_dim as u32);
        w.u64(self.vectors.len() as u64);
        for (&id, v) in &self.vectors {
            w.u64(id);
            w.f64s(&v.0);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        binio::check_magic(bytes, VECTOR_MAGIC, "vector cache")?;
        let mut r = Reader::after_magic(bytes, "vector cache");
        let hidden_dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut cache = VectorCache::new(hidden_dim);
        for _ in 0..count {
            let id = r.u64()?;
            let v = QuestionVector(r.f64s(hidden_dim)?);
            if cache.vectors.insert(id, v).is_some() {
                return Err(Error::invalid(format!("vector cache repeats id {id}")));
            }
        }
        r.finish()?;
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Encodes every tokenized question of the corpus.
pub fn precompute_vectors(
    corpus: &Corpus,
    table: &EmbeddingTable,
    params: &EncoderParams,
    opts: &EncodeOptions,
) -> Result<VectorCache> {
    let encoded: Vec<(QuestionId, QuestionVector)> = corpus
        .questions()
        .filter(|q| !q.tokens.is_empty())
        .collect::<Vec<_>>()
        .par_iter()
        .map(|q| Ok((q.id, encode_with(&q.tokens, table, params, opts)?)))
        .collect::<Result<_>>()?;
    let mut cache = VectorCache::new(params.hidden_dim());
    for (id, v) in encoded {
        cache.insert(id, v)?;
    }
    Ok(cache)
}

/// What a query produced, with the intermediate stages kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub keywords: Vec<String>,
    pub level: MetaMatch,
    pub candidates: usize,
    pub results: Vec<RankedResult>,
}

/// Every component the query path needs, loaded and checked for consistency.
#[derive(Debug, Clone)]
pub struct Engine {
    pub corpus: Corpus,
    pub table: EmbeddingTable,
    pub params: EncoderParams,
    pub index: InvertedIndex,
    pub rules: RuleSet,
    pub entities: EntityDictionary,
    pub mode: TokenizeMode,
    pub encode: EncodeOptions,
    pub cache: VectorCache,
}

impl Engine {
    /// Builds the index and vector cache for an already tokenized corpus.
    pub fn build(
        corpus: Corpus,
        table: EmbeddingTable,
        params: EncoderParams,
        entities: EntityDictionary,
        rules: RuleSet,
        mode: TokenizeMode,
        encode: EncodeOptions,
    ) -> Result<Self> {
        if !corpus.is_tokenized() {
            return Err(Error::invalid("engine corpus must be tokenized"));
        }
        let index = InvertedIndex::build(&corpus, &entities, &rules);
        let cache = precompute_vectors(&corpus, &table, &params, &encode)?;
        let engine = Engine {
            corpus,
            table,
            params,
            index,
            rules,
            entities,
            mode,
            encode,
            cache,
        };
        engine.check()?;
        Ok(engine)
    }

    pub fn check(&self) -> Result<()> {
        if self.table.dim() != self.params.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "embedding dim {} but encoder input dim {}",
                self.table.dim(),
                self.params.input_dim()
            )));
        }
        if self.cache.hidden_dim() != self.params.hidden_dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector cache dim {} but encoder hidden dim {}",
                self.cache.hidden_dim(),
                self.params.hidden_dim()
            )));
        }
        if let Some((id, _)) = self.cache.iter().find(|(id, _)| self.corpus.get(*id).is_none()) {
            return Err(Error::invalid(format!("vector cache holds unknown question {id}")));
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> Tokenizer<'_> {
        Tokenizer::new(self.mode, &self.entities)
    }

    pub fn retriever(&self) -> Retriever<'_> {
        Retriever {
            index: &self.index,
            entities: &self.entities,
            rules: &self.rules,
        }
    }

    /// Tokenizes `text` and runs [`Engine::query_question`].
    pub fn query(
        &self,
        text: &str,
        category: Option<&str>,
        intention: Option<&str>,
        opts: &QueryOptions,
    ) -> Result<QueryOutcome> {
        if text.trim().is_empty() {
            return Err(Error::EmptyQuestion);
        }
        let q = Question::query(text, &self.tokenizer(), category, intention)?;
        self.query_question(&q, opts)
    }

    pub fn query_question(&self, q: &Question, opts: &QueryOptions) -> Result<QueryOutcome> {
        if opts.threshold.is_nan() {
            return Err(Error::invalid("threshold is NaN"));
        }
        let v = encode_with(&q.tokens, &self.table, &self.params, &self.encode)?;
        let cands = self.retriever().retrieve(q, &opts.retrieve);
        let results = self.rank_candidates(&v, &cands, opts)?;
        Ok(QueryOutcome {
            keywords: cands.keywords,
            level: cands.level,
            candidates: cands.ids.len(),
            results,
        })
    }

    pub fn vector(&self, id: QuestionId) -> Result<QuestionVector> {
        if let Some(v) = self.cache.get(id) {
            return Ok(v.clone());
        }
        let q = self
            .corpus
            .get(id)
            .ok_or_else(|| Error::invalid(format!("unknown question {id}")))?;
        encode_with(&q.tokens, &self.table, &self.params, &self.encode)
    }

    pub fn rank_candidates(
        &self,
        query: &QuestionVector,
        cands: &CandidateSet,
        opts: &QueryOptions,
    ) -> Result<Vec<RankedResult>> {
        let scored = cands
            .ids
            .iter()
            .map(|&id| {
                let s = match self.cache.get(id) {
                    Some(v) => score(self.encode.similarity, query, v)?,
                    None => score(self.encode.similarity, query, &self.vector(id)?)?,
                };
                Ok((id, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(rank_scores(scored, opts.k, opts.threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranking_order_threshold_and_k() {
        let r = rank_scores(vec![(4, 0.7), (2, 0.9), (3, 0.7), (9, 0.2), (1, 0.5)], 3, 0.5);
        let got: Vec<_> = r.iter().map(|x| (x.id, x.rank)).collect();
        assert_eq!(got, [(2, 1), (3, 2), (4, 3)]);
        assert!(rank_scores(vec![(1, 1e300)], 5, f64::INFINITY).is_empty());
        assert!(rank_scores(vec![], 5, 0.0).is_empty());
    }

    fn engine() -> Engine {
        let ent = EntityDictionary::parse("fever\tsymptom:fever\tsymptom\nrash\tsymptom:rash\tsymptom\n").unwrap();
        let mut c = Corpus::new("t");
        for (id, text) in [(1, "fever and rash"), (2, "my kid has fever"), (3, "rash on arm"), (4, "no entity")] {
            c.insert(Question {
                id,
                text: text.into(),
                tokens: vec![],
                category: "kids".into(),
                intention: "symptom-to-disease".into(),
                answered: true,
                family: None,
            })
            .unwrap();
        }
        let c = c.tokenized(&Tokenizer::dictionary(&ent)).unwrap();
        let vocab = crate::text::build_vocab(&c, 1).unwrap();
        let table = EmbeddingTable::init(vocab, 3, 5).unwrap();
        let params = EncoderParams::random(3, 4, 0.5, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        Engine::build(
            c,
            table,
            params,
            ent,
            RuleSet::default(),
            TokenizeMode::Dictionary,
            EncodeOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn query_scores_match_independent_similarity() {
        let e = engine();
        let opts = QueryOptions {
            threshold: f64::NEG_INFINITY,
            ..Default::default()
        };
        let out = e.query("fever again", Some("kids"), Some("symptom-to-disease"), &opts).unwrap();
        assert_eq!(out.keywords, ["symptom:fever"]);
        assert_eq!(out.candidates, 2);
        let qv = encode_with(&Tokenizer::dictionary(&e.entities).tokenize("fever again").unwrap(), &e.table, &e.params, &e.encode).unwrap();
        let mut expect: Vec<(u64, f64)> = [1u64, 2]
            .iter()
            .map(|&id| (id, crate::encoder::similarity(&qv, &e.vector(id).unwrap()).unwrap()))
            .collect();
        expect.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let got: Vec<(u64, f64)> = out.results.iter().map(|r| (r.id, r.score)).collect();
        assert_eq!(got, expect);

        let none = e.query("nothing matches", None, None, &opts).unwrap();
        assert!(none.results.is_empty());
        assert!(matches!(e.query("  ", None, None, &opts), Err(Error::EmptyQuestion)));
        let inf = QueryOptions {
            threshold: f64::INFINITY,
            ..Default::default()
        };
        assert!(e.query("fever", None, None, &inf).unwrap().results.is_empty());
    }

    #[test]
    fn cache_matches_fresh_encoding_and_round_trips() {
        let e = engine();
        assert_eq!(e.cache.len(), 4);
        for q in e.corpus.questions() {
            let fresh = encode_with(&q.tokens, &e.table, &e.params, &e.encode).unwrap();
            assert_eq!(e.cache.get(q.id).unwrap(), &fresh);
        }
        let bytes = e.cache.to_bytes();
        assert_eq!(VectorCache::from_bytes(&bytes).unwrap(), e.cache);
        assert!(matches!(
            VectorCache::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated("vector cache"))
        ));
        let empty = precompute_vectors(&Corpus::new("e"), &e.table, &e.params, &e.encode).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut e = engine();
        e.params = EncoderParams::zeros(5, 4);
        assert!(matches!(e.check(), Err(Error::DimensionMismatch(_))));
        let vocab = Vocabulary::from_tokens(vec!["<unk>".into(), "a".into()]).unwrap();
        let t = EmbeddingTable::init(vocab, 2, 1).unwrap();
        assert!(precompute_vectors(&e.corpus, &t, &e.params, &e.encode).is_err());
    }
}
