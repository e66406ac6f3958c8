//! Keyword identification from question metadata, and the inverted index
//! used to pre-select candidate questions.
//!
//! Keywords are the canonical ids of a question's medical entities, filtered
//! by a rule chosen by the question's intention (a symptom-to-disease
//! question keys on its symptoms, not on the disease the asker guessed).
//! Postings are keyed by `(keyword, category, intention)`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::corpus::{Corpus, Question, QuestionId, UNKNOWN};
use crate::error::{Error, Result};
use crate::text::{find_entities, EntityDictionary, EntityType};

pub const INDEX_MAGIC: &str = "SIMQ-IDX v1";
pub const DEFAULT_MAX_CANDIDATES: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub intention: String,
    pub evidence_types: Vec<EntityType>,
    #[serde(default)]
    pub excluded_types: Vec<EntityType>,
}

impl KeywordRule {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self
            .evidence_types
            .iter()
            .find(|t| self.excluded_types.contains(t))
        {
            return Err(Error::invalid(format!(
                "rule for {:?} lists {t} as both evidence and excluded",
                self.intention
            )));
        }
        Ok(())
    }

    fn admits(&self, kind: EntityType) -> bool {
        self.evidence_types.contains(&kind) && !self.excluded_types.contains(&kind)
    }
}

/// Keyword rules keyed by intention.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    rules: BTreeMap<String, KeywordRule>,
}

impl RuleSet {
    pub fn new(rules: impl IntoIterator<Item = KeywordRule>) -> Result<Self> {
        let mut set = RuleSet::default();
        for r in rules {
            r.validate()?;
            if set.rules.contains_key(&r.intention) {
                return Err(Error::invalid(format!(
                    "duplicate keyword rule for intention {:?}",
                    r.intention
                )));
            }
            set.rules.insert(r.intention.clone(), r);
        }
        Ok(set)
    }

    /// Line-delimited JSON rule records.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: KeywordRule = serde_json::from_str(line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            rules.push(rule);
        }
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.rules
            .values()
            .map(|r| serde_json::to_string(r).expect("rules serialize") + "\n")
            .collect()
    }

    pub fn get(&self, intention: &str) -> Option<&KeywordRule> {
        self.rules.get(intention)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Canonical ids of the question's entities admitted by its intention's rule,
/// in order of first appearance. Without a rule every entity type is kept.
pub fn extract_keywords(q: &Question, ent: &EntityDictionary, rules: &RuleSet) -> Vec<String> {
    let rule = rules.get(&q.intention);
    let mut seen = BTreeSet::new();
    find_entities(&q.tokens, ent)
        .into_iter()
        .filter(|m| rule.is_none_or(|r| r.admits(m.record.kind)))
        .filter_map(|m| {
            seen.insert(m.record.canonical_id.clone())
                .then_some(m.record.canonical_id)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PostingKey {
    pub keyword: String,
    pub category: String,
    pub intention: String,
}

/// How far retrieval had to relax the metadata constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaMatch {
    /// Same category and intention.
    Exact,
    /// Same category, any intention.
    Category,
    /// Keyword only.
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub ids: Vec<QuestionId>,
    pub query_id: Option<QuestionId>,
    pub keywords: Vec<String>,
    pub level: MetaMatch,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieveOptions {
    pub max_candidates: usize,
    /// Disable the relaxation ladder.
    pub strict_meta: bool,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        RetrieveOptions {
            max_candidates: DEFAULT_MAX_CANDIDATES,
            strict_meta: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvertedIndex {
    postings: BTreeMap<PostingKey, Vec<QuestionId>>,
}

impl InvertedIndex {
    /// Posts every answered question under each of its keyword triples.
    pub fn build(corpus: &Corpus, ent: &EntityDictionary, rules: &RuleSet) -> Self {
        let mut postings: BTreeMap<PostingKey, Vec<QuestionId>> = BTreeMap::new();
        for q in corpus.questions().filter(|q| q.answered) {
            for keyword in extract_keywords(q, ent, rules) {
                postings
                    .entry(PostingKey {
                        keyword,
                        category: q.category.clone(),
                        intention: q.intention.clone(),
                    })
                    .or_default()
                    .push(q.id);
            }
        }
        InvertedIndex { postings }
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn postings(&self) -> impl Iterator<Item = (&PostingKey, &[QuestionId])> {
        self.postings.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn posting(&self, keyword: &str, category: &str, intention: &str) -> &[QuestionId] {
        let key = PostingKey {
            keyword: keyword.into(),
            category: category.into(),
            intention: intention.into(),
        };
        self.postings.get(&key).map_or(&[], Vec::as_slice)
    }

    /// All postings under `keyword`, optionally restricted to one category.
    fn keyword_postings<'a>(
        &'a self,
        keyword: &'a str,
        category: Option<&'a str>,
    ) -> impl Iterator<Item = &'a [QuestionId]> + 'a {
        let start = PostingKey {
            keyword: keyword.to_string(),
            category: category.unwrap_or("").to_string(),
            intention: String::new(),
        };
        self.postings
            .range(start..)
            .take_while(move |(k, _)| {
                k.keyword == keyword && category.is_none_or(|c| k.category == c)
            })
            .map(|(_, v)| v.as_slice())
    }

    /// Candidate ids for pre-extracted keywords: the union of postings under
    /// the exact `(category, intention)`, relaxing first the intention and
    /// then the category while the set is empty. Capped by ascending id.
    pub fn lookup(
        &self,
        keywords: &[String],
        category: &str,
        intention: &str,
        exclude: Option<QuestionId>,
        opts: &RetrieveOptions,
    ) -> (Vec<QuestionId>, MetaMatch) {
        let collect = |level: MetaMatch| -> BTreeSet<QuestionId> {
            let mut ids = BTreeSet::new();
            for kw in keywords {
                match level {
                    MetaMatch::Exact => ids.extend(self.posting(kw, category, intention)),
                    MetaMatch::Category => {
                        for list in self.keyword_postings(kw, Some(category)) {
                            ids.extend(list);
                        }
                    }
                    MetaMatch::Keyword => {
                        for list in self.keyword_postings(kw, None) {
                            ids.extend(list);
                        }
                    }
                }
            }
            if let Some(x) = exclude {
                ids.remove(&x);
            }
            ids
        };
        let ladder: &[MetaMatch] = if opts.strict_meta {
            &[MetaMatch::Exact]
        } else {
            &[MetaMatch::Exact, MetaMatch::Category, MetaMatch::Keyword]
        };
        let mut level = MetaMatch::Exact;
        let mut ids = BTreeSet::new();
        for &l in ladder {
            level = l;
            ids = collect(l);
            if !ids.is_empty() {
                break;
            }
        }
        (ids.into_iter().take(opts.max_candidates).collect(), level)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(INDEX_MAGIC);
        w.u64(self.postings.len() as u64);
        for (key, ids) in &self.postings {
            w.str(&key.keyword);
            w.str(&key.category);
            w.str(&key.intention);
            w.u32(ids.len() as u32);
            for &id in ids {
                w.u64(id);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        binio::check_magic(bytes, INDEX_MAGIC, "index")?;
        let mut r = Reader::after_magic(bytes, "index");
        let n = r.u64()?;
        let mut postings = BTreeMap::new();
        for _ in 0..n {
            let key = PostingKey {
                keyword: r.str()?,
                category: r.str()?,
                intention: r.str()?,
            };
            let count = r.u32()? as usize;
            let mut ids = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                ids.push(r.u64()?);
            }
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid("index posting list is not strictly ascending"));
            }
            postings.insert(key, ids);
        }
        r.finish()?;
        Ok(InvertedIndex { postings })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Free-function form of the method above.
pub fn build_index(corpus: &Corpus, ent: &EntityDictionary, rules: &RuleSet) -> InvertedIndex {
    InvertedIndex::build(corpus, ent, rules)
}

/// Index plus the dictionaries needed to extract a query's keywords.
#[derive(Debug, Clone, Copy)]
pub struct Retriever<'a> {
    pub index: &'a InvertedIndex,
    pub entities: &'a EntityDictionary,
    pub rules: &'a RuleSet,
}

impl<'a> Retriever<'a> {
    pub fn retrieve(&self, query: &Question, opts: &RetrieveOptions) -> CandidateSet {
        let keywords = extract_keywords(query, self.entities, self.rules);
        let exclude = (query.id != QuestionId::MAX).then_some(query.id);
        let category = if query.category.is_empty() { UNKNOWN } else { &query.category };
        let (ids, level) = self
            .index
            .lookup(&keywords, category, &query.intention, exclude, opts);
        CandidateSet {
            ids,
            query_id: exclude,
            keywords,
            level,
        }
    }
}

/// Free-function form of the method above.
pub fn retrieve(
    query: &Question,
    index: &InvertedIndex,
    entities: &EntityDictionary,
    rules: &RuleSet,
    max_candidates: usize,
) -> CandidateSet {
    Retriever {
        index,
        entities,
        rules,
    }
    .retrieve(
        query,
        &RetrieveOptions {
            max_candidates,
            strict_meta: false,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Tokenizer;

    fn ent() -> EntityDictionary {
        EntityDictionary::parse(
            "bloodshot eyes\tsymptom:bloodshot-eyes\tsymptom\n\
             pink eye\tdisease:conjunctivitis\tdisease\n\
             vomits milk\tsymptom:vomit-milk\tsymptom\n\
             vomit milk\tsymptom:vomit-milk\tsymptom\n\
             fever\tsymptom:fever\tsymptom\n\
             rash\tsymptom:rash\tsymptom\n",
        )
        .unwrap()
    }

    fn rules() -> RuleSet {
        RuleSet::parse(concat!(
            r#"{"intention": "symptom-to-disease", "evidence_types": ["symptom"], "excluded_types": ["disease"]}"#,
            "\n",
            r#"{"intention": "symptom-to-treatment", "evidence_types": ["symptom", "body-part"]}"#,
            "\n"
        ))
        .unwrap()
    }

    fn question(id: u64, text: &str, cat: &str, int: &str, ent: &EntityDictionary) -> Question {
        Question {
            id,
            text: text.into(),
            tokens: Tokenizer::dictionary(ent).tokenize(text).unwrap(),
            category: cat.into(),
            intention: int.into(),
            answered: true,
            family: None,
        }
    }

    #[test]
    fn guessed_disease_is_not_a_keyword() {
        let e = ent();
        let q = question(
            1,
            "My son got bloodshot eyes. Did he have the pink eye?",
            "children-health",
            "symptom-to-disease",
            &e,
        );
        assert_eq!(extract_keywords(&q, &e, &rules()), ["symptom:bloodshot-eyes"]);
        // unknown intention keeps every entity
        let mut q2 = q.clone();
        q2.intention = UNKNOWN.into();
        assert_eq!(
            extract_keywords(&q2, &e, &rules()),
            ["symptom:bloodshot-eyes", "disease:conjunctivitis"]
        );
    }

    #[test]
    fn vomit_milk_keyword() {
        let e = ent();
        let q = question(
            1,
            "52-day-old baby girl frequently vomits milk. What should I do?",
            "children-health",
            "symptom-to-treatment",
            &e,
        );
        assert_eq!(extract_keywords(&q, &e, &rules()), ["symptom:vomit-milk"]);
        let none = question(2, "what should I do?", "x", "symptom-to-treatment", &e);
        assert!(extract_keywords(&none, &e, &rules()).is_empty());
    }

    #[test]
    fn rule_validation() {
        let bad = r#"{"intention": "x", "evidence_types": ["symptom"], "excluded_types": ["symptom"]}"#;
        assert!(RuleSet::parse(bad).is_err());
        let dup = format!("{bad_ok}\n{bad_ok}\n", bad_ok = r#"{"intention": "x", "evidence_types": []}"#);
        assert!(RuleSet::parse(&dup).is_err());
    }

    fn small_corpus(e: &EntityDictionary) -> Corpus {
        let mut c = Corpus::new("t");
        let rows = [
            (1, "fever and rash", "kids", "symptom-to-disease", true),
            (2, "fever again", "kids", "symptom-to-disease", true),
            (3, "fever at night", "kids", "symptom-to-disease", false),
            (4, "fever and cough", "kids", "symptom-to-treatment", true),
            (5, "rash everywhere", "skin", "symptom-to-disease", true),
            (6, "fever high", "kids", "symptom-to-disease", true),
            (7, "nothing here", "kids", "symptom-to-disease", true),
        ];
        for (id, text, cat, int, answered) in rows {
            let mut q = question(id, text, cat, int, e);
            q.answered = answered;
            c.insert(q).unwrap();
        }
        c
    }

    #[test]
    fn build_posts_answered_questions_only() {
        let e = ent();
        let idx = build_index(&small_corpus(&e), &e, &rules());
        assert_eq!(idx.posting("symptom:fever", "kids", "symptom-to-disease"), [1, 2, 6]);
        assert_eq!(idx.posting("symptom:rash", "kids", "symptom-to-disease"), [1]);
        assert_eq!(idx.posting("symptom:rash", "skin", "symptom-to-disease"), [5]);
        assert!(build_index(&Corpus::new("e"), &e, &rules()).is_empty());
    }

    #[test]
    fn one_question_two_keywords() {
        let e = ent();
        let mut c = Corpus::new("t");
        c.insert(question(9, "fever and rash", "kids", "symptom-to-disease", &e))
            .unwrap();
        let idx = build_index(&c, &e, &rules());
        assert_eq!(idx.len(), 2);
        assert!(idx.postings().all(|(_, ids)| ids == [9]));
    }

    #[test]
    fn retrieval_exact_then_relaxed() {
        let e = ent();
        let r = rules();
        let idx = build_index(&small_corpus(&e), &e, &r);
        let ret = Retriever {
            index: &idx,
            entities: &e,
            rules: &r,
        };
        let q = question(u64::MAX, "baby has fever", "kids", "symptom-to-disease", &e);
        let got = ret.retrieve(&q, &RetrieveOptions::default());
        assert_eq!(got.ids, [1, 2, 6]);
        assert_eq!(got.level, MetaMatch::Exact);

        // no exact match: drop intention, then category
        let q = question(u64::MAX, "rash", "kids", "symptom-to-treatment", &e);
        let got = ret.retrieve(&q, &RetrieveOptions::default());
        assert_eq!((got.ids.as_slice(), got.level), (&[1][..], MetaMatch::Category));
        let q = question(u64::MAX, "rash", "eyes", "symptom-to-disease", &e);
        let got = ret.retrieve(&q, &RetrieveOptions::default());
        assert_eq!((got.ids.as_slice(), got.level), (&[1, 5][..], MetaMatch::Keyword));
        let strict = RetrieveOptions {
            strict_meta: true,
            ..Default::default()
        };
        assert!(ret.retrieve(&q, &strict).is_empty());

        // own id excluded, cap by ascending id
        let q = question(2, "fever again", "kids", "symptom-to-disease", &e);
        let capped = RetrieveOptions {
            max_candidates: 1,
            ..Default::default()
        };
        assert_eq!(ret.retrieve(&q, &capped).ids, [1]);

        let q = question(u64::MAX, "nothing at all", "kids", "symptom-to-disease", &e);
        assert!(ret.retrieve(&q, &RetrieveOptions::default()).is_empty());
    }

    #[test]
    fn index_file_round_trip_and_errors() {
        let e = ent();
        let idx = build_index(&small_corpus(&e), &e, &rules());
        let bytes = idx.to_bytes();
        assert_eq!(InvertedIndex::from_bytes(&bytes).unwrap(), idx);
        assert_eq!(bytes, build_index(&small_corpus(&e), &e, &rules()).to_bytes());
        let err = InvertedIndex::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err.to_string(), "unexpected end of index file");
        let mut v2 = bytes.clone();
        v2[10] = b'2';
        assert!(matches!(
            InvertedIndex::from_bytes(&v2),
            Err(Error::UnsupportedVersion { .. })
        ));
    }
}
