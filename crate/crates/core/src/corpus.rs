//! The solved-question corpus: line-delimited JSON records, one question per
//! line, preceded by a header record declaring the category and intention sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Tokenizer;

pub type QuestionId = u64;

pub const UNKNOWN: &str = "unknown";
pub const CORPUS_FORMAT: &str = "SIMQ-CORPUS";
pub const CORPUS_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
    /// Filled by [`Corpus::tokenized`]; empty until then.
    pub tokens: Vec<String>,
    pub category: String,
    pub intention: String,
    pub answered: bool,
    /// Synthetic-corpus provenance: which template instance produced the text.
    pub family: Option<String>,
}

impl Question {
    /// A new (unsolved) question, tokenized and ready for retrieval.
    pub fn query(
        text: &str,
        tokenizer: &Tokenizer<'_>,
        category: Option<&str>,
        intention: Option<&str>,
    ) -> Result<Self> {
        Ok(Question {
            id: QuestionId::MAX,
            text: text.to_string(),
            tokens: tokenizer.tokenize(text)?,
            category: category.unwrap_or(UNKNOWN).to_string(),
            intention: intention.unwrap_or(UNKNOWN).to_string(),
            answered: false,
            family: None,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: String,
    source: String,
    count: usize,
    categories: Vec<String>,
    intentions: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: QuestionId,
    text: String,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    intention: Option<String>,
    #[serde(default = "default_answered")]
    answered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<String>,
}

fn default_answered() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    questions: BTreeMap<QuestionId, Question>,
    categories: BTreeSet<String>,
    intentions: BTreeSet<String>,
    source: String,
}

/// A record that was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRecord {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRecord>,
}

impl Corpus {
    pub fn new(source: impl Into<String>) -> Self {
        Corpus {
            source: source.into(),
            ..Default::default()
        }
    }

    /// Adds a question, registering its category and intention.
    pub fn insert(&mut self, q: Question) -> Result<()> {
        if self.questions.contains_key(&q.id) {
            return Err(Error::invalid(format!("duplicate question id {}", q.id)));
        }
        self.categories.insert(q.category.clone());
        self.intentions.insert(q.intention.clone());
        self.questions.insert(q.id, q);
        Ok(())
    }

    pub fn get(&self, id: QuestionId) -> Option<&Question> {
        self.questions.get(&id)
    }

    /// Questions in ascending id order.
    pub fn questions(&self) -> impl ExactSizeIterator<Item = &Question> + Clone {
        self.questions.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = QuestionId> + '_ {
        self.questions.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    pub fn intentions(&self) -> &BTreeSet<String> {
        &self.intentions
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Fills every question's token list.
    pub fn tokenized(mut self, tokenizer: &Tokenizer<'_>) -> Result<Self> {
        for q in self.questions.values_mut() {
            q.tokens = tokenizer.tokenize(&q.text).map_err(|e| match e {
                Error::EmptyQuestion => Error::invalid(format!("question {} is empty", q.id)),
                other => other,
            })?;
        }
        Ok(self)
    }

    pub fn is_tokenized(&self) -> bool {
        self.questions.values().all(|q| !q.tokens.is_empty())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = Header {
            format: CORPUS_FORMAT.into(),
            version: CORPUS_VERSION.into(),
            source: self.source.clone(),
            count: self.questions.len(),
            categories: self.categories.iter().cloned().collect(),
            intentions: self.intentions.iter().cloned().collect(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for q in self.questions.values() {
            let rec = Record {
                id: q.id,
                text: q.text.clone(),
                category: Some(q.category.clone()),
                intention: Some(q.intention.clone()),
                answered: q.answered,
                family: q.family.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads line-delimited question records.
    ///
    /// The header line is optional so that plain external dumps can be
    /// ingested; when present it fixes the allowed category/intention sets and
    /// the expected record count. Malformed records are skipped and reported;
    /// a duplicate id aborts ingestion.
    pub fn read_from<R: BufRead>(mut input: R, source: &str) -> Result<(Corpus, IngestReport)> {
        let mut corpus = Corpus::new(source);
        let mut declared: Option<Header> = None;
        let mut first_line: HashMap<QuestionId, usize> = HashMap::new();
        let mut rejected = Vec::new();
        let mut line = String::new();
        let mut lineno = 0;
        loop {
            line.clear();
            if input.read_line(&mut line).map_err(|e| Error::io(source, e))? == 0 {
                break;
            }
            lineno += 1;
            let terminated = line.ends_with('\n');
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            if lineno == 1 && line.contains("\"format\"") {
                let header: Header = serde_json::from_str(line).map_err(|e| Error::Record {
                    line: 1,
                    message: format!("bad corpus header: {e}"),
                })?;
                if header.format != CORPUS_FORMAT {
                    return Err(Error::BadMagic { kind: "corpus" });
                }
                if header.version != CORPUS_VERSION {
                    return Err(Error::UnsupportedVersion {
                        found: format!("{} {}", header.format, header.version),
                        expected: "SIMQ-CORPUS v1",
                    });
                }
                corpus.source = header.source.clone();
                corpus.categories.extend(header.categories.iter().cloned());
                corpus.intentions.extend(header.intentions.iter().cloned());
                declared = Some(header);
                continue;
            }
            let rec: Record = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) if !terminated && declared.is_some() => {
                    return Err(Error::Truncated("corpus"));
                }
                Err(e) => {
                    rejected.push(RejectedRecord {
                        line: lineno,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            if let Some(&first) = first_line.get(&rec.id) {
                return Err(Error::DuplicateId {
                    id: rec.id,
                    first,
                    second: lineno,
                });
            }
            first_line.insert(rec.id, lineno);
            if rec.text.trim().is_empty() {
                rejected.push(RejectedRecord {
                    line: lineno,
                    message: "empty question text".into(),
                });
                continue;
            }
            let category = rec.category.unwrap_or_else(|| UNKNOWN.into());
            let intention = rec.intention.unwrap_or_else(|| UNKNOWN.into());
            if let Some(h) = &declared {
                let undeclared = [(&category, &h.categories, "category"), (&intention, &h.intentions, "intention")]
                    .into_iter()
                    .find(|(v, set, _)| v.as_str() != UNKNOWN && !set.contains(v));
                if let Some((v, _, what)) = undeclared {
                    rejected.push(RejectedRecord {
                        line: lineno,
                        message: format!("{what} {v:?} not declared in corpus header"),
                    });
                    continue;
                }
            }
            corpus.insert(Question {
                id: rec.id,
                text: rec.text,
                tokens: Vec::new(),
                category,
                intention,
                answered: rec.answered,
                family: rec.family,
            })?;
        }
        if let Some(h) = &declared {
            if corpus.len() + rejected.len() < h.count {
                return Err(Error::Truncated("corpus"));
            }
        }
        let report = IngestReport {
            accepted: corpus.len(),
            rejected,
        };
        Ok((corpus, report))
    }

    pub fn ingest(path: &Path) -> Result<(Corpus, IngestReport)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Corpus::read_from(BufReader::new(file), &path.display().to_string())
    }

    /// Like [`Corpus::ingest`] but fails on the first rejected record.
    pub fn load(path: &Path) -> Result<Corpus> {
        let (corpus, report) = Corpus::ingest(path)?;
        if let Some(r) = report.rejected.first() {
            return Err(Error::Record {
                line: r.line,
                message: r.message.clone(),
            });
        }
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<(Corpus, IngestReport)> {
        Corpus::read_from(text.as_bytes(), "test")
    }

    #[test]
    fn empty_input_gives_empty_corpus() {
        let (c, r) = read("").unwrap();
        assert!(c.is_empty());
        assert_eq!(r.accepted, 0);
    }

    #[test]
    fn three_records_preserve_ids() {
        let (c, r) = read(concat!(
            r#"{"id": 5, "text": "kid has fever", "category": "children-health"}"#, "\n",
            r#"{"id": 2, "text": "rash on arm", "answered": false}"#, "\n",
            r#"{"id": 9, "text": "cough at night", "intention": "symptom-to-disease"}"#, "\n",
        ))
        .unwrap();
        assert_eq!(r.accepted, 3);
        assert_eq!(c.ids().collect::<Vec<_>>(), [2, 5, 9]);
        assert_eq!(c.get(2).unwrap().category, UNKNOWN);
        assert!(!c.get(2).unwrap().answered);
        assert!(c.get(5).unwrap().answered);
        assert!(c.intentions().contains("symptom-to-disease"));
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let mut lines: Vec<String> = (1..=9)
            .map(|i| format!(r#"{{"id": {}, "text": "q{i}"}}"#, i + 100))
            .collect();
        lines[1] = r#"{"id": 7, "text": "first"}"#.into();
        lines[8] = r#"{"id": 7, "text": "second"}"#.into();
        let err = read(&lines.join("\n")).unwrap_err();
        match err {
            Error::DuplicateId { id, first, second } => assert_eq!((id, first, second), (7, 2, 9)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_records_are_reported_with_line() {
        let (c, r) = read("{\"id\": 1, \"text\": \"ok\"}\n{\"id\": \"x\"}\nnot json\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(
            r.rejected.iter().map(|x| x.line).collect::<Vec<_>>(),
            [2, 3]
        );
    }

    #[test]
    fn header_constrains_labels() {
        let text = concat!(
            r#"{"format":"SIMQ-CORPUS","version":"v1","source":"s","count":2,"categories":["eye"],"intentions":["x"]}"#, "\n",
            r#"{"id": 1, "text": "a", "category": "eye", "intention": "x"}"#, "\n",
            r#"{"id": 2, "text": "b", "category": "skin", "intention": "x"}"#, "\n",
        );
        let (c, r) = read(text).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(r.rejected[0].line, 3);
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let mut c = Corpus::new("unit");
        for id in 0..3 {
            c.insert(Question {
                id,
                text: format!("question {id}"),
                tokens: vec![],
                category: "eye".into(),
                intention: UNKNOWN.into(),
                answered: true,
                family: Some("f".into()),
            })
            .unwrap();
        }
        let bytes = c.to_bytes();
        let text = String::from_utf8(bytes).unwrap();
        let (back, _) = read(&text).unwrap();
        assert_eq!(back, c);

        let cut = &text[..text.len() - 5];
        assert_eq!(
            read(cut).unwrap_err().to_string(),
            "unexpected end of corpus file"
        );
        let dropped: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert_eq!(
            read(&dropped).unwrap_err().to_string(),
            "unexpected end of corpus file"
        );
        let v2 = text.replacen("\"v1\"", "\"v2\"", 1);
        assert!(matches!(read(&v2), Err(Error::UnsupportedVersion { .. })));
    }
}
