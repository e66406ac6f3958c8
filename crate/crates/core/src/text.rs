//! Tokenization, vocabulary construction, and the synonym / medical entity
//! dictionaries.
//!
//! Text is lower-cased and split into *units*: whitespace-separated words,
//! with sentence punctuation and CJK ideographs split off as units of their
//! own. In dictionary mode, runs of units that spell a dictionary entity are
//! merged into a single token (so `pink eye` reaches the encoder as one
//! embedding).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    Whitespace,
    #[default]
    Dictionary,
}

impl FromStr for TokenizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizeMode::Whitespace),
            "dictionary" => Ok(TokenizeMode::Dictionary),
            other => Err(Error::invalid(format!("unknown tokenize mode {other:?}"))),
        }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF)
}

fn is_split_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | '?' | '!' | ';' | ':' | '"' | '(' | ')' | '，' | '。' | '？' | '！' | '；'
            | '：' | '、' | '“' | '”' | '（' | '）'
    )
}

/// Lower-cases and splits `text` into units.
pub fn split_units(text: &str) -> Vec<String> {
    let mut units = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                units.push(std::mem::take(&mut cur));
            }
        } else if is_split_punct(c) || is_cjk(c) {
            if !cur.is_empty() {
                units.push(std::mem::take(&mut cur));
            }
            units.push(c.to_string());
        } else {
            cur.extend(c.to_lowercase());
        }
    }
    if !cur.is_empty() {
        units.push(cur);
    }
    units
}

/// The first unit of an already normalized string, without allocating.
fn first_unit(s: &str) -> &str {
    let s = s.trim_start();
    let Some(c) = s.chars().next() else { return s };
    if is_split_punct(c) || is_cjk(c) {
        return &s[..c.len_utf8()];
    }
    let end = s
        .find(|c: char| c.is_whitespace() || is_split_punct(c) || is_cjk(c))
        .unwrap_or(s.len());
    &s[..end]
}

fn ends_cjk(s: &str) -> bool {
    s.chars().last().is_some_and(is_cjk)
}

fn starts_cjk(s: &str) -> bool {
    s.chars().next().is_some_and(is_cjk)
}

/// Joins units (or tokens) back into a surface string: CJK neighbours are
/// concatenated, everything else is separated by a single space.
pub fn join_units<S: AsRef<str>>(units: &[S]) -> String {
    let mut out = String::new();
    for (i, u) in units.iter().enumerate() {
        let u = u.as_ref();
        if i > 0 && !(ends_cjk(&out) && starts_cjk(u)) {
            out.push(' ');
        }
        out.push_str(u);
    }
    out
}

/// Canonical form of a dictionary surface string.
pub fn normalize(surface: &str) -> String {
    join_units(&split_units(surface))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityType {
    Symptom,
    Disease,
    Drug,
    BodyPart,
    Other,
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "symptom" => EntityType::Symptom,
            "disease" => EntityType::Disease,
            "drug" => EntityType::Drug,
            "body-part" => EntityType::BodyPart,
            "other" => EntityType::Other,
            other => return Err(Error::invalid(format!("unknown entity type {other:?}"))),
        })
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityType::Symptom => "symptom",
            EntityType::Disease => "disease",
            EntityType::Drug => "drug",
            EntityType::BodyPart => "body-part",
            EntityType::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub canonical_id: String,
    pub kind: EntityType,
}

/// Surface form → entity lookup with deterministic longest-match scanning.
#[derive(Debug, Clone, Default)]
pub struct EntityDictionary {
    entries: HashMap<String, EntityRecord>,
    /// Longest surface form, in units.
    max_units: usize,
    /// First unit of every surface form.
    first_units: HashSet<String>,
}

impl EntityDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, canonical_id: &str, kind: EntityType) -> Result<()> {
        let units = split_units(surface);
        if units.is_empty() {
            return Err(Error::invalid("empty entity surface form"));
        }
        let key = join_units(&units);
        let record = EntityRecord {
            canonical_id: canonical_id.to_string(),
            kind,
        };
        if let Some(prev) = self.entries.get(&key) {
            if *prev != record {
                return Err(Error::invalid(format!(
                    "entity surface {key:?} mapped to both {} and {}",
                    prev.canonical_id, canonical_id
                )));
            }
        }
        self.max_units = self.max_units.max(units.len());
        self.first_units.insert(units[0].clone());
        self.entries.insert(key, record);
        Ok(())
    }

    /// Parses `surface<TAB>canonical_id<TAB>type` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dict = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [surface, canonical, kind] = fields[..] else {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            };
            let kind = kind.trim().parse().map_err(|e: Error| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            dict.insert(surface, canonical.trim(), kind)
                .map_err(|e| Error::Record {
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes back to the TSV form, sorted by surface.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (surface, rec) in self.iter() {
            out.push_str(&format!("{surface}\t{}\t{}\n", rec.canonical_id, rec.kind));
        }
        out
    }

    pub fn get(&self, surface: &str) -> Option<&EntityRecord> {
        self.entries.get(surface)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in surface-form order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &EntityRecord)> {
        let mut all: Vec<_> = self.entries.iter().map(|(k, v)| (k.as_str(), v)).collect();
        all.sort_unstable_by_key(|&(k, _)| k);
        all.into_iter()
    }

    /// Greedy left-to-right scan: at each position take the longest span whose
    /// joined form is a surface form. Returns `(start, end, key)` triples.
    fn scan<S: AsRef<str>>(&self, items: &[S]) -> Vec<(usize, usize, String)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < items.len() {
            if !self.first_units.contains(first_unit(items[i].as_ref())) {
                i += 1;
                continue;
            }
            let longest = self.max_units.min(items.len() - i);
            let hit = (1..=longest).rev().find_map(|len| {
                let key = join_units(&items[i..i + len]);
                self.entries.contains_key(&key).then_some((len, key))
            });
            match hit {
                Some((len, key)) => {
                    out.push((i, i + len, key));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMatch {
    /// Token span `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub record: EntityRecord,
}

/// Non-overlapping, longest-match entity spans sorted by start position.
pub fn find_entities<S: AsRef<str>>(tokens: &[S], dict: &EntityDictionary) -> Vec<EntityMatch> {
    dict.scan(tokens)
        .into_iter()
        .map(|(start, end, surface)| {
            let record = dict.entries[&surface].clone();
            EntityMatch {
                start,
                end,
                surface,
                record,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Tokenizer<'a> {
    pub mode: TokenizeMode,
    pub entities: Option<&'a EntityDictionary>,
}

impl<'a> Tokenizer<'a> {
    pub fn whitespace() -> Self {
        Tokenizer {
            mode: TokenizeMode::Whitespace,
            entities: None,
        }
    }

    pub fn dictionary(entities: &'a EntityDictionary) -> Self {
        Tokenizer {
            mode: TokenizeMode::Dictionary,
            entities: Some(entities),
        }
    }

    pub fn new(mode: TokenizeMode, entities: &'a EntityDictionary) -> Self {
        Tokenizer {
            mode,
            entities: Some(entities),
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        tokenize(text, self.mode, self.entities)
    }
}

/// Splits `text` into tokens. Dictionary mode merges entity surface forms
/// into single tokens; without a dictionary it behaves like whitespace mode.
pub fn tokenize(
    text: &str,
    mode: TokenizeMode,
    entities: Option<&EntityDictionary>,
) -> Result<Vec<String>> {
    let units = split_units(text);
    if units.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let dict = match (mode, entities) {
        (TokenizeMode::Dictionary, Some(d)) if !d.is_empty() => d,
        _ => return Ok(units),
    };
    let mut tokens = Vec::with_capacity(units.len());
    let mut next = 0;
    for (start, end, key) in dict.scan(&units) {
        tokens.extend(units[next..start].iter().cloned());
        tokens.push(key);
        next = end;
    }
    tokens.extend(units[next..].iter().cloned());
    Ok(tokens)
}

/// Undirected synonym groups; every token belongs to at most one group.
#[derive(Debug, Clone, Default)]
pub struct SynonymDictionary {
    groups: Vec<Vec<String>>,
    lookup: HashMap<String, usize>,
}

impl SynonymDictionary {
    pub fn from_groups<I, G, S>(groups: I) -> Result<Self>
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut dict = SynonymDictionary::default();
        for group in groups {
            let mut members: Vec<String> = Vec::new();
            for s in group {
                let form = normalize(s.as_ref());
                if form.is_empty() || members.contains(&form) {
                    continue;
                }
                members.push(form);
            }
            if members.len() < 2 {
                continue;
            }
            let gid = dict.groups.len();
            for m in &members {
                if let Some(&other) = dict.lookup.get(m) {
                    return Err(Error::invalid(format!(
                        "synonym {m:?} listed in groups {} and {}",
                        other + 1,
                        gid + 1
                    )));
                }
                dict.lookup.insert(m.clone(), gid);
            }
            dict.groups.push(members);
        }
        Ok(dict)
    }

    /// One group per line, tab-separated surface forms.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_groups(
            text.lines()
                .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
                .map(|l| l.split('\t')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_tsv(&self) -> String {
        self.groups.iter().map(|g| g.join("\t") + "\n").collect()
    }

    /// The group containing `token`, if any (including `token` itself).
    pub fn group_of(&self, token: &str) -> Option<&[String]> {
        self.lookup.get(token).map(|&g| self.groups[g].as_slice())
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        match (self.lookup.get(a), self.lookup.get(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Dense token ↔ index map. Index 0 is always [`UNK`]; the remaining tokens
/// are ordered by frequency descending, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

pub const VOCAB_MAGIC: &str = "SIMQ-VOC v1";

impl Vocabulary {
    pub const UNK_INDEX: usize = 0;

    /// Builds from raw token sequences. Tokens below `min_count` fold into UNK's count.
    pub fn from_sequences<'a, I, S>(sequences: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut total = 0u64;
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_ref()).or_default() += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::invalid("cannot build a vocabulary from zero tokens"));
        }
        let mut unk = counts.remove(UNK).unwrap_or(0);
        let mut kept: Vec<(&str, u64)> = Vec::with_capacity(counts.len());
        for (t, c) in counts {
            if c >= min_count.max(1) {
                kept.push((t, c));
            } else {
                unk += c;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec![UNK.to_string()];
        let mut freqs = vec![unk];
        for (t, c) in kept {
            tokens.push(t.to_string());
            freqs.push(c);
        }
        Ok(Self::from_parts(tokens, freqs))
    }

    fn from_parts(tokens: Vec<String>, freqs: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            freqs,
            index,
        }
    }

    /// Rebuilds a vocabulary from an ordered token list (frequencies unknown).
    /// The first token must be [`UNK`].
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::invalid("vocabulary must start with <unk>"));
        }
        let n = tokens.len();
        let vocab = Self::from_parts(tokens, vec![0; n]);
        if vocab.index.len() != n {
            return Err(Error::invalid("vocabulary holds duplicate tokens"));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or [`Self::UNK_INDEX`] when out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK_INDEX)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs[id]
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freqs
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{VOCAB_MAGIC} {}\n", self.len());
        for (t, f) in self.tokens.iter().zip(&self.freqs) {
            out.push_str(&format!("{t}\t{f}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Truncated("vocabulary"))?;
        let count = parse_text_header(header, VOCAB_MAGIC, "vocabulary")?
            .first()
            .copied()
            .ok_or_else(|| Error::invalid("vocabulary header lacks a token count"))?;
        let mut tokens = Vec::with_capacity(count);
        let mut freqs = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let (t, f) = line.rsplit_once('\t').ok_or_else(|| Error::Record {
                line: i + 2,
                message: "expected token<TAB>frequency".into(),
            })?;
            let f = f.parse().map_err(|_| Error::Record {
                line: i + 2,
                message: format!("bad frequency {f:?}"),
            })?;
            tokens.push(t.to_string());
            freqs.push(f);
        }
        if tokens.len() < count {
            return Err(Error::Truncated("vocabulary"));
        }
        if tokens.len() > count {
            return Err(Error::TrailingData("vocabulary"));
        }
        let mut vocab = Self::from_tokens(tokens)?;
        vocab.freqs = freqs;
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Parses a `SIMQ-XXX vN a b ...` text header, returning the numeric fields.
pub(crate) fn parse_text_header(
    line: &str,
    magic: &'static str,
    kind: &'static str,
) -> Result<Vec<usize>> {
    let (family, _) = magic.rsplit_once(' ').unwrap();
    let mut parts = line.split_whitespace();
    let head = parts.next().unwrap_or("");
    let version = parts.next().unwrap_or("");
    if head != family {
        return Err(Error::BadMagic { kind });
    }
    let found = format!("{head} {version}");
    if found != magic {
        return Err(Error::UnsupportedVersion {
            found,
            expected: magic,
        });
    }
    parts
        .map(|p| {
            p.parse()
                .map_err(|_| Error::invalid(format!("bad {kind} header field {p:?}")))
        })
        .collect()
}

/// Vocabulary over a tokenized corpus.
pub fn build_vocab(corpus: &Corpus, min_count: u64) -> Result<Vocabulary> {
    Vocabulary::from_sequences(corpus.questions().map(|q| q.tokens.as_slice()), min_count)
}
