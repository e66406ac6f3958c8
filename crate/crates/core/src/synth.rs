//! Template-driven synthetic corpora for desk-scale experiments.
//!
//! A template bank holds weighted question patterns (`{slot}` placeholders)
//! and *groups*: coherent clusters of medical entities (one condition with
//! its symptoms, drugs, body parts). A question is produced by drawing a
//! template by weight and a group uniformly, then filling each slot from the
//! group when it defines that slot, otherwise from the bank's generic slots.
//! Each generated question records `template/group` as its family id.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Question};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub intention: String,
    pub weight: f64,
    /// Overrides the group's category when set.
    #[serde(default)]
    pub category: Option<String>,
    pub pattern: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub category: String,
    /// Slot name → choices; each choice lists interchangeable surface forms.
    pub slots: BTreeMap<String, Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateBank {
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub intentions: Vec<String>,
    /// Generic slot name → fillers.
    #[serde(default)]
    pub slots: BTreeMap<String, Vec<String>>,
    pub groups: Vec<Group>,
    pub templates: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Lit(String),
    Slot(String),
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Lit(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::invalid(format!("unclosed slot in pattern {pattern:?}")))?;
        pieces.push(Piece::Slot(rest[open + 1..open + close].to_string()));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Lit(rest.to_string()));
    }
    Ok(pieces)
}

impl TemplateBank {
    pub fn parse(text: &str) -> Result<Self> {
        let bank: TemplateBank = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("bad template bank: {e}")))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.templates.is_empty() || self.groups.is_empty() {
            return Err(Error::EmptyTemplateBank);
        }
        for t in &self.templates {
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return Err(Error::invalid(format!(
                    "template {} has non-positive weight",
                    t.name
                )));
            }
            for piece in parse_pattern(&t.pattern)? {
                let Piece::Slot(slot) = piece else { continue };
                let generic = self.slots.get(&slot).is_some_and(|v| !v.is_empty());
                let grouped = self.groups.iter().all(|g| {
                    g.slots
                        .get(&slot)
                        .is_some_and(|c| c.iter().any(|forms| !forms.is_empty()))
                });
                if !generic && !grouped {
                    return Err(Error::invalid(format!(
                        "template {} uses slot {{{slot}}} which not every group fills",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Normalized template weights, keyed by template name.
    pub fn template_shares(&self) -> BTreeMap<String, f64> {
        let total: f64 = self.templates.iter().map(|t| t.weight).sum();
        let mut out = BTreeMap::new();
        for t in &self.templates {
            *out.entry(t.name.clone()).or_default() += t.weight / total;
        }
        out
    }
}

fn pick_weighted<R: Rng>(rng: &mut R, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().unwrap();
    let x = rng.gen::<f64>() * total;
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

/// Generates `n` questions with ids `1..=n`. Pure in `(n, seed, bank)`.
pub fn synth_corpus(n: usize, seed: u64, bank: &TemplateBank) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::invalid("synthetic corpus size must be at least 1"));
    }
    bank.validate()?;
    let patterns = bank
        .templates
        .iter()
        .map(|t| parse_pattern(&t.pattern))
        .collect::<Result<Vec<_>>>()?;
    let cumulative: Vec<f64> = bank
        .templates
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t.weight;
            Some(*acc)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::new(format!("synthetic n={n} seed={seed}"));
    for id in 1..=n as u64 {
        let ti = pick_weighted(&mut rng, &cumulative);
        let template = &bank.templates[ti];
        let group = bank.groups.choose(&mut rng).unwrap();
        let text = fill(&patterns[ti], group, bank, &mut rng);
        corpus.insert(Question {
            id,
            text,
            tokens: Vec::new(),
            category: template
                .category
                .clone()
                .unwrap_or_else(|| group.category.clone()),
            intention: template.intention.clone(),
            answered: true,
            family: Some(format!("{}/{}", template.name, group.name)),
        })?;
    }
    Ok(corpus)
}

fn fill<R: Rng>(pieces: &[Piece], group: &Group, bank: &TemplateBank, rng: &mut R) -> String {
    // repeated slots draw distinct choices while any remain
    let mut used: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut out = String::new();
    for piece in pieces {
        match piece {
            Piece::Lit(s) => out.push_str(s),
            Piece::Slot(slot) => {
                let taken = used.entry(slot.as_str()).or_default();
                let filler = match group.slots.get(slot).filter(|c| !c.is_empty()) {
                    Some(choices) => {
                        let ci = pick_unused(rng, choices.len(), taken);
                        choices[ci].choose(rng).cloned().unwrap_or_default()
                    }
                    None => {
                        let values = &bank.slots[slot];
                        values[pick_unused(rng, values.len(), taken)].clone()
                    }
                };
                out.push_str(&filler);
            }
        }
    }
    out
}

fn pick_unused<R: Rng>(rng: &mut R, n: usize, taken: &mut Vec<usize>) -> usize {
    let free: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
    let i = if free.is_empty() {
        rng.gen_range(0..n)
    } else {
        *free.choose(rng).unwrap()
    };
    taken.push(i);
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> TemplateBank {
        TemplateBank::parse(
            r#"{
              "slots": {"person": ["my son", "my kid"]},
              "groups": [
                {"name": "flu", "category": "resp", "slots": {"symptom": [["fever"], ["chills"], ["aches"]]}},
                {"name": "eye", "category": "eye", "slots": {"symptom": [["red eyes", "bloodshot eyes"]]}}
              ],
              "templates": [
                {"name": "a", "intention": "symptom-to-disease", "weight": 3, "pattern": "{person} has {symptom} and {symptom} ."},
                {"name": "b", "intention": "symptom-to-treatment", "weight": 1, "pattern": "{symptom} , help"}
              ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn pattern_parsing() {
        assert_eq!(
            parse_pattern("x {a} y{b}").unwrap(),
            vec![
                Piece::Lit("x ".into()),
                Piece::Slot("a".into()),
                Piece::Lit(" y".into()),
                Piece::Slot("b".into())
            ]
        );
        assert!(parse_pattern("{open").is_err());
    }

    #[test]
    fn single_question_matches_a_template() {
        let c = synth_corpus(1, 99, &bank()).unwrap();
        assert_eq!(c.len(), 1);
        let q = c.get(1).unwrap();
        let fam = q.family.as_deref().unwrap();
        assert!(["a/flu", "a/eye", "b/flu", "b/eye"].contains(&fam));
        assert!(q.text.ends_with(" .") || q.text.ends_with("help"));
    }

    #[test]
    fn repeated_slots_draw_distinct_choices() {
        let c = synth_corpus(200, 3, &bank()).unwrap();
        for q in c.questions() {
            if q.family.as_deref() == Some("a/flu") {
                let body = q.text.split(" has ").nth(1).unwrap();
                let (x, y) = body.trim_end_matches(" .").split_once(" and ").unwrap();
                assert_ne!(x, y, "{}", q.text);
            }
        }
    }

    #[test]
    fn empty_bank_is_an_error() {
        let err = TemplateBank::parse(r#"{"groups": [], "templates": []}"#).unwrap_err();
        assert_eq!(err.to_string(), "empty template bank");
    }

    #[test]
    fn unknown_slot_is_rejected() {
        let err = TemplateBank::parse(
            r#"{"groups": [{"name": "g", "category": "c", "slots": {}}],
                "templates": [{"name": "t", "intention": "i", "weight": 1, "pattern": "{nope}"}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("{nope}"), "{err}");
    }
}
