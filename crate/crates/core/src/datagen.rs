//! Automatic training-pair generation.
//!
//! Positives perturb a question by synonym replacement followed by random
//! word dropping (entity tokens are never dropped). Negatives pair a question
//! with a random corpus question that shares none of its medical entities.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Question, QuestionId};
use crate::encoder::TrainingPair;
use crate::error::{Error, Result};
use crate::text::{find_entities, EntityDictionary, SynonymDictionary};

pub const POSITIVE_ORIGIN: &str = "synonym-replace+drop;entities-protected";
pub const NEGATIVE_ORIGIN: &str = "entity-disjoint-sample";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub replace_prob: f64,
    pub drop_prob: f64,
    pub negatives_per_question: usize,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            replace_prob: 0.3,
            drop_prob: 0.1,
            negatives_per_question: 3,
            seed: 1,
            max_attempts: 1000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("replace_prob", self.replace_prob), ("drop_prob", self.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.negatives_per_question == 0 {
            return Err(Error::invalid("negatives_per_question must be at least 1"));
        }
        Ok(())
    }
}

/// Positions covered by a dictionary entity.
fn protected_positions<S: AsRef<str>>(tokens: &[S], ent: &EntityDictionary) -> Vec<bool> {
    let mut protected = vec![false; tokens.len()];
    for m in find_entities(tokens, ent) {
        protected[m.start..m.end].fill(true);
    }
    protected
}

/// A perturbed copy of `tokens`: each token is swapped for another member of
/// its synonym group with probability `replace_prob`, then dropped with
/// probability `drop_prob` unless it is part of a medical entity. The result
/// is never empty.
pub fn gen_positive<R: Rng, S: AsRef<str>>(
    tokens: &[S],
    syn: &SynonymDictionary,
    ent: &EntityDictionary,
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<Vec<String>> {
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let protected = protected_positions(tokens, ent);
    let replaced: Vec<String> = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            match syn.group_of(t) {
                Some(group) if rng.gen::<f64>() < cfg.replace_prob => {
                    let others: Vec<&String> = group.iter().filter(|g| *g != t).collect();
                    others.choose(rng).map_or(t.to_string(), |s| s.to_string())
                }
                _ => t.to_string(),
            }
        })
        .collect();
    let kept: Vec<String> = replaced
        .iter()
        .zip(&protected)
        .filter(|(_, &p)| p || rng.gen::<f64>() >= cfg.drop_prob)
        .map(|(t, _)| t.clone())
        .collect();
    if kept.is_empty() {
        return Ok(vec![replaced.choose(rng).unwrap().clone()]);
    }
    Ok(kept)
}

fn entity_ids<S: AsRef<str>>(tokens: &[S], ent: &EntityDictionary) -> BTreeSet<String> {
    find_entities(tokens, ent)
        .into_iter()
        .map(|m| m.record.canonical_id)
        .collect()
}

/// Uniformly samples a corpus question sharing no canonical entity with `anchor`.
pub fn gen_negative<'c, R: Rng>(
    anchor: &Question,
    corpus: &'c Corpus,
    ent: &EntityDictionary,
    rng: &mut R,
) -> Result<&'c Question> {
    let pool: Vec<&Question> = corpus.questions().collect();
    sample_negative(anchor, &pool, ent, 1000, rng)
}

fn sample_negative<'c, R: Rng>(
    anchor: &Question,
    pool: &[&'c Question],
    ent: &EntityDictionary,
    max_attempts: usize,
    rng: &mut R,
) -> Result<&'c Question> {
    if pool.len() < 2 {
        return Err(Error::invalid("negative sampling needs at least 2 questions"));
    }
    let anchor_ents = entity_ids(&anchor.tokens, ent);
    for _ in 0..max_attempts {
        let cand = pool[rng.gen_range(0..pool.len())];
        if cand.id == anchor.id {
            continue;
        }
        if anchor_ents.is_empty() {
            return Ok(cand);
        }
        let shares = find_entities(&cand.tokens, ent)
            .iter()
            .any(|m| anchor_ents.contains(&m.record.canonical_id));
        if !shares {
            return Ok(cand);
        }
    }
    Err(Error::NoNegative(max_attempts))
}

/// Derives an anchor's private RNG stream so generation is order-independent.
fn anchor_rng(seed: u64, anchor: QuestionId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(anchor);
    rng
}

/// Samples `n_anchors` questions without replacement and emits, per anchor,
/// one positive pair followed by `negatives_per_question` negative pairs.
pub fn generate(
    corpus: &Corpus,
    n_anchors: usize,
    syn: &SynonymDictionary,
    ent: &EntityDictionary,
    cfg: &GenConfig,
) -> Result<Vec<TrainingPair>> {
    cfg.validate()?;
    if n_anchors == 0 {
        return Ok(Vec::new());
    }
    if n_anchors > corpus.len() {
        return Err(Error::invalid(format!(
            "{n_anchors} anchors requested from a corpus of {}",
            corpus.len()
        )));
    }
    if !corpus.is_tokenized() {
        return Err(Error::invalid("corpus must be tokenized before generating pairs"));
    }
    let pool: Vec<&Question> = corpus.questions().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = index::sample(&mut rng, pool.len(), n_anchors).into_vec();
    picks.sort_unstable();

    let mut pairs = Vec::with_capacity(n_anchors * (1 + cfg.negatives_per_question));
    for i in picks {
        let anchor = pool[i];
        let mut arng = anchor_rng(cfg.seed, anchor.id);
        let positive = gen_positive(&anchor.tokens, syn, ent, cfg, &mut arng)?;
        pairs.push(TrainingPair {
            q: anchor.tokens.clone(),
            q_prime: positive,
            y: 1,
            anchor_id: Some(anchor.id),
            origin: Some(POSITIVE_ORIGIN.into()),
        });
        for _ in 0..cfg.negatives_per_question {
            let neg = sample_negative(anchor, &pool, ent, cfg.max_attempts, &mut arng)?;
            pairs.push(TrainingPair {
                q: anchor.tokens.clone(),
                q_prime: neg.tokens.clone(),
                y: 0,
                anchor_id: Some(anchor.id),
                origin: Some(NEGATIVE_ORIGIN.into()),
            });
        }
    }
    Ok(pairs)
}

/// Total pair count produced by [`generate`].
pub fn pair_count(n_anchors: usize, negatives_per_question: usize) -> usize {
    n_anchors * (1 + negatives_per_question)
}
