//! Shared fixtures: the bundled synthetic data bank and a desk-scale
//! end-to-end training run.
#![allow(dead_code)]

use std::path::PathBuf;
use std::time::{Duration, Instant};

use simq_core::datagen::{generate, GenConfig};
use simq_core::embed::{train_skipgram, SkipGramConfig};
use simq_core::encoder::{train_with_progress, EncodeOptions, SimilarityKind, TrainConfig, TrainReport, TrainingPair};
use simq_core::synth::{synth_corpus, TemplateBank};
use simq_core::text::{build_vocab, TokenizeMode, Tokenizer};
use simq_core::{Corpus, Engine, EntityDictionary, RuleSet, SynonymDictionary};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub struct Bank {
    pub templates: TemplateBank,
    pub entities: EntityDictionary,
    pub synonyms: SynonymDictionary,
    pub rules: RuleSet,
}

pub fn bank() -> Bank {
    let d = data_dir();
    Bank {
        templates: TemplateBank::load(&d.join("templates.json")).unwrap(),
        entities: EntityDictionary::load(&d.join("entities.tsv")).unwrap(),
        synonyms: SynonymDictionary::load(&d.join("synonyms.tsv")).unwrap(),
        rules: RuleSet::load(&d.join("rules.jsonl")).unwrap(),
    }
}

/// Synthetic corpus tokenized in dictionary mode.
pub fn synthetic(n: usize, seed: u64, bank: &Bank) -> Corpus {
    synth_corpus(n, seed, &bank.templates)
        .unwrap()
        .tokenized(&Tokenizer::dictionary(&bank.entities))
        .unwrap()
}

#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub questions: usize,
    pub corpus_seed: u64,
    pub train_anchors: usize,
    pub heldout_anchors: usize,
    pub skipgram: SkipGramConfig,
    pub encoder: TrainConfig,
    pub gen: GenConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            questions: 2000,
            corpus_seed: 42,
            train_anchors: 1800,
            heldout_anchors: 200,
            skipgram: SkipGramConfig {
                dim: 32,
                epochs: 30,
                ..SkipGramConfig::default()
            },
            encoder: TrainConfig {
                hidden_dim: 32,
                epochs: 60,
                lr: 0.03,
                similarity: SimilarityKind::Cosine,
                ..TrainConfig::default()
            },
            gen: GenConfig::default(),
        }
    }
}

pub struct Desk {
    pub bank: Bank,
    pub engine: Engine,
    pub vocab_size: usize,
    pub train_pairs: Vec<TrainingPair>,
    pub heldout_pairs: Vec<TrainingPair>,
    pub report: TrainReport,
    pub elapsed: Duration,
}

/// Synthetic corpus → skip-gram embeddings → generated pairs → encoder →
/// indexed engine. Anchors are split so held-out pairs never reach training.
pub fn desk_run(cfg: &DeskConfig, mut progress: impl FnMut(usize, f64)) -> Desk {
    let start = Instant::now();
    let bank = bank();
    let corpus = synthetic(cfg.questions, cfg.corpus_seed, &bank);
    let vocab = build_vocab(&corpus, 1).unwrap();
    let vocab_size = vocab.len();
    let table = train_skipgram(&corpus, &vocab, &cfg.skipgram).unwrap().0;

    let pairs = generate(
        &corpus,
        cfg.train_anchors + cfg.heldout_anchors,
        &bank.synonyms,
        &bank.entities,
        &cfg.gen,
    )
    .unwrap();
    let per_anchor = 1 + cfg.gen.negatives_per_question;
    let anchors: Vec<u64> = pairs.iter().step_by(per_anchor).map(|p| p.anchor_id.unwrap()).collect();
    let heldout: std::collections::BTreeSet<u64> = anchors
        .iter()
        .copied()
        .skip(cfg.train_anchors)
        .collect();
    let (heldout_pairs, train_pairs): (Vec<_>, Vec<_>) = pairs
        .into_iter()
        .partition(|p| heldout.contains(&p.anchor_id.unwrap()));

    let outcome = train_with_progress(&train_pairs, &table, &cfg.encoder, &mut progress).unwrap();
    let engine = Engine::build(
        corpus,
        outcome.table,
        outcome.params,
        bank.entities.clone(),
        bank.rules.clone(),
        TokenizeMode::Dictionary,
        EncodeOptions {
            max_len: cfg.encoder.max_len,
            similarity: cfg.encoder.similarity,
        },
    )
    .unwrap();
    Desk {
        bank,
        engine,
        vocab_size,
        train_pairs,
        heldout_pairs,
        report: outcome.report,
        elapsed: start.elapsed(),
    }
}

/// Probability that a random positive outscores a random negative (ties count half).
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub struct SelfRetrieval {
    pub queries: usize,
    pub top1: usize,
    pub top5: usize,
}

/// Perturbs `n` random corpus questions with the positive-pair generator and
/// checks where each source question lands in the ranked output.
pub fn self_retrieval(desk: &Desk, n: usize, seed: u64) -> SelfRetrieval {
    use rand::seq::index;
    use rand::SeedableRng;
    use simq_core::datagen::gen_positive;
    use simq_core::text::join_units;
    use simq_core::{Question, QueryOptions};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<&Question> = desk.engine.corpus.questions().collect();
    let opts = QueryOptions {
        k: 5,
        threshold: f64::NEG_INFINITY,
        ..QueryOptions::default()
    };
    let mut out = SelfRetrieval { queries: 0, top1: 0, top5: 0 };
    for i in index::sample(&mut rng, pool.len(), n).into_vec() {
        let src = pool[i];
        let tokens = gen_positive(&src.tokens, &desk.bank.synonyms, &desk.bank.entities, &GenConfig::default(), &mut rng).unwrap();
        let q = Question {
            id: u64::MAX,
            text: join_units(&tokens),
            tokens,
            category: src.category.clone(),
            intention: src.intention.clone(),
            answered: false,
            family: None,
        };
        let results = desk.engine.query_question(&q, &opts).unwrap().results;
        out.queries += 1;
        match results.iter().position(|r| r.id == src.id) {
            Some(0) => {
                out.top1 += 1;
                out.top5 += 1;
            }
            Some(_) => out.top5 += 1,
            None => {}
        }
    }
    out
}

pub struct Saliency {
    pub sampled: usize,
    pub ordered: usize,
}

/// For sampled questions holding both a plain synonym-group word and a
/// symptom or disease entity, compares a synonym swap against swapping the
/// entity for a different entity of the same type.
pub fn saliency(desk: &Desk, n: usize, seed: u64) -> Saliency {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use simq_core::eval::probe_saliency;
    use simq_core::text::EntityType;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ent = &desk.bank.entities;
    let syn = &desk.bank.synonyms;
    let e = &desk.engine;
    let mut pool: Vec<_> = e.corpus.questions().collect();
    pool.shuffle(&mut rng);
    let mut out = Saliency { sampled: 0, ordered: 0 };
    for q in pool {
        if out.sampled == n {
            break;
        }
        let syn_pos: Vec<usize> = (0..q.tokens.len())
            .filter(|&i| ent.get(&q.tokens[i]).is_none() && syn.group_of(&q.tokens[i]).is_some())
            .collect();
        let ent_pos: Vec<usize> = (0..q.tokens.len())
            .filter(|&i| {
                ent.get(&q.tokens[i])
                    .is_some_and(|r| matches!(r.kind, EntityType::Symptom | EntityType::Disease))
            })
            .collect();
        let (Some(&sp), Some(&ep)) = (syn_pos.choose(&mut rng), ent_pos.choose(&mut rng)) else {
            continue;
        };
        let word = &q.tokens[sp];
        let syn_rep = syn.group_of(word).unwrap().iter().filter(|w| *w != word).collect::<Vec<_>>();
        let syn_rep = (*syn_rep.choose(&mut rng).unwrap()).clone();
        let rec = ent.get(&q.tokens[ep]).unwrap();
        let others: Vec<&str> = ent
            .iter()
            .filter(|(_, r)| r.kind == rec.kind && r.canonical_id != rec.canonical_id)
            .map(|(s, _)| s)
            .collect();
        let ent_rep = others.choose(&mut rng).unwrap().to_string();
        let subs = [(sp, syn_rep.clone()), (ep, ent_rep.clone())];
        let probe = probe_saliency(&q.tokens, &subs, &e.table, &e.params, &e.encode).unwrap();
        let sim = |pos: usize| probe.iter().find(|p| p.position == pos).unwrap().similarity;
        out.sampled += 1;
        if sim(sp) > sim(ep) {
            out.ordered += 1;
        }
    }
    out
}
