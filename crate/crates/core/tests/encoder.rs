mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simq_core::embed::EmbeddingTable;
use simq_core::encoder::{encode, grad, pair_loss, similarity, train, EncodeOptions, TrainConfig};
use simq_core::text::Vocabulary;
use simq_core::{EncoderParams, TrainingPair};

fn toks(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

fn random_table(words: &[&str], dim: usize, seed: u64) -> EmbeddingTable {
    let mut tokens = vec![simq_core::text::UNK.to_string()];
    tokens.extend(toks(words));
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = (0..vocab.len() * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingTable::from_vectors(vocab, dim, input).unwrap()
}

#[test]
fn encoding_depends_on_word_order() {
    let mut differ = 0;
    for seed in 0..100u64 {
        let table = random_table(&["a", "b"], 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let p = EncoderParams::random(4, 3, 0.5, 1.0, &mut rng);
        let ab = encode(&toks(&["a", "b"]), &table, &p).unwrap();
        let ba = encode(&toks(&["b", "a"]), &table, &p).unwrap();
        differ += usize::from(ab != ba);
    }
    assert!(differ >= 99, "only {differ}/100 seeds distinguish [a,b] from [b,a]");
}

#[test]
fn batch_loss_is_sum_of_pair_losses() {
    let words = ["a", "b", "c", "d", "e", "f"];
    let table = random_table(&words, 5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = EncoderParams::random(5, 4, 0.3, 1.0, &mut rng);
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.gen_range(1..=5);
        (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
    };
    let batch: Vec<TrainingPair> = (0..10)
        .map(|i| TrainingPair::new(sentence(&mut rng), sentence(&mut rng), (i % 2) as u8))
        .collect();

    let expected: f64 = batch
        .iter()
        .map(|pair| {
            let u = encode(&pair.q, &table, &p).unwrap();
            let v = encode(&pair.q_prime, &table, &p).unwrap();
            (similarity(&u, &v).unwrap() - pair.y as f64).powi(2)
        })
        .sum();
    let got = pair_loss(&batch, &table, &p, &EncodeOptions::default()).unwrap();
    assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let table = random_table(&["a", "b"], 3, 5);
    let p = EncoderParams::zeros(3, 2);
    // zero params encode everything to the zero vector, so S = 0 = y
    let batch = vec![
        TrainingPair::new(toks(&["a", "b"]), toks(&["b"]), 0),
        TrainingPair::new(toks(&["a"]), toks(&["a", "a"]), 0),
    ];
    let g = grad(&batch, &table, &p, &EncodeOptions::default(), true).unwrap();
    assert!(g.params.as_slice().iter().all(|&v| v == 0.0));
}

fn toy_pairs() -> (Vec<TrainingPair>, EmbeddingTable) {
    let bank = common::bank();
    let corpus = common::synthetic(200, 12, &bank);
    let qs: Vec<_> = corpus.questions().collect();
    let mut pairs = Vec::new();
    for q in qs.iter().take(10) {
        pairs.push(TrainingPair::new(q.tokens.clone(), q.tokens.clone(), 1));
    }
    // entity-disjoint negatives, found by scanning forward
    let ent = |q: &simq_core::Question| -> Vec<String> {
        simq_core::text::find_entities(&q.tokens, &bank.entities)
            .into_iter()
            .map(|m| m.record.canonical_id.clone())
            .collect()
    };
    let mut j = 10;
    for q in qs.iter().take(10) {
        let mine = ent(q);
        while ent(qs[j]).iter().any(|e| mine.contains(e)) {
            j += 1;
        }
        pairs.push(TrainingPair::new(q.tokens.clone(), qs[j].tokens.clone(), 0));
        j += 1;
    }
    let mut words: Vec<String> = pairs.iter().flat_map(|p| p.q.iter().chain(&p.q_prime)).cloned().collect();
    words.sort();
    words.dedup();
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    (pairs, random_table(&refs, 16, 6))
}

#[test]
fn twenty_toy_pairs_train_down() {
    let (pairs, table) = toy_pairs();
    assert_eq!(pairs.len(), 20);
    let cfg = TrainConfig { hidden_dim: 16, epochs: 200, batch_size: 20, ..TrainConfig::default() };
    let out = train(&pairs, &table, &cfg).unwrap();
    let r = &out.report;
    assert!(
        r.final_loss < 0.25 * r.initial_loss,
        "loss {} -> {}",
        r.initial_loss,
        r.final_loss
    );
}

#[test]
fn training_is_deterministic() {
    let (pairs, table) = toy_pairs();
    let cfg = TrainConfig { hidden_dim: 6, epochs: 5, batch_size: 4, seed: 3, ..TrainConfig::default() };
    let a = train(&pairs, &table, &cfg).unwrap();
    let b = train(&pairs, &table, &cfg).unwrap();
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    let par = train(&pairs, &table, &TrainConfig { parallel: true, ..cfg }).unwrap();
    assert_eq!(a.params.to_bytes(), par.params.to_bytes());
}

