mod common;

use simq_core::embed::{cosine, train_on_ids, train_skipgram, SkipGramConfig};
use simq_core::text::{build_vocab, Vocabulary};

#[test]
fn same_seed_gives_identical_tables() {
    let bank = common::bank();
    let corpus = common::synthetic(300, 2, &bank);
    let vocab = build_vocab(&corpus, 1).unwrap();
    let cfg = SkipGramConfig { dim: 16, epochs: 3, seed: 8, ..SkipGramConfig::default() };
    let (a, ra) = train_skipgram(&corpus, &vocab, &cfg).unwrap();
    let (b, rb) = train_skipgram(&corpus, &vocab, &cfg).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(ra.epoch_loss, rb.epoch_loss);
    let (c, _) = train_skipgram(&corpus, &vocab, &SkipGramConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.to_text(), c.to_text());
}

#[test]
fn epoch_loss_trends_down() {
    let bank = common::bank();
    let corpus = common::synthetic(300, 2, &bank);
    let vocab = build_vocab(&corpus, 1).unwrap();
    let cfg = SkipGramConfig { dim: 16, epochs: 6, ..SkipGramConfig::default() };
    let loss = train_skipgram(&corpus, &vocab, &cfg).unwrap().1.epoch_loss;
    assert_eq!(loss.len(), 6);
    assert!(loss[5] < loss[0], "{loss:?}");
}

/// Input plus output vector. With negative sampling, two words that only
/// ever appear as each other's context meet through the output side.
fn combined(table: &simq_core::EmbeddingTable, token: &str) -> Vec<f64> {
    let id = table.vocab().id(token);
    table.vector(id).iter().zip(table.output_vector(id)).map(|(a, b)| a + b).collect()
}

#[test]
fn co_occurring_tokens_end_up_closer() {
    // "fever cough" repeated, padded with unrelated two-word sentences
    let mut sentences: Vec<Vec<String>> = vec![vec!["fever".into(), "cough".into()]; 20];
    for i in 0..10 {
        sentences.push(vec![format!("x{i}"), format!("y{i}")]);
    }
    let vocab = Vocabulary::from_sequences(sentences.iter().map(|s| s.as_slice()), 1).unwrap();
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.ids(s)).collect();

    let mut wins = 0;
    for seed in 0..100u64 {
        let cfg = SkipGramConfig { dim: 8, window: 1, epochs: 50, seed, ..SkipGramConfig::default() };
        let table = train_on_ids(&ids, vocab.clone(), &cfg).unwrap().0;
        let other = format!("x{}", seed % 10);
        let fever = combined(&table, "fever");
        let near = cosine(&fever, &combined(&table, "cough"));
        let far = cosine(&fever, &combined(&table, &other));
        wins += usize::from(near > far);
    }
    assert!(wins >= 95, "fever~cough beat fever~random in {wins}/100 seeds");
}
