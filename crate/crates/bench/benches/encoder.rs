use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simq_core::encoder::{encode_with, grad, lstm_step, pair_loss, EncodeOptions, LstmState};
use simq_core::{EncoderParams, TrainingPair};

fn params(input: usize, hidden: usize) -> EncoderParams {
    EncoderParams::random(input, hidden, 0.1, 1.0, &mut ChaCha8Rng::seed_from_u64(1))
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("lstm_step");
    for hidden in [32, 100] {
        let p = params(100, hidden);
        let x = vec![0.05; 100];
        let prev = LstmState::zeros(hidden);
        g.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| lstm_step(black_box(&x), &prev, &p).unwrap())
        });
    }
    g.finish();
}

fn encode(c: &mut Criterion) {
    let entities = simq_bench::entities();
    let corpus = simq_bench::corpus(500, 3, &entities);
    let table = simq_bench::table(&corpus, 100);
    let questions: Vec<_> = corpus.questions().map(|q| q.tokens.clone()).collect();
    let opts = EncodeOptions::default();

    let mut g = c.benchmark_group("encode");
    g.throughput(Throughput::Elements(questions.len() as u64));
    for hidden in [32, 100] {
        let p = params(100, hidden);
        g.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| {
                for q in &questions {
                    black_box(encode_with(q, &table, &p, &opts).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn loss_and_grad(c: &mut Criterion) {
    let entities = simq_bench::entities();
    let corpus = simq_bench::corpus(64, 5, &entities);
    let table = simq_bench::table(&corpus, 32);
    let qs: Vec<_> = corpus.questions().map(|q| q.tokens.clone()).collect();
    let batch: Vec<TrainingPair> = (0..32)
        .map(|i| TrainingPair::new(qs[2 * i].clone(), qs[2 * i + 1].clone(), (i % 2) as u8))
        .collect();
    let p = params(32, 32);
    let opts = EncodeOptions::default();

    let mut g = c.benchmark_group("batch32");
    g.bench_function("loss", |b| b.iter(|| pair_loss(&batch, &table, &p, &opts).unwrap()));
    g.bench_function("grad", |b| b.iter(|| grad(&batch, &table, &p, &opts, false).unwrap()));
    g.bench_function("grad_with_embeddings", |b| {
        b.iter(|| grad(&batch, &table, &p, &opts, true).unwrap())
    });
    g.finish();
}

criterion_group!(benches, step, encode, loss_and_grad);
criterion_main!(benches);
