//! Skip-gram word embeddings trained with negative sampling.
//!
//! Per (center, context) pair the objective is the logistic loss
//! `-ln σ(u_o·v_c) - Σ_k ln σ(-u_k·v_c)` where `v` are input vectors, `u`
//! output vectors and the `k` negatives are drawn from the unigram
//! distribution raised to the 3/4 power. The learning rate decays linearly
//! over the whole run.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::text::{parse_text_header, Vocabulary};

pub const EMBEDDING_MAGIC: &str = "SIMQ-EMB v1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingTable {
    /// word2vec-style initialization: inputs uniform in `±0.5/dim`, outputs
    /// zero. The UNK input vector starts at zero.
    pub fn init(vocab: Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = vocab.len();
        let scale = 0.5 / dim as f64;
        let mut input: Vec<f64> = (0..n * dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        input[Vocabulary::UNK_INDEX * dim..(Vocabulary::UNK_INDEX + 1) * dim].fill(0.0);
        Ok(EmbeddingTable {
            vocab,
            dim,
            input,
            output: vec![0.0; n * dim],
        })
    }

    pub fn from_vectors(vocab: Vocabulary, dim: usize, input: Vec<f64>) -> Result<Self> {
        if dim == 0 || input.len() != vocab.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} tokens of dim {dim}",
                input.len(),
                vocab.len()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding holds a non-finite value"));
        }
        let n = vocab.len();
        Ok(EmbeddingTable {
            vocab,
            dim,
            input,
            output: vec![0.0; n * dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Input vector for a vocabulary index.
    pub fn vector(&self, id: usize) -> &[f64] {
        &self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub(crate) fn vector_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.input[id * self.dim..(id + 1) * self.dim]
    }

    /// Vector for `token`, falling back to UNK.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.vector(self.vocab.id(token))
    }

    pub fn output_vector(&self, id: usize) -> &[f64] {
        &self.output[id * self.dim..(id + 1) * self.dim]
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        cosine(self.lookup(a), self.lookup(b))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{EMBEDDING_MAGIC} {} {}\n", self.len(), self.dim);
        for (id, token) in self.vocab.tokens().iter().enumerate() {
            out.push_str(token);
            for v in self.vector(id) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text format. Tokens may contain spaces (multi-word
    /// entities); the trailing `dim` fields of each line are the vector.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Truncated("embedding"))?;
        let fields = parse_text_header(header, EMBEDDING_MAGIC, "embedding")?;
        let [count, dim] = fields[..] else {
            return Err(Error::invalid("embedding header needs <count> <dim>"));
        };
        let mut tokens = Vec::with_capacity(count);
        let mut input = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let parts: Vec<&str> = line.rsplitn(dim + 1, ' ').collect();
            if parts.len() != dim + 1 {
                return Err(if i + 1 == count && !text.ends_with('\n') {
                    Error::Truncated("embedding")
                } else {
                    Error::Record {
                        line: lineno,
                        message: format!("expected token and {dim} values"),
                    }
                });
            }
            tokens.push(parts[dim].to_string());
            for p in parts[..dim].iter().rev() {
                input.push(p.parse::<f64>().map_err(|_| Error::Record {
                    line: lineno,
                    message: format!("bad value {p:?}"),
                })?);
            }
        }
        if tokens.len() < count || !text.ends_with('\n') {
            return Err(Error::Truncated("embedding"));
        }
        if tokens.len() > count {
            return Err(Error::TrailingData("embedding"));
        }
        Self::from_vectors(Vocabulary::from_tokens(tokens)?, dim, input)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Swaps in a vocabulary with the same token order (e.g. one carrying
    /// frequencies, loaded from a vocabulary file).
    pub fn with_vocab(mut self, vocab: Vocabulary) -> Result<Self> {
        if vocab.tokens() != self.vocab.tokens() {
            return Err(Error::invalid(
                "embedding tokens differ from the vocabulary file",
            ));
        }
        self.vocab = vocab;
        Ok(self)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot = dot(a, b);
    let na = dot_self(a).sqrt();
    let nb = dot_self(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn dot_self(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically safe `ln σ(x)`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Negative-sampling loss for one (center, context) pair.
pub fn ns_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = -log_sigmoid(dot(context, center));
    for neg in negatives {
        loss -= log_sigmoid(-dot(neg, center));
    }
    loss
}

/// Gradients of [`ns_loss`]: `(d/center, d/context, d/negatives)`.
pub fn ns_grad(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let g = sigmoid(dot(context, center)) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|u| g * u).collect();
    let d_context = center.iter().map(|v| g * v).collect();
    let mut d_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = sigmoid(dot(neg, center));
        for (d, u) in d_center.iter_mut().zip(neg.iter()) {
            *d += s * u;
        }
        d_negs.push(center.iter().map(|v| s * v).collect());
    }
    (d_center, d_context, d_negs)
}

/// Draws token ids proportionally to `freq^0.75`.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(freqs: &[u64]) -> Result<Self> {
        let cumulative: Vec<f64> = freqs
            .iter()
            .scan(0.0, |acc, &f| {
                *acc += (f as f64).powf(0.75);
                Some(*acc)
            })
            .collect();
        if cumulative.last().copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::invalid("negative sampler needs non-zero frequencies"));
        }
        Ok(NegativeSampler { cumulative })
    }

    pub fn probability(&self, id: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let prev = if id == 0 { 0.0 } else { self.cumulative[id - 1] };
        (self.cumulative[id] - prev) / total
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Frequent-word subsampling threshold; 0 disables it.
    pub subsample: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 100,
            window: 8,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 1,
            subsample: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SkipGramReport {
    /// Mean loss per (center, context) pair, one entry per epoch.
    pub epoch_loss: Vec<f64>,
    pub pairs_seen: u64,
}

/// Trains embeddings over a tokenized corpus.
pub fn train_skipgram(
    corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &SkipGramConfig,
) -> Result<(EmbeddingTable, SkipGramReport)> {
    let sentences: Vec<Vec<usize>> = corpus.questions().map(|q| vocab.ids(&q.tokens)).collect();
    train_on_ids(&sentences, vocab.clone(), cfg)
}

/// Trains embeddings over sentences already mapped to vocabulary ids.
pub fn train_on_ids(
    sentences: &[Vec<usize>],
    vocab: Vocabulary,
    cfg: &SkipGramConfig,
) -> Result<(EmbeddingTable, SkipGramReport)> {
    if cfg.window == 0 || cfg.negatives == 0 {
        return Err(Error::invalid("window and negatives must be at least 1"));
    }
    if vocab.len() < cfg.negatives + 1 {
        return Err(Error::VocabTooSmall {
            vocab: vocab.len(),
            negatives: cfg.negatives,
        });
    }
    let mut table = EmbeddingTable::init(vocab, cfg.dim, cfg.seed)?;
    let mut report = SkipGramReport::default();
    if cfg.epochs == 0 {
        return Ok((table, report));
    }
    let sampler = NegativeSampler::new(table.vocab.freqs())?;
    let keep = keep_probabilities(table.vocab.freqs(), cfg.subsample);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let dim = cfg.dim;
    let total_words: usize = sentences.iter().map(Vec::len).sum::<usize>().max(1);
    let total_steps = (total_words * cfg.epochs) as f64;
    let mut processed = 0usize;
    let mut neu1e = vec![0.0; dim];
    let mut kept = Vec::new();

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for sentence in sentences {
            kept.clear();
            kept.extend(
                sentence
                    .iter()
                    .copied()
                    .filter(|&w| keep[w] >= 1.0 || rng.gen::<f64>() < keep[w]),
            );
            for pos in 0..kept.len() {
                processed += 1;
                let progress = processed as f64 / total_steps;
                let lr = cfg.lr * (1.0 - progress).max(1e-4);
                let span = rng.gen_range(1..=cfg.window);
                let center = kept[pos];
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(kept.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = kept[ctx_pos];
                    neu1e.fill(0.0);
                    // positive target first, then sampled negatives
                    for d in 0..=cfg.negatives {
                        let (target, label) = if d == 0 {
                            (context, 1.0)
                        } else {
                            let t = sampler.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let f = dot(
                            &table.input[center * dim..(center + 1) * dim],
                            &table.output[target * dim..(target + 1) * dim],
                        );
                        loss_sum -= if label == 1.0 {
                            log_sigmoid(f)
                        } else {
                            log_sigmoid(-f)
                        };
                        let g = (label - sigmoid(f)) * lr;
                        let (inp, out) = (
                            &table.input[center * dim..(center + 1) * dim],
                            &mut table.output[target * dim..(target + 1) * dim],
                        );
                        for k in 0..dim {
                            neu1e[k] += g * out[k];
                            out[k] += g * inp[k];
                        }
                    }
                    for (v, e) in table.vector_mut(center).iter_mut().zip(&neu1e) {
                        *v += e;
                    }
                    pairs += 1;
                }
            }
        }
        let mean = if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 };
        if !mean.is_finite() {
            return Err(Error::Diverged {
                epoch: report.epoch_loss.len() + 1,
                lr: cfg.lr,
            });
        }
        log::debug!("skip-gram epoch {}: mean loss {mean:.5}", report.epoch_loss.len() + 1);
        report.epoch_loss.push(mean);
        report.pairs_seen += pairs;
    }
    Ok((table, report))
}

/// Keep probability per token for frequent-word subsampling (word2vec formula).
pub fn keep_probabilities(freqs: &[u64], threshold: f64) -> Vec<f64> {
    let total: u64 = freqs.iter().sum();
    if threshold <= 0.0 || total == 0 {
        return vec![1.0; freqs.len()];
    }
    let t = threshold * total as f64;
    freqs
        .iter()
        .map(|&f| {
            if f == 0 {
                1.0
            } else {
                let f = f as f64;
                ((f / t).sqrt() + 1.0) * t / f
            }
        })
        .collect()
}

/// One embedding vector per token, UNK for out-of-vocabulary tokens.
pub fn embed_question<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    Ok(tokens
        .iter()
        .map(|t| table.lookup(t.as_ref()).to_vec())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let toks: Vec<String> = words.iter().map(|s| s.to_string()).collect();
        Vocabulary::from_sequences([toks.as_slice()], 1).unwrap()
    }

    #[test]
    fn zero_epochs_is_the_seeded_init() {
        let vocab = vocab_of(&["a", "b", "c", "a"]);
        let cfg = SkipGramConfig {
            dim: 4,
            negatives: 2,
            epochs: 0,
            seed: 11,
            ..Default::default()
        };
        let (table, report) = train_on_ids(&[vec![1, 2, 3]], vocab.clone(), &cfg).unwrap();
        assert!(report.epoch_loss.is_empty());
        assert_eq!(table, EmbeddingTable::init(vocab, 4, 11).unwrap());
        assert!(table.vector(Vocabulary::UNK_INDEX).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vocab_too_small_for_negatives() {
        let vocab = vocab_of(&["a", "b"]);
        let cfg = SkipGramConfig {
            dim: 4,
            negatives: 5,
            ..Default::default()
        };
        let err = train_on_ids(&[vec![1, 2]], vocab, &cfg).unwrap_err();
        assert!(err.to_string().starts_with("vocabulary too small for negative sampling"));
    }

    #[test]
    fn embed_question_shapes_and_unk() {
        let vocab = vocab_of(&["t", "u"]);
        let table = EmbeddingTable::init(vocab, 3, 5).unwrap();
        let out = embed_question(&["t"], &table).unwrap();
        assert_eq!(out, vec![table.lookup("t").to_vec()]);
        let out = embed_question(&["t", "oov", "t"], &table).unwrap();
        assert_eq!(out[1], table.vector(Vocabulary::UNK_INDEX));
        assert_eq!(out[0], out[2]);
        assert!(embed_question::<&str>(&[], &table).is_err());
    }

    #[test]
    fn embed_question_length_seventeen() {
        let words: Vec<String> = (0..17).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_sequences([words.as_slice()], 1).unwrap();
        let table = EmbeddingTable::init(vocab, 100, 1).unwrap();
        let out = embed_question(&words, &table).unwrap();
        assert_eq!(out.len(), 17);
        assert!(out.iter().all(|v| v.len() == 100));
    }

    fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    #[test]
    fn negative_sampling_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let dim = rng.gen_range(1..=8);
            let k = rng.gen_range(1..=4);
            let mut v = || -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let center = v();
            let context = v();
            let negs: Vec<Vec<f64>> = (0..k).map(|_| v()).collect();
            let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
            let (dc, dctx, dn) = ns_grad(&center, &context, &neg_refs);

            let fd = finite_diff(&|x| ns_loss(x, &context, &neg_refs), &center, 1e-5);
            for (a, b) in dc.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-4, "center {a} vs {b}");
            }
            let fd = finite_diff(&|x| ns_loss(&center, x, &neg_refs), &context, 1e-5);
            for (a, b) in dctx.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-4, "context {a} vs {b}");
            }
            for j in 0..k {
                let fd = finite_diff(
                    &|x| {
                        let mut refs = neg_refs.clone();
                        refs[j] = x;
                        ns_loss(&center, &context, &refs)
                    },
                    &negs[j],
                    1e-5,
                );
                for (a, b) in dn[j].iter().zip(&fd) {
                    assert!(rel_err(*a, *b) < 1e-4, "negative {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn sampler_follows_three_quarter_power() {
        let sampler = NegativeSampler::new(&[0, 16, 1]).unwrap();
        assert_eq!(sampler.probability(0), 0.0);
        let p1 = sampler.probability(1);
        assert!((p1 - 8.0 / 9.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hits = (0..20_000).filter(|_| sampler.sample(&mut rng) == 1).count();
        assert!((hits as f64 / 20_000.0 - p1).abs() < 0.01);
        assert_eq!(sampler, NegativeSampler::new(&[0, 16, 1]).unwrap());
    }

    #[test]
    fn text_format_round_trip_with_spaced_tokens() {
        let vocab = vocab_of(&["pink eye", "fever", "a b c"]);
        let table = EmbeddingTable::init(vocab, 3, 9).unwrap();
        let back = EmbeddingTable::parse(&table.to_text()).unwrap();
        assert_eq!(back.vocab().tokens(), table.vocab().tokens());
        for id in 0..table.len() {
            assert_eq!(back.vector(id), table.vector(id));
        }
    }
}
