use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use log::{info, warn};

use simq_core::datagen::{generate, GenConfig};
use simq_core::embed::{train_skipgram, EmbeddingTable, SkipGramConfig};
use simq_core::encoder::{read_pairs, train_with_progress, write_pairs, EncodeOptions, TrainConfig};
use simq_core::eval::{evaluate, probe_saliency, read_results, LabelSet, HISTOGRAM_BINS};
use simq_core::index::{InvertedIndex, RetrieveOptions};
use simq_core::manifest::EngineSources;
use simq_core::pipeline::{QueryOutcome, RankedResult};
use simq_core::synth::{self, TemplateBank};
use simq_core::text::{build_vocab as count_vocab, join_units, Tokenizer};
use simq_core::{
    Corpus, Engine, EntityDictionary, QueryOptions, RuleSet, SynonymDictionary,
    TokenizeMode, Vocabulary,
};

use crate::{
    EmbedArgs, EncoderArgs, EvalArgs, Failure, Format, IndexArgs, IngestArgs, Mode, PairArgs,
    PrecomputeArgs, ProbeArgs, QueryArgs, SynthArgs, TokenizeArgs, VocabArgs,
};

type Outcome = Result<(), Failure>;

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn mode_for(explicit: Option<Mode>, have_entities: bool) -> Result<TokenizeMode, Failure> {
    match (explicit, have_entities) {
        (Some(Mode::Dictionary), false) => Err(Failure::Usage(
            "--tokenize dictionary needs --entities".into(),
        )),
        (Some(m), _) => Ok(m.into()),
        (None, true) => Ok(TokenizeMode::Dictionary),
        (None, false) => Ok(TokenizeMode::Whitespace),
    }
}

fn load_entities(path: Option<&Path>) -> Result<EntityDictionary, Failure> {
    Ok(match path {
        Some(p) => EntityDictionary::load(p)?,
        None => EntityDictionary::new(),
    })
}

fn tokenized_corpus(path: &Path, entities: &EntityDictionary, mode: TokenizeMode) -> Result<Corpus, Failure> {
    let corpus = Corpus::load(path)?;
    Ok(corpus.tokenized(&Tokenizer::new(mode, entities))?)
}

fn load_tokenized(path: &Path, tok: &TokenizeArgs) -> Result<(Corpus, TokenizeMode), Failure> {
    let entities = load_entities(tok.entities.as_deref())?;
    let mode = mode_for(tok.tokenize, tok.entities.is_some())?;
    Ok((tokenized_corpus(path, &entities, mode)?, mode))
}

pub fn ingest(a: IngestArgs) -> Outcome {
    let t = Instant::now();
    let (corpus, report) = Corpus::ingest(&a.input)?;
    for r in &report.rejected {
        warn!("stage=ingest skipped line {}: {}", r.line, r.message);
    }
    corpus.save(&a.out)?;
    info!(
        "stage=ingest accepted={} rejected={} categories={} intentions={} elapsed={:.2}s",
        report.accepted,
        report.rejected.len(),
        corpus.categories().len(),
        corpus.intentions().len(),
        secs(t)
    );
    Ok(())
}

pub fn synth_corpus(a: SynthArgs) -> Outcome {
    let t = Instant::now();
    let bank = TemplateBank::load(&a.templates)?;
    let corpus = synth::synth_corpus(a.n, a.seed, &bank)?;
    corpus.save(&a.out)?;
    info!(
        "stage=synth-corpus questions={} groups={} templates={} seed={} elapsed={:.2}s",
        corpus.len(),
        bank.groups.len(),
        bank.templates.len(),
        a.seed,
        secs(t)
    );
    Ok(())
}

pub fn build_vocab(a: VocabArgs) -> Outcome {
    let t = Instant::now();
    let (corpus, mode) = load_tokenized(&a.corpus, &a.tok)?;
    let vocab = count_vocab(&corpus, a.min_count)?;
    vocab.save(&a.out)?;
    info!(
        "stage=build-vocab questions={} tokens={} min_count={} mode={mode:?} elapsed={:.2}s",
        corpus.len(),
        vocab.len(),
        a.min_count,
        secs(t)
    );
    Ok(())
}

pub fn train_embeddings(a: EmbedArgs) -> Outcome {
    let t = Instant::now();
    let (corpus, _) = load_tokenized(&a.corpus, &a.tok)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let cfg = SkipGramConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        subsample: a.subsample,
    };
    let (table, report) = train_skipgram(&corpus, &vocab, &cfg)?;
    for (e, loss) in report.epoch_loss.iter().enumerate() {
        info!("stage=train-embeddings epoch={} mean_loss={loss:.4}", e + 1);
    }
    table.save(&a.out)?;
    info!(
        "stage=train-embeddings tokens={} dim={} pairs_seen={} elapsed={:.2}s",
        table.len(),
        table.dim(),
        report.pairs_seen,
        secs(t)
    );
    Ok(())
}

pub fn generate_pairs(a: PairArgs) -> Outcome {
    let t = Instant::now();
    let entities = EntityDictionary::load(&a.entities)?;
    let synonyms = SynonymDictionary::load(&a.synonyms)?;
    let mode = mode_for(a.tokenize, true)?;
    let corpus = tokenized_corpus(&a.corpus, &entities, mode)?;
    let cfg = GenConfig {
        replace_prob: a.replace_prob,
        drop_prob: a.drop_prob,
        negatives_per_question: a.negatives,
        seed: a.seed,
        ..GenConfig::default()
    };
    let anchors = a.anchors.unwrap_or(corpus.len());
    let pairs = generate(&corpus, anchors, &synonyms, &entities, &cfg)?;
    write_pairs(&a.out, &pairs)?;
    let positives = pairs.iter().filter(|p| p.y == 1).count();
    info!(
        "stage=generate-pairs anchors={anchors} pairs={} positive={positives} negative={} elapsed={:.2}s",
        pairs.len(),
        pairs.len() - positives,
        secs(t)
    );
    Ok(())
}

pub fn train_encoder(a: EncoderArgs) -> Outcome {
    let t = Instant::now();
    let pairs = read_pairs(&a.pairs)?;
    let table = EmbeddingTable::load(&a.emb)?;
    let cfg = TrainConfig {
        hidden_dim: a.hidden,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch,
        seed: a.seed,
        train_embeddings: a.train_embeddings,
        clip_norm: a.clip,
        max_len: a.max_len,
        similarity: a.similarity.into(),
        parallel: a.parallel,
        ..TrainConfig::default()
    };
    let outcome = train_with_progress(&pairs, &table, &cfg, |epoch, loss| {
        info!(
            "stage=train-encoder epoch={} loss={loss:.4} elapsed={:.1}s",
            epoch + 1,
            secs(t)
        );
    })?;
    outcome.params.save(&a.out)?;
    if let Some(path) = &a.emb_out {
        outcome.table.save(path)?;
    }
    let r = &outcome.report;
    info!(
        "stage=train-encoder pairs={} hidden={} initial_loss={:.4} final_loss={:.4} elapsed={:.2}s",
        pairs.len(),
        a.hidden,
        r.initial_loss,
        r.final_loss,
        secs(t)
    );
    Ok(())
}

pub fn index(a: IndexArgs) -> Outcome {
    let t = Instant::now();
    let entities = EntityDictionary::load(&a.entities)?;
    let rules = RuleSet::load(&a.rules)?;
    let mode = mode_for(a.tokenize, true)?;
    let corpus = tokenized_corpus(&a.corpus, &entities, mode)?;
    let index = InvertedIndex::build(&corpus, &entities, &rules);
    index.save(&a.out)?;
    info!(
        "stage=index questions={} postings={} elapsed={:.2}s",
        corpus.len(),
        index.len(),
        secs(t)
    );
    Ok(())
}

pub fn precompute(a: PrecomputeArgs) -> Outcome {
    let t = Instant::now();
    let mode = mode_for(a.tokenize, true)?;
    let encode = EncodeOptions {
        max_len: a.max_len,
        similarity: a.similarity.into(),
    };
    let sources = EngineSources {
        corpus: a.corpus.clone(),
        vocab: a.vocab.clone(),
        embeddings: a.emb.clone(),
        encoder: a.model.clone(),
        index: a.index.clone(),
        rules: a.rules.clone(),
        entities: a.entities.clone(),
        mode,
        encode,
    };
    let engine = sources.assemble()?;
    let config = serde_json::json!({
        "sources": {
            "corpus": a.corpus,
            "vocab": a.vocab,
            "embeddings": a.emb,
            "encoder": a.model,
            "index": a.index,
            "rules": a.rules,
            "entities": a.entities,
        },
    });
    let m = engine.save_dir(&a.out, config)?;
    info!(
        "stage=precompute questions={} vectors={} hidden={} postings={} out={} elapsed={:.2}s",
        m.dims.questions,
        m.dims.cached_vectors,
        m.dims.hidden_dim,
        m.dims.postings,
        a.out.display(),
        secs(t)
    );
    Ok(())
}

fn load_engine(dir: &Path) -> Result<Engine, Failure> {
    let t = Instant::now();
    let (engine, _) =
        Engine::load_dir(dir).with_context(|| format!("loading engine {}", dir.display()))?;
    info!(
        "stage=load-engine questions={} vectors={} elapsed={:.2}s",
        engine.corpus.len(),
        engine.cache.len(),
        secs(t)
    );
    Ok(engine)
}

fn write_results(
    out: &mut impl std::io::Write,
    engine: &Engine,
    query_id: Option<u64>,
    results: &[RankedResult],
    format: Format,
) -> std::io::Result<()> {
    for r in results {
        let text = engine.corpus.get(r.id).map_or("", |q| q.text.as_str());
        match format {
            Format::Tsv => writeln!(out, "{}\t{:.6}\t{}\t{}", r.rank, r.score, r.id, text)?,
            Format::Jsonl => {
                let mut row = serde_json::json!({
                    "id": r.id,
                    "score": r.score,
                    "rank": r.rank,
                    "text": text,
                });
                if let Some(q) = query_id {
                    row["query_id"] = q.into();
                }
                writeln!(out, "{row}")?;
            }
        }
    }
    Ok(())
}

fn log_outcome(label: &str, o: &QueryOutcome) {
    info!(
        "stage=query query={label} keywords={:?} level={:?} candidates={} results={}",
        o.keywords,
        o.level,
        o.candidates,
        o.results.len()
    );
}

pub fn query(a: QueryArgs) -> Outcome {
    if a.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    if a.threshold.is_nan() {
        return Err(Failure::Usage("--threshold must be a number".into()));
    }
    let t = Instant::now();
    let engine = load_engine(&a.engine)?;
    let opts = QueryOptions {
        k: a.k,
        threshold: a.threshold,
        retrieve: RetrieveOptions {
            max_candidates: a.max_candidates,
            strict_meta: a.strict_meta,
        },
    };
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let io = |e: std::io::Error| Failure::Data(anyhow::Error::new(e).context("writing results"));

    if let Some(text) = &a.text {
        let o = engine.query(text, a.category.as_deref(), a.intention.as_deref(), &opts)?;
        log_outcome("text", &o);
        write_results(&mut out, &engine, None, &o.results, a.format).map_err(io)?;
    } else if let Some(id) = a.query_id {
        let mut q = engine
            .corpus
            .get(id)
            .cloned()
            .ok_or_else(|| anyhow::anyhow!("question {id} is not in the engine corpus"))?;
        if let Some(c) = &a.category {
            q.category = c.clone();
        }
        if let Some(i) = &a.intention {
            q.intention = i.clone();
        }
        let o = engine.query_question(&q, &opts)?;
        log_outcome(&id.to_string(), &o);
        write_results(&mut out, &engine, Some(id), &o.results, a.format).map_err(io)?;
    } else if let Some(path) = &a.queries {
        let queries = tokenized_corpus(path, &engine.entities, engine.mode)?;
        for q in queries.questions() {
            let o = engine.query_question(q, &opts)?;
            log_outcome(&q.id.to_string(), &o);
            write_results(&mut out, &engine, Some(q.id), &o.results, a.format).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;
    info!("stage=query elapsed={:.3}s", secs(t));
    Ok(())
}

fn bar(count: usize, max: usize, width: usize) -> String {
    let n = if max == 0 { 0 } else { (count * width).div_ceil(max) };
    "#".repeat(n)
}

pub fn eval(a: EvalArgs) -> Outcome {
    let labels = LabelSet::load(&a.labels)?;
    let text = std::fs::read_to_string(&a.results)
        .with_context(|| format!("reading {}", a.results.display()))?;
    let results = read_results(&text).with_context(|| format!("parsing {}", a.results.display()))?;
    if let Some(dir) = &a.engine {
        let engine = load_engine(dir)?;
        for (q, list) in &results {
            if let Some(r) = list.iter().find(|r| engine.corpus.get(r.id).is_none()) {
                return Err(Failure::Data(anyhow::anyhow!(
                    "result {} for query {q} is not in the engine corpus",
                    r.id
                )));
            }
        }
    }
    let report = evaluate(&labels, &results)?;

    if let Some(path) = &a.histogram_out {
        let mut data = String::from("bin_low\tbin_high\tpairs\n");
        for (i, n) in report.histogram.iter().enumerate() {
            let hi = if i + 1 == HISTOGRAM_BINS { 1.0 } else { (i + 1) as f64 / 10.0 };
            writeln!(data, "{:.1}\t{hi:.1}\t{n}", i as f64 / 10.0).unwrap();
        }
        std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))?;
    }

    let mut s = String::new();
    match a.format {
        Format::Jsonl => {
            writeln!(s, "{}", serde_json::to_string(&report).expect("report serializes")).unwrap();
        }
        Format::Tsv => {
            writeln!(s, "pairs\t{}", report.pairs).unwrap();
            writeln!(s, "precision\t{:.4}", report.precision).unwrap();
            writeln!(s, "\nlabel histogram (share of workers answering similar)").unwrap();
            let max = report.histogram.iter().copied().max().unwrap_or(0);
            for (i, n) in report.histogram.iter().enumerate() {
                let lo = i * 10;
                let hi = if i + 1 == HISTOGRAM_BINS { "100]".to_string() } else { format!("{})", lo + 10) };
                writeln!(s, "[{lo:>3}%,{hi:<5}\t{n:>6}\t{}", bar(*n, max, 40)).unwrap();
            }
            writeln!(s, "\nquery_id\tn\ttau\trho\tties").unwrap();
            for c in &report.correlations {
                writeln!(s, "{}\t{}\t{:.4}\t{:.4}\t{}", c.query_id, c.n, c.tau, c.rho, c.ties).unwrap();
            }
            writeln!(s, "\nstat\tmin\tq1\tmedian\tq3\tmax").unwrap();
            for (name, summary) in [("tau", report.tau), ("rho", report.rho)] {
                match summary {
                    Some(m) => writeln!(
                        s,
                        "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                        m.min, m.q1, m.median, m.q3, m.max
                    )
                    .unwrap(),
                    None => writeln!(s, "{name}\t-\t-\t-\t-\t-").unwrap(),
                }
            }
        }
    }
    print!("{s}");
    Ok(())
}

fn parse_sub(s: &str) -> Result<(usize, String), Failure> {
    let (pos, token) = s
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--sub {s:?}: expected POSITION=TOKEN")))?;
    let pos = pos
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("--sub {s:?}: position is not a number")))?;
    if token.trim().is_empty() {
        return Err(Failure::Usage(format!("--sub {s:?}: empty replacement")));
    }
    Ok((pos, token.trim().to_lowercase()))
}

pub fn probe(a: ProbeArgs) -> Outcome {
    let subs = a.subs.iter().map(|s| parse_sub(s)).collect::<Result<Vec<_>, _>>()?;
    let engine = load_engine(&a.engine)?;
    let tokens = engine.tokenizer().tokenize(&a.text)?;
    let listing: Vec<String> = tokens.iter().enumerate().map(|(i, t)| format!("{i}:{t}")).collect();
    info!("stage=probe tokens=[{}]", listing.join(" "));
    let v = simq_core::encoder::encode_with(&tokens, &engine.table, &engine.params, &engine.encode)?;
    let self_sim = simq_core::encoder::score(engine.encode.similarity, &v, &v)?;
    let results = probe_saliency(&tokens, &subs, &engine.table, &engine.params, &engine.encode)?;
    println!("{self_sim:.6}\t-\t-\t{}", join_units(&tokens));
    for r in results {
        let from = &tokens[r.position];
        println!("{:.6}\t{}\t{from}->{}\t{}", r.similarity, r.position, r.replacement, r.text);
    }
    Ok(())
}
