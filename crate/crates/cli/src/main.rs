//! `simq`: build, query and evaluate a similar-question engine.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "simq", version, about = "Similar medical question retrieval")]
struct Cli {
    /// Only print results and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a JSONL question file and write it as a corpus.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus from a template bank.
    SynthCorpus(SynthArgs),
    /// Count tokens and write the vocabulary.
    BuildVocab(VocabArgs),
    /// Train skip-gram word embeddings.
    TrainEmbeddings(EmbedArgs),
    /// Generate labeled training pairs by synonym replacement and word dropping.
    GeneratePairs(PairArgs),
    /// Train the LSTM question encoder on labeled pairs.
    TrainEncoder(EncoderArgs),
    /// Build the keyword inverted index.
    Index(IndexArgs),
    /// Assemble an engine directory and precompute question vectors.
    Precompute(PrecomputeArgs),
    /// Find similar questions.
    Query(QueryArgs),
    /// Score system results against worker labels.
    Eval(EvalArgs),
    /// Measure how word substitutions move a question's vector.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Whitespace,
    Dictionary,
}

impl From<Mode> for simq_core::TokenizeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Whitespace => simq_core::TokenizeMode::Whitespace,
            Mode::Dictionary => simq_core::TokenizeMode::Dictionary,
        }
    }
}

/// How question text becomes tokens.
#[derive(Debug, Args)]
struct TokenizeArgs {
    /// Entity dictionary (surface, canonical id, type; tab-separated).
    #[arg(long)]
    entities: Option<PathBuf>,

    /// Tokenizer; defaults to dictionary when --entities is given.
    #[arg(long, value_enum)]
    tokenize: Option<Mode>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    templates: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    #[command(flatten)]
    tok: TokenizeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    window: usize,
    /// Negative samples per context word.
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    /// Frequent-word subsampling threshold (0 disables).
    #[arg(long, default_value_t = 0.0)]
    subsample: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    tok: TokenizeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PairArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    synonyms: PathBuf,
    /// Number of anchor questions; defaults to the whole corpus.
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long, default_value_t = 3)]
    negatives: usize,
    #[arg(long, default_value_t = 0.3)]
    replace_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    drop_prob: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum)]
    tokenize: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Similarity {
    Dot,
    Cosine,
}

impl From<Similarity> for simq_core::encoder::SimilarityKind {
    fn from(s: Similarity) -> Self {
        match s {
            Similarity::Dot => simq_core::encoder::SimilarityKind::Dot,
            Similarity::Cosine => simq_core::encoder::SimilarityKind::Cosine,
        }
    }
}

#[derive(Debug, Args)]
struct EncoderArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Global gradient-norm clip (0 disables).
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long, default_value_t = simq_core::encoder::DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, value_enum, default_value_t = Similarity::Dot)]
    similarity: Similarity,
    /// Fine-tune the word embeddings; the updated table goes to --emb-out.
    #[arg(long, requires = "emb_out")]
    train_embeddings: bool,
    #[arg(long)]
    emb_out: Option<PathBuf>,
    /// Compute per-pair gradients in parallel (same result as sequential).
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long, value_enum)]
    tokenize: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PrecomputeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    entities: PathBuf,
    #[arg(long, value_enum)]
    tokenize: Option<Mode>,
    #[arg(long, default_value_t = simq_core::encoder::DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, value_enum, default_value_t = Similarity::Dot)]
    similarity: Similarity,
    /// Engine directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Jsonl,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["text", "query_id", "queries"]))]
struct QueryArgs {
    /// Engine directory written by `precompute`.
    #[arg(long)]
    engine: PathBuf,
    /// A new question.
    #[arg(long)]
    text: Option<String>,
    /// Query with a question already in the corpus (it is excluded from results).
    #[arg(long)]
    query_id: Option<u64>,
    /// Corpus file of questions to run in batch.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    intention: Option<String>,
    #[arg(long, short, default_value_t = simq_core::pipeline::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = simq_core::pipeline::DEFAULT_THRESHOLD, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, default_value_t = simq_core::index::DEFAULT_MAX_CANDIDATES)]
    max_candidates: usize,
    /// Do not relax category or intention when no candidate matches exactly.
    #[arg(long)]
    strict_meta: bool,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Engine directory; when given, result ids are checked against its corpus.
    #[arg(long)]
    engine: Option<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    /// JSONL results as written by `query --format jsonl`.
    #[arg(long)]
    results: PathBuf,
    /// Also write the label histogram as tab-separated data.
    #[arg(long)]
    histogram_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    engine: PathBuf,
    #[arg(long)]
    text: String,
    /// Substitution as POSITION=TOKEN (0-based token position); repeatable.
    #[arg(long = "sub", required = true)]
    subs: Vec<String>,
}

/// Error classes mapped to exit codes.
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<simq_core::Error> for Failure {
    fn from(e: simq_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn init_logging(quiet: bool) {
    let default = if quiet { "error" } else { "info" };
    let env = env_logger::Env::new().filter_or("SIMQ_LOG", default);
    let mut builder = env_logger::Builder::from_env(env);
    if quiet {
        builder.filter_level(log::LevelFilter::Error);
    }
    builder.format_timestamp_millis().init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.quiet);
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::SynthCorpus(a) => commands::synth_corpus(a),
        Command::BuildVocab(a) => commands::build_vocab(a),
        Command::TrainEmbeddings(a) => commands::train_embeddings(a),
        Command::GeneratePairs(a) => commands::generate_pairs(a),
        Command::TrainEncoder(a) => commands::train_encoder(a),
        Command::Index(a) => commands::index(a),
        Command::Precompute(a) => commands::precompute(a),
        Command::Query(a) => commands::query(a),
        Command::Eval(a) => commands::eval(a),
        Command::Probe(a) => commands::probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
