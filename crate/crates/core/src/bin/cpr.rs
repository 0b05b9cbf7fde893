//! Command-line driver: ingest, embed, select, run, eval and tune.
//!
//! Exit codes: 0 success, 1 I/O, 2 usage, 3 parse, 4 config, 5 transport,
//! 6 validation, 7 run finished with failed sentences. A run whose failures
//! include a network error exits with 5.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cp_retrieval::config::{ClientKind, Config, ProviderKind};
use cp_retrieval::corpus::{sample_test_subset, CorpusSplit, SplitName, Task};
use cp_retrieval::decoder::{run_task, select_examples, PredictionSet, Strategy};
use cp_retrieval::embedder::EmbeddingVector;
use cp_retrieval::evaluation::evaluate;
use cp_retrieval::scoring::{write_score_dump, PoolIndex, Weights};
use cp_retrieval::tuner::grid_search;
use cp_retrieval::Error;

const EXIT_IO: u8 = 1;
const EXIT_PARSE: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_TRANSPORT: u8 = 5;
const EXIT_VALIDATION: u8 = 6;
const EXIT_INCOMPLETE: u8 = 7;

#[derive(Parser)]
#[command(name = "cpr", version, about = "Complexity-based demonstration retrieval for few-shot tagging")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; the task preset supplies every value it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    task: Option<Task>,
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Score weights `w1,w2,w3` for length, entropy and similarity.
    #[arg(long, global = true)]
    weights: Option<String>,
    /// Seed for test/dev subset sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of test (or dev) sentences to sample.
    #[arg(long, global = true)]
    sample: Option<usize>,
    /// Completion endpoint; selects the HTTP client when the config names an oracle.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true, value_enum)]
    provider: Option<Provider>,
    #[arg(long, global = true, value_enum)]
    client: Option<Client>,
    /// Record/replay fixture for the completion client.
    #[arg(long, global = true)]
    fixture: Option<PathBuf>,
    /// Label corruption probability of the noisy oracle.
    #[arg(long, global = true)]
    noise: Option<f64>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    train: Option<PathBuf>,
    #[arg(long, global = true)]
    dev: Option<PathBuf>,
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    /// Embedding cache file (JSON lines).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Hash,
    Remote,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum Client {
    Oracle,
    Noisy,
    Copy,
    Http,
    Replay,
    Record,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate corpus files and print label statistics.
    Ingest {
        paths: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Fill the embedding cache for the configured splits.
    Embed {
        #[arg(long, value_enum)]
        split: Vec<SplitArg>,
    },
    /// Write the selected demonstration ids for every test sentence.
    Select {
        #[arg(long, default_value = "cp")]
        strategy: Strategy,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump every candidate score as JSON lines.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Select, prompt and decode the test split.
    Run {
        #[arg(long, default_value = "cp")]
        strategy: Strategy,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Predictions of an interrupted run to reuse.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Directory receiving one prompt file per test sentence.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Score predictions against the gold test split.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Gold file; defaults to the configured test split.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Grid-search the score weights on the dev split.
    Tune {
        #[arg(long)]
        step: Option<f64>,
        /// Where to write the `w1,w2,w3,metric` table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Scheme(_) | Error::Token { .. } | Error::Format(_) | Error::Json(_) => EXIT_PARSE,
        Error::Config(_) => EXIT_CONFIG,
        Error::Retrieval { .. } => EXIT_TRANSPORT,
        e if e.is_transport() => EXIT_TRANSPORT,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn load_config(c: &Common) -> cp_retrieval::Result<Config> {
    let mut cfg = match &c.config {
        Some(path) => Config::load(path)?,
        None => Config::preset(c.task.unwrap_or(Task::Ner)),
    };
    if let Some(task) = c.task {
        cfg.task = task;
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    if let Some(w) = &c.weights {
        cfg.weights = Some(w.parse::<Weights>()?.as_array());
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(n) = c.sample {
        cfg.sample = n;
    }
    if let Some(jobs) = c.jobs {
        cfg.jobs = jobs;
    }
    if let Some(p) = c.provider {
        cfg.embedding.provider = match p {
            Provider::Hash => ProviderKind::Hash,
            Provider::Remote => ProviderKind::Remote,
            Provider::File => ProviderKind::File,
        };
    }
    if let Some(endpoint) = &c.endpoint {
        cfg.client.endpoint = Some(endpoint.clone());
        if matches!(cfg.client.kind, ClientKind::Oracle) && c.client.is_none() {
            cfg.client.kind = ClientKind::Http;
        }
    }
    if let Some(kind) = c.client {
        cfg.client.kind = match kind {
            Client::Oracle => ClientKind::Oracle,
            Client::Noisy => ClientKind::Noisy,
            Client::Copy => ClientKind::Copy,
            Client::Http => ClientKind::Http,
            Client::Replay => ClientKind::Replay,
            Client::Record => ClientKind::Record,
        };
    }
    if let Some(f) = &c.fixture {
        cfg.client.fixture = Some(f.clone());
    }
    if let Some(p) = c.noise {
        cfg.client.noise = p;
    }
    for (slot, value) in [
        (&mut cfg.corpus.train, &c.train),
        (&mut cfg.corpus.dev, &c.dev),
        (&mut cfg.corpus.test, &c.test),
        (&mut cfg.embedding.cache, &c.cache),
    ] {
        if value.is_some() {
            *slot = value.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_path(cfg: &Config, split: SplitName) -> cp_retrieval::Result<&Path> {
    let path = match split {
        SplitName::Train => &cfg.corpus.train,
        SplitName::Dev => &cfg.corpus.dev,
        SplitName::Test => &cfg.corpus.test,
    };
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("no {split:?} corpus configured").to_lowercase()))
}

fn read_split(cfg: &Config, split: SplitName) -> cp_retrieval::Result<CorpusSplit> {
    Ok(cfg.read_corpus(split_path(cfg, split)?, split)?.0)
}

/// The evaluated subset: same seed and size in `run`, `select`, `eval` and `tune`.
fn read_sampled(cfg: &Config, split: SplitName) -> cp_retrieval::Result<CorpusSplit> {
    Ok(sample_test_subset(&read_split(cfg, split)?, cfg.sample, cfg.seed))
}

fn output(path: &Option<PathBuf>) -> cp_retrieval::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn embed_split(cfg: &Config, split: &CorpusSplit) -> cp_retrieval::Result<Vec<EmbeddingVector>> {
    let provider = cfg.embedding.build()?;
    let cache = cfg.embedding.open_cache()?;
    cache.embed_all(&split.sentences, provider.as_ref())
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    path: &'a Path,
    #[serde(flatten)]
    report: cp_retrieval::corpus::IngestReport,
    scheme: &'a [String],
    label_counts: std::collections::BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct Selection<'a> {
    test_id: usize,
    example_ids: &'a [usize],
}

fn execute(cli: Cli) -> cp_retrieval::Result<u8> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Ingest { paths, json } => {
            let scheme = cfg.scheme();
            for path in &paths {
                let (split, report) = cfg.read_corpus(path, SplitName::Train)?;
                let summary = IngestSummary {
                    path,
                    report,
                    scheme: scheme.labels(),
                    label_counts: split.label_counts(),
                };
                if json {
                    println!("{}", serde_json::to_string(&summary)?);
                    continue;
                }
                println!("{}", path.display());
                println!(
                    "  sentences: {}  tokens: {}  repaired: {}  rejected: {}",
                    summary.report.sentences,
                    summary.report.tokens,
                    summary.report.repaired_labels,
                    summary.report.rejected_sentences
                );
                println!("  {} labels:", scheme.len());
                for label in scheme.labels() {
                    println!("    {label:<8} {}", summary.label_counts.get(label).copied().unwrap_or(0));
                }
            }
            Ok(0)
        }
        Command::Embed { split } => {
            let splits: Vec<SplitName> = if split.is_empty() {
                [SplitName::Train, SplitName::Dev, SplitName::Test]
                    .into_iter()
                    .filter(|s| split_path(&cfg, *s).is_ok())
                    .collect()
            } else {
                split
                    .into_iter()
                    .map(|s| match s {
                        SplitArg::Train => SplitName::Train,
                        SplitArg::Dev => SplitName::Dev,
                        SplitArg::Test => SplitName::Test,
                    })
                    .collect()
            };
            if splits.is_empty() {
                return Err(Error::Config("no corpus split configured to embed".into()));
            }
            let provider = cfg.embedding.build()?;
            let cache = cfg.embedding.open_cache()?;
            for name in splits {
                let split = read_split(&cfg, name)?;
                let vectors = cache.embed_all(&split.sentences, provider.as_ref())?;
                let dim = vectors.first().map_or(provider.dim(), EmbeddingVector::dim);
                println!("{name:?}: {} sentences, dim {dim}", split.len());
            }
            let stats = cache.stats();
            println!(
                "provider: {}  hits: {}  misses: {}  entries: {}",
                provider.id(),
                stats.hits,
                stats.misses,
                stats.entries
            );
            Ok(0)
        }
        Command::Select { strategy, out, scores } => {
            let pool = read_split(&cfg, SplitName::Train)?;
            let test = read_sampled(&cfg, SplitName::Test)?;
            let index = PoolIndex::new(&pool, embed_split(&cfg, &pool)?)?;
            let test_embeddings = embed_split(&cfg, &test)?;
            let selection = cfg.selection()?;
            let mut writer = output(&out)?;
            let mut dump = scores.as_ref().map(File::create).transpose()?.map(BufWriter::new);
            for (sentence, embedding) in test.sentences.iter().zip(&test_embeddings) {
                let ids = select_examples(sentence, Some(embedding), &index, &selection, &strategy)?;
                serde_json::to_writer(
                    &mut writer,
                    &Selection {
                        test_id: sentence.id,
                        example_ids: &ids,
                    },
                )?;
                writer.write_all(b"\n")?;
                if let Some(dump) = dump.as_mut() {
                    write_score_dump(dump, sentence.id, &index.score(sentence, embedding, &selection)?)?;
                }
            }
            writer.flush()?;
            if let Some(mut dump) = dump {
                dump.flush()?;
            }
            Ok(0)
        }
        Command::Run {
            strategy,
            out,
            resume,
            prompts,
        } => {
            let pool = read_split(&cfg, SplitName::Train)?;
            let test = read_sampled(&cfg, SplitName::Test)?;
            let index = PoolIndex::new(&pool, embed_split(&cfg, &pool)?)?;
            let test_embeddings = match strategy {
                Strategy::Static(_) => Vec::new(),
                _ => embed_split(&cfg, &test)?,
            };
            let client = cfg.client.build(&test)?;
            let mut opts = cfg.run_options();
            opts.prompt_dir = prompts;
            if let Some(path) = resume.filter(|p| p.exists()) {
                opts.resume_from = Some(PredictionSet::read_jsonl(BufReader::new(File::open(path)?))?);
            }
            let pred = run_task(
                &test,
                &test_embeddings,
                &index,
                &cfg.selection()?,
                &strategy,
                client.as_ref(),
                &opts,
            )?;
            let mut writer = output(&out)?;
            pred.write_jsonl(&mut writer)?;
            writer.flush()?;
            eprintln!(
                "decoded {} of {} sentences, {} label repairs",
                pred.records.len(),
                test.len(),
                pred.repair_count()
            );
            for failure in &pred.failures {
                eprintln!("failed sentence {}: {}", failure.test_id, failure.error);
            }
            Ok(match pred.failures.iter().find(|f| f.transport) {
                Some(_) => EXIT_TRANSPORT,
                None if pred.failures.is_empty() => 0,
                None => EXIT_INCOMPLETE,
            })
        }
        Command::Eval { pred, gold, json } => {
            let predictions = PredictionSet::read_jsonl(BufReader::new(File::open(pred)?))?;
            let gold = match gold {
                Some(path) => sample_test_subset(&cfg.read_corpus(path, SplitName::Test)?.0, cfg.sample, cfg.seed),
                None => read_sampled(&cfg, SplitName::Test)?,
            };
            let report = evaluate(&predictions, &gold)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            Ok(0)
        }
        Command::Tune { step, out } => {
            let pool = read_split(&cfg, SplitName::Train)?;
            let dev = read_sampled(&cfg, SplitName::Dev)?;
            let index = PoolIndex::new(&pool, embed_split(&cfg, &pool)?)?;
            let dev_embeddings = embed_split(&cfg, &dev)?;
            let client = cfg.client.build(&dev)?;
            let report = grid_search(
                &dev,
                &dev_embeddings,
                &index,
                &cfg.selection()?,
                client.as_ref(),
                step.unwrap_or(cfg.grid_step),
                &cfg.run_options(),
            )?;
            let mut writer = output(&out)?;
            report.write_csv(&mut writer)?;
            writer.flush()?;
            match (report.best, report.best_metric) {
                (Some(best), Some(metric)) => {
                    eprintln!("best weights {best} with dev metric {metric:.5}");
                    Ok(0)
                }
                _ => Err(Error::Domain("every grid point failed".into())),
            }
        }
    }
}
