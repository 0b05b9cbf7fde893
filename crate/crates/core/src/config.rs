//! Run configuration: a TOML file whose defaults are the per-task presets.
//!
//! ```toml
//! task = "ner"
//! k = 5
//! weights = [0.25, 0.25, 0.5]
//!
//! [embedding]
//! provider = "hash"
//! cache = "embeddings.jsonl"
//!
//! [client]
//! kind = "http"
//! endpoint = "http://localhost:8000/v1/completions"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    parse_conll_with, parse_conllu_with, ConllOptions, CorpusSplit, IngestReport, LabelScheme, SplitName, Task,
    DEFAULT_SAMPLE_SEED, DEFAULT_TEST_SAMPLE,
};
use crate::decoder::{DecodeOptions, RunOptions};
use crate::embedder::{
    EmbeddingCache, EmbeddingProvider, HashEmbedder, RemoteEmbedder, VectorFileProvider, DEFAULT_DIM,
    DEFAULT_PROVIDER_ID,
};
use crate::error::{Error, Result};
use crate::http::RetryPolicy;
use crate::plm::{
    CompletionClient, DemonstrationCopyClient, HttpCompletionClient, OracleClient, ReplayClient,
};
use crate::prompting::{CompletionLead, ExampleOrder};
use crate::scoring::{SelectionConfig, Weights, DEFAULT_K, DEFAULT_TEMPERATURE};

/// Overrides the completion endpoint URL from the config file.
pub const ENDPOINT_ENV: &str = "CPR_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Conll,
    Conllu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
    /// Tag column for CoNLL files; defaults to 3 for NER and 2 for chunking.
    pub column: Option<usize>,
    /// Drop sentences with invalid BIO transitions instead of repairing them.
    pub reject_invalid_bio: bool,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            train: None,
            dev: None,
            test: None,
            format: None,
            column: None,
            reject_invalid_bio: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    Remote,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub provider: ProviderKind,
    /// Provider id recorded in the cache; defaults to the sentence-transformer
    /// name for remote/file providers and `hash-<dim>-<seed>` for hashing.
    pub id: Option<String>,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub vectors: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub hash_seed: u64,
    pub max_in_flight: usize,
    pub batch_size: usize,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Remote,
            id: None,
            dim: DEFAULT_DIM,
            endpoint: None,
            vectors: None,
            cache: None,
            hash_seed: 0,
            max_in_flight: 4,
            batch_size: 64,
        }
    }
}

impl EmbeddingSettings {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let id = self.id.clone().unwrap_or_else(|| DEFAULT_PROVIDER_ID.to_string());
        Ok(match self.provider {
            ProviderKind::Hash => {
                let hash = HashEmbedder::new(self.dim, self.hash_seed)?;
                match &self.id {
                    Some(id) => Box::new(Renamed { id: id.clone(), inner: hash }),
                    None => Box::new(hash),
                }
            }
            ProviderKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("remote embedding provider needs an endpoint".into()))?;
                Box::new(RemoteEmbedder::new(id, self.dim, endpoint)?.with_batch_size(self.batch_size))
            }
            ProviderKind::File => {
                let path = self
                    .vectors
                    .as_ref()
                    .ok_or_else(|| Error::Config("file embedding provider needs a vectors path".into()))?;
                Box::new(VectorFileProvider::open(id, self.dim, path)?)
            }
        })
    }

    /// Id under which vectors from this provider are cached.
    pub fn provider_id(&self) -> String {
        match (&self.id, self.provider) {
            (Some(id), _) => id.clone(),
            (None, ProviderKind::Hash) => format!("hash-{}-{}", self.dim, self.hash_seed),
            (None, _) => DEFAULT_PROVIDER_ID.to_string(),
        }
    }

    pub fn open_cache(&self) -> Result<EmbeddingCache> {
        let cache = match &self.cache {
            Some(path) => EmbeddingCache::open(path)?,
            None => EmbeddingCache::in_memory(),
        };
        Ok(cache
            .with_max_in_flight(self.max_in_flight)
            .with_batch_size(self.batch_size))
    }
}

struct Renamed<P> {
    id: String,
    inner: P,
}

impl<P: EmbeddingProvider> EmbeddingProvider for Renamed<P> {
    fn id(&self) -> &str {
        &self.id
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.inner.embed_texts(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    /// Gold labels of the split being decoded.
    Oracle,
    /// Gold labels corrupted with probability `noise`.
    Noisy,
    /// Labels copied from the selected demonstrations.
    Copy,
    Http,
    /// Serve from `fixture` only.
    Replay,
    /// Serve from `fixture`, forwarding misses to the HTTP endpoint.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSettings {
    pub kind: ClientKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub chat_wrap: bool,
    pub noise: f64,
    pub noise_seed: u64,
    pub fixture: Option<PathBuf>,
    pub max_attempts: u32,
    pub requests_per_minute: Option<usize>,
    pub max_tokens: u32,
}

impl Default for ClientSettings {
    fn default() -> Self {
        Self {
            kind: ClientKind::Oracle,
            endpoint: None,
            model: None,
            chat_wrap: false,
            noise: 0.0,
            noise_seed: 0,
            fixture: None,
            max_attempts: RetryPolicy::default().max_attempts,
            requests_per_minute: None,
            max_tokens: DecodeOptions::default().max_tokens,
        }
    }
}

impl ClientSettings {
    fn http(&self) -> Result<HttpCompletionClient> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|e| !e.is_empty())
            .or_else(|| self.endpoint.clone())
            .ok_or_else(|| Error::Config("HTTP client needs an endpoint".into()))?;
        let mut client = HttpCompletionClient::from_env(endpoint)?
            .with_chat_wrap(self.chat_wrap)
            .with_retry(RetryPolicy {
                max_attempts: self.max_attempts.max(1),
                ..RetryPolicy::default()
            });
        if let Some(model) = &self.model {
            client = client.with_model(model);
        }
        if let Some(rpm) = self.requests_per_minute {
            client = client.with_rate_limit(rpm, Duration::from_secs(60));
        }
        Ok(client)
    }

    /// `gold` is the split being decoded; only the oracle clients read it.
    pub fn build(&self, gold: &CorpusSplit) -> Result<Box<dyn CompletionClient>> {
        let fixture = || {
            self.fixture
                .clone()
                .ok_or_else(|| Error::Config("replay/record client needs a fixture path".into()))
        };
        Ok(match self.kind {
            ClientKind::Oracle => Box::new(OracleClient::new(gold)),
            ClientKind::Noisy => Box::new(OracleClient::noisy(gold, self.noise, self.noise_seed)?),
            ClientKind::Copy => Box::new(DemonstrationCopyClient::new(&gold.scheme)),
            ClientKind::Http => Box::new(self.http()?),
            ClientKind::Replay => Box::new(ReplayClient::replay(fixture()?)?),
            ClientKind::Record => Box::new(ReplayClient::record(fixture()?, Box::new(self.http()?))?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub task: Task,
    pub k: usize,
    /// `[w1, w2, w3]` for length, entropy and similarity; task preset when absent.
    pub weights: Option<[f64; 3]>,
    pub temperature: f64,
    pub exclude_duplicates: bool,
    pub seed: u64,
    /// Test sentences sampled per run.
    pub sample: usize,
    pub jobs: usize,
    pub order: ExampleOrder,
    pub lead: CompletionLead,
    pub grid_step: f64,
    pub corpus: CorpusSettings,
    pub embedding: EmbeddingSettings,
    pub client: ClientSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self::preset(Task::Ner)
    }
}

impl Config {
    /// Named presets `ner`, `chunk`, `pos` with their default k and weights.
    pub fn preset(task: Task) -> Self {
        Self {
            task,
            k: DEFAULT_K,
            weights: None,
            temperature: DEFAULT_TEMPERATURE,
            exclude_duplicates: false,
            seed: DEFAULT_SAMPLE_SEED,
            sample: DEFAULT_TEST_SAMPLE,
            jobs: 1,
            order: ExampleOrder::default(),
            lead: CompletionLead::default(),
            grid_step: crate::tuner::DEFAULT_STEP,
            corpus: CorpusSettings::default(),
            embedding: EmbeddingSettings::default(),
            client: ClientSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        // the task decides the preset, so read it first
        #[derive(Deserialize)]
        struct TaskOnly {
            task: Option<Task>,
        }
        let probe: TaskOnly = toml::from_str::<toml::Value>(text)
            .map_err(|e| Error::Config(e.to_string()))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base = Self::preset(probe.task.unwrap_or(Task::Ner));
        let mut merged = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        let overrides: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        merge_toml(&mut merged, overrides);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn weights(&self) -> Result<Weights> {
        match self.weights {
            Some([a, b, c]) => Weights::new(a, b, c),
            None => Ok(Weights::for_task(self.task)),
        }
    }

    pub fn selection(&self) -> Result<SelectionConfig> {
        let cfg = SelectionConfig {
            weights: self.weights()?,
            k: self.k,
            temperature: self.temperature,
            provider_id: self.embedding.provider_id(),
            exclude_duplicates: self.exclude_duplicates,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            jobs: self.jobs.max(1),
            order: self.order,
            decode: DecodeOptions {
                lead: self.lead,
                max_tokens: self.client.max_tokens.max(1),
            },
            prompt_dir: None,
            resume_from: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights()?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.sample == 0 {
            return Err(Error::Config("sample must be at least 1".into()));
        }
        Ok(())
    }

    fn format(&self) -> CorpusFormat {
        self.corpus.format.unwrap_or(match self.task {
            Task::Pos => CorpusFormat::Conllu,
            Task::Ner | Task::Chunk => CorpusFormat::Conll,
        })
    }

    /// Reads one corpus file using the task's format, column and label scheme.
    pub fn read_corpus(&self, path: impl AsRef<Path>, split: SplitName) -> Result<(CorpusSplit, IngestReport)> {
        let bytes = std::fs::read(path)?;
        let scheme = self.task.default_scheme();
        match self.format() {
            CorpusFormat::Conllu => parse_conllu_with(&bytes, &scheme, split),
            CorpusFormat::Conll => {
                let mut opts = ConllOptions::for_task(self.task)
                    .unwrap_or_else(|| ConllOptions::new(1, scheme.clone()));
                opts.scheme = scheme;
                if let Some(column) = self.corpus.column {
                    opts.tag_column = column;
                }
                if self.corpus.reject_invalid_bio {
                    opts.bio_policy = crate::corpus::BioPolicy::Reject;
                }
                opts.split = split;
                parse_conll_with(&bytes, &opts)
            }
        }
    }

    pub fn scheme(&self) -> LabelScheme {
        self.task.default_scheme()
    }
}

fn merge_toml(base: &mut toml::Value, overrides: toml::Value) {
    match (base, overrides) {
        (toml::Value::Table(base), toml::Value::Table(over)) => {
            for (key, value) in over {
                match base.get_mut(&key) {
                    Some(slot) => merge_toml(slot, value),
                    None => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}
