//! Sentence embeddings: provider interface, a content-addressed JSON-lines
//! cache, and a deterministic hashing embedder for offline use.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TaggedSentence;
use crate::error::{Error, Result};
use crate::http::JsonTransport;

/// Identifier of the sentence-transformer used by default.
pub const DEFAULT_PROVIDER_ID: &str = "all-MiniLM-L6-v2";

/// Output width of the default provider.
pub const DEFAULT_DIM: usize = 384;

/// Environment variable holding the bearer token for the remote embedder.
pub const EMBED_TOKEN_ENV: &str = "CPR_EMBED_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    provider_id: String,
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(provider_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Integrity("embedding has no dimensions".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!(
                "embedding value at index {pos} is not finite"
            )));
        }
        Ok(Self {
            provider_id: provider_id.into(),
            values,
        })
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of the angle between two embeddings, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine(a.values(), b.values())
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "cannot compare embeddings of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    let aa = dot(a, a);
    let bb = dot(b, b);
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    // sqrt(aa * bb) keeps self-similarity at exactly 1.0
    Ok((dot(a, b) / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    /// Embeds a batch of space-joined sentences, one vector per input, in order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

fn token_hash(seed: u64, token: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    hasher.finalize().into()
}

fn hashed_bag(tokens: &[&str], dim: usize, seed: u64) -> Vec<f64> {
    let mut values = vec![0.0f64; dim];
    for token in tokens {
        let h = token_hash(seed, token);
        let index = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % dim as u64;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        values[index as usize] += sign;
    }
    let norm = dot(&values, &values).sqrt();
    if norm == 0.0 {
        // Every token cancelled out; fall back to a basis vector keyed on the multiset.
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        let h = token_hash(seed ^ 0x9e37_79b9_7f4a_7c15, &sorted.join(" "));
        let index = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % dim as u64;
        values[index as usize] = 1.0;
        return values;
    }
    values.iter_mut().for_each(|v| *v /= norm);
    values
}

/// Hashed bag-of-tokens embedding: every token adds a signed unit at a hashed
/// index and the sum is L2-normalized. Depends only on the token multiset.
pub fn hash_embed(sentence: &TaggedSentence, dim: usize, seed: u64) -> Result<EmbeddingVector> {
    HashEmbedder::new(dim, seed)?.embed_tokens(&sentence.tokens)
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Domain(format!("hash embedder needs dim >= 2, got {dim}")));
        }
        Ok(Self {
            id: format!("hash-{dim}-{seed}"),
            dim,
            seed,
        })
    }

    pub fn embed_tokens(&self, tokens: &[String]) -> Result<EmbeddingVector> {
        let tokens: Vec<&str> = tokens.iter().map(String::as_str).collect();
        EmbeddingVector::new(self.id.clone(), hashed_bag(&tokens, self.dim, self.seed))
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let tokens: Vec<&str> = t.split(' ').collect();
                hashed_bag(&tokens, self.dim, self.seed)
            })
            .collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding service reached over HTTP: `{"texts": [..]}` in, `{"vectors": [[..], ..]}` out.
#[derive(Debug)]
pub struct RemoteEmbedder {
    id: String,
    dim: usize,
    transport: JsonTransport,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(id: impl Into<String>, dim: usize, url: impl Into<String>) -> Result<Self> {
        let token = std::env::var(EMBED_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(Self {
            id: id.into(),
            dim,
            transport: JsonTransport::new(url, token, Duration::from_secs(120))?,
            batch_size: 64,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn transport_mut(&mut self) -> &mut JsonTransport {
        &mut self.transport
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let response: EmbedResponse = self.transport.post(&EmbedRequest { texts: chunk })?;
            if response.vectors.len() != chunk.len() {
                return Err(Error::Integrity(format!(
                    "endpoint returned {} vectors for {} texts",
                    response.vectors.len(),
                    chunk.len()
                )));
            }
            out.extend(response.vectors);
        }
        Ok(out)
    }
}

#[derive(Deserialize)]
struct ExportedVector {
    text: String,
    values: Vec<f64>,
}

/// Vectors exported ahead of time as JSON lines `{"text": .., "values": [..]}`.
#[derive(Debug, Clone)]
pub struct VectorFileProvider {
    id: String,
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl VectorFileProvider {
    pub fn open(id: impl Into<String>, dim: usize, path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut vectors = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ExportedVector = serde_json::from_str(&line)
                .map_err(|e| Error::parse(idx + 1, format!("bad vector record: {e}")))?;
            vectors.insert(record.text, record.values);
        }
        Ok(Self {
            id: id.into(),
            dim,
            vectors,
        })
    }
}

impl EmbeddingProvider for VectorFileProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::Domain(format!("no exported vector for {t:?}")))
            })
            .collect()
    }
}

/// Hex SHA-256 of the space-joined token sequence.
pub fn cache_key(tokens: &[String]) -> String {
    hex::encode(Sha256::digest(tokens.join(" ").as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    provider: String,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub entries: usize,
}

/// Embeddings keyed by `(provider id, content hash)`, optionally persisted as
/// JSON lines. Reads are concurrent; writes go through one lock.
#[derive(Debug)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<(String, String), EmbeddingVector>>,
    writer: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    max_in_flight: usize,
    batch_size: usize,
}

impl Default for EmbeddingCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            writer: None,
            path: None,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            max_in_flight: 4,
            batch_size: 64,
        }
    }

    /// Loads every record in `path` (if it exists) and appends new entries to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(idx + 1, format!("bad cache record: {e}")))?;
                if record.dim != record.values.len() {
                    return Err(Error::Integrity(format!(
                        "cache record at line {} declares dim {} but has {} values",
                        idx + 1,
                        record.dim,
                        record.values.len()
                    )));
                }
                let vector = EmbeddingVector::new(record.provider.clone(), record.values)?;
                entries.insert((record.provider, record.key), vector);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            writer: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
            ..Self::in_memory()
        })
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.len(),
        }
    }

    pub fn reset_stats(&self) {
        self.hits.store(0, Ordering::Relaxed);
        self.misses.store(0, Ordering::Relaxed);
    }

    /// Exact lookup without touching the provider or the hit counters.
    pub fn lookup(&self, provider_id: &str, tokens: &[String]) -> Option<EmbeddingVector> {
        self.entries
            .read()
            .expect("cache poisoned")
            .get(&(provider_id.to_string(), cache_key(tokens)))
            .cloned()
    }

    pub fn insert(&self, tokens: &[String], vector: EmbeddingVector) -> Result<()> {
        self.insert_many(vec![(cache_key(tokens), vector)])
    }

    fn insert_many(&self, items: Vec<(String, EmbeddingVector)>) -> Result<()> {
        let mut entries = self.entries.write().expect("cache poisoned");
        if let Some(writer) = &self.writer {
            let mut writer = writer.lock().expect("cache writer poisoned");
            for (key, vector) in &items {
                if entries.contains_key(&(vector.provider_id.clone(), key.clone())) {
                    continue;
                }
                let record = CacheRecord {
                    key: key.clone(),
                    provider: vector.provider_id.clone(),
                    dim: vector.dim(),
                    values: vector.values.clone(),
                };
                serde_json::to_writer(&mut *writer, &record)?;
                writer.write_all(b"\n")?;
            }
            writer.flush()?;
        }
        for (key, vector) in items {
            entries.insert((vector.provider_id.clone(), key), vector);
        }
        Ok(())
    }

    fn checked(&self, provider: &dyn EmbeddingProvider, vector: EmbeddingVector) -> Result<EmbeddingVector> {
        if vector.dim() != provider.dim() {
            return Err(Error::Integrity(format!(
                "provider {} declares dim {} but produced {}",
                provider.id(),
                provider.dim(),
                vector.dim()
            )));
        }
        Ok(vector)
    }

    /// Cache-first embedding of one sentence; misses are written through.
    pub fn embed(&self, sentence: &TaggedSentence, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector> {
        Ok(self
            .embed_all(std::slice::from_ref(sentence), provider)?
            .pop()
            .expect("one vector per sentence"))
    }

    /// Embeds every sentence, batching the misses and sending up to
    /// `max_in_flight` batches to the provider at once.
    pub fn embed_all(
        &self,
        sentences: &[TaggedSentence],
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<EmbeddingVector>> {
        let keys: Vec<String> = sentences.iter().map(|s| cache_key(&s.tokens)).collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let entries = self.entries.read().expect("cache poisoned");
            let mut queued = std::collections::HashSet::new();
            for (i, key) in keys.iter().enumerate() {
                if entries.contains_key(&(provider.id().to_string(), key.clone())) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    if queued.insert(key.as_str()) {
                        missing.push(i);
                    }
                }
            }
        }

        if !missing.is_empty() {
            let batches: Vec<&[usize]> = missing.chunks(self.batch_size).collect();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.max_in_flight)
                .build()
                .map_err(|e| Error::Config(format!("cannot start embedding workers: {e}")))?;
            let results: Vec<Result<Vec<(String, EmbeddingVector)>>> = pool.install(|| {
                batches
                    .par_iter()
                    .map(|batch| {
                        let texts: Vec<String> = batch.iter().map(|&i| sentences[i].text()).collect();
                        let vectors = provider.embed_texts(&texts).map_err(|e| Error::Retrieval {
                            sentence_id: sentences[batch[0]].id,
                            reason: e.to_string(),
                        })?;
                        if vectors.len() != batch.len() {
                            return Err(Error::Integrity(format!(
                                "provider {} returned {} vectors for {} sentences",
                                provider.id(),
                                vectors.len(),
                                batch.len()
                            )));
                        }
                        batch
                            .iter()
                            .zip(vectors)
                            .map(|(&i, values)| {
                                let vector = EmbeddingVector::new(provider.id(), values)?;
                                Ok((keys[i].clone(), self.checked(provider, vector)?))
                            })
                            .collect()
                    })
                    .collect()
            });
            for result in results {
                self.insert_many(result?)?;
            }
        }

        let entries = self.entries.read().expect("cache poisoned");
        keys.iter()
            .zip(sentences)
            .map(|(key, sentence)| {
                let vector = entries
                    .get(&(provider.id().to_string(), key.clone()))
                    .cloned()
                    .ok_or_else(|| Error::Retrieval {
                        sentence_id: sentence.id,
                        reason: "embedding missing after provider call".into(),
                    })?;
                self.checked(provider, vector)
            })
            .collect()
    }
}
