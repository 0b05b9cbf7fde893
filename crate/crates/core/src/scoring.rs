//! Complexity scoring of candidate demonstrations.
//!
//! Each pool sentence gets three raw metrics against the test sentence:
//! cosine similarity of sentence embeddings, a sigmoid-smoothed length
//! similarity, and the Shannon entropy of its own labels. Every metric is
//! divided by its pool-wide maximum and the three normalized values are
//! combined with the weights `(w1, w2, w3)` = (length, entropy, similarity).

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, LabelScheme, Task, TaggedSentence};
use crate::embedder::{cosine, EmbeddingCache, EmbeddingVector, DEFAULT_PROVIDER_ID};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 3.0;

/// Weights of the normalized length, entropy and similarity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub length: f64,
    pub entropy: f64,
    pub similarity: f64,
}

impl Weights {
    pub fn new(length: f64, entropy: f64, similarity: f64) -> Result<Self> {
        let w = Self {
            length,
            entropy,
            similarity,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.length, self.entropy, self.similarity];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("weights must be finite and nonnegative: {self}")));
        }
        if self.sum() <= 0.0 {
            return Err(Error::Config("weights must not all be zero".into()));
        }
        Ok(())
    }

    /// Similarity only: ranking reduces to nearest neighbours in embedding space.
    pub const fn nearest_neighbour() -> Self {
        Self {
            length: 0.0,
            entropy: 0.0,
            similarity: 1.0,
        }
    }

    /// Grid-searched defaults per task.
    pub const fn for_task(task: Task) -> Self {
        match task {
            Task::Ner => Self {
                length: 0.25,
                entropy: 0.25,
                similarity: 0.5,
            },
            Task::Chunk => Self {
                length: 0.2,
                entropy: 0.1,
                similarity: 0.7,
            },
            Task::Pos => Self {
                length: 0.1,
                entropy: 0.1,
                similarity: 0.8,
            },
        }
    }

    pub fn sum(&self) -> f64 {
        self.length + self.entropy + self.similarity
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.length, self.entropy, self.similarity]
    }
}

impl std::fmt::Display for Weights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.length, self.entropy, self.similarity)
    }
}

impl std::str::FromStr for Weights {
    type Err = Error;

    /// Parses `w1,w2,w3`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("invalid weights {s:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, c] => Weights::new(*a, *b, *c),
            _ => Err(Error::Config(format!("expected three comma-separated weights, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub weights: Weights,
    pub k: usize,
    /// Temperature of the length sigmoid.
    pub temperature: f64,
    pub provider_id: String,
    /// Skip pool sentences whose tokens equal the test sentence.
    pub exclude_duplicates: bool,
}

impl SelectionConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            weights: Weights::for_task(task),
            k: DEFAULT_K,
            temperature: DEFAULT_TEMPERATURE,
            provider_id: DEFAULT_PROVIDER_ID.to_string(),
            exclude_duplicates: false,
        }
    }

    pub fn with_weights(mut self, weights: Weights) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_provider(mut self, provider_id: impl Into<String>) -> Self {
        self.provider_id = provider_id.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `1 / (1 + exp(|len_a - len_b| / T))`; 0.5 for equal lengths, tapering towards 0.
pub fn smoothed_length_similarity(len_a: usize, len_b: usize, temperature: f64) -> f64 {
    let diff = len_a.abs_diff(len_b) as f64;
    1.0 / (1.0 + (diff / temperature).exp())
}

/// Base-2 Shannon entropy of the empirical label distribution of one sentence.
pub fn label_entropy(labels: &[String], scheme: &LabelScheme) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Domain("entropy of an empty label sequence".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for label in labels {
        if !scheme.contains(label) {
            return Err(Error::Scheme(format!("label {label:?} is not in the scheme")));
        }
        *counts.entry(label.as_str()).or_insert(0) += 1;
    }
    let n = labels.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // a single-label sentence yields -0.0
    Ok(h.max(0.0))
}

/// Divides every score by the list maximum.
pub fn normalize(scores: &[f64]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |m| m.max(s))))
        .ok_or_else(|| Error::Domain("cannot normalize an empty score list".into()))?;
    if !(max > 0.0) {
        return Err(Error::Normalization { max });
    }
    Ok(scores.iter().map(|s| s / max).collect())
}

pub fn complexity_score(norm_sls: f64, norm_entropy: f64, norm_sim: f64, weights: &Weights) -> f64 {
    weights.length * norm_sls + weights.entropy * norm_entropy + weights.similarity * norm_sim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_id: usize,
    pub raw_sim: f64,
    pub raw_sls: f64,
    pub raw_entropy: f64,
    pub norm_sim: f64,
    pub norm_sls: f64,
    pub norm_entropy: f64,
    pub complexity: f64,
}

/// A candidate pool with embeddings and the test-independent entropy terms
/// computed once.
#[derive(Debug)]
pub struct PoolIndex<'a> {
    pool: &'a CorpusSplit,
    embeddings: Vec<EmbeddingVector>,
    entropy: Vec<f64>,
    norm_entropy: Vec<f64>,
}

impl<'a> PoolIndex<'a> {
    pub fn new(pool: &'a CorpusSplit, embeddings: Vec<EmbeddingVector>) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Domain("candidate pool is empty".into()));
        }
        if embeddings.len() != pool.len() {
            return Err(Error::Domain(format!(
                "pool has {} sentences but {} embeddings",
                pool.len(),
                embeddings.len()
            )));
        }
        let entropy = pool
            .sentences
            .iter()
            .map(|s| label_entropy(&s.labels, &pool.scheme))
            .collect::<Result<Vec<_>>>()?;
        let norm_entropy = if entropy.iter().all(|h| *h == 0.0) {
            // every candidate carries a single label: the term is constant
            vec![1.0; entropy.len()]
        } else {
            normalize(&entropy)?
        };
        Ok(Self {
            pool,
            embeddings,
            entropy,
            norm_entropy,
        })
    }

    /// Builds the index from embeddings already present in `cache`.
    pub fn from_cache(pool: &'a CorpusSplit, cache: &EmbeddingCache, provider_id: &str) -> Result<Self> {
        let embeddings = pool
            .sentences
            .iter()
            .map(|s| {
                cache.lookup(provider_id, &s.tokens).ok_or_else(|| Error::Retrieval {
                    sentence_id: s.id,
                    reason: format!("no cached {provider_id} embedding for pool sentence"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pool, embeddings)
    }

    pub fn pool(&self) -> &'a CorpusSplit {
        self.pool
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// Scores every pool sentence against `test`. Raw metrics are computed in
    /// parallel; normalization happens afterwards so the result does not depend
    /// on scheduling.
    pub fn score(
        &self,
        test: &TaggedSentence,
        test_embedding: &EmbeddingVector,
        cfg: &SelectionConfig,
    ) -> Result<Vec<CandidateScore>> {
        cfg.validate()?;
        let raw: Vec<(f64, f64)> = self
            .pool
            .sentences
            .par_iter()
            .zip(self.embeddings.par_iter())
            .map(|(candidate, embedding)| {
                let sim = cosine(embedding.values(), test_embedding.values())?;
                let sls = smoothed_length_similarity(candidate.len(), test.len(), cfg.temperature);
                Ok((sim, sls))
            })
            .collect::<Result<_>>()?;
        let (sims, slss): (Vec<f64>, Vec<f64>) = raw.into_iter().unzip();
        let norm_sims = normalize(&sims)?;
        let norm_slss = normalize(&slss)?;
        Ok((0..self.pool.len())
            .map(|i| CandidateScore {
                candidate_id: self.pool.sentences[i].id,
                raw_sim: sims[i],
                raw_sls: slss[i],
                raw_entropy: self.entropy[i],
                norm_sim: norm_sims[i],
                norm_sls: norm_slss[i],
                norm_entropy: self.norm_entropy[i],
                complexity: complexity_score(norm_slss[i], self.norm_entropy[i], norm_sims[i], &cfg.weights),
            })
            .collect())
    }

    /// Scores and returns the ids of the `cfg.k` best candidates.
    pub fn select(
        &self,
        test: &TaggedSentence,
        test_embedding: &EmbeddingVector,
        cfg: &SelectionConfig,
    ) -> Result<Vec<usize>> {
        let mut scores = self.score(test, test_embedding, cfg)?;
        if cfg.exclude_duplicates {
            scores.retain(|s| self.pool.sentences[s.candidate_id].tokens != test.tokens);
        }
        Ok(select_top_k(&scores, cfg.k))
    }
}

/// Scores `test` against every sentence of `pool` using embeddings from `cache`.
pub fn score_pool(
    test: &TaggedSentence,
    pool: &CorpusSplit,
    cfg: &SelectionConfig,
    cache: &EmbeddingCache,
) -> Result<Vec<CandidateScore>> {
    let index = PoolIndex::from_cache(pool, cache, &cfg.provider_id)?;
    let test_embedding = cache
        .lookup(&cfg.provider_id, &test.tokens)
        .ok_or_else(|| Error::Retrieval {
            sentence_id: test.id,
            reason: format!("no cached {} embedding for test sentence", cfg.provider_id),
        })?;
    index.score(test, &test_embedding, cfg)
}

/// Ids of the `k` highest complexity scores, best first; equal scores go to the lower id.
pub fn select_top_k(scores: &[CandidateScore], k: usize) -> Vec<usize> {
    if scores.len() < k {
        log::warn!("pool has {} candidates, fewer than k = {k}", scores.len());
    }
    let mut order: Vec<&CandidateScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.complexity
            .total_cmp(&a.complexity)
            .then(a.candidate_id.cmp(&b.candidate_id))
    });
    order.into_iter().take(k).map(|s| s.candidate_id).collect()
}

#[derive(Serialize)]
struct ScoreDumpRecord<'a> {
    test_id: usize,
    #[serde(flatten)]
    score: &'a CandidateScore,
}

/// Appends one JSON line per `(test_id, candidate)` pair.
pub fn write_score_dump<W: Write>(mut out: W, test_id: usize, scores: &[CandidateScore]) -> Result<()> {
    for score in scores {
        serde_json::to_writer(&mut out, &ScoreDumpRecord { test_id, score })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
