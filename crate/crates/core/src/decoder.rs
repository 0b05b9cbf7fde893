//! Structured-prompting decode loop and whole-split runs.
//!
//! Each test token is appended as `token_` to the working prompt, the model is
//! asked for one continuation, the first whitespace unit is mapped onto the
//! label scheme, and `token_LABEL ` is appended before moving on. The model
//! therefore conditions on its own earlier predictions.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, LabelScheme, TaggedSentence, TOKEN_LABEL_DELIMITER};
use crate::embedder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::plm::{CompletionClient, CompletionRequest};
use crate::prompting::{render_prompt, CompletionLead, ExampleOrder, RenderedPrompt};
use crate::scoring::{PoolIndex, SelectionConfig, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairRule {
    CaseInsensitive,
    LongestPrefix,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub position: usize,
    pub raw: String,
    pub label: String,
    pub rule: RepairRule,
}

fn common_prefix_len(a: &str, b: &str) -> usize {
    a.chars()
        .zip(b.chars())
        .take_while(|(x, y)| x.eq_ignore_ascii_case(y))
        .count()
}

/// Maps a raw model output onto the scheme: exact match, then case-insensitive
/// match, then the unique label with the longest common prefix, else the
/// scheme fallback (`O`, or `NOUN` for UPOS).
pub fn repair_label(raw: &str, scheme: &LabelScheme) -> (String, Option<RepairRule>) {
    if scheme.contains(raw) {
        return (raw.to_string(), None);
    }
    if let Some(label) = scheme.labels().iter().find(|l| l.eq_ignore_ascii_case(raw)) {
        return (label.clone(), Some(RepairRule::CaseInsensitive));
    }
    let mut best: Option<&String> = None;
    let mut best_len = 0;
    let mut tied = false;
    for label in scheme.labels() {
        let len = common_prefix_len(raw, label);
        if len > best_len {
            best = Some(label);
            best_len = len;
            tied = false;
        } else if len == best_len && len > 0 {
            tied = true;
        }
    }
    match best {
        Some(label) if !tied => (label.clone(), Some(RepairRule::LongestPrefix)),
        _ => (scheme.fallback_label().to_string(), Some(RepairRule::Fallback)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub lead: CompletionLead,
    pub max_tokens: u32,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            lead: CompletionLead::SameLine,
            max_tokens: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedSentence {
    pub labels: Vec<String>,
    pub repairs: Vec<Repair>,
}

/// Labels `test` token by token, one completion request per token.
pub fn decode_sentence(
    prompt: &RenderedPrompt,
    test: &TaggedSentence,
    client: &dyn CompletionClient,
    scheme: &LabelScheme,
    opts: &DecodeOptions,
) -> Result<DecodedSentence> {
    let mut working = String::with_capacity(prompt.text.len() + 16 * test.len());
    working.push_str(&prompt.text);
    working.push_str(opts.lead.as_str());
    let mut labels = Vec::with_capacity(test.len());
    let mut repairs = Vec::new();
    for (position, token) in test.tokens.iter().enumerate() {
        working.push_str(token);
        working.push(TOKEN_LABEL_DELIMITER);
        let request = CompletionRequest::new(working.as_str()).with_max_tokens(opts.max_tokens);
        let response = client.complete(&request)?;
        let raw = response.text.split_whitespace().next().unwrap_or("");
        let (label, rule) = repair_label(raw, scheme);
        if let Some(rule) = rule {
            log::debug!("sentence {} token {position}: repaired {raw:?} to {label}", test.id);
            repairs.push(Repair {
                position,
                raw: raw.to_string(),
                label: label.clone(),
                rule,
            });
        }
        working.push_str(&label);
        working.push(' ');
        labels.push(label);
    }
    Ok(DecodedSentence { labels, repairs })
}

/// How demonstrations are chosen for each test sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Full complexity score with the configured weights.
    Complexity,
    /// Embedding similarity only; the `(0, 0, 1)` weighting.
    NearestNeighbour,
    /// The same pool ids for every test sentence.
    Static(Vec<usize>),
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    /// `cp`, `knn`, or `static:<id>,<id>,...`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cp" => Ok(Strategy::Complexity),
            "knn" => Ok(Strategy::NearestNeighbour),
            other => {
                let ids = other
                    .strip_prefix("static:")
                    .ok_or_else(|| Error::Config(format!("unknown strategy {other:?}")))?;
                let ids = ids
                    .split(',')
                    .map(|i| i.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("bad static ids {ids:?}: {e}")))?;
                Ok(Strategy::Static(ids))
            }
        }
    }
}

/// Best-first pool ids for one test sentence.
pub fn select_examples(
    test: &TaggedSentence,
    test_embedding: Option<&EmbeddingVector>,
    pool: &PoolIndex<'_>,
    cfg: &SelectionConfig,
    strategy: &Strategy,
) -> Result<Vec<usize>> {
    let needs_embedding = || {
        test_embedding.ok_or_else(|| Error::Retrieval {
            sentence_id: test.id,
            reason: "no embedding for test sentence".into(),
        })
    };
    match strategy {
        Strategy::Complexity => pool.select(test, needs_embedding()?, cfg),
        Strategy::NearestNeighbour => {
            let knn = cfg.clone().with_weights(Weights::nearest_neighbour());
            pool.select(test, needs_embedding()?, &knn)
        }
        Strategy::Static(ids) => {
            if let Some(bad) = ids.iter().find(|&&i| i >= pool.len()) {
                return Err(Error::Config(format!(
                    "static example id {bad} is outside the pool of {}",
                    pool.len()
                )));
            }
            Ok(ids.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub test_id: usize,
    pub tokens: Vec<String>,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub example_ids: Vec<usize>,
    pub prompt_hash: String,
    pub repairs: Vec<Repair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub test_id: usize,
    pub error: String,
    /// The error came from the network layer rather than from the data.
    pub transport: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    pub records: Vec<PredictionRecord>,
    pub failures: Vec<Failure>,
}

impl PredictionSet {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::parse(idx + 1, format!("bad prediction record: {e}")))?,
            );
        }
        Ok(Self {
            records,
            failures: Vec::new(),
        })
    }

    pub fn repair_count(&self) -> usize {
        self.records.iter().map(|r| r.repairs.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads decoding distinct sentences; 1 decodes sequentially.
    pub jobs: usize,
    pub order: ExampleOrder,
    pub decode: DecodeOptions,
    /// When set, every prompt is written to `<dir>/<test_id>.txt`.
    pub prompt_dir: Option<PathBuf>,
    /// Records from an interrupted run; reused when their prompt hash matches.
    pub resume_from: Option<PredictionSet>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            order: ExampleOrder::default(),
            decode: DecodeOptions::default(),
            prompt_dir: None,
            resume_from: None,
        }
    }
}

/// Selects, renders and decodes every sentence of `test_split`.
///
/// `test_embeddings` is aligned with `test_split.sentences` and may be empty for
/// the static strategy. A failure on one sentence is recorded in
/// [`PredictionSet::failures`] and the run continues.
pub fn run_task(
    test_split: &CorpusSplit,
    test_embeddings: &[EmbeddingVector],
    pool: &PoolIndex<'_>,
    cfg: &SelectionConfig,
    strategy: &Strategy,
    client: &dyn CompletionClient,
    opts: &RunOptions,
) -> Result<PredictionSet> {
    cfg.validate()?;
    if !test_embeddings.is_empty() && test_embeddings.len() != test_split.len() {
        return Err(Error::Domain(format!(
            "{} test sentences but {} test embeddings",
            test_split.len(),
            test_embeddings.len()
        )));
    }
    if let Some(dir) = &opts.prompt_dir {
        std::fs::create_dir_all(dir)?;
    }
    let previous: HashMap<usize, &PredictionRecord> = opts
        .resume_from
        .iter()
        .flat_map(|p| p.records.iter())
        .map(|r| (r.test_id, r))
        .collect();
    let scheme = &test_split.scheme;

    let run_one = |idx: usize| -> Result<PredictionRecord> {
        let test = &test_split.sentences[idx];
        let best_first = select_examples(test, test_embeddings.get(idx), pool, cfg, strategy)?;
        let ordered = opts.order.arrange(&best_first);
        let examples: Vec<&TaggedSentence> = ordered
            .iter()
            .map(|&id| &pool.pool().sentences[id])
            .collect();
        let prompt = render_prompt(&examples, test, scheme)?;
        let prompt_hash = prompt.hash();
        if let Some(dir) = &opts.prompt_dir {
            prompt.export(dir)?;
        }
        if let Some(done) = previous.get(&test.id) {
            if done.prompt_hash == prompt_hash && done.tokens == test.tokens {
                return Ok((*done).clone());
            }
        }
        let decoded = decode_sentence(&prompt, test, client, scheme, &opts.decode)?;
        Ok(PredictionRecord {
            test_id: test.id,
            tokens: test.tokens.clone(),
            gold: test.labels.clone(),
            predicted: decoded.labels,
            example_ids: prompt.example_ids,
            prompt_hash,
            repairs: decoded.repairs,
        })
    };

    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start decode workers: {e}")))?;
    let results: Vec<Result<PredictionRecord>> =
        workers.install(|| (0..test_split.len()).into_par_iter().map(run_one).collect());

    let mut set = PredictionSet::default();
    for (idx, result) in results.into_iter().enumerate() {
        match result {
            Ok(record) => set.records.push(record),
            Err(e) => {
                let test_id = test_split.sentences[idx].id;
                log::warn!("test sentence {test_id} failed: {e}");
                set.failures.push(Failure {
                    test_id,
                    error: e.to_string(),
                    transport: e.is_transport(),
                });
            }
        }
    }
    Ok(set)
}
