//! Completion clients: the remote HTTP endpoint, a record/replay fixture
//! wrapper, and offline mocks that answer from gold labels or demonstrations.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusSplit, LabelScheme};
use crate::error::{Error, Result};
use crate::http::{JsonTransport, RateLimiter, RetryPolicy};
use crate::prompting::parse_prompt;

/// Environment variable holding the completion endpoint credential.
pub const API_KEY_ENV: &str = "CPR_API_KEY";

pub const FINISH_STOP: &str = "stop";
pub const FINISH_LENGTH: &str = "length";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub temperature: f64,
}

impl CompletionRequest {
    /// Greedy request for a short continuation that stops at the next space.
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: 8,
            stop: vec![" ".to_string(), "\n".to_string()],
            temperature: 0.0,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens.max(1);
        self
    }

    /// Hex SHA-256 over the canonical JSON encoding; the record/replay key.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: String,
}

impl CompletionResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FINISH_STOP.to_string(),
        }
    }
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse>;
}

impl<T: CompletionClient + ?Sized> CompletionClient for &T {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(req)
    }
}

impl<T: CompletionClient + ?Sized> CompletionClient for Box<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(req)
    }
}

impl<T: CompletionClient + ?Sized> CompletionClient for Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(req)
    }
}

/// Keeps at most `max_units` whitespace-delimited units of a mock continuation.
pub fn truncate_units(text: &str, max_units: u32) -> CompletionResponse {
    let units: Vec<&str> = text.split_whitespace().collect();
    let keep = (max_units.max(1) as usize).min(units.len());
    CompletionResponse {
        text: units[..keep].join(" "),
        finish_reason: if keep < units.len() { FINISH_LENGTH } else { FINISH_STOP }.to_string(),
    }
}

#[derive(Serialize)]
struct PromptBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: [ChatMessage<'a>; 1],
    max_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

/// Client for a completion endpoint speaking
/// `{"prompt", "max_tokens", "temperature", "stop"}` → `{"text", "finish_reason"}`.
#[derive(Debug)]
pub struct HttpCompletionClient {
    transport: JsonTransport,
    model: Option<String>,
    chat_wrap: bool,
}

impl HttpCompletionClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        Ok(Self {
            transport: JsonTransport::new(url, api_key, Duration::from_secs(60))?,
            model: None,
            chat_wrap: false,
        })
    }

    /// Reads the credential from `CPR_API_KEY`.
    pub fn from_env(url: impl Into<String>) -> Result<Self> {
        Self::new(url, std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    /// Sends the whole prompt as a single user message instead of a raw prompt.
    pub fn with_chat_wrap(mut self, chat_wrap: bool) -> Self {
        self.chat_wrap = chat_wrap;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.transport.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, max_requests: usize, interval: Duration) -> Self {
        self.transport.limiter = RateLimiter::new(max_requests, interval);
        self
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        if req.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        let model = self.model.as_deref();
        if self.chat_wrap {
            self.transport.post(&ChatBody {
                model,
                messages: [ChatMessage {
                    role: "user",
                    content: &req.prompt,
                }],
                max_tokens: req.max_tokens,
                temperature: req.temperature,
                stop: &req.stop,
            })
        } else {
            self.transport.post(&PromptBody {
                model,
                prompt: &req.prompt,
                max_tokens: req.max_tokens,
                temperature: req.temperature,
                stop: &req.stop,
            })
        }
    }
}

/// Answers every label query with the gold label of the pending test token,
/// replacing it with a uniformly drawn wrong label with probability `noise`.
///
/// The noise draw is seeded per `(seed, sentence, position)`, so results do not
/// depend on the order in which sentences are decoded.
#[derive(Debug, Clone)]
pub struct OracleClient {
    gold: CorpusSplit,
    by_text: HashMap<String, usize>,
    noise: f64,
    seed: u64,
}

impl OracleClient {
    pub fn new(gold: &CorpusSplit) -> Self {
        let mut by_text = HashMap::new();
        for (idx, sentence) in gold.sentences.iter().enumerate() {
            by_text.entry(sentence.text()).or_insert(idx);
        }
        Self {
            gold: gold.clone(),
            by_text,
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn noisy(gold: &CorpusSplit, noise: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::Config(format!("noise must lie in [0, 1], got {noise}")));
        }
        Ok(Self {
            noise,
            seed,
            ..Self::new(gold)
        })
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    fn corrupt(&self, gold: &str, sentence: usize, position: usize) -> String {
        if self.noise == 0.0 {
            return gold.to_string();
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((sentence as u64).to_le_bytes());
        hasher.update((position as u64).to_le_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        if rng.gen::<f64>() >= self.noise {
            return gold.to_string();
        }
        let wrong: Vec<&String> = self.gold.scheme.labels().iter().filter(|l| *l != gold).collect();
        if wrong.is_empty() {
            return gold.to_string();
        }
        wrong[rng.gen_range(0..wrong.len())].clone()
    }
}

impl CompletionClient for OracleClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        let parsed = parse_prompt(&req.prompt).map_err(|e| Error::Oracle(e.to_string()))?;
        let tail = parsed.tail;
        let text = tail.context.join(" ");
        let &idx = self
            .by_text
            .get(&text)
            .ok_or_else(|| Error::Oracle(format!("test sentence {text:?} is not in the gold split")))?;
        let sentence = &self.gold.sentences[idx];
        let pending = tail
            .pending
            .ok_or_else(|| Error::Oracle("prompt does not end with a pending token".into()))?;
        let position = tail.labeled.len();
        match sentence.tokens.get(position) {
            Some(token) if *token == pending => {}
            _ => {
                return Err(Error::Oracle(format!(
                    "pending token {pending:?} is not token {position} of sentence {}",
                    sentence.id
                )))
            }
        }
        let label = self.corrupt(&sentence.labels[position], idx, position);
        Ok(truncate_units(&label, req.max_tokens))
    }
}

/// Labels the pending token with the label it carries in the first
/// demonstration that contains it, or the scheme fallback when none does.
/// Its accuracy depends entirely on which demonstrations were selected.
#[derive(Debug, Clone)]
pub struct DemonstrationCopyClient {
    scheme: LabelScheme,
}

impl DemonstrationCopyClient {
    pub fn new(scheme: &LabelScheme) -> Self {
        Self {
            scheme: scheme.clone(),
        }
    }
}

impl CompletionClient for DemonstrationCopyClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        let parsed = parse_prompt(&req.prompt)?;
        let pending = parsed
            .tail
            .pending
            .ok_or_else(|| Error::Format("prompt does not end with a pending token".into()))?;
        let label = parsed
            .demonstrations
            .iter()
            .find_map(|(tokens, labels)| {
                tokens.iter().position(|t| *t == pending).map(|i| labels[i].clone())
            })
            .unwrap_or_else(|| self.scheme.fallback_label().to_string());
        Ok(truncate_units(&label, req.max_tokens))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureRecord {
    request_hash: String,
    response: CompletionResponse,
}

/// Serves responses from a JSON-lines fixture keyed by request fingerprint.
/// In record mode, misses are forwarded to the inner client and appended.
pub struct ReplayClient {
    fixtures: RwLock<HashMap<String, CompletionResponse>>,
    inner: Option<Box<dyn CompletionClient>>,
    writer: Option<Mutex<BufWriter<File>>>,
}

impl std::fmt::Debug for ReplayClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReplayClient")
            .field("fixtures", &self.len())
            .field("recording", &self.inner.is_some())
            .finish()
    }
}

fn load_fixtures(path: &Path) -> Result<HashMap<String, CompletionResponse>> {
    let mut fixtures = HashMap::new();
    if !path.exists() {
        return Ok(fixtures);
    }
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FixtureRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(idx + 1, format!("bad fixture record: {e}")))?;
        fixtures.insert(record.request_hash, record.response);
    }
    Ok(fixtures)
}

impl ReplayClient {
    /// Replay only: a request missing from the fixture is an error.
    pub fn replay(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Config(format!("fixture {} does not exist", path.display())));
        }
        Ok(Self {
            fixtures: RwLock::new(load_fixtures(path)?),
            inner: None,
            writer: None,
        })
    }

    /// Replays known requests and records new ones from `inner`.
    pub fn record(path: impl AsRef<Path>, inner: Box<dyn CompletionClient>) -> Result<Self> {
        let path = path.as_ref();
        let fixtures = load_fixtures(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            fixtures: RwLock::new(fixtures),
            inner: Some(inner),
            writer: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.fixtures.read().expect("fixtures poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        let key = req.fingerprint();
        if let Some(hit) = self.fixtures.read().expect("fixtures poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let Some(inner) = &self.inner else {
            return Err(Error::ReplayMiss(key));
        };
        if req.temperature != 0.0 {
            log::warn!("recording a request at temperature {}; replay will not be faithful", req.temperature);
        }
        let response = inner.complete(req)?;
        let mut fixtures = self.fixtures.write().expect("fixtures poisoned");
        if !fixtures.contains_key(&key) {
            if let Some(writer) = &self.writer {
                let mut writer = writer.lock().expect("fixture writer poisoned");
                serde_json::to_writer(
                    &mut *writer,
                    &FixtureRecord {
                        request_hash: key.clone(),
                        response: response.clone(),
                    },
                )?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
            fixtures.insert(key, response.clone());
        }
        Ok(response)
    }
}
