//! Chat-completion backends: live HTTP, a seeded mock and an offline replay
//! cache.
//!
//! Every completion is keyed by (article, view, strategy, model, iteration).
//! Live and mock completions are appended to a per-cell JSONL cache before
//! they are returned, so any run can later be re-analysed with the replay
//! backend.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, Article, ChatMessage, ViewKind, ViewOptions};
use crate::prompts::{self, StrategyId};

/// Environment variable holding the bearer token for the live backend.
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("not cached: {0}")]
    NotCached(String),
    #[error("cached record for {key} was produced by a different request (fingerprint mismatch)")]
    FingerprintMismatch { key: String },
    #[error("cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("iteration {index} failed: {source}")]
    Iteration {
        index: usize,
        #[source]
        source: Box<ClientError>,
    },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
}

impl ClientError {
    /// Transport-level failures worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport { .. } => true,
            ClientError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 1000,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ClientError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ClientError::Config(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(name: impl Into<String>) -> Result<Self, ClientError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ClientError::Config("model id must be non-empty".into()));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = ClientError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        ModelId::new(s)
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> Self {
        m.0
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: ModelId,
    pub system: String,
    pub user: String,
    pub params: SamplingParams,
}

/// Wire body of a chat-completions request; also the content of a batch
/// line minus its `custom_id`.
#[derive(Debug, Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: [ChatMessage; 2],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

impl CompletionRequest {
    pub fn body_json(&self) -> String {
        let body = RequestBody {
            model: self.model.as_str(),
            messages: [
                ChatMessage::system(self.system.clone()),
                ChatMessage::user(self.user.clone()),
            ],
            temperature: self.params.temperature,
            top_p: self.params.top_p,
            max_tokens: self.params.max_tokens,
        };
        serde_json::to_string(&body).expect("request body serializes")
    }

    /// Hex SHA-256 of the wire body.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.body_json().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub article_id: String,
    pub view: ViewKind,
    pub strategy: StrategyId,
    pub model: ModelId,
    pub iteration: usize,
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.view,
            self.strategy,
            self.model,
            corpus::custom_id(&self.article_id, self.iteration)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendTag {
    Live,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    #[serde(flatten)]
    pub key: CacheKey,
    pub fingerprint: String,
    pub report: String,
    pub backend: BackendTag,
    pub timestamp_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Append-only JSONL store of completion records with an in-memory index.
#[derive(Debug)]
pub struct Cache {
    path: Option<PathBuf>,
    index: Mutex<HashMap<CacheKey, CompletionRecord>>,
    writer: Mutex<Option<File>>,
}

impl Cache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) a cache file for appending.
    pub fn open(path: &Path) -> Result<Self, ClientError> {
        let index = Self::load(path)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| cache_err(path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| cache_err(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            index: Mutex::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    /// Opens an existing cache file read-only; a missing file is an empty
    /// cache.
    pub fn open_read_only(path: &Path) -> Result<Self, ClientError> {
        Ok(Self {
            path: Some(path.to_path_buf()),
            index: Mutex::new(Self::load(path)?),
            writer: Mutex::new(None),
        })
    }

    fn load(path: &Path) -> Result<HashMap<CacheKey, CompletionRecord>, ClientError> {
        let mut index = HashMap::new();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(index),
            Err(e) => return Err(cache_err(path, e)),
        };
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| cache_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CompletionRecord =
                serde_json::from_str(&line).map_err(|e| ClientError::Cache {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", lineno + 1),
                })?;
            if index.contains_key(&record.key) {
                return Err(ClientError::Cache {
                    path: path.to_path_buf(),
                    message: format!("duplicate key {} on line {}", record.key, lineno + 1),
                });
            }
            index.insert(record.key.clone(), record);
        }
        Ok(index)
    }

    pub fn get(&self, key: &CacheKey) -> Option<CompletionRecord> {
        self.index.lock().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records ordered by key.
    pub fn records(&self) -> Vec<CompletionRecord> {
        let mut out: Vec<_> = self.index.lock().expect("cache lock").values().cloned().collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }

    /// Persists a record. A key that is already present is left untouched.
    pub fn insert(&self, record: CompletionRecord) -> Result<(), ClientError> {
        let mut index = self.index.lock().expect("cache lock");
        if index.contains_key(&record.key) {
            return Ok(());
        }
        let mut writer = self.writer.lock().expect("cache lock");
        if let Some(file) = writer.as_mut() {
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| cache_err(path, e))?;
        } else if self.path.is_some() {
            return Err(ClientError::Cache {
                path: self.path.clone().unwrap_or_default(),
                message: "cache opened read-only".into(),
            });
        }
        index.insert(record.key.clone(), record);
        Ok(())
    }
}

fn cache_err(path: &Path, e: std::io::Error) -> ClientError {
    ClientError::Cache {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Settings for the seeded mock judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Standard deviation of the per-iteration noise around an article's
    /// latent quality.
    pub noise_sd: f64,
    /// Standard deviation of a persistent per-(article, model, view)
    /// offset: the part of the judge's opinion that no amount of averaging
    /// removes.
    pub bias_sd: f64,
    pub refusal_probability: f64,
    /// Refusal probability used for title-only views.
    pub title_refusal_probability: f64,
    /// Chance of a report with no recognisable score at all.
    pub unparseable_probability: f64,
    /// Latent quality per article id; unknown ids get a value derived from
    /// a hash of the id.
    #[serde(skip)]
    pub latent: BTreeMap<String, f64>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            noise_sd: 0.7,
            bias_sd: 0.5,
            refusal_probability: 0.01,
            title_refusal_probability: 0.15,
            unparseable_probability: 0.0,
            latent: BTreeMap::new(),
        }
    }
}

/// Surface formats the mock judge writes its score in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFormat {
    Overall,
    Subscores,
    Range,
    OriginalitySignificance,
    Refusal,
    Unparseable,
}

fn hash_u64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn star(x: f64) -> u8 {
    x.round().clamp(1.0, 4.0) as u8
}

const PREAMBLES: [&str; 4] = [
    "The article presents a focused study with a clearly stated aim and a coherent structure.",
    "This submission addresses a relevant problem and reports its findings in an organised way.",
    "The work offers an empirical contribution, although some methodological details are brief.",
    "The paper is clearly written and positions itself against existing literature.",
];

const REFUSALS: [&str; 3] = [
    "There is insufficient information to make a judgement about the quality of this article from the text provided.",
    "It is impossible to evaluate an article based on its title alone, so no score can be given.",
    "Without access to the full content, I am unable to assign a score to this article.",
];

impl MockConfig {
    pub fn latent_for(&self, article_id: &str) -> f64 {
        self.latent.get(article_id).copied().unwrap_or_else(|| {
            let u = (hash_u64(&["latent", article_id]) >> 11) as f64 / (1u64 << 53) as f64;
            1.0 + 3.0 * u
        })
    }

    /// Writes one report for a stream seed. Deterministic in all inputs.
    pub fn report(&self, stream_seed: u64, latent: f64, view: ViewKind) -> (MockFormat, String) {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let refusal = match view {
            ViewKind::Title => self.title_refusal_probability,
            _ => self.refusal_probability,
        };
        let noise = Normal::new(0.0, self.noise_sd.max(0.0)).expect("finite sd");
        let preamble = PREAMBLES[rng.random_range(0..PREAMBLES.len())];
        if rng.random::<f64>() < refusal {
            let text = REFUSALS[rng.random_range(0..REFUSALS.len())];
            return (MockFormat::Refusal, format!("{preamble}\n\n{text}"));
        }
        if rng.random::<f64>() < self.unparseable_probability {
            let text = "Its contribution sits somewhere around the middle of the scale.";
            return (MockFormat::Unparseable, format!("{preamble}\n\n{text}"));
        }
        let draw = |rng: &mut ChaCha8Rng| latent + noise.sample(rng);
        let pick: f64 = rng.random();
        let (format, body) = if pick < 0.55 {
            let s = star(draw(&mut rng));
            let body = match rng.random_range(0..5) {
                0 => format!("{{\"Overall Score**\": \"{s}*\"}}"),
                1 => format!("**Overall Score**: {s}*"),
                2 => format!("Overall score: {s} stars"),
                3 => format!("Thus, this article is assigned a score of {s}*."),
                _ => format!("Score: {s}"),
            };
            (MockFormat::Overall, body)
        } else if pick < 0.70 {
            let (o, s, r) = (star(draw(&mut rng)), star(draw(&mut rng)), star(draw(&mut rng)));
            let body = match rng.random_range(0..3) {
                0 => format!("Originality: {o}*\nSignificance: {s}*\nRigour: {r}*"),
                1 => format!("**Rigour**: {r} *\n**Originality**: {o} *\n**Significance**: {s} *"),
                _ => format!(
                    "Originality is rated {o}-star, significance is rated {s}-star and rigour is rated {r}-star."
                ),
            };
            (MockFormat::Subscores, body)
        } else if pick < 0.85 {
            let centre = draw(&mut rng).clamp(1.0, 4.0);
            let wide = rng.random::<f64>() < 0.2;
            let (lo, hi) = if wide {
                let lo = (centre.round() as u8).clamp(2, 3) - 1;
                (lo, lo + 2)
            } else {
                let lo = (centre.floor() as u8).clamp(1, 3);
                (lo, lo + 1)
            };
            let body = if wide || rng.random::<bool>() {
                format!("Overall, the article deserves a score between {lo}* and {hi}*.")
            } else {
                format!("The article falls in the {lo}* to {hi}* range.")
            };
            (MockFormat::Range, body)
        } else {
            let (o, s) = (star(draw(&mut rng)), star(draw(&mut rng)));
            let body = format!(
                "Originality: {o}*. Significance: {s}*. Rigour cannot be judged from this text."
            );
            (MockFormat::OriginalitySignificance, body)
        };
        (format, format!("{preamble}\n\n{body}\n"))
    }
}

/// Seed of the random stream for one cache key.
pub fn stream_seed(seed: u64, key: &CacheKey, fingerprint: &str) -> u64 {
    hash_u64(&[
        &seed.to_string(),
        &key.article_id,
        key.view.as_str(),
        key.strategy.as_str(),
        key.model.as_str(),
        &key.iteration.to_string(),
        fingerprint,
    ])
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
    pub config: MockConfig,
}

impl MockBackend {
    pub fn new(seed: u64, config: MockConfig) -> Self {
        Self { seed, config }
    }

    pub fn mock_complete(&self, request: &CompletionRequest, key: &CacheKey) -> String {
        let s = stream_seed(self.seed, key, &request.fingerprint());
        let latent = self.config.latent_for(&key.article_id) + self.bias(key);
        self.config.report(s, latent, key.view).1
    }

    /// Persistent offset for an (article, model, view) triple, shared by
    /// all iterations and strategies.
    pub fn bias(&self, key: &CacheKey) -> f64 {
        let h = hash_u64(&[
            "bias",
            &self.seed.to_string(),
            &key.article_id,
            key.model.as_str(),
            key.view.as_str(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        Normal::new(0.0, self.config.bias_sd.max(0.0))
            .expect("finite sd")
            .sample(&mut rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1000,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `attempt` (1-based), scaled by a jitter
    /// factor in [0, 1): the delay lands in [half, full] of the exponential
    /// step.
    pub fn delay(&self, attempt: u32, jitter: f64) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(20))
            .min(self.max_delay_ms);
        Duration::from_millis((exp as f64 * (0.5 + 0.5 * jitter.clamp(0.0, 1.0))) as u64)
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempts are exhausted.
    pub fn run<T>(
        &self,
        mut sleep: impl FnMut(Duration),
        mut jitter: impl FnMut() -> f64,
        mut op: impl FnMut() -> Result<T, ClientError>,
    ) -> Result<T, ClientError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < max => {
                    sleep(self.delay(attempt, jitter()));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(ClientError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub url: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            url: DEFAULT_ENDPOINT.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

/// Reads the assistant text from a chat-completions response body.
pub fn parse_response(body: &str) -> Result<String, ClientError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| {
            ClientError::MalformedResponse("missing choices[0].message.content".into())
        })
}

#[cfg(feature = "live")]
#[derive(Debug, Clone)]
pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    agent: ureq::Agent,
}

#[cfg(feature = "live")]
impl LiveBackend {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: LiveConfig) -> Result<Self, ClientError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            ClientError::Config(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: LiveConfig, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    fn attempt(&self, body: &str) -> Result<String, ClientError> {
        let transport = |e: ureq::Error| ClientError::Transport {
            attempts: 1,
            message: e.to_string(),
        };
        let mut resp = self
            .agent
            .post(&self.config.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Http { status, body: text });
        }
        parse_response(&text)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        let body = request.body_json();
        let mut jitter = ChaCha8Rng::seed_from_u64(now_ms() ^ hash_u64(&[&body]));
        self.config
            .retry
            .run(std::thread::sleep, || jitter.random::<f64>(), || self.attempt(&body))
    }
}

pub enum Backend {
    #[cfg(feature = "live")]
    Live(LiveBackend),
    Mock(MockBackend),
    Replay,
}

impl Backend {
    pub fn tag(&self) -> BackendTag {
        match self {
            #[cfg(feature = "live")]
            Backend::Live(_) => BackendTag::Live,
            Backend::Mock(_) => BackendTag::Mock,
            Backend::Replay => BackendTag::Replay,
        }
    }
}

/// The fixed part of every request in one experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub view: ViewKind,
    pub strategy: StrategyId,
    pub model: ModelId,
    pub params: SamplingParams,
    pub view_options: ViewOptions,
}

impl CellSpec {
    pub fn request(&self, article: &Article) -> Result<CompletionRequest, ClientError> {
        let view = corpus::build_view(article, self.view, &self.view_options)?;
        Ok(CompletionRequest {
            model: self.model.clone(),
            system: prompts::system_prompt(self.strategy).to_string(),
            user: prompts::user_prompt(&view)?,
            params: self.params,
        })
    }

    pub fn key(&self, article_id: &str, iteration: usize) -> CacheKey {
        CacheKey {
            article_id: article_id.to_string(),
            view: self.view,
            strategy: self.strategy,
            model: self.model.clone(),
            iteration,
        }
    }
}

pub struct Client {
    backend: Backend,
    parallelism: usize,
}

impl Client {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            parallelism: 4,
        }
    }

    /// Maximum number of in-flight live requests.
    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// Returns the report for `key`, from the cache when present, otherwise
    /// from the backend (persisting it before returning).
    pub fn complete(
        &self,
        request: &CompletionRequest,
        key: &CacheKey,
        cache: &Cache,
    ) -> Result<String, ClientError> {
        request.params.validate()?;
        let fingerprint = request.fingerprint();
        if let Some(rec) = cache.get(key) {
            if rec.fingerprint != fingerprint {
                return Err(ClientError::FingerprintMismatch {
                    key: key.to_string(),
                });
            }
            return Ok(rec.report);
        }
        let report = match &self.backend {
            #[cfg(feature = "live")]
            Backend::Live(live) => live.complete(request)?,
            Backend::Mock(mock) => mock.mock_complete(request, key),
            Backend::Replay => return Err(ClientError::NotCached(key.to_string())),
        };
        cache.insert(CompletionRecord {
            key: key.clone(),
            fingerprint,
            report: report.clone(),
            backend: self.backend.tag(),
            timestamp_ms: now_ms(),
        })?;
        Ok(report)
    }

    /// Collects `n` independent reports for one article, ordered by
    /// iteration index.
    pub fn run_iterations(
        &self,
        article: &Article,
        cell: &CellSpec,
        n: usize,
        cache: &Cache,
    ) -> Result<Vec<String>, ClientError> {
        if n == 0 {
            return Err(ClientError::Config("iterations must be at least 1".into()));
        }
        let request = cell.request(article)?;
        let workers = match self.backend {
            #[cfg(feature = "live")]
            Backend::Live(_) => self.parallelism.min(n),
            _ => 1,
        };
        let run_one = |i: usize| {
            self.complete(&request, &cell.key(&article.id, i), cache)
                .map_err(|e| ClientError::Iteration {
                    index: i,
                    source: Box::new(e),
                })
        };
        if workers <= 1 {
            return (0..n).map(run_one).collect();
        }
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<Result<String, ClientError>>>> =
            (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = run_one(i);
                    if r.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(n);
        for (i, slot) in slots.into_iter().enumerate() {
            match slot.into_inner().expect("slot lock") {
                Some(Ok(text)) => out.push(text),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(ClientError::Iteration {
                        index: i,
                        source: Box::new(ClientError::Config("aborted after an earlier failure".into())),
                    })
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Paragraph;

    fn article(id: &str) -> Article {
        Article {
            id: id.into(),
            title: "A study of things".into(),
            abstract_text: "We study things.".into(),
            paragraphs: vec![Paragraph::body("Body.")],
            human_score: 3.0,
        }
    }

    fn cell(view: ViewKind) -> CellSpec {
        CellSpec {
            view,
            strategy: StrategyId::S6,
            model: ModelId::new("gpt-4o").unwrap(),
            params: SamplingParams::default(),
            view_options: ViewOptions::default(),
        }
    }

    fn mock_client(seed: u64) -> Client {
        Client::new(Backend::Mock(MockBackend::new(seed, MockConfig::default())))
    }

    #[test]
    fn sampling_param_bounds() {
        assert!(SamplingParams::default().validate().is_ok());
        let bad = [
            SamplingParams { temperature: 2.5, ..Default::default() },
            SamplingParams { top_p: 0.0, ..Default::default() },
            SamplingParams { max_tokens: 0, ..Default::default() },
        ];
        for p in bad {
            assert!(matches!(p.validate(), Err(ClientError::Config(_))));
        }
    }

    #[test]
    fn model_id_non_empty() {
        assert!(ModelId::new(" ").is_err());
        assert!(serde_json::from_str::<ModelId>("\"\"").is_err());
    }

    #[test]
    fn mock_is_deterministic() {
        let a = article("a1");
        let c = cell(ViewKind::Abstract);
        let req = c.request(&a).unwrap();
        let key = c.key("a1", 3);
        let m = MockBackend::new(1, MockConfig::default());
        assert_eq!(m.mock_complete(&req, &key), m.mock_complete(&req, &key));
    }

    #[test]
    fn run_iterations_is_reproducible() {
        let a = article("a1");
        let c = cell(ViewKind::Abstract);
        let first = mock_client(9).run_iterations(&a, &c, 5, &Cache::in_memory()).unwrap();
        let second = mock_client(9).run_iterations(&a, &c, 5, &Cache::in_memory()).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.len(), 5);
        let other = mock_client(10).run_iterations(&a, &c, 5, &Cache::in_memory()).unwrap();
        assert_ne!(first, other);
    }

    #[test]
    fn run_iterations_indices() {
        let a = article("a1");
        let c = cell(ViewKind::Abstract);
        let cache = Cache::in_memory();
        let out = mock_client(1).run_iterations(&a, &c, 30, &cache).unwrap();
        assert_eq!(out.len(), 30);
        let iters: Vec<usize> = cache.records().iter().map(|r| r.key.iteration).collect();
        assert_eq!(iters, (0..30).collect::<Vec<_>>());
        assert_eq!(mock_client(1).run_iterations(&a, &c, 1, &Cache::in_memory()).unwrap().len(), 1);
        assert!(mock_client(1).run_iterations(&a, &c, 0, &cache).is_err());
    }

    #[test]
    fn refusal_probability_extremes() {
        let mut cfg = MockConfig { refusal_probability: 1.0, ..Default::default() };
        for s in 0..200 {
            assert_eq!(cfg.report(s, 2.5, ViewKind::Abstract).0, MockFormat::Refusal);
        }
        cfg.refusal_probability = 0.0;
        let refusals = (0..1000)
            .filter(|&s| cfg.report(s, 2.5, ViewKind::Abstract).0 == MockFormat::Refusal)
            .count();
        assert_eq!(refusals, 0);
    }

    #[test]
    fn titles_refuse_more_often() {
        let cfg = MockConfig::default();
        let count = |v| (0..2000).filter(|&s| cfg.report(s, 2.5, v).0 == MockFormat::Refusal).count();
        assert!(count(ViewKind::Title) > count(ViewKind::Abstract));
    }

    #[test]
    fn replay_hits_and_misses() {
        let a = article("a1");
        let c = cell(ViewKind::Abstract);
        let cache = Cache::in_memory();
        let live_like = mock_client(4).run_iterations(&a, &c, 3, &cache).unwrap();
        let replay = Client::new(Backend::Replay);
        assert_eq!(replay.run_iterations(&a, &c, 3, &cache).unwrap(), live_like);
        let err = replay.run_iterations(&a, &c, 4, &cache).unwrap_err();
        match err {
            ClientError::Iteration { index, source } => {
                assert_eq!(index, 3);
                assert!(matches!(*source, ClientError::NotCached(_)));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn replay_detects_prompt_drift() {
        let a = article("a1");
        let c = cell(ViewKind::Abstract);
        let cache = Cache::in_memory();
        mock_client(4).run_iterations(&a, &c, 1, &cache).unwrap();
        let mut changed = a.clone();
        changed.abstract_text.push_str(" Edited.");
        let err = Client::new(Backend::Replay)
            .run_iterations(&changed, &c, 1, &cache)
            .unwrap_err();
        assert!(err.to_string().contains("fingerprint"));
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache/cell.jsonl");
        let a = article("a1");
        let c = cell(ViewKind::Title);
        let texts = {
            let cache = Cache::open(&path).unwrap();
            mock_client(2).run_iterations(&a, &c, 4, &cache).unwrap()
        };
        let reopened = Cache::open_read_only(&path).unwrap();
        assert_eq!(reopened.len(), 4);
        let replayed = Client::new(Backend::Replay).run_iterations(&a, &c, 4, &reopened).unwrap();
        assert_eq!(replayed, texts);
        assert!(reopened
            .insert(CompletionRecord {
                key: c.key("a1", 9),
                fingerprint: String::new(),
                report: String::new(),
                backend: BackendTag::Mock,
                timestamp_ms: 0,
            })
            .is_err());
    }

    #[test]
    fn request_body_matches_batch_line() {
        let a = article("a1");
        let c = cell(ViewKind::Abstract);
        let corpus = crate::corpus::Corpus::new(vec![a.clone()]);
        let lines = crate::corpus::to_jsonl(
            &corpus,
            c.view,
            c.strategy,
            c.model.as_str(),
            &c.params,
            2,
            &c.view_options,
        )
        .unwrap();
        let mut line: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        line.as_object_mut().unwrap().remove("custom_id");
        let body: serde_json::Value = serde_json::from_str(&c.request(&a).unwrap().body_json()).unwrap();
        assert_eq!(line, body);
    }

    #[test]
    fn retry_policy_counts_attempts() {
        let policy = RetryPolicy { max_attempts: 5, base_delay_ms: 10, max_delay_ms: 1000 };
        let mut slept = Vec::new();
        let mut calls = 0;
        let err = policy
            .run(
                |d| slept.push(d),
                || 0.0,
                || -> Result<(), ClientError> {
                    calls += 1;
                    Err(ClientError::Http { status: 503, body: String::new() })
                },
            )
            .unwrap_err();
        assert_eq!(calls, 5);
        assert!(matches!(err, ClientError::Transport { attempts: 5, .. }));
        let ms: Vec<u128> = slept.iter().map(|d| d.as_millis()).collect();
        assert_eq!(ms, vec![5, 10, 20, 40]);

        let mut calls = 0;
        let ok = policy.run(|_| {}, || 1.0, || {
            calls += 1;
            if calls < 3 {
                Err(ClientError::Http { status: 429, body: String::new() })
            } else {
                Ok(7)
            }
        });
        assert_eq!(ok.unwrap(), 7);

        let mut calls = 0;
        let err = policy
            .run(|_| {}, || 0.5, || -> Result<(), ClientError> {
                calls += 1;
                Err(ClientError::Http { status: 400, body: "bad".into() })
            })
            .unwrap_err();
        assert_eq!(calls, 1);
        assert!(matches!(err, ClientError::Http { status: 400, .. }));
    }

    #[test]
    fn backoff_is_capped_and_jittered() {
        let p = RetryPolicy { max_attempts: 10, base_delay_ms: 1000, max_delay_ms: 4000 };
        assert_eq!(p.delay(1, 1.0), Duration::from_millis(1000));
        assert_eq!(p.delay(1, 0.0), Duration::from_millis(500));
        assert_eq!(p.delay(8, 1.0), Duration::from_millis(4000));
    }

    #[test]
    fn response_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"Score: 3"}}]}"#;
        assert_eq!(parse_response(ok).unwrap(), "Score: 3");
        for bad in [r#"{"choices":[]}"#, r#"{"choices":[{"message":{}}]}"#, "not json"] {
            assert!(matches!(parse_response(bad), Err(ClientError::MalformedResponse(_))));
        }
    }

    #[cfg(feature = "live")]
    #[test]
    fn live_backend_requires_credential() {
        let cfg = LiveConfig {
            api_key_env: "REFSCORE_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..Default::default()
        };
        assert!(matches!(LiveBackend::from_env(cfg), Err(ClientError::Config(_))));
    }
}
