//! Generated seed speeches: chat-service clients and pinned seed bundles.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::util::{atomic_write, sha256_hex};

pub const DEFAULT_SEEDS_PER_SIDE: usize = 5;
pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Pro,
    Con,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Pro => "PRO",
            Side::Con => "CON",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pro" => Ok(Side::Pro),
            "con" => Ok(Side::Con),
            _ => Err(format!("side must be pro or con, got {s:?}")),
        }
    }
}

/// Prompt asking for a speech by a politician in favour of `issue`.
pub fn pro_prompt(issue: &str) -> String {
    format!("{issue}に賛成な政治家の答弁を作ってください。")
}

/// Mirror of [`pro_prompt`] for the opposing side.
pub fn con_prompt(issue: &str) -> String {
    format!("{issue}に反対な政治家の答弁を作ってください。")
}

pub fn prompt_for(issue: &str, side: Side) -> String {
    match side {
        Side::Pro => pro_prompt(issue),
        Side::Con => con_prompt(issue),
    }
}

/// Issue phrases for the two studied controversies.
pub const JSDF_ISSUE: &str = "自衛隊を憲法に明記すること";
pub const NPP_ISSUE: &str = "原発の再稼働";

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("chat service returned HTTP {status}: {body_excerpt}")]
    Status { status: u16, body_excerpt: String },
    #[error("chat service unreachable: {0}")]
    Network(String),
    #[error("unexpected chat response: {0}")]
    Parse(String),
    #[error("chat client misconfigured: {0}")]
    Config(String),
    #[error("fixture client has no responses left")]
    Exhausted,
}

impl ChatError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ChatError::Status { status, .. } => *status == 429 || *status >= 500,
            ChatError::Network(_) => true,
            _ => false,
        }
    }
}

/// One completion plus the raw exchange, kept for the bundle log.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub request: Value,
    pub response: Value,
}

/// Send a prompt, receive text.
pub trait ChatClient: Send + Sync {
    fn model_id(&self) -> String;
    fn complete(&self, prompt: &str) -> Result<Completion, ChatError>;
}

/// Chat-completions client (`POST {base_url}/chat/completions`).
pub struct HttpChatClient {
    base_url: String,
    model: String,
    token: Option<String>,
    temperature: Option<f64>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    /// Reads the bearer token from `token_env` when given; a named but unset
    /// variable is a configuration error.
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        token_env: Option<&str>,
        temperature: Option<f64>,
    ) -> Result<Self, ChatError> {
        let token = match token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ChatError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build();
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            token,
            temperature,
            agent: ureq::Agent::new_with_config(config),
        })
    }
}

impl ChatClient for HttpChatClient {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, prompt: &str) -> Result<Completion, ChatError> {
        let mut request = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = self.temperature {
            request["temperature"] = json!(t);
        }
        let mut req = self
            .agent
            .post(format!("{}/chat/completions", self.base_url))
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send(request.to_string())
            .map_err(|e| ChatError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ChatError::Network(e.to_string()))?;
        if status >= 400 {
            return Err(ChatError::Status {
                status,
                body_excerpt: body.chars().take(200).collect(),
            });
        }
        let response: Value =
            serde_json::from_str(&body).map_err(|e| ChatError::Parse(e.to_string()))?;
        let text = response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ChatError::Parse("missing choices[0].message.content".into()))?
            .to_string();
        Ok(Completion {
            text,
            request,
            response,
        })
    }
}

/// Replays canned replies in order. `Err` entries simulate service faults.
pub struct FixtureChatClient {
    model_id: String,
    replies: Mutex<VecDeque<Result<String, u16>>>,
}

impl FixtureChatClient {
    pub fn new<I, S>(model_id: impl Into<String>, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::scripted(model_id, texts.into_iter().map(|t| Ok(t.into())))
    }

    /// `Err(status)` replies fail with that HTTP status.
    pub fn scripted(
        model_id: impl Into<String>,
        replies: impl IntoIterator<Item = Result<String, u16>>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            replies: Mutex::new(replies.into_iter().collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("fixture lock").len()
    }
}

impl ChatClient for FixtureChatClient {
    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn complete(&self, prompt: &str) -> Result<Completion, ChatError> {
        let next = self
            .replies
            .lock()
            .expect("fixture lock")
            .pop_front()
            .ok_or(ChatError::Exhausted)?;
        let request = json!({"model": self.model_id, "prompt": prompt});
        match next {
            Ok(text) => Ok(Completion {
                response: json!({"fixture": text}),
                text,
                request,
            }),
            Err(status) => Err(ChatError::Status {
                status,
                body_excerpt: "fixture fault".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: Value,
    pub response: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBundle {
    pub schema_version: u32,
    pub topic_id: String,
    pub side: Side,
    pub prompt: String,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
    pub texts: Vec<String>,
    /// Completions rejected for being empty.
    pub empty_retries: u32,
    /// Requests that failed with a retryable service error.
    pub error_retries: u32,
    /// Raw request/response payloads for every accepted completion.
    pub exchanges: Vec<Exchange>,
    /// sha256 over the bundle serialized with this field empty.
    pub content_hash: String,
}

impl SeedBundle {
    pub fn compute_hash(&self) -> String {
        let mut body = self.clone();
        body.content_hash = String::new();
        sha256_hex(&serde_json::to_vec(&body).expect("plain data"))
    }

    pub fn seal(mut self) -> Self {
        self.content_hash = self.compute_hash();
        self
    }

    fn check_invariants(&self) -> Result<(), String> {
        if self.texts.is_empty() {
            return Err("bundle has no texts".into());
        }
        if let Some(i) = self.texts.iter().position(|t| t.trim().is_empty()) {
            return Err(format!("text {i} is empty"));
        }
        if self.prompt.trim().is_empty() {
            return Err("prompt is empty".into());
        }
        Ok(())
    }

    /// `<topic>-<side>-<hash prefix>.json`
    pub fn file_name(&self) -> String {
        format!(
            "{}-{}-{}.json",
            self.topic_id,
            self.side.as_str().to_ascii_lowercase(),
            &self.content_hash[..12.min(self.content_hash.len())]
        )
    }
}

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("n must be at least 1")]
    ZeroCount,
    #[error("gave up after {attempts} attempts: {source}")]
    Service {
        attempts: u32,
        #[source]
        source: ChatError,
    },
    #[error("only empty completions after {0} attempts")]
    AllEmpty(u32),
    #[error("seed bundle not found: {0}")]
    NotFound(PathBuf),
    #[error("seed bundle {path} fails integrity check: recorded {recorded}, computed {computed}")]
    Integrity {
        path: PathBuf,
        recorded: String,
        computed: String,
    },
    #[error("seed bundle {path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
    #[error("writing seed bundle {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Attempts per text, counting both faults and empty replies.
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            backoff: Duration::from_secs(2),
        }
    }
}

/// Requests `n` completions one after another. Empty replies are rejected
/// and re-requested; retryable faults back off exponentially. The result is
/// sealed (hash filled in) but not yet written.
pub fn generate_seeds(
    topic_id: &str,
    side: Side,
    prompt: &str,
    n: usize,
    client: &dyn ChatClient,
    opts: &GenerateOptions,
) -> Result<SeedBundle, SeedError> {
    if n == 0 {
        return Err(SeedError::ZeroCount);
    }
    let max_attempts = opts.max_attempts.max(1);
    let mut texts = Vec::with_capacity(n);
    let mut exchanges = Vec::with_capacity(n);
    let (mut empty_retries, mut error_retries) = (0u32, 0u32);
    for _ in 0..n {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match client.complete(prompt) {
                Ok(c) if c.text.trim().is_empty() => {
                    if attempt >= max_attempts {
                        return Err(SeedError::AllEmpty(attempt));
                    }
                    log::warn!("empty completion for {topic_id}/{side}, retrying");
                    empty_retries += 1;
                }
                Ok(c) => {
                    texts.push(c.text);
                    exchanges.push(Exchange {
                        request: c.request,
                        response: c.response,
                    });
                    break;
                }
                Err(e) if e.is_retryable() && attempt < max_attempts => {
                    log::warn!("chat request failed ({e}), retrying");
                    error_retries += 1;
                    thread::sleep(opts.backoff * 2u32.pow(attempt - 1));
                }
                Err(source) => {
                    return Err(SeedError::Service {
                        attempts: attempt,
                        source,
                    })
                }
            }
        }
    }
    Ok(SeedBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        topic_id: topic_id.to_string(),
        side,
        prompt: prompt.to_string(),
        model_id: client.model_id(),
        created_at: Utc::now(),
        texts,
        empty_retries,
        error_retries,
        exchanges,
        content_hash: String::new(),
    }
    .seal())
}

/// Writes the bundle into `dir` under [`SeedBundle::file_name`]. An existing
/// file with the same name is left untouched (same name means same hash).
pub fn write_bundle(bundle: &SeedBundle, dir: &Path) -> Result<PathBuf, SeedError> {
    let path = dir.join(bundle.file_name());
    let io = |source| SeedError::Io {
        path: path.clone(),
        source,
    };
    if bundle.content_hash != bundle.compute_hash() {
        return Err(SeedError::Invalid {
            path,
            detail: "bundle is not sealed".into(),
        });
    }
    if path.exists() {
        return Ok(path);
    }
    fs::create_dir_all(dir).map_err(io)?;
    let mut bytes = serde_json::to_vec_pretty(bundle).expect("plain data");
    bytes.push(b'\n');
    atomic_write(&path, &bytes).map_err(io)?;
    Ok(path)
}

pub fn load_seeds(path: &Path) -> Result<SeedBundle, SeedError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(SeedError::NotFound(path.to_path_buf()))
        }
        Err(source) => {
            return Err(SeedError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let invalid = |detail: String| SeedError::Invalid {
        path: path.to_path_buf(),
        detail,
    };
    let bundle: SeedBundle = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    if bundle.schema_version != BUNDLE_SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema_version {}",
            bundle.schema_version
        )));
    }
    let computed = bundle.compute_hash();
    if computed != bundle.content_hash {
        return Err(SeedError::Integrity {
            path: path.to_path_buf(),
            recorded: bundle.content_hash,
            computed,
        });
    }
    bundle.check_invariants().map_err(invalid)?;
    Ok(bundle)
}
