//! Client for the Diet minutes speech search API.
//!
//! The HTTP layer sits behind [`HttpTransport`] so tests and offline runs can
//! replay recorded responses ([`ReplayTransport`]) and captures can be taken
//! once against the live service ([`RecordingTransport`]).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{House, Party, SpeechRecord};
use crate::util::{atomic_write, sha256_hex};

pub const DEFAULT_BASE_URL: &str = "https://kokkai.ndl.go.jp/api/speech";
/// Documented ceiling of `maximumRecords` on the speech endpoint.
pub const MAX_PAGE_SIZE: u32 = 100;

const BODY_EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (DNS, refused, timeout, missing fixture).
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str, query: &[(String, String)]) -> Result<HttpReply, TransportError>;
}

/// Live transport over `ureq`. Non-2xx statuses are returned, not raised.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str, query: &[(String, String)]) -> Result<HttpReply, TransportError> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(k, v);
        }
        let mut resp = req.call().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Canonical request string used to key recorded responses.
pub fn request_key(url: &str, query: &[(String, String)]) -> String {
    let mut pairs: Vec<_> = query.iter().map(|(k, v)| format!("{k}={v}")).collect();
    pairs.sort();
    let path = url.rsplit('/').next().unwrap_or(url);
    format!("{path}?{}", pairs.join("&"))
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordedReply {
    request: String,
    status: u16,
    body: String,
}

fn fixture_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{}.json", &sha256_hex(key.as_bytes())[..16]))
}

/// Serves responses recorded under a directory; a missing recording is a
/// transport error, so offline runs never fall through to the network.
pub struct ReplayTransport {
    dir: PathBuf,
}

impl ReplayTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Writes one recording. Used by [`RecordingTransport`] and by fixture
    /// builders.
    pub fn record(
        dir: &Path,
        url: &str,
        query: &[(String, String)],
        reply: &HttpReply,
    ) -> std::io::Result<PathBuf> {
        let key = request_key(url, query);
        let path = fixture_path(dir, &key);
        let rec = RecordedReply {
            request: key,
            status: reply.status,
            body: reply.body.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&rec).expect("plain data");
        bytes.push(b'\n');
        atomic_write(&path, &bytes)?;
        Ok(path)
    }
}

impl HttpTransport for ReplayTransport {
    fn get(&self, url: &str, query: &[(String, String)]) -> Result<HttpReply, TransportError> {
        let key = request_key(url, query);
        let path = fixture_path(&self.dir, &key);
        let text = fs::read_to_string(&path)
            .map_err(|e| TransportError(format!("no recorded response for {key} ({e})")))?;
        let rec: RecordedReply = serde_json::from_str(&text)
            .map_err(|e| TransportError(format!("corrupt recording {}: {e}", path.display())))?;
        if rec.request != key {
            return Err(TransportError(format!(
                "recording {} is for {}, not {key}",
                path.display(),
                rec.request
            )));
        }
        Ok(HttpReply {
            status: rec.status,
            body: rec.body,
        })
    }
}

/// Forwards to an inner transport and saves every successful reply.
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: HttpTransport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }
}

impl<T: HttpTransport> HttpTransport for RecordingTransport<T> {
    fn get(&self, url: &str, query: &[(String, String)]) -> Result<HttpReply, TransportError> {
        let reply = self.inner.get(url, query)?;
        if reply.status == 200 {
            ReplayTransport::record(&self.dir, url, query, &reply)
                .map_err(|e| TransportError(format!("saving recording: {e}")))?;
        }
        Ok(reply)
    }
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub base_url: String,
    pub page_size: u32,
    /// Minimum spacing between any two requests issued by one client.
    pub min_interval: Duration,
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_base: Duration,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            page_size: MAX_PAGE_SIZE,
            min_interval: Duration::from_secs(1),
            max_retries: 5,
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl ApiConfig {
    /// No pacing and no backoff; for fixture replay.
    pub fn unthrottled(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            min_interval: Duration::ZERO,
            backoff_base: Duration::ZERO,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("malformed response, field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("HTTP {status}: {body_excerpt}")]
    Status { status: u16, body_excerpt: String },
    #[error("invalid request: {0}")]
    Precondition(String),
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        match self {
            FetchError::Network { .. } => true,
            FetchError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            next_slot: Mutex::new(None),
        }
    }

    /// Blocks until this caller owns the next request slot. Holding the lock
    /// while sleeping serializes concurrent callers.
    fn acquire(&self) {
        let mut next = self.next_slot.lock().expect("rate limiter poisoned");
        let now = Instant::now();
        if let Some(t) = *next {
            if t > now {
                std::thread::sleep(t - now);
            }
        }
        *next = Some(Instant::now() + self.min_interval);
    }
}

pub struct MinutesClient {
    transport: Arc<dyn HttpTransport>,
    config: ApiConfig,
    limiter: RateLimiter,
    requests: AtomicU64,
    retries: AtomicU64,
}

impl MinutesClient {
    pub fn new(transport: Arc<dyn HttpTransport>, mut config: ApiConfig) -> Self {
        config.page_size = config.page_size.clamp(1, MAX_PAGE_SIZE);
        Self {
            limiter: RateLimiter::new(config.min_interval),
            transport,
            config,
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ApiConfig {
        &self.config
    }

    /// Total HTTP attempts made so far, including retries.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// Number of retried attempts so far.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// Lazily paginated search. Each yielded record has `matched_queries ==
    /// {query}`.
    pub fn fetch_speeches(
        &self,
        query: &str,
        date_from: NaiveDate,
        date_to: NaiveDate,
        house: House,
    ) -> Result<SpeechStream<'_>, FetchError> {
        if query.trim().is_empty() {
            return Err(FetchError::Precondition("query is empty".into()));
        }
        if date_from > date_to {
            return Err(FetchError::Precondition(format!(
                "date_from {date_from} is after date_to {date_to}"
            )));
        }
        Ok(SpeechStream {
            client: self,
            query: query.to_string(),
            date_from,
            date_to,
            house,
            next_start: Some(1),
            buffer: Vec::new().into_iter(),
            failed: false,
        })
    }

    fn get_with_retry(&self, query: &[(String, String)]) -> Result<String, FetchError> {
        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            self.limiter.acquire();
            self.requests.fetch_add(1, Ordering::Relaxed);
            let err = match self.transport.get(&self.config.base_url, query) {
                Err(e) => FetchError::Network {
                    attempts: attempt,
                    message: e.0,
                },
                Ok(reply) if (200..300).contains(&reply.status) => return Ok(reply.body),
                Ok(reply) => FetchError::Status {
                    status: reply.status,
                    body_excerpt: reply.body.chars().take(BODY_EXCERPT_CHARS).collect(),
                },
            };
            if !err.is_retryable() || attempt > self.config.max_retries {
                return Err(err);
            }
            let delay = self.config.backoff_base * 2u32.saturating_pow(attempt - 1);
            log::warn!("minutes API attempt {attempt} failed ({err}); retrying in {delay:?}");
            self.retries.fetch_add(1, Ordering::Relaxed);
            std::thread::sleep(delay);
        }
    }

    fn page_params(
        &self,
        query: &str,
        date_from: NaiveDate,
        date_to: NaiveDate,
        house: House,
        start: u64,
    ) -> Vec<(String, String)> {
        vec![
            ("any".into(), query.into()),
            ("from".into(), date_from.to_string()),
            ("until".into(), date_to.to_string()),
            ("nameOfHouse".into(), house.api_name().into()),
            ("recordPacking".into(), "json".into()),
            ("startRecord".into(), start.to_string()),
            ("maximumRecords".into(), self.config.page_size.to_string()),
        ]
    }
}

/// Iterator over search results; fetches the next page on demand. Stops
/// after the first error.
pub struct SpeechStream<'a> {
    client: &'a MinutesClient,
    query: String,
    date_from: NaiveDate,
    date_to: NaiveDate,
    house: House,
    next_start: Option<u64>,
    buffer: std::vec::IntoIter<SpeechRecord>,
    failed: bool,
}

impl SpeechStream<'_> {
    fn load_page(&mut self, start: u64) -> Result<(), FetchError> {
        let params = self
            .client
            .page_params(&self.query, self.date_from, self.date_to, self.house, start);
        let body = self.client.get_with_retry(&params)?;
        let page = parse_page(&body, &self.query)?;
        self.next_start = page.next_start;
        self.buffer = page.records.into_iter();
        Ok(())
    }
}

impl Iterator for SpeechStream<'_> {
    type Item = Result<SpeechRecord, FetchError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(r) = self.buffer.next() {
                return Some(Ok(r));
            }
            let start = self.next_start.take()?;
            if let Err(e) = self.load_page(start) {
                self.failed = true;
                return Some(Err(e));
            }
        }
    }
}

struct Page {
    records: Vec<SpeechRecord>,
    next_start: Option<u64>,
}

fn parse_err(field: &str, message: impl Into<String>) -> FetchError {
    FetchError::Parse {
        field: field.to_string(),
        message: message.into(),
    }
}

fn str_field<'v>(obj: &'v Value, field: &str) -> Result<&'v str, FetchError> {
    obj.get(field)
        .ok_or_else(|| parse_err(field, "missing"))?
        .as_str()
        .ok_or_else(|| parse_err(field, "expected a string"))
}

fn count_field(obj: &Value, field: &str) -> Result<Option<u64>, FetchError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_u64()
            .map(Some)
            .ok_or_else(|| parse_err(field, "expected a non-negative integer")),
        // the service has been seen to quote some counters
        Some(Value::String(s)) => s
            .parse()
            .map(Some)
            .map_err(|_| parse_err(field, format!("expected an integer, got {s:?}"))),
        Some(_) => Err(parse_err(field, "expected an integer")),
    }
}

/// Drops the `○氏名君　` header the minutes prepend to each speech.
fn strip_speaker_header(text: &str) -> &str {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix('○') {
        if let Some(pos) = rest.find(char::is_whitespace) {
            return rest[pos..].trim();
        }
    }
    text
}

fn parse_page(body: &str, query: &str) -> Result<Page, FetchError> {
    let root: Value = serde_json::from_str(body).map_err(|e| parse_err("<body>", e.to_string()))?;
    if root.get("message").is_some() && root.get("numberOfRecords").is_none() {
        return Err(parse_err(
            "message",
            format!("service reported an error: {}", root["message"]),
        ));
    }
    let total = count_field(&root, "numberOfRecords")?
        .ok_or_else(|| parse_err("numberOfRecords", "missing"))?;
    let next_start = count_field(&root, "nextRecordPosition")?;
    let raw = match root.get("speechRecord") {
        None | Some(Value::Null) if total == 0 => return Ok(Page { records: vec![], next_start: None }),
        None | Some(Value::Null) => return Err(parse_err("speechRecord", "missing on a non-empty result")),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(parse_err("speechRecord", "expected an array")),
    };
    let mut records = Vec::with_capacity(raw.len());
    for item in raw {
        let speech_id = str_field(item, "speechID")?.to_string();
        let speaker = str_field(item, "speaker")?.to_string();
        let group = item.get("speakerGroup").and_then(Value::as_str).unwrap_or("");
        let house_name = str_field(item, "nameOfHouse")?;
        let house = House::from_api_name(house_name)
            .ok_or_else(|| parse_err("nameOfHouse", format!("unknown house {house_name:?}")))?;
        let date_s = str_field(item, "date")?;
        let date: NaiveDate = date_s
            .parse()
            .map_err(|_| parse_err("date", format!("not an ISO date: {date_s:?}")))?;
        let text = strip_speaker_header(str_field(item, "speech")?).to_string();
        if text.is_empty() {
            log::debug!("skipping empty speech {speech_id}");
            continue;
        }
        let party = Party::from_group_label(group)
            .map(|p| p.code().to_string())
            .unwrap_or_else(|| group.to_string());
        records.push(SpeechRecord {
            speech_id,
            speaker_name: speaker,
            party,
            house,
            date,
            text,
            matched_queries: BTreeSet::from([query.to_string()]),
        });
    }
    Ok(Page { records, next_start })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Scripted {
        replies: Mutex<Vec<Result<HttpReply, TransportError>>>,
        seen: Mutex<Vec<Vec<(String, String)>>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self {
                replies: Mutex::new(replies),
                seen: Mutex::new(vec![]),
            })
        }
    }

    impl HttpTransport for Scripted {
        fn get(&self, _url: &str, query: &[(String, String)]) -> Result<HttpReply, TransportError> {
            self.seen.lock().unwrap().push(query.to_vec());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(TransportError("script exhausted".into())))
        }
    }

    fn ok(body: Value) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: 200,
            body: body.to_string(),
        })
    }

    fn speech(id: &str, text: &str) -> Value {
        json!({
            "speechID": id, "speaker": "稲田朋美", "speakerGroup": "自由民主党・無所属の会",
            "nameOfHouse": "衆議院", "date": "2022-04-01", "speech": format!("○稲田委員　{text}")
        })
    }

    fn client(t: Arc<dyn HttpTransport>) -> MinutesClient {
        MinutesClient::new(t, ApiConfig::unthrottled("http://stub/api/speech"))
    }

    fn range() -> (NaiveDate, NaiveDate) {
        ("2021-01-01".parse().unwrap(), "2023-05-31".parse().unwrap())
    }

    #[test]
    fn paginates_until_next_position_absent() {
        let t = Scripted::new(vec![
            ok(json!({"numberOfRecords": 3, "nextRecordPosition": 3,
                      "speechRecord": [speech("a", "自衛隊A"), speech("b", "自衛隊B")]})),
            ok(json!({"numberOfRecords": 3, "nextRecordPosition": null,
                      "speechRecord": [speech("c", "自衛隊C")]})),
        ]);
        let c = client(t.clone());
        let (f, u) = range();
        let recs: Vec<_> = c
            .fetch_speeches("自衛隊", f, u, House::Lower)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].text, "自衛隊A");
        assert_eq!(recs[0].party, "LDP");
        assert!(recs.iter().all(|r| r.matched_queries == BTreeSet::from(["自衛隊".to_string()])));
        let seen = t.seen.lock().unwrap();
        let starts: Vec<_> = seen
            .iter()
            .map(|q| q.iter().find(|(k, _)| k == "startRecord").unwrap().1.clone())
            .collect();
        assert_eq!(starts, ["1", "3"]);
        assert!(seen[0].contains(&("maximumRecords".into(), "100".into())));
    }

    #[test]
    fn empty_result_is_empty_stream() {
        let t = Scripted::new(vec![ok(json!({"numberOfRecords": 0, "numberOfReturn": 0}))]);
        let (f, u) = range();
        let c = client(t);
        assert_eq!(c.fetch_speeches("存在しない語", f, u, House::Lower).unwrap().count(), 0);
    }

    #[test]
    fn server_errors_are_retried() {
        let fail = || {
            Ok(HttpReply {
                status: 500,
                body: "oops".into(),
            })
        };
        let t = Scripted::new(vec![
            fail(),
            fail(),
            ok(json!({"numberOfRecords": 1, "speechRecord": [speech("a", "自衛隊")]})),
        ]);
        let c = client(t);
        let (f, u) = range();
        let n = c.fetch_speeches("自衛隊", f, u, House::Lower).unwrap().count();
        assert_eq!(n, 1);
        assert_eq!(c.retry_count(), 2);
        assert_eq!(c.request_count(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted::new(vec![Ok(HttpReply {
            status: 400,
            body: json!({"message": "bad parameter"}).to_string(),
        })]);
        let c = client(t);
        let (f, u) = range();
        let err = c.fetch_speeches("x", f, u, House::Lower).unwrap().next().unwrap().unwrap_err();
        match err {
            FetchError::Status { status, body_excerpt } => {
                assert_eq!(status, 400);
                assert!(body_excerpt.contains("bad parameter"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(c.retry_count(), 0);
    }

    #[test]
    fn network_failures_exhaust_retries() {
        let t = Scripted::new((0..10).map(|_| Err(TransportError("refused".into()))).collect());
        let c = client(t);
        let (f, u) = range();
        let err = c.fetch_speeches("x", f, u, House::Lower).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, FetchError::Network { attempts: 6, .. }));
        assert!(err.is_retryable());
    }

    #[test]
    fn malformed_record_names_field() {
        let t = Scripted::new(vec![ok(json!({"numberOfRecords": 1,
            "speechRecord": [{"speechID": "a", "speaker": "x", "nameOfHouse": "衆議院", "speech": "t"}]}))]);
        let c = client(t);
        let (f, u) = range();
        let err = c.fetch_speeches("x", f, u, House::Lower).unwrap().next().unwrap().unwrap_err();
        match err {
            FetchError::Parse { field, .. } => assert_eq!(field, "date"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(!FetchError::Parse { field: "x".into(), message: String::new() }.is_retryable());
    }

    #[test]
    fn replay_round_trips_recordings() {
        let dir = tempfile::tempdir().unwrap();
        let q = vec![("any".to_string(), "原発".to_string())];
        let reply = HttpReply { status: 200, body: "{}".into() };
        ReplayTransport::record(dir.path(), "http://h/api/speech", &q, &reply).unwrap();
        let r = ReplayTransport::new(dir.path());
        assert_eq!(r.get("https://other/api/speech", &q).unwrap(), reply);
        assert!(r.get("http://h/api/speech", &[]).is_err());
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(Duration::from_millis(30));
        let start = Instant::now();
        for _ in 0..3 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(60));
    }

    #[test]
    fn header_is_stripped() {
        assert_eq!(strip_speaker_header("○岸田内閣総理大臣　お答えします。"), "お答えします。");
        assert_eq!(strip_speaker_header("本文のみ"), "本文のみ");
    }
}
