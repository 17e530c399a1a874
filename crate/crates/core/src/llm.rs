//! Minimal chat-completion client with a live HTTP backend and a
//! deterministic record/replay backend.
//!
//! Requests are fingerprinted over a canonical serialization (sorted
//! fields, whitespace-normalized message content), so a recorded transcript
//! replays across runs and platforms regardless of trivial formatting
//! drift. The whole test suite runs against replay transcripts; the live
//! backend is only exercised when recording.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("http error: {0}")]
    Http(String),
    #[error("malformed completion response: {0}")]
    Parse(String),
    #[error("transcript has no entry for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt transcript: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn label(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Default model name for live requests.
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    /// Fixed to 0 by the gates for determinism at the provider boundary.
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model: model.into(), messages, temperature: 0.0, max_tokens: 1024 }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::Parse("request holds no messages".into()));
        }
        Ok(())
    }

    /// Canonical form hashed by [`fingerprint`]: fields in lexicographic
    /// order, message content collapsed to single spaces.
    fn canonical(&self) -> String {
        let mut out = String::new();
        out.push_str("max_tokens\x1f");
        out.push_str(&self.max_tokens.to_string());
        out.push_str("\x1emessages\x1f");
        for m in &self.messages {
            out.push_str(m.role.label());
            out.push('\x1f');
            out.push_str(&normalize_whitespace(&m.content));
            out.push('\x1e');
        }
        out.push_str("model\x1f");
        out.push_str(&self.model);
        out.push_str("\x1etemperature\x1f");
        out.push_str(&format!("{}", self.temperature));
        out
    }

    /// Stable hex id of this request for transcript lookup.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn canned(content: impl Into<String>) -> Self {
        Self { content: content.into(), finish_reason: "stop".into(), usage: Usage::default() }
    }
}

/// In-memory metadata of a recording session; not part of the file format.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptMeta {
    pub recorded_at: String,
    pub model: String,
    pub partial: bool,
}

/// Map from request fingerprint to recorded response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: BTreeMap<String, ChatResponse>,
    pub meta: Option<TranscriptMeta>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, req: &ChatRequest, resp: ChatResponse) {
        self.entries.insert(req.fingerprint(), resp);
    }

    pub fn get(&self, fingerprint: &str) -> Option<&ChatResponse> {
        self.entries.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<String, ChatResponse> {
        &self.entries
    }

    /// Writes the flat `{fingerprint: response}` JSON map.
    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let mut bytes = serde_json::to_vec_pretty(&self.entries)
            .map_err(|e| LlmError::Corrupt(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let bytes = std::fs::read(path)?;
        let entries: BTreeMap<String, ChatResponse> = serde_json::from_slice(&bytes)
            .map_err(|e| LlmError::Corrupt(format!("{}: {e}", path.display())))?;
        Ok(Self { entries, meta: None })
    }
}

/// Connection settings of the live backend.
#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Full chat-completions endpoint URL.
    pub base_url: String,
    /// Bearer credential; read from `LLM_API_KEY` by the CLI.
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Retries on transient failures (timeout, 429, 5xx) only.
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug)]
pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Http(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.complete_once(req) {
                Err(err) if err_is_transient(&err) && attempt < self.config.max_retries => {
                    attempt += 1;
                    log::warn!("transient LLM failure (attempt {attempt}): {err}; retrying");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                other => return other,
            }
        }
    }

    fn complete_once(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = serde_json::json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut http = self.client.post(&self.config.base_url).json(&body);
        if let Some(key) = &self.config.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout(e.to_string())
            } else {
                LlmError::Http(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Http(e.to_string()))?;
        match status.as_u16() {
            200 => parse_completion(&text),
            401 | 403 => Err(LlmError::Auth(format!("status {status}: {text}"))),
            429 => Err(LlmError::RateLimited(text)),
            code => Err(LlmError::Http(format!("status {code}: {text}"))),
        }
    }
}

fn err_is_transient(err: &LlmError) -> bool {
    match err {
        LlmError::Timeout(_) | LlmError::RateLimited(_) => true,
        LlmError::Http(msg) => msg.starts_with("status 5"),
        _ => false,
    }
}

/// Extracts the first choice of a chat-completions response body.
fn parse_completion(body: &str) -> Result<ChatResponse, LlmError> {
    #[derive(Deserialize)]
    struct Wire {
        choices: Vec<WireChoice>,
        #[serde(default)]
        usage: Option<Usage>,
    }
    #[derive(Deserialize)]
    struct WireChoice {
        message: WireMessage,
        #[serde(default)]
        finish_reason: Option<String>,
    }
    #[derive(Deserialize)]
    struct WireMessage {
        content: Option<String>,
    }

    let wire: Wire = serde_json::from_str(body).map_err(|e| LlmError::Parse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Parse("response holds no choices".into()))?;
    let content = choice
        .message
        .content
        .ok_or_else(|| LlmError::Parse("first choice has no content".into()))?;
    Ok(ChatResponse {
        content,
        finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
        usage: wire.usage.unwrap_or_default(),
    })
}

/// A chat-completion transport: live HTTP, deterministic replay, or live
/// with capture.
#[derive(Debug)]
pub enum LlmBackend {
    Live(LiveBackend),
    Replay(Transcript),
    /// Live completions that are also captured for later replay.
    Recording(LiveBackend, Mutex<Transcript>),
}

impl LlmBackend {
    pub fn live(config: LiveConfig) -> Result<Self, LlmError> {
        Ok(LlmBackend::Live(LiveBackend::new(config)?))
    }

    pub fn replay_from(path: &Path) -> Result<Self, LlmError> {
        Ok(LlmBackend::Replay(Transcript::load(path)?))
    }

    pub fn recording(config: LiveConfig) -> Result<Self, LlmError> {
        Ok(LlmBackend::Recording(LiveBackend::new(config)?, Mutex::new(Transcript::new())))
    }

    /// Consumes a recording backend, yielding what it captured.
    pub fn into_captured(self) -> Option<Transcript> {
        match self {
            LlmBackend::Recording(_, captured) => Some(captured.into_inner().unwrap()),
            _ => None,
        }
    }
}

/// Performs one chat completion against the configured backend.
pub fn complete(backend: &LlmBackend, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
    req.validate()?;
    match backend {
        LlmBackend::Live(live) => live.complete(req),
        LlmBackend::Replay(transcript) => {
            let fp = req.fingerprint();
            transcript
                .get(&fp)
                .cloned()
                .ok_or(LlmError::ReplayMiss { fingerprint: fp })
        }
        LlmBackend::Recording(live, captured) => {
            let resp = live.complete(req)?;
            captured.lock().unwrap().insert(req, resp.clone());
            Ok(resp)
        }
    }
}

/// Outcome of a bulk recording run.
#[derive(Debug)]
pub struct RecordOutcome {
    pub transcript: Transcript,
    /// (request index, error) for every request that failed.
    pub failures: Vec<(usize, LlmError)>,
}

impl RecordOutcome {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Plays `requests` against a backend and captures every success. A partial
/// transcript (some requests failed) is flagged, not discarded.
pub fn record_transcript(backend: &LlmBackend, requests: &[ChatRequest]) -> RecordOutcome {
    let mut transcript = Transcript::new();
    let mut failures = Vec::new();
    for (i, req) in requests.iter().enumerate() {
        match complete(backend, req) {
            Ok(resp) => transcript.insert(req, resp),
            Err(err) => failures.push((i, err)),
        }
    }
    let partial = !failures.is_empty();
    transcript.meta = Some(TranscriptMeta {
        recorded_at: String::new(),
        model: requests.first().map(|r| r.model.clone()).unwrap_or_default(),
        partial,
    });
    RecordOutcome { transcript, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn request(content: &str) -> ChatRequest {
        ChatRequest::new(
            DEFAULT_MODEL,
            vec![ChatMessage::system("You select experts."), ChatMessage::user(content)],
        )
    }

    #[test]
    fn fingerprints_are_stable_and_whitespace_insensitive() {
        let a = request("pick  the experts\nfor me");
        let b = request("pick the experts for me");
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
        assert_ne!(a.fingerprint(), request("pick the other experts").fingerprint());

        // Frozen value: guards canonicalization against accidental change.
        assert_eq!(
            request("hello").fingerprint(),
            "18daf537a7df4a747356cbf334ab0c72a06d26b08bcf43665e37b814df7f3ef5"
        );
    }

    #[test]
    fn fingerprint_covers_all_fields() {
        let base = request("hello");
        let mut other = base.clone();
        other.temperature = 0.5;
        assert_ne!(base.fingerprint(), other.fingerprint());
        let mut other = base.clone();
        other.max_tokens += 1;
        assert_ne!(base.fingerprint(), other.fingerprint());
        let mut other = base.clone();
        other.model = "different".into();
        assert_ne!(base.fingerprint(), other.fingerprint());
        let mut other = base.clone();
        other.messages[1].role = Role::Assistant;
        assert_ne!(base.fingerprint(), other.fingerprint());
    }

    #[test]
    fn replay_hits_and_misses() {
        let req = request("what now?");
        let mut transcript = Transcript::new();
        transcript.insert(&req, ChatResponse::canned("do the thing"));
        let backend = LlmBackend::Replay(transcript);

        let resp = complete(&backend, &req).unwrap();
        assert_eq!(resp.content, "do the thing");

        let err = complete(&backend, &request("something else")).unwrap_err();
        assert!(matches!(err, LlmError::ReplayMiss { .. }));
    }

    #[test]
    fn transcript_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut transcript = Transcript::new();
        transcript.insert(&request("a"), ChatResponse::canned("first"));
        transcript.insert(
            &request("b"),
            ChatResponse {
                content: "second".into(),
                finish_reason: "length".into(),
                usage: Usage { prompt_tokens: 12, completion_tokens: 3, total_tokens: 15 },
            },
        );
        let path = dir.path().join("transcript.json");
        transcript.save(&path).unwrap();
        let loaded = Transcript::load(&path).unwrap();
        assert_eq!(transcript.entries(), loaded.entries());

        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(Transcript::load(&path), Err(LlmError::Corrupt(_))));
    }

    #[test]
    fn recording_empty_request_list_yields_empty_transcript() {
        let backend = LlmBackend::Replay(Transcript::new());
        let out = record_transcript(&backend, &[]);
        assert!(out.transcript.is_empty());
        assert!(!out.is_partial());
    }

    #[test]
    fn recording_flags_partial_capture() {
        let req_ok = request("known");
        let mut transcript = Transcript::new();
        transcript.insert(&req_ok, ChatResponse::canned("known answer"));
        let backend = LlmBackend::Replay(transcript);

        let out = record_transcript(&backend, &[req_ok.clone(), request("unknown")]);
        assert_eq!(out.transcript.len(), 1);
        assert!(out.is_partial());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, 1);

        // Re-recording the same request produces the same fingerprint.
        let again = record_transcript(&backend, &[req_ok.clone()]);
        assert_eq!(
            out.transcript.entries().keys().next(),
            again.transcript.entries().keys().next()
        );
    }

    /// One-shot HTTP server for exercising the live path over loopback.
    fn serve_once(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 8192];
                let mut seen = Vec::new();
                // Read until the end of headers plus whatever body fits.
                loop {
                    let n = stream.read(&mut buf).unwrap();
                    seen.extend_from_slice(&buf[..n]);
                    if n == 0 || seen.windows(4).any(|w| w == b"\r\n\r\n") {
                        break;
                    }
                }
                let reason = match status {
                    200 => "OK",
                    401 => "Unauthorized",
                    429 => "Too Many Requests",
                    _ => "Error",
                };
                let reply = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn completion_body(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 2, "total_tokens": 7}
        })
        .to_string()
    }

    fn fast_config(url: String) -> LiveConfig {
        LiveConfig {
            initial_backoff: Duration::from_millis(1),
            timeout: Duration::from_secs(5),
            ..LiveConfig::new(url, Some("test-key".into()))
        }
    }

    #[test]
    fn live_backend_happy_path() {
        let url = serve_once(vec![(200, completion_body("fused answer"))]);
        let backend = LlmBackend::live(fast_config(url)).unwrap();
        let resp = complete(&backend, &request("go")).unwrap();
        assert_eq!(resp.content, "fused answer");
        assert_eq!(resp.finish_reason, "stop");
        assert_eq!(resp.usage.total_tokens, 7);
    }

    #[test]
    fn live_backend_auth_failure_is_not_retried() {
        // A single canned 401: a retry would hang on accept, so completing
        // at all proves no retry happened.
        let url = serve_once(vec![(401, "{\"error\": \"bad key\"}".into())]);
        let backend = LlmBackend::live(fast_config(url)).unwrap();
        let err = complete(&backend, &request("go")).unwrap_err();
        assert!(matches!(err, LlmError::Auth(_)), "got {err:?}");
    }

    #[test]
    fn live_backend_retries_rate_limits() {
        let url = serve_once(vec![
            (429, "slow down".into()),
            (200, completion_body("after retry")),
        ]);
        let backend = LlmBackend::live(fast_config(url)).unwrap();
        let resp = complete(&backend, &request("go")).unwrap();
        assert_eq!(resp.content, "after retry");
    }

    #[test]
    fn recording_backend_captures_traffic() {
        let url = serve_once(vec![(200, completion_body("captured"))]);
        let backend = LlmBackend::recording(fast_config(url)).unwrap();
        let req = request("capture me");
        complete(&backend, &req).unwrap();
        let captured = backend.into_captured().unwrap();
        assert_eq!(captured.len(), 1);
        assert_eq!(captured.get(&req.fingerprint()).unwrap().content, "captured");
    }

    #[test]
    fn malformed_completion_bodies_are_parse_errors() {
        assert!(matches!(parse_completion("not json"), Err(LlmError::Parse(_))));
        assert!(matches!(
            parse_completion("{\"choices\": []}"),
            Err(LlmError::Parse(_))
        ));
        assert!(matches!(
            parse_completion("{\"choices\": [{\"message\": {}}]}"),
            Err(LlmError::Parse(_))
        ));
    }
}
