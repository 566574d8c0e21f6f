//! Chat-completion backends: remote HTTP endpoint, local command bridge,
//! prompt export for manual use, and a deterministic offline mock.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::prompt::{self, tags, AssembledPrompt};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_TOKEN_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_MAX_TOKENS: u32 = 4096;
pub const DEFAULT_BATCH_SIZE: usize = 8;

/// Interface stub the mock backend returns in `<fsource>`.
pub const MOCK_FSOURCE: &str = "\
module scribe_mock_fi
  use iso_c_binding
  implicit none
end module scribe_mock_fi";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Remote,
    Local,
    Export,
    Mock,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Remote => "remote",
            BackendKind::Local => "local",
            BackendKind::Export => "export",
            BackendKind::Mock => "mock",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Extra attempts after the first one.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay_ms: 500 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << retry.min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub max_tokens: u32,
    pub batch_size: usize,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    /// Environment variable holding the bearer token.
    pub auth_token_env_var: Option<String>,
    /// Local bridge argv; `{model}` and `{max_tokens}` are substituted.
    pub command: Vec<String>,
    /// Export target: a `.json` file, or a directory for `<stem>.prompt.json`.
    pub export_path: Option<PathBuf>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint_url: Some(DEFAULT_ENDPOINT.to_owned()),
            model_name: DEFAULT_MODEL.to_owned(),
            max_tokens: DEFAULT_MAX_TOKENS,
            batch_size: DEFAULT_BATCH_SIZE,
            temperature: None,
            top_p: None,
            auth_token_env_var: Some(DEFAULT_TOKEN_ENV.to_owned()),
            command: Vec::new(),
            export_path: None,
            timeout_secs: 600,
            retry: RetryPolicy::default(),
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self { kind: BackendKind::Mock, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_tokens == 0 {
            return fail("max_tokens must be greater than 0".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if let Some(t) = self.temperature.filter(|t| !(0.0..=2.0).contains(t)) {
            return fail(format!("temperature {t} is outside 0..=2"));
        }
        if let Some(p) = self.top_p.filter(|p| !(*p > 0.0 && *p <= 1.0)) {
            return fail(format!("top_p {p} is outside (0, 1]"));
        }
        match self.kind {
            BackendKind::Remote if self.endpoint_url.as_deref().is_none_or(str::is_empty) => {
                fail("the remote backend requires endpoint_url".into())
            }
            BackendKind::Local if self.command.is_empty() => {
                fail("the local backend requires a command (argv list)".into())
            }
            BackendKind::Export if self.export_path.is_none() => {
                fail("the export backend requires an export path (--export)".into())
            }
            _ => Ok(()),
        }
    }

    /// Where the export backend writes the prompt for `source_file`.
    pub fn export_target(&self, source_file: &Path) -> Option<PathBuf> {
        let base = self.export_path.as_ref()?;
        if base.extension().is_some_and(|e| e == "json") {
            return Some(base.clone());
        }
        let stem = source_file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Some(base.join(format!("{stem}.prompt.json")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Truncated,
    Error,
}

impl FinishReason {
    fn from_wire(reason: Option<&str>) -> FinishReason {
        match reason {
            Some("length") => FinishReason::Truncated,
            Some("content_filter") => FinishReason::Error,
            _ => FinishReason::Complete,
        }
    }
}

impl fmt::Display for FinishReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinishReason::Complete => "complete",
            FinishReason::Truncated => "truncated",
            FinishReason::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResponse {
    pub text: String,
    pub backend: BackendKind,
    pub model_name: String,
    pub finish_reason: FinishReason,
    /// Set by the export backend: the written prompt file.
    pub exported_to: Option<PathBuf>,
    /// Retries consumed before this response.
    pub retries: u32,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request to {endpoint} failed after {attempts} attempt(s): {message}")]
    Transport { endpoint: String, attempts: u32, message: String },

    #[error("{endpoint} answered HTTP {status} after {attempts} attempt(s): {body}")]
    Status { endpoint: String, status: u16, attempts: u32, body: String },

    #[error("{endpoint} rejected the credentials (HTTP {status}); check the token in ${env_var}")]
    Auth { endpoint: String, status: u16, env_var: String },

    #[error("malformed response from {endpoint}: {message}")]
    MalformedResponse { endpoint: String, message: String },

    #[error("local model command `{program}` failed: {message}")]
    Command { program: String, message: String },

    #[error("cannot export prompt to {}: {message}", path.display())]
    Export { path: PathBuf, message: String },
}

/// Keeps error bodies readable in diagnostics.
fn clip(text: &str) -> String {
    const LIMIT: usize = 400;
    let text = text.trim();
    match text.char_indices().nth(LIMIT) {
        Some((at, _)) => format!("{}…", &text[..at]),
        None => text.to_owned(),
    }
}

/// One configured backend; holds the HTTP client shared across a batch.
struct Backend<'a> {
    cfg: &'a BackendConfig,
    client: Option<reqwest::blocking::Client>,
}

impl<'a> Backend<'a> {
    fn new(cfg: &'a BackendConfig) -> std::result::Result<Self, BackendError> {
        let client = match cfg.kind {
            BackendKind::Remote => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(cfg.timeout_secs))
                    .build()
                    .map_err(|e| BackendError::Transport {
                        endpoint: cfg.endpoint_url.clone().unwrap_or_default(),
                        attempts: 0,
                        message: e.to_string(),
                    })?,
            ),
            _ => None,
        };
        Ok(Self { cfg, client })
    }

    fn complete(&self, prompt: &AssembledPrompt) -> std::result::Result<CompletionResponse, BackendError> {
        let cfg = self.cfg;
        let response = |text: String, finish_reason, retries| CompletionResponse {
            text,
            backend: cfg.kind,
            model_name: cfg.model_name.clone(),
            finish_reason,
            exported_to: None,
            retries,
        };
        match cfg.kind {
            BackendKind::Remote => self.remote(prompt),
            BackendKind::Local => local(cfg, prompt).map(|text| response(text, FinishReason::Complete, 0)),
            BackendKind::Mock => Ok(response(mock_reply(prompt), FinishReason::Complete, 0)),
            BackendKind::Export => {
                let path = cfg.export_target(&prompt.source_file).ok_or_else(|| BackendError::Export {
                    path: PathBuf::new(),
                    message: "no export path configured".into(),
                })?;
                prompt::export_json(prompt, &path)
                    .map_err(|e| BackendError::Export { path: path.clone(), message: e.to_string() })?;
                let text = format!(
                    "prompt exported to {}; paste the model reply into a file and run \
                     `scribe translate --resume <reply-file> {}`",
                    path.display(),
                    prompt.source_file.display()
                );
                Ok(CompletionResponse { exported_to: Some(path), ..response(text, FinishReason::Complete, 0) })
            }
        }
    }

    fn remote(&self, prompt: &AssembledPrompt) -> std::result::Result<CompletionResponse, BackendError> {
        let cfg = self.cfg;
        let client = self.client.as_ref().expect("remote client");
        let endpoint = cfg.endpoint_url.clone().unwrap_or_default();
        let body = request_body(cfg, prompt);
        let token = cfg.auth_token_env_var.as_deref().and_then(|var| std::env::var(var).ok());

        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            let mut req = client.post(&endpoint).json(&body);
            if let Some(token) = &token {
                req = req.bearer_auth(token);
            }
            let retryable = match req.send() {
                Err(e) => BackendError::Transport {
                    endpoint: endpoint.clone(),
                    attempts: attempt,
                    message: e.to_string(),
                },
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp.text().map_err(|e| BackendError::MalformedResponse {
                            endpoint: endpoint.clone(),
                            message: e.to_string(),
                        })?;
                        let (content, reason) = parse_completion(&text).map_err(|message| {
                            BackendError::MalformedResponse { endpoint: endpoint.clone(), message }
                        })?;
                        return Ok(CompletionResponse {
                            text: content,
                            backend: cfg.kind,
                            model_name: cfg.model_name.clone(),
                            finish_reason: reason,
                            exported_to: None,
                            retries: attempt - 1,
                        });
                    }
                    let code = status.as_u16();
                    if code == 401 || code == 403 {
                        return Err(BackendError::Auth {
                            endpoint,
                            status: code,
                            env_var: cfg.auth_token_env_var.clone().unwrap_or_default(),
                        });
                    }
                    let err = BackendError::Status {
                        endpoint: endpoint.clone(),
                        status: code,
                        attempts: attempt,
                        body: clip(&resp.text().unwrap_or_default()),
                    };
                    if code != 429 && !status.is_server_error() {
                        return Err(err);
                    }
                    err
                }
            };
            if attempt > cfg.retry.max_retries {
                return Err(retryable);
            }
            thread::sleep(cfg.retry.delay(attempt - 1));
        }
    }
}

/// `{model, messages, max_tokens, temperature?, top_p?}`
pub fn request_body(cfg: &BackendConfig, prompt: &AssembledPrompt) -> Value {
    let mut body = json!({
        "model": cfg.model_name,
        "messages": prompt.messages,
        "max_tokens": cfg.max_tokens,
    });
    if let Some(t) = cfg.temperature {
        body["temperature"] = json!(t);
    }
    if let Some(p) = cfg.top_p {
        body["top_p"] = json!(p);
    }
    body
}

/// Text and finish reason of the first choice.
pub fn parse_completion(body: &str) -> std::result::Result<(String, FinishReason), String> {
    let value: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or("response has no choices[0]")?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or("choices[0].message.content is missing or not a string")?;
    let reason = choice.get("finish_reason").and_then(Value::as_str);
    Ok((content.to_owned(), FinishReason::from_wire(reason)))
}

fn local(cfg: &BackendConfig, prompt: &AssembledPrompt) -> std::result::Result<String, BackendError> {
    let argv: Vec<String> = cfg
        .command
        .iter()
        .map(|a| a.replace("{model}", &cfg.model_name).replace("{max_tokens}", &cfg.max_tokens.to_string()))
        .collect();
    let program = argv.first().cloned().unwrap_or_default();
    let fail = |message: String| BackendError::Command { program: program.clone(), message };
    let mut child = Command::new(&program)
        .args(&argv[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(e.to_string()))?;
    let input = prompt.to_json();
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = thread::spawn(move || stdin.write_all(input.as_bytes()));
    let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
    // A bridge that exits without reading its input is not an error by itself.
    let _ = writer.join();
    if !output.status.success() {
        return Err(fail(format!("{}: {}", output.status, clip(&String::from_utf8_lossy(&output.stderr)))));
    }
    String::from_utf8(output.stdout).map_err(|_| fail("output is not valid UTF-8".into()))
}

/// Deterministic reply. Translate prompts get their draft back as
/// `<csource>` plus [`MOCK_FSOURCE`]; other prompts get `mock response`
/// followed by the prompt's `<context>` block.
pub fn mock_reply(prompt: &AssembledPrompt) -> String {
    let payload = prompt.payload();
    if let Some(draft) = tags::blocks(payload, tags::DRAFT).first() {
        return format!("{}\n{}\n", tags::wrap(tags::CSOURCE, draft), tags::wrap(tags::FSOURCE, MOCK_FSOURCE));
    }
    match tags::blocks(payload, tags::CONTEXT).first() {
        Some(context) => format!("mock response\n{}\n", tags::wrap(tags::CONTEXT, context)),
        None => "mock response\n".to_owned(),
    }
}

/// Sends one prompt to the configured backend.
pub fn complete(prompt: &AssembledPrompt, cfg: &BackendConfig) -> std::result::Result<CompletionResponse, BackendError> {
    Backend::new(cfg)?.complete(prompt)
}

/// Completes every prompt with at most `cfg.batch_size` requests in flight.
/// Output `i` belongs to prompt `i`; a failure affects only its own slot.
pub fn complete_batch(
    prompts: &[AssembledPrompt],
    cfg: &BackendConfig,
) -> Vec<std::result::Result<CompletionResponse, BackendError>> {
    let backend = match Backend::new(cfg) {
        Ok(b) => b,
        Err(e) => {
            let message = e.to_string();
            let endpoint = cfg.endpoint_url.clone().unwrap_or_default();
            return prompts
                .iter()
                .map(|_| Err(BackendError::Transport { endpoint: endpoint.clone(), attempts: 0, message: message.clone() }))
                .collect();
        }
    };
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<std::result::Result<CompletionResponse, BackendError>>>> =
        Mutex::new((0..prompts.len()).map(|_| None).collect());
    let workers = cfg.batch_size.max(1).min(prompts.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(prompt) = prompts.get(i) else { break };
                let result = backend.complete(prompt);
                slots.lock().expect("batch slots")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("batch slots")
        .into_iter()
        .map(|r| r.expect("every prompt completed"))
        .collect()
}
