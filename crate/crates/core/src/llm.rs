//! Remote policy and reward backends over a chat-completions HTTP API.
//!
//! Prompts are rendered from template files shipped in `templates/`; the
//! memory digest is verbalized into them (hints best-first, blocklist as
//! forbidden patterns). Responses are parsed tolerantly: candidate steps
//! from `STEP:` lines, reward classes by scanning for exactly one of the
//! five class names. Blocklisted candidates are filtered locally even if the
//! model emits them. Requests retry with exponential backoff and in-flight
//! calls are capped at `max_parallel`.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::backend::{BackendError, PolicyBackend};
use crate::memory::MemoryDigest;
use crate::prm::{PrmBackend, PrmScore, ValueClass, ALL_CLASSES};
use crate::tasks::Problem;

/// Marker a remote policy uses inside a step to finish a trajectory.
pub const ANSWER_MARKER: &str = "ANSWER:";

fn default_timeout_secs() -> u64 {
    30
}
fn default_max_retries() -> u32 {
    2
}
fn default_max_parallel() -> usize {
    4
}
fn default_max_tokens() -> u32 {
    256
}
fn default_retry_base_ms() -> u64 {
    200
}

/// Connection settings for one endpoint. Only the *name* of the API-key
/// environment variable is stored, so serializing a config never leaks a
/// secret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token; empty means the
    /// endpoint is unauthenticated.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let fail = |msg: String| Err(BackendError::IllegalInput(msg));
        if self.base_url.is_empty() {
            return fail("base_url must not be empty".into());
        }
        if self.model_name.is_empty() {
            return fail("model_name must not be empty".into());
        }
        if self.max_retries > 5 {
            return fail(format!("max_retries {} exceeds 5", self.max_retries));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature {} must be >= 0", self.temperature));
        }
        if self.max_parallel == 0 {
            return fail("max_parallel must be >= 1".into());
        }
        if self.timeout_secs == 0 {
            return fail("timeout_secs must be >= 1".into());
        }
        Ok(())
    }
}

/// The four prompt templates. `{{placeholders}}` are substituted at render
/// time; the built-in set is compiled in from `templates/` so the files and
/// the binary cannot drift apart.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub propose_system: String,
    pub propose_user: String,
    pub score_system: String,
    pub score_user: String,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            propose_system: include_str!("../templates/propose_system.txt").to_string(),
            propose_user: include_str!("../templates/propose_user.txt").to_string(),
            score_system: include_str!("../templates/score_system.txt").to_string(),
            score_user: include_str!("../templates/score_user.txt").to_string(),
        }
    }

    /// Loads the four template files from a directory, for prompt iteration
    /// without recompiling.
    pub fn load_dir(dir: &Path) -> Result<Self, BackendError> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| {
                BackendError::IllegalInput(format!("template {name} under {}: {e}", dir.display()))
            })
        };
        Ok(TemplateSet {
            propose_system: read("propose_system.txt")?,
            propose_user: read("propose_user.txt")?,
            score_system: read("score_system.txt")?,
            score_user: read("score_user.txt")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedFormat {
    StepList,
    ClassLabel,
}

/// A fully rendered prompt; a pure function of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub expected_format: ExpectedFormat,
}

fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    out
}

fn render_prefix(prefix: &[String]) -> String {
    if prefix.is_empty() {
        return "(none yet)".to_string();
    }
    prefix
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_list<'a>(items: impl Iterator<Item = &'a String>) -> String {
    let lines: Vec<String> = items.map(|s| format!("- {s}")).collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Renders the candidate-generation prompt. Hints keep their digest order
/// (value-descending); the blocklist renders in sorted key order.
pub fn render_propose_prompt(
    templates: &TemplateSet,
    problem: &Problem,
    prefix: &[String],
    digest: &MemoryDigest,
    max: usize,
) -> PromptBundle {
    let prefix_text = render_prefix(prefix);
    let hints = render_list(digest.heuristic_hints.iter());
    let blocklist = render_list(digest.fallacy_blocklist.iter());
    let max_text = max.to_string();
    PromptBundle {
        system_text: templates.propose_system.clone(),
        user_text: substitute(
            &templates.propose_user,
            &[
                ("statement", &problem.statement),
                ("prefix", &prefix_text),
                ("hints", &hints),
                ("blocklist", &blocklist),
                ("max", &max_text),
            ],
        ),
        expected_format: ExpectedFormat::StepList,
    }
}

/// Renders the class-scoring prompt.
pub fn render_score_prompt(
    templates: &TemplateSet,
    problem: &Problem,
    prefix: &[String],
    candidate: &str,
) -> PromptBundle {
    let prefix_text = render_prefix(prefix);
    PromptBundle {
        system_text: templates.score_system.clone(),
        user_text: substitute(
            &templates.score_user,
            &[
                ("statement", &problem.statement),
                ("prefix", &prefix_text),
                ("candidate", candidate),
            ],
        ),
        expected_format: ExpectedFormat::ClassLabel,
    }
}

/// Extracts up to `max` step payloads from `STEP:`-prefixed lines,
/// ignoring surrounding prose. No parseable step is a parse error carrying
/// the raw body.
pub fn parse_steps(content: &str, max: usize) -> Result<Vec<String>, BackendError> {
    let mut steps = Vec::new();
    for line in content.lines() {
        let line = line.trim().trim_start_matches(['-', '*', ' ']);
        if let Some(rest) = line.strip_prefix("STEP:") {
            let step = rest.trim();
            if !step.is_empty() && !steps.iter().any(|s| s == step) {
                steps.push(step.to_string());
                if steps.len() == max {
                    break;
                }
            }
        }
    }
    if steps.is_empty() {
        return Err(BackendError::Parse {
            message: "no STEP: lines in response".into(),
            raw: content.to_string(),
        });
    }
    Ok(steps)
}

/// Finds exactly one of the five class names (case-insensitive, whole-word).
/// Zero or several distinct names is a classification-parse error.
pub fn parse_class(content: &str) -> Result<ValueClass, BackendError> {
    let mut found: Option<ValueClass> = None;
    for word in content.split(|c: char| !c.is_ascii_alphabetic()) {
        for class in ALL_CLASSES {
            if word.eq_ignore_ascii_case(class.as_str()) {
                match found {
                    None => found = Some(class),
                    Some(existing) if existing == class => {}
                    Some(_) => {
                        return Err(BackendError::ClassParse {
                            raw: content.to_string(),
                        })
                    }
                }
            }
        }
    }
    found.ok_or_else(|| BackendError::ClassParse {
        raw: content.to_string(),
    })
}

/// Replaces bearer tokens in captured request text so fixtures and logs
/// never hold secrets.
pub fn redact_bearer(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(idx) = rest.find("Bearer ") {
        let (head, tail) = rest.split_at(idx + "Bearer ".len());
        out.push_str(head);
        out.push_str("[REDACTED]");
        let end = tail
            .find(|c: char| c.is_whitespace())
            .unwrap_or(tail.len());
        rest = &tail[end..];
    }
    out.push_str(rest);
    out
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Builds the request body bytes for one prompt; exposed so wire tests can
/// pin them against golden fixtures.
pub fn request_body(cfg: &EndpointConfig, bundle: &PromptBundle) -> Vec<u8> {
    let request = ChatRequest {
        model: &cfg.model_name,
        messages: vec![
            ChatMessage {
                role: "system",
                content: &bundle.system_text,
            },
            ChatMessage {
                role: "user",
                content: &bundle.user_text,
            },
        ],
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
    };
    serde_json::to_vec(&request).expect("request serialization cannot fail")
}

/// Counting gate bounding concurrent in-flight requests.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().expect("gate lock poisoned");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("gate lock poisoned");
        }
        *permits -= 1;
        GatePermit { gate: self }
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().expect("gate lock poisoned");
        *permits += 1;
        self.gate.cv.notify_one();
    }
}

/// Blocking chat-completions client shared across rollout workers.
pub struct LlmClient {
    cfg: EndpointConfig,
    templates: TemplateSet,
    http: reqwest::blocking::Client,
    gate: Gate,
}

impl LlmClient {
    pub fn new(cfg: EndpointConfig, templates: TemplateSet) -> Result<Self, BackendError> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let gate = Gate::new(cfg.max_parallel);
        Ok(LlmClient {
            cfg,
            templates,
            http,
            gate,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn bearer_token(&self) -> Result<Option<String>, BackendError> {
        if self.cfg.api_key_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.cfg.api_key_env) {
            Ok(token) => Ok(Some(token)),
            Err(_) => Err(BackendError::Transport(format!(
                "api key environment variable {} is not set",
                self.cfg.api_key_env
            ))),
        }
    }

    /// Sends one prompt, retrying transport errors and non-2xx statuses with
    /// exponential backoff; at most `max_retries + 1` attempts.
    pub fn chat(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        let _permit = self.gate.acquire();
        let token = self.bearer_token()?;
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = request_body(&self.cfg, bundle);

        let mut last_error = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = self.cfg.retry_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut request = self
                .http
                .post(&url)
                .header("Content-Type", "application/json")
                .body(body.clone());
            if let Some(token) = &token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Err(e) => last_error = format!("transport: {e}"),
                Ok(response) => {
                    let status = response.status();
                    let text = response
                        .text()
                        .map_err(|e| BackendError::Transport(e.to_string()))?;
                    if status.is_success() {
                        return extract_content(&text);
                    }
                    last_error = format!("http status {status}: {}", truncate(&text, 200));
                }
            }
        }
        Err(BackendError::Transport(format!(
            "{} attempts failed, last error: {last_error}",
            self.cfg.max_retries + 1
        )))
    }

    /// Candidate generation with local blocklist filtering on top of
    /// whatever the model chose to respect.
    pub fn generate_candidates(
        &self,
        problem: &Problem,
        prefix: &[String],
        digest: &MemoryDigest,
        n: usize,
    ) -> Result<Vec<String>, BackendError> {
        let bundle = render_propose_prompt(&self.templates, problem, prefix, digest, n);
        let content = self.chat(&bundle)?;
        let steps = parse_steps(&content, n)?;
        Ok(steps
            .into_iter()
            .filter(|s| !digest.is_blocked(s))
            .collect())
    }

    /// Prompted five-class scoring.
    pub fn score_class(
        &self,
        problem: &Problem,
        prefix: &[String],
        candidate: &str,
    ) -> Result<ValueClass, BackendError> {
        let bundle = render_score_prompt(&self.templates, problem, prefix, candidate);
        let content = self.chat(&bundle)?;
        parse_class(&content)
    }
}

fn extract_content(body: &str) -> Result<String, BackendError> {
    let parsed: ChatResponse = serde_json::from_str(body).map_err(|e| BackendError::Parse {
        message: format!("malformed chat response: {e}"),
        raw: body.to_string(),
    })?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| BackendError::Parse {
            message: "chat response has no choices".into(),
            raw: body.to_string(),
        })
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

/// Policy adapter: a step containing `ANSWER:` finishes the trajectory.
pub struct RemotePolicy {
    client: Arc<LlmClient>,
}

impl RemotePolicy {
    pub fn new(client: Arc<LlmClient>) -> Self {
        RemotePolicy { client }
    }
}

impl PolicyBackend for RemotePolicy {
    fn propose(
        &self,
        problem: &Problem,
        prefix: &[String],
        digest: &MemoryDigest,
        max: usize,
    ) -> Result<Vec<String>, BackendError> {
        self.client.generate_candidates(problem, prefix, digest, max)
    }

    fn is_terminal(&self, _problem: &Problem, prefix: &[String]) -> Result<bool, BackendError> {
        Ok(prefix
            .last()
            .is_some_and(|step| step.contains(ANSWER_MARKER)))
    }

    fn extract_answer(&self, _problem: &Problem, prefix: &[String]) -> Option<String> {
        let last = prefix.last()?;
        let idx = last.find(ANSWER_MARKER)?;
        let answer = last[idx + ANSWER_MARKER.len()..].trim();
        (!answer.is_empty()).then(|| answer.to_string())
    }
}

/// Reward adapter. An ambiguous class reply falls back to `Fair` (logged)
/// instead of aborting the rollout; transport errors still surface.
pub struct RemotePrm {
    client: Arc<LlmClient>,
}

impl RemotePrm {
    pub fn new(client: Arc<LlmClient>) -> Self {
        RemotePrm { client }
    }
}

impl PrmBackend for RemotePrm {
    fn score(
        &self,
        problem: &Problem,
        prefix: &[String],
        candidate: &str,
    ) -> Result<PrmScore, BackendError> {
        let class = match self.client.score_class(problem, prefix, candidate) {
            Ok(class) => class,
            Err(BackendError::ClassParse { raw }) => {
                log::warn!(
                    "ambiguous class reply for candidate {candidate:?}, falling back to Fair: {}",
                    truncate(&raw, 120)
                );
                ValueClass::Fair
            }
            Err(other) => return Err(other),
        };
        Ok(PrmScore::from_class(class))
    }
}
