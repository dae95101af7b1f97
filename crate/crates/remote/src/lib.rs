//! Remote chat-completion policy.
//!
//! Requests are `{model, temperature, messages: [{role, content}]}` and
//! responses `{content}` with an optional `usage` object. Transport errors,
//! timeouts, 429 and 5xx responses are retried with exponential backoff;
//! an unparseable answer gets one re-prompt.

mod recording;
mod throttle;

use std::sync::Arc;
use std::time::{Duration, Instant};

use choicebench_core::grid::ExperimentConfig;
use choicebench_core::policy::{
    build_prompt, parse_response, ChatMessage, Policy, PolicyError, PolicyReply, RemoteSpec, TurnContext, Usage,
};
use choicebench_core::runner::PolicyFactory;
use serde::{Deserialize, Serialize};

pub use recording::{estimate_tokens, request_key, Exchange, Recording};
pub use throttle::{Permit, Throttle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportedUsage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default)]
    pub usage: Option<ReportedUsage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub max: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_millis(500),
            max: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base.saturating_mul(1u32 << retry.min(16)).min(self.max)
    }
}

pub const REPROMPT: &str = "Your previous answer could not be interpreted";

fn reprompt_text(error: &PolicyError) -> String {
    format!(
        "{REPROMPT} ({error}). Answer again with <think>, <memory> and exactly one <action> block containing a single action from the action space."
    )
}

/// One reply from the endpoint with its accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub content: String,
    pub usage: Usage,
}

enum Failure {
    Retryable { message: String, wait: Option<Duration> },
    Fatal(String),
}

/// Blocking client for one model at one endpoint.
pub struct RemoteClient {
    spec: RemoteSpec,
    http: reqwest::blocking::Client,
    api_key: Option<String>,
    throttle: Arc<Throttle>,
    recording: Arc<Recording>,
    backoff: Backoff,
}

impl RemoteClient {
    pub fn new(spec: RemoteSpec, throttle: Arc<Throttle>, recording: Arc<Recording>) -> Result<Self, PolicyError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()
            .map_err(|e| PolicyError::Other(format!("http client: {e}")))?;
        let api_key = match &spec.api_key_env {
            Some(var) if !recording.is_replay() => Some(
                std::env::var(var).map_err(|_| PolicyError::Other(format!("environment variable {var} is not set")))?,
            ),
            _ => None,
        };
        Ok(RemoteClient {
            spec,
            http,
            api_key,
            throttle,
            recording,
            backoff: Backoff::default(),
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn spec(&self) -> &RemoteSpec {
        &self.spec
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.spec.model.clone(),
            temperature: self.spec.effective_temperature(),
            messages,
        }
    }

    /// Sends one chat request, retrying transient failures.
    pub fn complete(&self, messages: Vec<ChatMessage>) -> Result<Completion, PolicyError> {
        let request = self.request(messages);
        let key = request_key(&request);
        if self.recording.is_replay() {
            let ex = self
                .recording
                .lookup(&key)
                .ok_or_else(|| PolicyError::MissingRecording { key: key.clone() })?;
            return Ok(Completion {
                content: ex.content,
                usage: Usage {
                    requests: 1,
                    prompt_tokens: ex.prompt_tokens,
                    completion_tokens: ex.completion_tokens,
                    ..Usage::default()
                },
            });
        }

        let mut usage = Usage::default();
        let attempts = self.spec.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff.delay(attempt - 1));
            }
            let started = Instant::now();
            let outcome = {
                let _permit = self.throttle.acquire();
                self.send(&request)
            };
            usage.requests += 1;
            usage.latency_ms += started.elapsed().as_millis() as u64;
            match outcome {
                Ok(resp) => {
                    let reported = resp.usage.clone().unwrap_or_else(|| ReportedUsage {
                        prompt_tokens: recording::estimate_prompt_tokens(&request.messages),
                        completion_tokens: estimate_tokens(&resp.content),
                    });
                    usage.prompt_tokens += reported.prompt_tokens;
                    usage.completion_tokens += reported.completion_tokens;
                    let exchange = Exchange {
                        key,
                        request,
                        content: resp.content.clone(),
                        prompt_tokens: reported.prompt_tokens,
                        completion_tokens: reported.completion_tokens,
                    };
                    if let Err(e) = self.recording.store(&exchange) {
                        tracing::warn!(error = %e, "could not record exchange");
                    }
                    return Ok(Completion {
                        content: resp.content,
                        usage,
                    });
                }
                Err(Failure::Fatal(message)) => {
                    return Err(PolicyError::Exhausted {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(Failure::Retryable { message, wait }) => {
                    tracing::debug!(attempt, %message, "retrying request");
                    if let Some(w) = wait {
                        std::thread::sleep(w.min(self.backoff.max));
                    }
                    last = message;
                }
            }
        }
        Err(PolicyError::Exhausted {
            attempts,
            message: last,
        })
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, Failure> {
        let mut builder = self.http.post(&self.spec.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| Failure::Retryable {
            message: if e.is_timeout() { format!("timeout: {e}") } else { format!("transport: {e}") },
            wait: None,
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            let wait = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(Failure::Retryable {
                message: format!("status {status}"),
                wait,
            });
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(format!("status {status}: {}", body.chars().take(200).collect::<String>())));
        }
        resp.json::<ChatResponse>()
            .map_err(|e| Failure::Retryable {
                message: format!("bad response body: {e}"),
                wait: None,
            })
    }
}

/// [`Policy`] backed by a [`RemoteClient`].
pub struct RemotePolicy {
    client: Arc<RemoteClient>,
}

impl RemotePolicy {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        RemotePolicy { client }
    }
}

impl Policy for RemotePolicy {
    fn act(&mut self, ctx: &TurnContext<'_>) -> Result<PolicyReply, PolicyError> {
        let mut messages = build_prompt(ctx);
        let first = self.client.complete(messages.clone())?;
        let mut usage = first.usage;
        let error = match parse_response(&first.content) {
            Ok(turn) => return Ok(PolicyReply { turn, usage }),
            Err(e) => PolicyError::Parse(e),
        };
        messages.push(ChatMessage {
            role: "assistant".into(),
            content: first.content,
        });
        messages.push(ChatMessage {
            role: "user".into(),
            content: reprompt_text(&error),
        });
        let second = self.client.complete(messages)?;
        usage.add(&second.usage);
        usage.reprompts += 1;
        let turn = parse_response(&second.content)?;
        Ok(PolicyReply { turn, usage })
    }
}

pub struct RemoteFactory {
    pub client: Arc<RemoteClient>,
}

impl PolicyFactory for RemoteFactory {
    fn create(&self, _config: &ExperimentConfig) -> Box<dyn Policy> {
        Box::new(RemotePolicy::new(self.client.clone()))
    }
}
