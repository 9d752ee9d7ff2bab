//! OpenAI-compatible `/chat/completions` client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{
    estimate_tokens, BackendKey, BackendKind, CallKey, ChatBackend, ChatMessage, Completion,
    LlmError, Limits, Usage,
};
use crate::sync::Semaphore;

const MAX_TRANSPORT_RETRIES: u32 = 2;
const BACKOFF_BASE: Duration = Duration::from_millis(500);

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    max_tokens: u32,
    temperature: f32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Debug, Deserialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    #[serde(default)]
    message: String,
    #[serde(default)]
    code: Option<serde_json::Value>,
}

pub struct RemoteBackend {
    url: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
}

impl RemoteBackend {
    /// Reads the API key from `credentials_env`; fails without touching the
    /// network if it is unset or empty.
    pub fn new(
        endpoint: &str,
        model: &str,
        credentials_env: &str,
        max_in_flight: usize,
    ) -> Result<Self, LlmError> {
        if credentials_env.is_empty() {
            return Err(LlmError::Config("remote backend needs a credentials variable name".into()));
        }
        let api_key = std::env::var(credentials_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| {
                LlmError::Config(format!("credentials variable `{credentials_env}` is not set"))
            })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            client,
            in_flight: Semaphore::new(max_in_flight),
        })
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<Completion, LlmError> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| LlmError::Transport { attempts: 1, message: e.to_string() })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| LlmError::Transport { attempts: 1, message: e.to_string() })?;

        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LlmError::Transport { attempts: 1, message: format!("HTTP {status}: {text}") });
        }
        if !status.is_success() {
            if let Ok(env) = serde_json::from_str::<ErrorEnvelope>(&text) {
                let code = env.error.code.map(|c| c.to_string()).unwrap_or_default();
                if code.contains("context_length_exceeded") || env.error.message.contains("maximum context length") {
                    return Err(LlmError::Overflow(env.error.message));
                }
                return Err(LlmError::Api(format!("HTTP {status}: {}", env.error.message)));
            }
            return Err(LlmError::Api(format!("HTTP {status}: {text}")));
        }

        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::BadResponse("no choices in response".into()))?;
        if choice.finish_reason.as_deref() == Some("length") {
            return Err(LlmError::Overflow(format!("completion truncated at max_tokens={}", body.max_tokens)));
        }
        let content = choice.message.content.unwrap_or_default();
        let usage = match parsed.usage {
            Some(u) => Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens },
            None => Usage {
                prompt_tokens: body.messages.iter().map(|m| estimate_tokens(&m.content)).sum(),
                completion_tokens: estimate_tokens(&content),
            },
        };
        Ok(Completion { text: content, usage })
    }
}

impl ChatBackend for RemoteBackend {
    fn key(&self) -> BackendKey {
        BackendKey { kind: BackendKind::Remote, model: self.model.clone() }
    }

    fn complete(
        &self,
        call: &CallKey,
        messages: &[ChatMessage],
        limits: &Limits,
    ) -> Result<Completion, LlmError> {
        let _permit = self.in_flight.acquire();
        let body = ChatRequest {
            model: &self.model,
            messages,
            max_tokens: limits.max_tokens,
            temperature: limits.temperature,
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            debug!(%call, attempts, "chat completion request");
            match self.attempt(&body) {
                Err(LlmError::Transport { message, .. }) if attempts <= MAX_TRANSPORT_RETRIES => {
                    let wait = BACKOFF_BASE * 2u32.pow(attempts - 1);
                    warn!(%call, %message, ?wait, "transport error, retrying");
                    std::thread::sleep(wait);
                }
                Err(LlmError::Transport { message, .. }) => {
                    return Err(LlmError::Transport { attempts, message })
                }
                other => return other,
            }
        }
    }
}
