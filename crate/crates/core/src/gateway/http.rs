//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, ChatRequest, ChatResponse, Tokenizer, DEFAULT_CONTEXT_LIMIT};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "DDRILL_API_KEY";

pub struct OpenAiBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    context_limit: usize,
    tokenizer: Tokenizer,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize, Serialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl OpenAiBackend {
    /// `base_url` is the server root, e.g. `https://api.openai.com`.
    /// The API key is read from [`API_KEY_ENV`].
    pub fn new(base_url: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build();
        OpenAiBackend {
            agent: config.into(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            context_limit: DEFAULT_CONTEXT_LIMIT,
            tokenizer: Tokenizer::Default,
        }
    }

    pub fn with_context_limit(mut self, limit: usize) -> Self {
        self.context_limit = limit;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    pub fn request_body(req: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.user}));
        json!({
            "model": req.model_tag,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        })
    }
}

impl Backend for OpenAiBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut call = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(Self::request_body(req))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Other(format!("HTTP {status}: {body}")));
        }
        let wire: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Other(format!("malformed response: {e}")))?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Other("response has no choices".into()))?;
        let (prompt_tokens, completion_tokens) = match wire.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                req.prompt_tokens(self.tokenizer) as u64,
                self.tokenizer.count(&text) as u64,
            ),
        };
        Ok(ChatResponse {
            text,
            prompt_tokens,
            completion_tokens,
        })
    }

    fn context_limit(&self) -> usize {
        self.context_limit
    }
}
