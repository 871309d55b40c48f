use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendReply, BoxFuture, ChatBackend, ChatRequest, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPlacement {
    /// The prompt is sent as the single user message.
    #[default]
    UserMessage,
    /// The prompt goes in a top-level `system` field with a short user turn.
    SystemField,
}

/// One JSON chat endpoint, described by field locations rather than code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProfile {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    #[serde(default)]
    pub extra_headers: BTreeMap<String, String>,
    #[serde(default)]
    pub prompt_placement: PromptPlacement,
    #[serde(default = "default_max_tokens_field")]
    pub max_tokens_field: String,
    /// JSON pointer to the response text.
    pub text_pointer: String,
    #[serde(default)]
    pub input_tokens_pointer: Option<String>,
    #[serde(default)]
    pub output_tokens_pointer: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "LLM_API_KEY".into()
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_prefix() -> String {
    "Bearer ".into()
}

fn default_max_tokens_field() -> String {
    "max_tokens".into()
}

fn default_timeout() -> u64 {
    300
}

const SYSTEM_FIELD_USER_TURN: &str = "Begin.";

pub struct HttpBackend {
    profile: HttpProfile,
    api_key: String,
    client: reqwest::Client,
}

impl HttpBackend {
    /// Reads the API key from the profile's environment variable.
    pub fn from_env(id: &str, profile: HttpProfile) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&profile.api_key_env).map_err(|_| GatewayError::Config {
            id: id.to_string(),
            reason: format!("environment variable {} is not set", profile.api_key_env),
        })?;
        Self::new(id, profile, api_key)
    }

    pub fn new(id: &str, profile: HttpProfile, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(profile.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config {
                id: id.to_string(),
                reason: e.to_string(),
            })?;
        Ok(HttpBackend {
            profile,
            api_key: api_key.into(),
            client,
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let p = &self.profile;
        let mut body = json!({
            "model": p.model,
            "temperature": request.temperature,
        });
        body[p.max_tokens_field.as_str()] = json!(request.max_output_tokens);
        match p.prompt_placement {
            PromptPlacement::UserMessage => {
                body["messages"] = json!([{"role": "user", "content": request.system_prompt}]);
            }
            PromptPlacement::SystemField => {
                body["system"] = json!(request.system_prompt);
                body["messages"] = json!([{"role": "user", "content": SYSTEM_FIELD_USER_TURN}]);
            }
        }
        body
    }

    fn parse_reply(&self, body: &Value) -> Result<BackendReply, BackendError> {
        let p = &self.profile;
        let text = body
            .pointer(&p.text_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Malformed(format!("no text at {}", p.text_pointer)))?
            .to_string();
        let count = |ptr: &Option<String>| ptr.as_deref().and_then(|ptr| body.pointer(ptr)).and_then(Value::as_u64);
        Ok(BackendReply {
            text,
            input_tokens: count(&p.input_tokens_pointer),
            output_tokens: count(&p.output_tokens_pointer),
        })
    }
}

/// Maps an HTTP status to the retry taxonomy.
pub(crate) fn classify_status(status: u16, body: &str) -> BackendError {
    let detail = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status {
        429 => BackendError::RateLimited(detail),
        401 | 403 => BackendError::Auth(detail),
        500..=599 | 408 => BackendError::Transport(detail),
        _ => BackendError::Content(detail),
    }
}

impl ChatBackend for HttpBackend {
    fn send<'a>(&'a self, request: &'a ChatRequest) -> BoxFuture<'a, Result<BackendReply, BackendError>> {
        Box::pin(async move {
            let p = &self.profile;
            let mut builder = self
                .client
                .post(&p.endpoint)
                .header(p.auth_header.as_str(), format!("{}{}", p.auth_prefix, self.api_key))
                .json(&self.request_body(request));
            for (k, v) in &p.extra_headers {
                builder = builder.header(k.as_str(), v.as_str());
            }
            let response = builder
                .send()
                .await
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = response.status().as_u16();
            let text = response
                .text()
                .await
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(classify_status(status, &text));
            }
            let body: Value = serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
            self.parse_reply(&body)
        })
    }
}
