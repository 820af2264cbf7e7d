//! A language-model strategist behind a chat-completions endpoint.
//!
//! The endpoint is configured from the environment:
//!
//! | variable               | meaning                        |
//! |------------------------|--------------------------------|
//! | `CHIMERA_LLM_URL`      | full chat-completions URL      |
//! | `CHIMERA_LLM_API_KEY`  | bearer token                   |
//! | `CHIMERA_LLM_MODEL`    | model name                     |
//!
//! Proposals come back as `check_business_rules` / `estimate_profit_impact`
//! tool calls (or a JSON body with the same fields). A malformed reply is
//! re-prompted once; after that, or on any transport failure, the strategist
//! falls back to the scripted neutral strategist and logs the event to the
//! transcript.

mod prompt;
mod strategist;
mod transcript;
mod transport;

use std::time::Duration;

use thiserror::Error;

pub use prompt::{system_prompt, tool_specs, TOOL_CHECK, TOOL_ESTIMATE};
pub use strategist::{parse_choice, parse_proposals, LlmStrategist};
pub use transcript::Transcript;
pub use transport::{
    ChatRequest, ChatResponse, ChatTransport, FixtureTransport, FunctionCall, HttpTransport,
    Message, ToolCall,
};

pub const ENV_URL: &str = "CHIMERA_LLM_URL";
pub const ENV_API_KEY: &str = "CHIMERA_LLM_API_KEY";
pub const ENV_MODEL: &str = "CHIMERA_LLM_MODEL";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("http error: {0}")]
    Http(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed model reply: {0}")]
    Malformed(String),
    #[error("fixture transport has no replies left")]
    FixtureExhausted,
    #[error("transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub url: String,
    pub api_key: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    /// Requests in flight across every strategist sharing a transport.
    pub max_concurrent: usize,
}

impl LlmConfig {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: api_key.into(),
            model: model.into(),
            temperature: 0.9,
            max_tokens: 1000,
            timeout: Duration::from_secs(60),
            max_concurrent: 4,
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Like [`LlmConfig::from_env`] with an injectable lookup.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, LlmError> {
        let need = |k: &'static str| {
            get(k)
                .filter(|v| !v.trim().is_empty())
                .ok_or(LlmError::MissingEnv(k))
        };
        Ok(Self::new(need(ENV_URL)?, need(ENV_API_KEY)?, need(ENV_MODEL)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn missing_variables_are_named() {
        let mut env = HashMap::new();
        let err = LlmConfig::from_lookup(|k| env.get(k).cloned()).unwrap_err();
        assert_eq!(err.to_string(), "environment variable CHIMERA_LLM_URL is not set");
        env.insert(ENV_URL, "http://localhost:1/v1/chat/completions".to_string());
        env.insert(ENV_API_KEY, "k".to_string());
        let err = LlmConfig::from_lookup(|k| env.get(k).cloned()).unwrap_err();
        assert!(matches!(err, LlmError::MissingEnv(ENV_MODEL)));
        env.insert(ENV_MODEL, "m".to_string());
        let cfg = LlmConfig::from_lookup(|k| env.get(k).cloned()).unwrap();
        assert_eq!((cfg.temperature, cfg.max_tokens), (0.9, 1000));
    }
}
