//! Policy backed by an HTTP text-completion endpoint.
//!
//! The endpoint receives `{prompt, temperature, max_tokens, stop}` and must
//! reply `200` with `{"text": "..."}`. Sampling happens server-side, so the
//! caller's rng stream is not consumed. Stop sequences are the closing
//! action tags; servers that cut the completion *before* the stop string
//! leave an unclosed tag, which is repaired before parsing.

use super::{parse_action, render_prompt, Policy, PolicyError, StepDraft};
use crate::model::{AgentState, TagSet};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEndpointConfig {
    /// Full URL of the completion endpoint.
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_max_tokens() -> u32 {
    512
}

impl RemoteEndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteEndpointConfig {
            url: url.into(),
            timeout_ms: default_timeout_ms(),
            max_tokens: default_max_tokens(),
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    stop: Vec<String>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// One blocking completion call.
pub fn remote_generate(
    config: &RemoteEndpointConfig,
    prompt: &str,
    temperature: f64,
    tags: &TagSet,
) -> Result<String, PolicyError> {
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_millis(config.timeout_ms))
        .build();
    let request = CompletionRequest {
        prompt,
        temperature,
        max_tokens: config.max_tokens,
        stop: vec![tags.close(&tags.search), tags.close(&tags.answer)],
    };
    let response = agent
        .post(&config.url)
        .send_json(serde_json::to_value(&request).expect("request serializes"))
        .map_err(|err| match err {
            ureq::Error::Status(code, _) => PolicyError::RemoteStatus(code),
            ureq::Error::Transport(transport) => {
                PolicyError::RemoteTransport(transport.to_string())
            }
        })?;
    let body: CompletionResponse = response
        .into_json()
        .map_err(|err| PolicyError::RemoteSchema(err.to_string()))?;
    Ok(body.text)
}

/// Appends the matching closing tag when the completion ends inside an open
/// search or answer tag (the server consumed the stop string).
pub fn repair_stopped_text(text: &str, tags: &TagSet) -> String {
    let unclosed = [&tags.search, &tags.answer]
        .into_iter()
        .filter_map(|name| {
            let open_at = text.rfind(&tags.open(name))?;
            let after = &text[open_at..];
            if after.contains(&tags.close(name)) {
                None
            } else {
                Some((open_at, name))
            }
        })
        .min_by_key(|(open_at, _)| *open_at);
    match unclosed {
        Some((_, name)) => format!("{text}{}", tags.close(name)),
        None => text.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct RemotePolicy {
    config: RemoteEndpointConfig,
}

impl RemotePolicy {
    pub fn new(config: RemoteEndpointConfig) -> Self {
        RemotePolicy { config }
    }
}

impl Policy for RemotePolicy {
    fn generate_step(
        &self,
        state: &AgentState,
        temperature: f64,
        _rng: &mut ChaCha8Rng,
    ) -> Result<StepDraft, PolicyError> {
        let tags = &state.context.template.tags;
        let prompt = render_prompt(state);
        let raw = remote_generate(&self.config, &prompt, temperature, tags)?;
        let repaired = repair_stopped_text(&raw, tags);
        let (reasoning, action) = parse_action(&repaired, tags)?;
        Ok(StepDraft { reasoning, action })
    }
}
