//! Chat-completion client for externally written justifications.

use std::time::Duration;

use congait_core::justify::{ChatRequest, ClientError, JustificationClient};
use serde_json::Value;

use crate::config::LlmConfig;

/// Posts `{model, messages}` and reads `choices[0].message.content`.
pub struct HttpChatClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    retries: u32,
}

impl HttpChatClient {
    pub fn new(config: &LlmConfig) -> Self {
        Self::with_timeout(config, config.timeout())
    }

    pub fn with_timeout(config: &LlmConfig, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpChatClient {
            agent,
            url: config.url.clone(),
            model: config.model.clone(),
            api_key: config.api_key.clone(),
            retries: config.retries,
        }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(request).map_err(map_error)?;
        let body: Value = response.body_mut().read_json().map_err(map_error)?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ClientError::BadResponse("missing choices[0].message.content".into()))
    }
}

fn map_error(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::Timeout(_) => ClientError::Timeout,
        ureq::Error::StatusCode(code) => ClientError::BadResponse(format!("HTTP {code}")),
        ureq::Error::Json(e) => ClientError::BadResponse(e.to_string()),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => ClientError::Timeout,
        other => ClientError::Transport(other.to_string()),
    }
}

impl JustificationClient for HttpChatClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let mut last = self.attempt(request);
        for _ in 0..self.retries {
            if last.is_ok() {
                break;
            }
            last = self.attempt(request);
        }
        last
    }
}
