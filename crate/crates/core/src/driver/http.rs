use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{Backend, BackendError, BackendRequest};
use crate::dialogue::Role;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "VLTRACK_API_KEY";

/// OpenAI-compatible `/chat/completions` client.
///
/// Images go into the first user message as `image_url` parts ahead of its
/// text. Local references are read from the dataset root and inlined as
/// base64 data URLs; `http(s):` and `data:` references pass through.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: String,
    model: String,
    dataset_root: PathBuf,
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        let endpoint = endpoint.trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        Self {
            agent: Self::agent(Duration::from_secs(120)),
            url,
            api_key: api_key.into(),
            model: model.into(),
            dataset_root: PathBuf::from("."),
        }
    }

    fn agent(timeout: Duration) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = Self::agent(timeout);
        self
    }

    pub fn with_dataset_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.dataset_root = root.into();
        self
    }

    fn image_url(&self, image: &str) -> Result<String, BackendError> {
        if ["http://", "https://", "data:"].iter().any(|p| image.starts_with(p)) {
            return Ok(image.to_string());
        }
        let path = self.dataset_root.join(image);
        let bytes = std::fs::read(&path)
            .map_err(|e| BackendError::Terminal(format!("cannot read image {}: {e}", path.display())))?;
        let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => "image/png",
            Some("webp") => "image/webp",
            Some("gif") => "image/gif",
            _ => "image/jpeg",
        };
        Ok(format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
    }

    /// The JSON body sent for `request`.
    pub fn request_body(&self, request: &BackendRequest) -> Result<Value, BackendError> {
        let mut images_placed = false;
        let mut messages = Vec::new();
        for turn in &request.turns {
            let role = match turn.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            if turn.role == Role::User && !images_placed {
                images_placed = true;
                let mut content: Vec<Value> = request
                    .image_refs
                    .iter()
                    .map(|r| Ok(json!({"type": "image_url", "image_url": {"url": self.image_url(r)?}})))
                    .collect::<Result<_, BackendError>>()?;
                content.push(json!({"type": "text", "text": turn.text}));
                messages.push(json!({"role": role, "content": content}));
            } else {
                messages.push(json!({"role": role, "content": turn.text}));
            }
        }
        Ok(json!({"model": self.model, "max_tokens": request.max_output_tokens, "messages": messages}))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let body = self.request_body(request)?.to_string();
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(&body)
            .map_err(|e| BackendError::Retryable(format!("request to {} failed: {e}", self.url)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Retryable(format!("reading response failed: {e}")))?;
        if status >= 400 {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError::Retryable(format!("HTTP {status}: {snippet}")));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Terminal(format!("response is not JSON ({e})")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Terminal("response has no choices[0].message.content".into()))
    }
}
