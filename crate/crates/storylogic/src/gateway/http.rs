//! Chat-completions HTTP client for any endpoint speaking the de-facto open
//! wire format: POST `{base}/chat/completions` with a model name, message
//! array and sampling settings, answered by `choices[0].message.content`.

use async_trait::async_trait;
use serde::Deserialize;

use super::{ChatMessage, ChatTransport, GatewayError, GenerationConfig, TransportError, Usage};

pub struct HttpTransport {
    client: reqwest::Client,
    base: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// `base` is the API root, e.g. `https://host/v1`; the path suffix is
    /// appended here. The key is sent as a bearer token when present.
    pub fn new(base: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let base = base.into();
        if base.trim().is_empty() {
            return Err(GatewayError::Config(
                "endpoint base URL is empty; set STORYLOGIC_API_BASE or --backend".into(),
            ));
        }
        // per-request timeouts come from GenerationConfig
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(HttpTransport {
            client,
            base: base.trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.trim().is_empty()),
        })
    }
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

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_string();
    }
    let mut end = limit;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &text[..end])
}

#[async_trait]
impl ChatTransport for HttpTransport {
    async fn complete(
        &self,
        model: &str,
        messages: &[ChatMessage],
        config: &GenerationConfig,
    ) -> Result<(String, Usage), TransportError> {
        let wire_messages: Vec<serde_json::Value> = messages
            .iter()
            .map(|m| serde_json::json!({ "role": m.role.as_str(), "content": m.content }))
            .collect();
        let mut body = serde_json::json!({
            "model": model,
            "messages": wire_messages,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_tokens,
        });
        if let Some(seed) = config.seed {
            body["seed"] = serde_json::json!(seed);
        }
        let mut request = self
            .client
            .post(format!("{}/chat/completions", self.base))
            .timeout(config.timeout)
            .json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(config.timeout)
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .await
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        if status == 401 || status == 403 {
            return Err(TransportError::Auth(truncate(&text, 200)));
        }
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: truncate(&text, 200) });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| TransportError::Malformed(format!("{e}; body: {}", truncate(&text, 200))))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::Malformed("response has no choices".into()))?;
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok((choice.message.content, usage))
    }

    fn describe(&self) -> String {
        format!("http:{}", self.base)
    }
}
