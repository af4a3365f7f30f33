use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GatewayError, ModelReply, Usage, VisionModel, VisionRequest};

/// Where and how to reach an OpenAI-compatible chat-completions endpoint.
/// Only the name of the environment variable holding the API key is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub struct HttpChatClient {
    endpoint: HttpEndpoint,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: HttpEndpoint) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { endpoint, client })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    /// The JSON body sent for `request`.
    pub fn body(&self, request: &VisionRequest) -> Result<Value, GatewayError> {
        let mut content = vec![json!({"type": "text", "text": request.user_text})];
        for img in &request.images {
            let png = img
                .encode_png()
                .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{}", STANDARD.encode(png))}
            }));
        }
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": content}));
        Ok(json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "n": request.sampling.n_samples,
        }))
    }
}

impl VisionModel for HttpChatClient {
    fn complete(&self, request: &VisionRequest) -> Result<ModelReply, GatewayError> {
        let mut req = self.client.post(self.url()).json(&self.body(request)?);
        if let Some(var) = &self.endpoint.api_key_env {
            let key =
                std::env::var(var).map_err(|_| GatewayError::Auth(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(GatewayError::Auth(format!("HTTP {status}"))),
            429 => return Err(GatewayError::RateLimit(format!("HTTP {status}"))),
            500..=599 => return Err(GatewayError::Transport(format!("HTTP {status}"))),
            _ => {
                return Err(GatewayError::InvalidRequest(format!(
                    "HTTP {status}: {}",
                    text.chars().take(200).collect::<String>()
                )))
            }
        }
        parse_chat_response(&text)
    }

    fn describe(&self) -> String {
        format!("http:{} ({})", self.endpoint.base_url, self.endpoint.model)
    }
}

/// Extracts the first choice's message text and token usage.
pub(crate) fn parse_chat_response(body: &str) -> Result<ModelReply, GatewayError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::Transport(format!("malformed response body: {e}")))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        // some providers return a list of content parts
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => return Err(GatewayError::Transport("response has no message content".into())),
    };
    Ok(ModelReply {
        text,
        usage: Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64(),
            completion_tokens: v["usage"]["completion_tokens"].as_u64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{PromptRegistry, Sampling, TemplateId};
    use crate::imaging::TableImage;
    use image::{GrayImage, Luma};
    use std::collections::BTreeMap;

    #[test]
    fn body_inlines_png_images() {
        let client = HttpChatClient::new(HttpEndpoint {
            base_url: "http://localhost:1/v1/".into(),
            model: "m".into(),
            api_key_env: Some("SOME_KEY".into()),
            timeout_secs: 1,
        })
        .unwrap();
        assert_eq!(client.url(), "http://localhost:1/v1/chat/completions");
        let img = TableImage::from_gray("x", GrayImage::from_pixel(8, 8, Luma([0]))).unwrap();
        let req = VisionRequest::new(
            &PromptRegistry::builtin(),
            TemplateId::RecognizeSimple,
            BTreeMap::new(),
            vec![img],
            Sampling::default(),
        )
        .unwrap();
        let body = client.body(&req).unwrap();
        let url = body["messages"][1]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(body["temperature"], 0.0);
        assert!(!body.to_string().contains("SOME_KEY_VALUE"));
    }

    #[test]
    fn response_parsing() {
        let r = parse_chat_response(
            r#"{"choices":[{"message":{"content":"hello"}}],"usage":{"prompt_tokens":5,"completion_tokens":2}}"#,
        )
        .unwrap();
        assert_eq!(r.text, "hello");
        assert_eq!(r.usage.prompt_tokens, Some(5));
        assert!(parse_chat_response("{}").is_err());
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let client = HttpChatClient::new(HttpEndpoint {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api_key_env: None,
            timeout_secs: 2,
        })
        .unwrap();
        let img = TableImage::from_gray("x", GrayImage::from_pixel(8, 8, Luma([0]))).unwrap();
        let req = VisionRequest::new(
            &PromptRegistry::builtin(),
            TemplateId::RecognizeSimple,
            BTreeMap::new(),
            vec![img],
            Sampling::default(),
        )
        .unwrap();
        assert!(matches!(client.complete(&req), Err(GatewayError::Transport(_))));
    }
}
