//! OpenAI-compatible chat-completions client.
//!
//! One wire protocol covers every hosted provider this tool targets; the
//! endpoint is selected by base URL (`COTPHQ_BASE_URL`) and authenticated
//! with a bearer token (`COTPHQ_API_KEY`).

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    with_retry, Backend, BackendError, CompletionRequest, CompletionResponse, RetryPolicy, Usage,
};

pub const API_KEY_ENV: &str = "COTPHQ_API_KEY";
pub const BASE_URL_ENV: &str = "COTPHQ_BASE_URL";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

pub struct HttpBackend {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(300))
                .build()
                .expect("reqwest client"),
            retry: RetryPolicy::default(),
        }
    }

    /// Construct from `COTPHQ_BASE_URL` / `COTPHQ_API_KEY`. A missing key is
    /// an authentication error up front rather than a failed first call.
    pub fn from_env() -> Result<Self, BackendError> {
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| BackendError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(base_url, api_key))
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn complete_once(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = build_chat_body(request);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(classify_status(status, &text));
        }
        parse_chat_response(&text, &request.model_id)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        with_retry(&self.retry, || self.complete_once(request))
    }

    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }
}

pub(crate) fn build_chat_body(request: &CompletionRequest) -> serde_json::Value {
    let mut body = json!({
        "model": request.model_id,
        "messages": [
            {"role": "system", "content": request.system_text},
            {"role": "user", "content": request.user_text},
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

fn classify_status(status: u16, body: &str) -> BackendError {
    let excerpt: String = body.chars().take(400).collect();
    match status {
        401 | 403 => BackendError::Auth(format!("status {status}: {excerpt}")),
        429 => BackendError::RateLimited(excerpt),
        _ => BackendError::Provider {
            status,
            body: excerpt,
        },
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
    #[serde(default)]
    model: Option<String>,
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

pub(crate) fn parse_chat_response(
    body: &str,
    requested_model: &str,
) -> Result<CompletionResponse, BackendError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| BackendError::Provider {
        status: 200,
        body: format!("unparseable response: {e}"),
    })?;
    let choice = wire.choices.into_iter().next().ok_or(BackendError::Provider {
        status: 200,
        body: "response has no choices".into(),
    })?;
    let usage = wire
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok(CompletionResponse {
        text: choice.message.content,
        model_id: wire.model.unwrap_or_else(|| requested_model.to_string()),
        usage,
        cached: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_matches_chat_completions_schema() {
        let req = CompletionRequest::new("gpt-4o", "you are careful", "hello")
            .with_max_tokens(64)
            .with_seed(Some(11));
        let body = build_chat_body(&req);
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 64);
        assert_eq!(body["seed"], 11);

        let no_seed = build_chat_body(&CompletionRequest::new("m", "s", "u"));
        assert!(no_seed.get("seed").is_none());
    }

    #[test]
    fn response_parsing_extracts_first_choice_and_usage() {
        let body = r#"{
            "model": "gpt-4o-2024",
            "choices": [{"message": {"role": "assistant", "content": "{\"phq8_score\": 4}"}}],
            "usage": {"prompt_tokens": 120, "completion_tokens": 8}
        }"#;
        let parsed = parse_chat_response(body, "gpt-4o").unwrap();
        assert_eq!(parsed.text, r#"{"phq8_score": 4}"#);
        assert_eq!(parsed.model_id, "gpt-4o-2024");
        assert_eq!(parsed.usage.prompt_tokens, 120);
        assert!(!parsed.cached);

        assert!(parse_chat_response(r#"{"choices": []}"#, "m").is_err());
        assert!(parse_chat_response("not json", "m").is_err());
    }

    #[test]
    fn status_classification() {
        assert!(matches!(classify_status(401, ""), BackendError::Auth(_)));
        assert!(matches!(classify_status(403, ""), BackendError::Auth(_)));
        assert!(matches!(
            classify_status(429, ""),
            BackendError::RateLimited(_)
        ));
        assert!(matches!(
            classify_status(500, ""),
            BackendError::Provider { status: 500, .. }
        ));
        assert!(classify_status(500, "").is_transient());
        assert!(!classify_status(400, "").is_transient());
    }
}
