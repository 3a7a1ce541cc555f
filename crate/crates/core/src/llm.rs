//! Chat messages and an OpenAI-compatible chat-completions client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::tools::ToolSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: vec![],
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_calls(content: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::plain(Role::Assistant, content)
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    /// Role/field consistency: tool messages carry a call id, assistant
    /// tool calls have unique ids.
    pub fn is_well_formed(&self) -> bool {
        match self.role {
            Role::Tool => self.tool_call_id.is_some(),
            Role::Assistant => {
                let mut ids: Vec<&str> = self.tool_calls.iter().map(|c| c.id.as_str()).collect();
                ids.sort_unstable();
                ids.windows(2).all(|w| w[0] != w[1])
            }
            _ => self.tool_calls.is_empty() && self.tool_call_id.is_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: Option<String>,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_s: f64,
}

impl LlmResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: Some(content.into()),
            tool_calls: vec![],
            usage: Usage::default(),
            latency_s: 0.0,
        }
    }

    pub fn calls(calls: Vec<ToolCall>) -> Self {
        Self {
            content: None,
            tool_calls: calls,
            usage: Usage::default(),
            latency_s: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no LLM endpoint configured")]
    Unconfigured,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("tool call {name} has arguments that are not a JSON object: {detail}")]
    InvalidToolArgs { name: String, detail: String },
}

/// Anything that can answer a chat request with tools.
pub trait ChatModel: Send + Sync {
    fn chat(&self, messages: &[Message], tools: &[ToolSpec]) -> Result<LlmResponse, LlmError>;

    /// Model identifier used for cost accounting.
    fn model_id(&self) -> &str {
        "unknown"
    }

    /// Cheap reachability check for health reporting. Any HTTP answer
    /// counts as reachable; only transport failures do not.
    fn probe(&self) -> Result<(), LlmError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_s: f64,
}

impl Default for LlmEndpoint {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: String::new(),
            api_key: None,
            timeout_s: 120.0,
        }
    }
}

impl LlmEndpoint {
    pub const ENV_BASE_URL: &'static str = "CIA_LLM_BASE_URL";
    pub const ENV_MODEL: &'static str = "CIA_LLM_MODEL";
    pub const ENV_API_KEY: &'static str = "CIA_LLM_API_KEY";

    /// Fills empty fields from the environment.
    pub fn with_env(mut self) -> Self {
        let var = |k| std::env::var(k).ok().filter(|v: &String| !v.is_empty());
        if self.base_url.is_empty() {
            self.base_url = var(Self::ENV_BASE_URL).unwrap_or_default();
        }
        if self.model.is_empty() {
            self.model = var(Self::ENV_MODEL).unwrap_or_default();
        }
        if self.api_key.is_none() {
            self.api_key = var(Self::ENV_API_KEY);
        }
        self
    }

    pub fn is_configured(&self) -> bool {
        !self.base_url.is_empty() && !self.model.is_empty()
    }
}

/// Blocking client for `POST {base_url}/chat/completions`, temperature 0.
///
/// The HTTP client is built per request: a blocking client owns a runtime
/// that must not be dropped on an async worker, and this model is shared
/// with async servers.
pub struct OpenAiClient {
    endpoint: LlmEndpoint,
}

impl OpenAiClient {
    pub fn new(endpoint: LlmEndpoint) -> Result<Self, LlmError> {
        if !endpoint.is_configured() {
            return Err(LlmError::Unconfigured);
        }
        Ok(Self { endpoint })
    }

    fn http(&self, timeout: Duration) -> Result<reqwest::blocking::Client, LlmError> {
        reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))
    }

    pub fn endpoint(&self) -> &LlmEndpoint {
        &self.endpoint
    }
}

pub fn wire_message(m: &Message) -> Value {
    let role = serde_json::to_value(m.role).expect("role serializes");
    let mut out = json!({ "role": role, "content": m.content });
    if !m.tool_calls.is_empty() {
        out["tool_calls"] = m
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": { "name": c.name, "arguments": c.arguments.to_string() },
                })
            })
            .collect();
    }
    if let Some(id) = &m.tool_call_id {
        out["tool_call_id"] = json!(id);
    }
    out
}

pub fn wire_request(model: &str, messages: &[Message], tools: &[ToolSpec]) -> Value {
    let mut req = json!({
        "model": model,
        "temperature": 0,
        "messages": messages.iter().map(wire_message).collect::<Vec<_>>(),
    });
    if !tools.is_empty() {
        req["tools"] = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": { "name": t.name, "description": t.description, "parameters": t.parameters },
                })
            })
            .collect();
    }
    req
}

pub fn parse_wire_response(body: &Value) -> Result<LlmResponse, LlmError> {
    let msg = body
        .pointer("/choices/0/message")
        .ok_or_else(|| LlmError::Malformed("missing choices[0].message".into()))?;
    let content = msg.get("content").and_then(Value::as_str).map(str::to_owned);
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for (k, c) in calls.iter().enumerate() {
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| LlmError::Malformed(format!("tool call {k} has no function name")))?
                .to_string();
            let raw = c.pointer("/function/arguments").cloned().unwrap_or(Value::Null);
            let arguments = match raw {
                Value::String(s) if s.trim().is_empty() => json!({}),
                Value::String(s) => serde_json::from_str(&s).map_err(|e| LlmError::InvalidToolArgs {
                    name: name.clone(),
                    detail: e.to_string(),
                })?,
                Value::Null => json!({}),
                v => v,
            };
            if !arguments.is_object() {
                return Err(LlmError::InvalidToolArgs {
                    name,
                    detail: format!("got {arguments}"),
                });
            }
            let id = c
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .unwrap_or_else(|| format!("call_{k}"));
            tool_calls.push(ToolCall { id, name, arguments });
        }
    }
    if content.is_none() && tool_calls.is_empty() {
        return Err(LlmError::Malformed("message has neither content nor tool calls".into()));
    }
    let usage = Usage {
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(LlmResponse {
        content,
        tool_calls,
        usage,
        latency_s: 0.0,
    })
}

impl ChatModel for OpenAiClient {
    fn chat(&self, messages: &[Message], tools: &[ToolSpec]) -> Result<LlmResponse, LlmError> {
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let body = wire_request(&self.endpoint.model, messages, tools);
        let started = Instant::now();
        let http = self.http(Duration::from_secs_f64(self.endpoint.timeout_s.max(0.1)))?;
        let mut req = http.post(&url).json(&body);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let mut out = parse_wire_response(&value)?;
        out.latency_s = started.elapsed().as_secs_f64();
        Ok(out)
    }

    fn model_id(&self) -> &str {
        &self.endpoint.model
    }

    fn probe(&self) -> Result<(), LlmError> {
        let url = format!("{}/models", self.endpoint.base_url.trim_end_matches('/'));
        let http = self.http(Duration::from_secs(5))?;
        let mut req = http.get(&url);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        req.send().map(|_| ()).map_err(|e| LlmError::Transport(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_call_with_string_arguments() {
        let body = json!({
            "choices": [{"message": {"content": null, "tool_calls": [
                {"id": "c1", "type": "function", "function": {"name": "list_cases", "arguments": "{}"}}
            ]}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let r = parse_wire_response(&body).unwrap();
        assert_eq!(r.tool_calls[0].name, "list_cases");
        assert_eq!(r.usage.prompt_tokens, 12);
        assert!(r.content.is_none());
    }

    #[test]
    fn content_only_response() {
        let body = json!({"choices": [{"message": {"content": "hello"}}]});
        let r = parse_wire_response(&body).unwrap();
        assert_eq!(r.content.as_deref(), Some("hello"));
        assert!(r.tool_calls.is_empty());
    }

    #[test]
    fn bad_arguments_are_typed_errors() {
        let body = json!({"choices": [{"message": {"tool_calls": [
            {"id": "c1", "function": {"name": "run_cia", "arguments": "{not json"}}
        ]}}]});
        assert!(matches!(parse_wire_response(&body), Err(LlmError::InvalidToolArgs { .. })));
        assert!(matches!(parse_wire_response(&json!({})), Err(LlmError::Malformed(_))));
    }

    #[test]
    fn request_uses_temperature_zero_and_stringified_arguments() {
        let msgs = vec![
            Message::user("hi"),
            Message::assistant_calls("", vec![ToolCall { id: "a".into(), name: "list_cases".into(), arguments: json!({}) }]),
            Message::tool("a", "{}"),
        ];
        let req = wire_request("m", &msgs, &[]);
        assert_eq!(req["temperature"], 0);
        assert_eq!(req["messages"][1]["tool_calls"][0]["function"]["arguments"], "{}");
        assert_eq!(req["messages"][2]["tool_call_id"], "a");
        assert!(req.get("tools").is_none());
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let client = OpenAiClient::new(LlmEndpoint {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api_key: None,
            timeout_s: 2.0,
        })
        .unwrap();
        let started = Instant::now();
        let err = client.chat(&[Message::user("hi")], &[]).unwrap_err();
        assert!(matches!(err, LlmError::Transport(_)), "{err}");
        assert!(started.elapsed() < Duration::from_secs(10));
        assert!(matches!(client.probe(), Err(LlmError::Transport(_))));
    }
}
