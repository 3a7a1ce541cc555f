//! A replayable chat model for tests, benchmarks and offline demos.
//!
//! Sequential scripts hand out steps in order and panic when a request does
//! not match its step. Lookup scripts answer by the latest user text and the
//! tool round within the turn.
//!
//! Response text may contain `{{/json/pointer}}` placeholders, filled from the
//! latest tool result in the request. `{{/a|/b}}` tries each pointer in turn.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::llm::{ChatModel, LlmError, LlmResponse, Message, Role};
use crate::tools::ToolSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Role of the last message the step expects to see.
    #[serde(default)]
    pub expect_last_role: Option<Role>,
    /// Substring the last message must contain.
    #[serde(default)]
    pub expect_contains: Option<String>,
    #[serde(default)]
    pub system_contains: Option<String>,
    pub response: LlmResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupEntry {
    pub user: String,
    #[serde(default)]
    pub round: usize,
    /// When set, the entry only answers if the system prompt contains it.
    #[serde(default)]
    pub system_contains: Option<String>,
    pub response: LlmResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Script {
    Sequential { steps: Vec<ScriptStep> },
    Lookup { entries: Vec<LookupEntry> },
}

pub struct ScriptedLlm {
    script: Script,
    cursor: Mutex<usize>,
    calls: AtomicUsize,
    model: String,
    /// Lookup misses return an error instead of panicking.
    lenient: bool,
}

/// Round index within the current turn: tool-call rounds since the last user message.
pub fn turn_round(messages: &[Message]) -> usize {
    messages
        .iter()
        .rev()
        .take_while(|m| m.role != Role::User)
        .filter(|m| m.role == Role::Assistant && !m.tool_calls.is_empty())
        .count()
}

/// Fills `{{pointer}}` placeholders from the latest tool message.
pub fn render_template(text: &str, messages: &[Message]) -> String {
    if !text.contains("{{") {
        return text.to_string();
    }
    let tool: Option<serde_json::Value> = messages
        .iter()
        .rev()
        .take_while(|m| m.role != Role::User)
        .find(|m| m.role == Role::Tool)
        .and_then(|m| serde_json::from_str(&m.content).ok());
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start..].find("}}") else {
            break;
        };
        out.push_str(&rest[..start]);
        let inner = &rest[start + 2..start + len];
        let value = inner.split('|').find_map(|ptr| tool.as_ref().and_then(|t| t.pointer(ptr.trim())).filter(|v| !v.is_null()));
        match value {
            Some(serde_json::Value::String(s)) => out.push_str(s),
            Some(v) => out.push_str(&v.to_string()),
            None => out.push_str("unavailable"),
        }
        rest = &rest[start + len + 2..];
    }
    out.push_str(rest);
    out
}

pub fn last_user_text(messages: &[Message]) -> Option<&str> {
    messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
}

impl ScriptedLlm {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            cursor: Mutex::new(0),
            calls: AtomicUsize::new(0),
            model: "scripted".into(),
            lenient: false,
        }
    }

    pub fn sequential(steps: Vec<ScriptStep>) -> Self {
        Self::new(Script::Sequential { steps })
    }

    pub fn lookup(entries: Vec<LookupEntry>) -> Self {
        Self::new(Script::Lookup { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Transport(format!("{}: {e}", path.display())))?;
        let script: Script =
            serde_json::from_str(&text).map_err(|e| LlmError::Malformed(format!("{}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    pub fn lenient(mut self) -> Self {
        self.lenient = true;
        self
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model = id.into();
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Sequential steps not yet consumed.
    pub fn remaining(&self) -> usize {
        match &self.script {
            Script::Sequential { steps } => steps.len() - *self.cursor.lock().unwrap_or_else(|e| e.into_inner()),
            Script::Lookup { .. } => 0,
        }
    }

    fn next_step(&self, messages: &[Message]) -> LlmResponse {
        let Script::Sequential { steps } = &self.script else {
            unreachable!()
        };
        let mut cur = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let Some(step) = steps.get(*cur) else {
            panic!("scripted model exhausted after {} steps", steps.len());
        };
        *cur += 1;
        let last = messages.last().expect("chat called with no messages");
        if let Some(role) = step.expect_last_role {
            assert_eq!(last.role, role, "step {} expected last role {role:?}", *cur - 1);
        }
        if let Some(s) = &step.expect_contains {
            assert!(last.content.contains(s.as_str()), "step {} expected {s:?} in {:?}", *cur - 1, last.content);
        }
        if let Some(s) = &step.system_contains {
            let sys = messages.iter().find(|m| m.role == Role::System).map_or("", |m| m.content.as_str());
            assert!(sys.contains(s.as_str()), "step {} expected {s:?} in the system prompt", *cur - 1);
        }
        step.response.clone()
    }

    fn look_up(&self, messages: &[Message]) -> Result<LlmResponse, LlmError> {
        let Script::Lookup { entries } = &self.script else {
            unreachable!()
        };
        let user = last_user_text(messages).unwrap_or("");
        let round = turn_round(messages);
        let sys = messages.iter().find(|m| m.role == Role::System).map_or("", |m| m.content.as_str());
        let candidates = entries.iter().filter(|e| e.user == user && e.round == round);
        // Conditional entries win over unconditional ones.
        let hit = candidates
            .clone()
            .find(|e| e.system_contains.as_deref().is_some_and(|s| sys.contains(s)))
            .or_else(|| candidates.clone().find(|e| e.system_contains.is_none()));
        match hit {
            Some(e) => Ok(e.response.clone()),
            None if self.lenient => Err(LlmError::Malformed(format!("no scripted response for {user:?} round {round}"))),
            None => panic!("no scripted response for {user:?} round {round}"),
        }
    }
}

impl ChatModel for ScriptedLlm {
    fn chat(&self, messages: &[Message], _tools: &[ToolSpec]) -> Result<LlmResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut resp = match &self.script {
            Script::Sequential { .. } => self.next_step(messages),
            Script::Lookup { .. } => self.look_up(messages)?,
        };
        if let Some(c) = &resp.content {
            resp.content = Some(render_template(c, messages));
        }
        Ok(resp)
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ToolCall;
    use serde_json::json;

    #[test]
    fn rounds_count_tool_calls_since_user() {
        let call = ToolCall {
            id: "c1".into(),
            name: "list_cases".into(),
            arguments: json!({}),
        };
        let msgs = vec![
            Message::user("a"),
            Message::assistant_calls("", vec![call.clone()]),
            Message::tool("c1", "{}"),
            Message::assistant("done"),
            Message::user("b"),
            Message::assistant_calls("", vec![call]),
            Message::tool("c1", "{}"),
        ];
        assert_eq!(turn_round(&msgs), 1);
        assert_eq!(last_user_text(&msgs), Some("b"));
    }

    #[test]
    fn conditional_entries_take_priority() {
        let llm = ScriptedLlm::lookup(vec![
            LookupEntry {
                user: "q".into(),
                round: 0,
                system_contains: None,
                response: LlmResponse::text("plain"),
            },
            LookupEntry {
                user: "q".into(),
                round: 0,
                system_contains: Some("lesson".into()),
                response: LlmResponse::text("improved"),
            },
        ]);
        let plain = llm.chat(&[Message::system("base"), Message::user("q")], &[]).unwrap();
        let better = llm.chat(&[Message::system("base lesson"), Message::user("q")], &[]).unwrap();
        assert_eq!(plain.content.as_deref(), Some("plain"));
        assert_eq!(better.content.as_deref(), Some("improved"));
        assert_eq!(llm.calls(), 2);
    }

    #[test]
    fn placeholders_read_the_latest_tool_result() {
        let msgs = vec![
            Message::user("q"),
            Message::tool("c1", r#"{"ok":true,"payload":{"decision":"reject"}}"#),
        ];
        assert_eq!(render_template("decision: {{/payload/decision}}", &msgs), "decision: reject");
        assert_eq!(render_template("{{/payload/x|/ok}}", &msgs), "true");
        assert_eq!(render_template("{{/missing}} x", &msgs), "unavailable x");
    }

    #[test]
    fn lenient_miss_is_an_error() {
        let llm = ScriptedLlm::lookup(vec![]).lenient();
        assert!(llm.chat(&[Message::user("x")], &[]).is_err());
    }

    #[test]
    #[should_panic(expected = "exhausted")]
    fn sequential_exhaustion_panics() {
        let llm = ScriptedLlm::sequential(vec![]);
        let _ = llm.chat(&[Message::user("x")], &[]);
    }
}
