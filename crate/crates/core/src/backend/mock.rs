//! Deterministic scripted backend for offline runs and tests.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, Usage};

/// One rule-table entry: fires when `marker` occurs in the prompt's user
/// text. Markers are normally schema identifiers such as `severity.v1`,
/// which every rendered prompt embeds.
#[derive(Debug, Clone, Deserialize)]
pub struct MockRule {
    pub marker: String,
    pub response: String,
}

enum Script {
    Queue(VecDeque<String>),
    Rules(Vec<MockRule>),
}

/// Scripted backend. Queue mode returns responses in order and fails when
/// exhausted; rule mode answers by first matching marker. Internally
/// synchronized, so call counts are exact under concurrency.
pub struct MockBackend {
    script: Mutex<Script>,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
struct ScriptFile {
    #[serde(default)]
    queue: Option<Vec<String>>,
    #[serde(default)]
    rules: Option<Vec<MockRule>>,
}

impl MockBackend {
    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: Mutex::new(Script::Queue(
                responses.into_iter().map(Into::into).collect(),
            )),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn rules<I, M, R>(rules: I) -> Self
    where
        I: IntoIterator<Item = (M, R)>,
        M: Into<String>,
        R: Into<String>,
    {
        Self {
            script: Mutex::new(Script::Rules(
                rules
                    .into_iter()
                    .map(|(marker, response)| MockRule {
                        marker: marker.into(),
                        response: response.into(),
                    })
                    .collect(),
            )),
            calls: AtomicUsize::new(0),
        }
    }

    /// Load a script from a JSON file with either a `queue` array or a
    /// `rules` array of `{marker, response}` objects.
    pub fn from_script_file(path: &Path) -> Result<Self, BackendError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidRequest(format!("cannot read {path:?}: {e}")))?;
        let parsed: ScriptFile = serde_json::from_str(&content)
            .map_err(|e| BackendError::InvalidRequest(format!("bad mock script {path:?}: {e}")))?;
        match (parsed.queue, parsed.rules) {
            (Some(queue), None) if !queue.is_empty() => Ok(Self::queue(queue)),
            (None, Some(rules)) if !rules.is_empty() => Ok(Self {
                script: Mutex::new(Script::Rules(rules)),
                calls: AtomicUsize::new(0),
            }),
            _ => Err(BackendError::InvalidRequest(format!(
                "mock script {path:?} must contain a non-empty 'queue' or 'rules' array"
            ))),
        }
    }

    /// Number of completed `complete` calls so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let mut script = self.script.lock().expect("mock script lock");
        let text = match &mut *script {
            Script::Queue(queue) => queue.pop_front().ok_or(BackendError::ScriptExhausted)?,
            Script::Rules(rules) => rules
                .iter()
                .find(|rule| request.user_text.contains(&rule.marker))
                .map(|rule| rule.response.clone())
                .ok_or_else(|| {
                    let excerpt: String = request.user_text.chars().take(80).collect();
                    BackendError::NoMatchingRule(excerpt)
                })?,
        };
        self.calls.fetch_add(1, Ordering::SeqCst);
        // Rough but deterministic token accounting.
        let usage = Usage {
            prompt_tokens: ((request.system_text.len() + request.user_text.len()) / 4) as u64,
            completion_tokens: (text.len() / 4) as u64,
        };
        Ok(CompletionResponse {
            text,
            model_id: request.model_id.clone(),
            usage,
            cached: false,
        })
    }

    fn id(&self) -> String {
        "mock".to_string()
    }
}
