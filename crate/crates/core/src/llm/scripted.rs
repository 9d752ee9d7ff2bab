//! Deterministic fixture replay.
//!
//! A script is plain text. Each entry starts with a header line
//! `=== <role> <stage> <address>` and its body runs until the next header.
//! Responses for the same key are consumed in file order. Body lines that
//! must begin with `===` are written with a leading backslash (`\===`).
//! Lines before the first header starting with `#` are comments.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::{
    estimate_tokens, BackendKey, BackendKind, CallKey, ChatBackend, ChatMessage, Completion,
    LlmError, Limits, Usage,
};

const HEADER: &str = "=== ";

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parsed fixture: ordered responses per call key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    entries: BTreeMap<CallKey, Vec<String>>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut entries: BTreeMap<CallKey, Vec<String>> = BTreeMap::new();
        let mut current: Option<(CallKey, Vec<&str>)> = None;

        let flush = |cur: Option<(CallKey, Vec<&str>)>, entries: &mut BTreeMap<CallKey, Vec<String>>| {
            if let Some((key, lines)) = cur {
                let body = lines
                    .iter()
                    .map(|l| l.strip_prefix('\\').filter(|r| r.starts_with("===")).unwrap_or(l))
                    .collect::<Vec<_>>()
                    .join("\n");
                entries.entry(key).or_default().push(body.trim_end_matches('\n').to_string());
            }
        };

        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix(HEADER) {
                flush(current.take(), &mut entries);
                current = Some((parse_header(rest, i + 1)?, Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            } else if !(line.trim().is_empty() || line.starts_with('#')) {
                return Err(ScriptError::Syntax {
                    line: i + 1,
                    message: "text before the first `=== role stage address` header".into(),
                });
            }
        }
        flush(current, &mut entries);
        Ok(Self { entries })
    }

    /// Loads every `*.script` / `script.txt` file in a directory, in name order.
    pub fn load_dir(dir: &Path) -> Result<Self, ScriptError> {
        let io = |e| ScriptError::Io { path: dir.display().to_string(), source: e };
        let mut names: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "script")
                    || p.file_name().is_some_and(|n| n == "script.txt")
            })
            .collect();
        names.sort();
        let mut script = Script::default();
        for p in names {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| ScriptError::Io { path: p.display().to_string(), source: e })?;
            script.extend(Script::parse(&text)?);
        }
        Ok(script)
    }

    pub fn extend(&mut self, other: Script) {
        for (k, v) in other.entries {
            self.entries.entry(k).or_default().extend(v);
        }
    }

    pub fn push(&mut self, key: CallKey, response: impl Into<String>) {
        self.entries.entry(key).or_default().push(response.into());
    }

    pub fn responses(&self, key: &CallKey) -> &[String] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Serializes back to the text form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, responses) in &self.entries {
            for r in responses {
                out.push_str(&format!("{HEADER}{} {} {}\n", key.role, key.stage, key.address));
                for line in r.lines() {
                    if line.starts_with("===") {
                        out.push('\\');
                    }
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        out
    }
}

fn parse_header(rest: &str, line: usize) -> Result<CallKey, ScriptError> {
    let err = |message: String| ScriptError::Syntax { line, message };
    let parts: Vec<&str> = rest.split_whitespace().collect();
    let [role, stage, address] = parts.as_slice() else {
        return Err(err(format!("expected `=== <role> <stage> <address>`, got `=== {rest}`")));
    };
    Ok(CallKey {
        role: role.parse().map_err(err)?,
        stage: stage.parse().map_err(err)?,
        address: address.parse().map_err(|e: crate::domain::DomainError| err(e.to_string()))?,
    })
}

/// Replays a [`Script`]; each backend instance owns its own cursor.
pub struct ScriptedBackend {
    model: String,
    queues: Mutex<BTreeMap<CallKey, VecDeque<String>>>,
}

impl ScriptedBackend {
    pub fn new(model: impl Into<String>, script: &Arc<Script>) -> Self {
        let queues = script
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
            .collect();
        Self { model: model.into(), queues: Mutex::new(queues) }
    }

    /// Responses not yet consumed.
    pub fn remaining(&self) -> usize {
        self.queues.lock().unwrap_or_else(|e| e.into_inner()).values().map(VecDeque::len).sum()
    }
}

impl ChatBackend for ScriptedBackend {
    fn key(&self) -> BackendKey {
        BackendKey { kind: BackendKind::Scripted, model: self.model.clone() }
    }

    fn complete(
        &self,
        call: &CallKey,
        messages: &[ChatMessage],
        _limits: &Limits,
    ) -> Result<Completion, LlmError> {
        let text = self
            .queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get_mut(call)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| LlmError::FixtureExhausted(call.clone()))?;
        let prompt_tokens = messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        let completion_tokens = estimate_tokens(&text);
        Ok(Completion { text, usage: Usage { prompt_tokens, completion_tokens } })
    }
}
