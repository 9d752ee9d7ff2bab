//! Chat-completion gateway over remote and scripted backends.
//!
//! Calls are routed by agent tier: decision-makers (Team Leader, Module
//! Leader, Function Coordinator) go to one backend, implementers (Coder,
//! Tester) to the other. Every successful call is recorded in the
//! [`UsageLedger`].

mod ledger;
mod remote;
mod scripted;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TreeAddress;

pub use ledger::{BackendKey, CostSummary, Price, PriceTable, Tally, UsageLedger};
pub use remote::RemoteBackend;
pub use scripted::{Script, ScriptError, ScriptedBackend};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected request: {0}")]
    Api(String),
    #[error("token limit exceeded: {0}")]
    Overflow(String),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("scripted fixture exhausted for {0}")]
    FixtureExhausted(CallKey),
    #[error("invalid message list: {0}")]
    BadMessages(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport { .. })
    }
}

/// The five agent roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TeamLeader,
    ModuleLeader,
    FunctionCoordinator,
    Coder,
    Tester,
}

/// Which backend a role is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    DecisionMaker,
    Implementer,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::TeamLeader,
        Role::ModuleLeader,
        Role::FunctionCoordinator,
        Role::Coder,
        Role::Tester,
    ];

    pub fn tier(self) -> Tier {
        match self {
            Role::TeamLeader | Role::ModuleLeader | Role::FunctionCoordinator => Tier::DecisionMaker,
            Role::Coder | Role::Tester => Tier::Implementer,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::TeamLeader => "team_leader",
            Role::ModuleLeader => "module_leader",
            Role::FunctionCoordinator => "function_coordinator",
            Role::Coder => "coder",
            Role::Tester => "tester",
        }
    }

    /// Sampling temperature when the caller does not override it.
    pub fn default_temperature(self) -> f32 {
        match self.tier() {
            Tier::DecisionMaker => 0.0,
            Tier::Implementer => 0.2,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::DecisionMaker => "decision_maker",
            Tier::Implementer => "implementer",
        })
    }
}

/// Agent operation that issued a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Plan,
    SplitFunctions,
    Refine,
    DraftFunction,
    DraftTests,
    ReviewTests,
    Regenerate,
    AssembleModule,
    ModuleTests,
    CorrectModule,
    AssembleProject,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Plan,
        Stage::SplitFunctions,
        Stage::Refine,
        Stage::DraftFunction,
        Stage::DraftTests,
        Stage::ReviewTests,
        Stage::Regenerate,
        Stage::AssembleModule,
        Stage::ModuleTests,
        Stage::CorrectModule,
        Stage::AssembleProject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Plan => "plan",
            Stage::SplitFunctions => "split_functions",
            Stage::Refine => "refine",
            Stage::DraftFunction => "draft_function",
            Stage::DraftTests => "draft_tests",
            Stage::ReviewTests => "review_tests",
            Stage::Regenerate => "regenerate",
            Stage::AssembleModule => "assemble_module",
            Stage::ModuleTests => "module_tests",
            Stage::CorrectModule => "correct_module",
            Stage::AssembleProject => "assemble_project",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Identifies one logical call site: who is asking, in which step, about
/// which tree node. Scripted fixtures are queued per key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallKey {
    pub role: Role,
    pub stage: Stage,
    pub address: TreeAddress,
}

impl CallKey {
    pub fn new(role: Role, stage: Stage, address: TreeAddress) -> Self {
        Self { role, stage, address }
    }
}

impl fmt::Display for CallKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.role, self.stage, self.address)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: MessageRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: MessageRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: MessageRole::Assistant, content: content.into() }
    }
}

/// Checks the message-list precondition: exactly one leading system message,
/// no empty system/user content.
pub fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.first() {
        Some(m) if m.role == MessageRole::System => {}
        _ => return Err(LlmError::BadMessages("first message must be the system message".into())),
    }
    if messages.iter().skip(1).any(|m| m.role == MessageRole::System) {
        return Err(LlmError::BadMessages("more than one system message".into()));
    }
    if let Some(m) = messages
        .iter()
        .find(|m| m.role != MessageRole::Assistant && m.content.trim().is_empty())
    {
        return Err(LlmError::BadMessages(format!("empty {:?} message", m.role)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub max_tokens: u32,
    pub temperature: f32,
}

impl Limits {
    pub fn for_role(role: Role) -> Self {
        Self { max_tokens: 4096, temperature: role.default_temperature() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
}

/// How to reach a model. Remote refs name the environment variable holding
/// the API key; the key itself is never stored.
#[derive(Debug, Clone)]
pub enum BackendRef {
    Remote {
        endpoint: String,
        model_name: String,
        credentials_env: String,
        max_in_flight: usize,
    },
    Scripted {
        model_name: String,
        script: Arc<Script>,
    },
}

impl BackendRef {
    pub fn scripted(script: Arc<Script>) -> Self {
        BackendRef::Scripted { model_name: "scripted".into(), script }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            BackendRef::Remote { .. } => BackendKind::Remote,
            BackendRef::Scripted { .. } => BackendKind::Scripted,
        }
    }

    pub fn model_name(&self) -> &str {
        match self {
            BackendRef::Remote { model_name, .. } | BackendRef::Scripted { model_name, .. } => model_name,
        }
    }

    pub fn connect(&self) -> Result<Box<dyn ChatBackend>, LlmError> {
        Ok(match self {
            BackendRef::Remote { endpoint, model_name, credentials_env, max_in_flight } => Box::new(
                RemoteBackend::new(endpoint, model_name, credentials_env, *max_in_flight)?,
            ),
            BackendRef::Scripted { model_name, script } => {
                Box::new(ScriptedBackend::new(model_name.clone(), script))
            }
        })
    }
}

pub trait ChatBackend: Send + Sync {
    fn key(&self) -> BackendKey;

    fn complete(
        &self,
        call: &CallKey,
        messages: &[ChatMessage],
        limits: &Limits,
    ) -> Result<Completion, LlmError>;
}

/// Routes calls by tier and accounts for usage.
pub struct Gateway {
    decision: Box<dyn ChatBackend>,
    implementer: Box<dyn ChatBackend>,
    ledger: Mutex<UsageLedger>,
}

impl Gateway {
    pub fn new(decision: Box<dyn ChatBackend>, implementer: Box<dyn ChatBackend>) -> Self {
        Self { decision, implementer, ledger: Mutex::new(UsageLedger::default()) }
    }

    pub fn connect(decision: &BackendRef, implementer: &BackendRef) -> Result<Self, LlmError> {
        Ok(Self::new(decision.connect()?, implementer.connect()?))
    }

    pub fn backend_for(&self, role: Role) -> &dyn ChatBackend {
        match role.tier() {
            Tier::DecisionMaker => self.decision.as_ref(),
            Tier::Implementer => self.implementer.as_ref(),
        }
    }

    pub fn complete(&self, call: &CallKey, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        self.complete_with(call, messages, &Limits::for_role(call.role))
    }

    pub fn complete_with(
        &self,
        call: &CallKey,
        messages: &[ChatMessage],
        limits: &Limits,
    ) -> Result<Completion, LlmError> {
        check_messages(messages)?;
        let backend = self.backend_for(call.role);
        let completion = backend.complete(call, messages, limits)?;
        self.ledger
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .record(backend.key(), call.role, completion.usage);
        Ok(completion)
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Whitespace token estimate used where a backend reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
