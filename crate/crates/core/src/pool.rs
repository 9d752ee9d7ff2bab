//! Append-only thought pool.
//!
//! All inter-agent information flows through here. Records are immutable,
//! ids are assigned in append order under a single lock, and the optional
//! journal mirrors the pool one JSON object per line so a run can be reloaded
//! and audited later.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClockMode, TreeAddress};
use crate::llm::{Role, Stage};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("address {0} is not a node of the decomposition tree")]
    UnknownAddress(TreeAddress),
    #[error("cannot register {0}: parent node is missing")]
    Orphan(TreeAddress),
    #[error("journal I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThoughtKind {
    Requirement,
    ModulePlan,
    FunctionThought,
    Signature,
    FunctionCode,
    TestCode,
    ModuleCode,
    ProjectCode,
    ErrorReport,
    Note,
}

impl ThoughtKind {
    pub const ALL: [ThoughtKind; 10] = [
        ThoughtKind::Requirement,
        ThoughtKind::ModulePlan,
        ThoughtKind::FunctionThought,
        ThoughtKind::Signature,
        ThoughtKind::FunctionCode,
        ThoughtKind::TestCode,
        ThoughtKind::ModuleCode,
        ThoughtKind::ProjectCode,
        ThoughtKind::ErrorReport,
        ThoughtKind::Note,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ThoughtKind::Requirement => "requirement",
            ThoughtKind::ModulePlan => "module_plan",
            ThoughtKind::FunctionThought => "function_thought",
            ThoughtKind::Signature => "signature",
            ThoughtKind::FunctionCode => "function_code",
            ThoughtKind::TestCode => "test_code",
            ThoughtKind::ModuleCode => "module_code",
            ThoughtKind::ProjectCode => "project_code",
            ThoughtKind::ErrorReport => "error_report",
            ThoughtKind::Note => "note",
        }
    }
}

impl fmt::Display for ThoughtKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThoughtKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ThoughtKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown thought kind `{s}`"))
    }
}

/// Who produced a record: an agent, or the orchestrator itself (requirement
/// intake, sandbox reports, notes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Agent(Role),
    Pipeline,
    Sandbox,
}

impl fmt::Display for Author {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Author::Agent(r) => write!(f, "{r}"),
            Author::Pipeline => f.write_str("pipeline"),
            Author::Sandbox => f.write_str("sandbox"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtRecord {
    pub id: u64,
    pub author: Author,
    pub stage: String,
    pub address: TreeAddress,
    pub kind: ThoughtKind,
    pub payload: String,
    pub created_at: u64,
}

/// Fields supplied by the caller of [`ThoughtPool::append`].
#[derive(Debug, Clone)]
pub struct NewThought {
    pub author: Author,
    pub stage: String,
    pub address: TreeAddress,
    pub kind: ThoughtKind,
    pub payload: String,
}

impl NewThought {
    pub fn new(
        author: Author,
        stage: impl fmt::Display,
        address: TreeAddress,
        kind: ThoughtKind,
        payload: impl Into<String>,
    ) -> Self {
        Self { author, stage: stage.to_string(), address, kind, payload: payload.into() }
    }

    pub fn from_agent(role: Role, stage: Stage, address: TreeAddress, kind: ThoughtKind, payload: impl Into<String>) -> Self {
        Self::new(Author::Agent(role), stage, address, kind, payload)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum JournalLine {
    Node { address: TreeAddress },
    Record(ThoughtRecord),
}

#[derive(Default)]
struct Inner {
    records: Vec<ThoughtRecord>,
    nodes: BTreeSet<TreeAddress>,
    journal: Option<File>,
}

/// Held for the duration of every journal write in the process.
static JOURNAL_GATE: Mutex<()> = Mutex::new(());

/// Blocks until no journal write is in progress and keeps new ones from
/// starting while the guard lives. Signal handlers take this before exiting
/// so every journal ends on a complete line.
pub fn quiesce_journals() -> std::sync::MutexGuard<'static, ()> {
    JOURNAL_GATE.lock().unwrap_or_else(|e| e.into_inner())
}

impl Inner {
    fn write(&mut self, line: &JournalLine) -> Result<(), PoolError> {
        if let Some(f) = self.journal.as_mut() {
            let mut s = serde_json::to_string(line).map_err(std::io::Error::other)?;
            s.push('\n');
            let _gate = quiesce_journals();
            f.write_all(s.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }
}

pub struct ThoughtPool {
    inner: Mutex<Inner>,
    clock: ClockMode,
}

impl ThoughtPool {
    /// In-memory pool with only the root node registered.
    pub fn new(clock: ClockMode) -> Self {
        let mut inner = Inner::default();
        inner.nodes.insert(TreeAddress::root());
        Self { inner: Mutex::new(inner), clock }
    }

    /// Pool mirrored to a fresh journal file.
    pub fn with_journal(path: &Path, clock: ClockMode) -> Result<Self, PoolError> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        let pool = Self::new(clock);
        {
            let mut inner = pool.lock();
            inner.journal = Some(file);
            inner.write(&JournalLine::Node { address: TreeAddress::root() })?;
        }
        Ok(pool)
    }

    /// Rebuilds a pool from a journal. The result is read-only in the sense
    /// that it is not attached to any journal file.
    pub fn load(path: &Path) -> Result<Self, PoolError> {
        let pool = Self::new(ClockMode::Logical);
        let reader = BufReader::new(File::open(path)?);
        {
            let mut inner = pool.lock();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| PoolError::Corrupt { line: i + 1, message };
                match serde_json::from_str::<JournalLine>(&line).map_err(|e| corrupt(e.to_string()))? {
                    JournalLine::Node { address } => {
                        inner.nodes.insert(address);
                    }
                    JournalLine::Record(r) => {
                        if r.id != inner.records.len() as u64 {
                            return Err(corrupt(format!("expected id {}, found {}", inner.records.len(), r.id)));
                        }
                        inner.records.push(r);
                    }
                }
            }
        }
        Ok(pool)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn register_node(&self, address: &TreeAddress) -> Result<(), PoolError> {
        let mut inner = self.lock();
        if inner.nodes.contains(address) {
            return Ok(());
        }
        let parent = address.parent().expect("root is always registered");
        if !inner.nodes.contains(&parent) {
            return Err(PoolError::Orphan(address.clone()));
        }
        inner.nodes.insert(address.clone());
        inner.write(&JournalLine::Node { address: address.clone() })
    }

    pub fn is_node(&self, address: &TreeAddress) -> bool {
        self.lock().nodes.contains(address)
    }

    pub fn append(&self, thought: NewThought) -> Result<u64, PoolError> {
        let mut inner = self.lock();
        if !inner.nodes.contains(&thought.address) {
            return Err(PoolError::UnknownAddress(thought.address));
        }
        let id = inner.records.len() as u64;
        let created_at = match self.clock {
            ClockMode::Logical => id,
            ClockMode::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or_default(),
        };
        let record = ThoughtRecord {
            id,
            author: thought.author,
            stage: thought.stage,
            address: thought.address,
            kind: thought.kind,
            payload: thought.payload,
            created_at,
        };
        inner.write(&JournalLine::Record(record.clone()))?;
        inner.records.push(record);
        Ok(id)
    }

    pub fn get(&self, id: u64) -> Option<ThoughtRecord> {
        self.lock().records.get(id as usize).cloned()
    }

    /// Highest-id record at `address` with `kind`; `None` if never written.
    pub fn latest(&self, address: &TreeAddress, kind: ThoughtKind) -> Option<ThoughtRecord> {
        self.lock()
            .records
            .iter()
            .rev()
            .find(|r| r.kind == kind && &r.address == address)
            .cloned()
    }

    /// Records on the path from the root to `address`, shallowest first, id
    /// order within a depth.
    pub fn lineage(&self, address: &TreeAddress) -> Result<Vec<ThoughtRecord>, PoolError> {
        let inner = self.lock();
        if !inner.nodes.contains(address) {
            return Err(PoolError::UnknownAddress(address.clone()));
        }
        let mut out: Vec<ThoughtRecord> = inner
            .records
            .iter()
            .filter(|r| r.address.is_prefix_of(address))
            .cloned()
            .collect();
        out.sort_by_key(|r| (r.address.depth(), r.id));
        Ok(out)
    }

    pub fn records(&self) -> Vec<ThoughtRecord> {
        self.lock().records.clone()
    }

    pub fn nodes(&self) -> Vec<TreeAddress> {
        self.lock().nodes.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
