//! Retrieval support for the Team Leader and Coder prompts.
//!
//! Entries files are JSON lines with `id`, `task_text`, `response_text` and
//! `tags`. An index file starts with a header line declaring the dimension and
//! the embedder identity, followed by one JSON entry per line with its
//! unit-normalized embedding.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_TOP_K: usize = 2;
const INDEX_MAGIC: &str = "tiercode-kb v1";

pub const SEED_TEAM_LEADER: &str = include_str!("../assets/kb/team_leader.jsonl");
pub const SEED_CODER: &str = include_str!("../assets/kb/coder.jsonl");

#[derive(Debug, Error)]
pub enum KbError {
    #[error("entries line {line}: {message}")]
    Entries { line: usize, message: String },
    #[error("entry `{id}`: {message}")]
    Entry { id: String, message: String },
    #[error("index file: {0}")]
    Index(String),
    #[error("embedder: {0}")]
    Embedder(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// One entry as authored, before embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrySource {
    pub id: String,
    pub task_text: String,
    pub response_text: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub task_text: String,
    pub response_text: String,
    pub tags: Vec<String>,
    /// Set when the entry passed build-time checks.
    pub verified: bool,
    pub embedding: Vec<f32>,
}

pub trait Embedder {
    /// Written into index headers; a mismatch on query is an error.
    fn identity(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, KbError>;
}

/// Lowercased alphanumeric tokens hashed into a fixed number of buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dimension: DEFAULT_DIMENSION }
    }
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashingEmbedder {
    fn identity(&self) -> String {
        format!("hashing-bow-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, KbError> {
        let mut v = vec![0f32; self.dimension];
        for t in tokens(text) {
            let h = Sha256::digest(t.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dimension as u64;
            v[bucket as usize] += 1.0;
        }
        Ok(v)
    }
}

/// OpenAI-compatible `/embeddings` endpoint. The key is read from the named
/// environment variable on every call.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model: String,
    pub credentials_env: String,
    pub dimension: usize,
}

impl Embedder for RemoteEmbedder {
    fn identity(&self) -> String {
        format!("remote-{}-{}", self.model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, KbError> {
        #[derive(Deserialize)]
        struct Item {
            embedding: Vec<f32>,
        }
        #[derive(Deserialize)]
        struct Response {
            data: Vec<Item>,
        }
        let key = std::env::var(&self.credentials_env)
            .map_err(|_| KbError::Embedder(format!("environment variable {} is not set", self.credentials_env)))?;
        let url = format!("{}/embeddings", self.endpoint.trim_end_matches('/'));
        let resp = reqwest::blocking::Client::new()
            .post(url)
            .bearer_auth(key)
            .json(&serde_json::json!({ "model": self.model, "input": text }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| KbError::Embedder(e.to_string()))?;
        let body: Response = resp.json().map_err(|e| KbError::Embedder(e.to_string()))?;
        let v = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| KbError::Embedder("empty embedding response".into()))?
            .embedding;
        if v.len() != self.dimension {
            return Err(KbError::Embedder(format!("expected dimension {}, got {}", self.dimension, v.len())));
        }
        Ok(v)
    }
}

fn normalize(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if !norm.is_normal() {
        return None;
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Some(v)
}

pub fn parse_entries(text: &str) -> Result<Vec<EntrySource>, KbError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| KbError::Entries { line: i + 1, message: e.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    pub dimension: usize,
    pub embedder: String,
    pub entries: Vec<KnowledgeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub entry: &'a KnowledgeEntry,
    pub score: f64,
}

/// Embeds and normalizes every entry.
pub fn build_index(sources: &[EntrySource], embedder: &dyn Embedder) -> Result<KnowledgeIndex, KbError> {
    let mut entries = Vec::with_capacity(sources.len());
    let mut seen = std::collections::HashSet::new();
    for s in sources {
        let fail = |message: String| KbError::Entry { id: s.id.clone(), message };
        if s.id.trim().is_empty() {
            return Err(KbError::Entry { id: String::new(), message: "id is empty".into() });
        }
        if !seen.insert(s.id.as_str()) {
            return Err(fail("duplicate id".into()));
        }
        if s.task_text.trim().is_empty() {
            return Err(fail("task_text is empty".into()));
        }
        if s.response_text.trim().is_empty() {
            return Err(fail("response_text is empty".into()));
        }
        let raw = embedder.embed(&s.task_text).map_err(|e| fail(e.to_string()))?;
        if raw.len() != embedder.dimension() {
            return Err(fail(format!("embedding has dimension {}, expected {}", raw.len(), embedder.dimension())));
        }
        let embedding = normalize(raw).ok_or_else(|| fail("task_text embeds to the zero vector".into()))?;
        entries.push(KnowledgeEntry {
            id: s.id.clone(),
            task_text: s.task_text.clone(),
            response_text: s.response_text.clone(),
            tags: s.tags.clone(),
            verified: true,
            embedding,
        });
    }
    Ok(KnowledgeIndex { dimension: embedder.dimension(), embedder: embedder.identity(), entries })
}

impl KnowledgeIndex {
    pub fn empty(embedder: &dyn Embedder) -> Self {
        Self { dimension: embedder.dimension(), embedder: embedder.identity(), entries: Vec::new() }
    }

    /// Index over caller-supplied vectors; each is normalized.
    pub fn from_vectors(
        dimension: usize,
        embedder: impl Into<String>,
        entries: Vec<(EntrySource, Vec<f32>)>,
    ) -> Result<Self, KbError> {
        let entries = entries
            .into_iter()
            .map(|(s, v)| {
                if v.len() != dimension {
                    return Err(KbError::Entry { id: s.id, message: "dimension mismatch".into() });
                }
                let embedding = normalize(v)
                    .ok_or_else(|| KbError::Entry { id: s.id.clone(), message: "zero vector".into() })?;
                Ok(KnowledgeEntry {
                    id: s.id,
                    task_text: s.task_text,
                    response_text: s.response_text,
                    tags: s.tags,
                    verified: true,
                    embedding,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { dimension, embedder: embedder.into(), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top-`k` by cosine similarity, ties by ascending id.
    pub fn retrieve(&self, query: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<Hit<'_>>, KbError> {
        if embedder.identity() != self.embedder {
            return Err(KbError::Index(format!(
                "index was built with `{}`, queried with `{}`",
                self.embedder,
                embedder.identity()
            )));
        }
        if k == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.retrieve_by_vector(&embedder.embed(query)?, k))
    }

    pub fn retrieve_by_vector(&self, query: &[f32], k: usize) -> Vec<Hit<'_>> {
        if k == 0 {
            return Vec::new();
        }
        let q = normalize(query.to_vec());
        let mut hits: Vec<Hit<'_>> = self
            .entries
            .iter()
            .map(|entry| {
                let score = match &q {
                    Some(q) => {
                        let dot: f64 = q.iter().zip(&entry.embedding).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                        dot.clamp(-1.0, 1.0)
                    }
                    None => 0.0,
                };
                Hit { entry, score }
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.entry.id.cmp(&b.entry.id)));
        hits.truncate(k);
        hits
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let mut out = format!("{INDEX_MAGIC} dimension={} embedder={}\n", self.dimension, self.embedder);
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| KbError::Io { path: parent.display().to_string(), source })?;
        }
        fs::write(path, out).map_err(|source| KbError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = fs::read_to_string(path).map_err(|source| KbError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, KbError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| KbError::Index("empty file".into()))?;
        let rest = header
            .strip_prefix(INDEX_MAGIC)
            .ok_or_else(|| KbError::Index(format!("bad header `{header}`")))?;
        let mut dimension = None;
        let mut embedder = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("dimension", v)) => dimension = v.parse::<usize>().ok(),
                Some(("embedder", v)) => embedder = Some(v.to_string()),
                _ => return Err(KbError::Index(format!("unknown header field `{field}`"))),
            }
        }
        let dimension = dimension.ok_or_else(|| KbError::Index("header lacks dimension".into()))?;
        let embedder = embedder.ok_or_else(|| KbError::Index("header lacks embedder".into()))?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: KnowledgeEntry = serde_json::from_str(line)
                .map_err(|err| KbError::Index(format!("line {}: {err}", i + 2)))?;
            if e.embedding.len() != dimension {
                return Err(KbError::Index(format!("entry `{}` has dimension {}", e.id, e.embedding.len())));
            }
            entries.push(e);
        }
        Ok(Self { dimension, embedder, entries })
    }
}

/// Prompt block for the hits, in the order given. Empty hits render as "".
pub fn format_hits(hits: &[Hit<'_>]) -> String {
    let mut out = String::new();
    for (i, h) in hits.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "### Example {} (similarity {:.3})", i + 1, h.score);
        let _ = writeln!(out, "Task:\n{}", h.entry.task_text.trim_end());
        let _ = writeln!(out, "Verified response:\n{}", h.entry.response_text.trim_end());
    }
    out
}

/// The two knowledge bases: one for the Team Leader, one for the Coder.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBases {
    pub team_leader: KnowledgeIndex,
    pub coder: KnowledgeIndex,
}

impl KnowledgeBases {
    pub fn seed(embedder: &dyn Embedder) -> Result<Self, KbError> {
        Ok(Self {
            team_leader: build_index(&parse_entries(SEED_TEAM_LEADER)?, embedder)?,
            coder: build_index(&parse_entries(SEED_CODER)?, embedder)?,
        })
    }

    pub fn empty(embedder: &dyn Embedder) -> Self {
        Self { team_leader: KnowledgeIndex::empty(embedder), coder: KnowledgeIndex::empty(embedder) }
    }
}
