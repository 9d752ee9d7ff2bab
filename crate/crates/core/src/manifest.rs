//! Plain-text manifests for projects and benchmark fixtures.
//!
//! ```text
//! id: license-plate
//! environment_hint: python-imaging-ocr
//! workdir: .
//!
//! Free-text description, any number of lines.
//!
//! inputs:
//! - car.pgm (image)
//! ```
//!
//! Header fields run up to the first blank line. The description runs until
//! a line reading `inputs:` or the end of the file.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{DomainError, InputFile, InputKind, ProjectRequirement};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("manifest lacks `{0}`")]
    Missing(&'static str),
    #[error("manifest field `{field}`: {message}")]
    BadField { field: String, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Header fields, description and inputs, before interpretation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawManifest {
    pub fields: BTreeMap<String, String>,
    pub description: String,
    pub inputs: Vec<InputFile>,
}

impl RawManifest {
    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }
}

pub fn parse_raw(text: &str, allowed: &[&str]) -> Result<RawManifest, ManifestError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut m = RawManifest::default();
    let mut i = 0;
    while i < lines.len() && !lines[i].trim().is_empty() {
        let line = lines[i];
        if !line.trim_start().starts_with('#') {
            let (k, v) = line.split_once(':').ok_or_else(|| ManifestError::Syntax {
                line: i + 1,
                message: "expected `field: value` in the header".into(),
            })?;
            let k = k.trim();
            if !allowed.contains(&k) {
                return Err(ManifestError::Syntax { line: i + 1, message: format!("unknown field `{k}`") });
            }
            if m.fields.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ManifestError::Syntax { line: i + 1, message: format!("field `{k}` repeated") });
            }
        }
        i += 1;
    }
    let mut desc = Vec::new();
    while i < lines.len() && lines[i].trim() != "inputs:" {
        desc.push(lines[i]);
        i += 1;
    }
    m.description = desc.join("\n").trim().to_string();
    if i < lines.len() {
        i += 1;
        for (n, line) in lines.iter().enumerate().skip(i) {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let entry = t.strip_prefix("- ").ok_or_else(|| ManifestError::Syntax {
                line: n + 1,
                message: "inputs are listed as `- <path> (<kind>)`".into(),
            })?;
            let (path, kind) = match entry.rsplit_once(" (") {
                Some((p, k)) => {
                    let k = k.strip_suffix(')').ok_or_else(|| ManifestError::Syntax {
                        line: n + 1,
                        message: "unclosed `(kind)`".into(),
                    })?;
                    let kind = k
                        .parse::<InputKind>()
                        .map_err(|e| ManifestError::Syntax { line: n + 1, message: e.to_string() })?;
                    (p.trim(), kind)
                }
                None => (entry.trim(), InputKind::from_path(entry.trim())),
            };
            m.inputs.push(InputFile { path: path.to_string(), kind });
        }
    }
    Ok(m)
}

pub const PROJECT_FIELDS: &[&str] = &["id", "environment_hint", "workdir"];

pub fn parse_project(text: &str) -> Result<ProjectRequirement, ManifestError> {
    let m = parse_raw(text, PROJECT_FIELDS)?;
    let id = m.field("id").filter(|s| !s.is_empty()).ok_or(ManifestError::Missing("id"))?;
    if m.description.is_empty() {
        return Err(ManifestError::Missing("description"));
    }
    Ok(ProjectRequirement::new(
        id,
        m.description.clone(),
        m.inputs.clone(),
        m.field("workdir").unwrap_or("."),
        m.field("environment_hint").filter(|s| !s.is_empty()).map(str::to_string),
    )?)
}

pub fn render_project(req: &ProjectRequirement) -> String {
    let mut s = format!("id: {}\n", req.id);
    if let Some(h) = &req.environment_hint {
        s.push_str(&format!("environment_hint: {h}\n"));
    }
    s.push_str(&format!("workdir: {}\n\n{}\n", req.workdir, req.description));
    if !req.input_files.is_empty() {
        s.push_str("\ninputs:\n");
        for f in &req.input_files {
            s.push_str(&format!("- {} ({})\n", f.path, f.kind));
        }
    }
    s
}
