//! Prompt templates with `{{name}}` placeholders.
//!
//! Defaults are compiled in; a directory of `<name>.txt` files overrides any
//! subset of them.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::llm::{Role, Stage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template `{0}`")]
    Unknown(String),
    #[error("template `{template}` has no value for `{{{{{name}}}}}`")]
    MissingValue { template: String, name: String },
    #[error("template `{template}` is missing required placeholder `{{{{{name}}}}}`")]
    MissingPlaceholder { template: String, name: String },
    #[error("template `{template}` may not use `{{{{{name}}}}}`")]
    ForbiddenPlaceholder { template: String, name: String },
    #[error("template `{0}` has an unclosed placeholder")]
    Unclosed(String),
    #[error("reading template directory: {0}")]
    Io(String),
}

macro_rules! defaults {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../assets/templates/", $name, ".txt")))),*]
    };
}

const DEFAULTS: &[(&str, &str)] = defaults![
    "team_leader.structural",
    "team_leader.functional",
    "team_leader.plan",
    "team_leader.assemble_project",
    "module_leader.structural",
    "module_leader.functional",
    "module_leader.split_functions",
    "module_leader.module_tests",
    "function_coordinator.structural",
    "function_coordinator.functional",
    "function_coordinator.refine",
    "function_coordinator.assemble_module",
    "function_coordinator.correct_module",
    "coder.structural",
    "coder.functional",
    "coder.draft_function",
    "coder.review_tests",
    "coder.regenerate",
    "tester.structural",
    "tester.functional",
    "tester.draft_tests",
    "reprompt",
];

pub const KNOWLEDGE: &str = "knowledge";

/// Placeholders each user-prompt template must contain.
fn required_placeholders(name: &str) -> &'static [&'static str] {
    match name {
        "team_leader.plan" => &["requirement", "catalog", KNOWLEDGE],
        "team_leader.assemble_project" => &["requirement", "module_plan", "modules"],
        "module_leader.split_functions" => &["requirement", "module", "hyper"],
        "module_leader.module_tests" => &["requirement", "module", "module_code"],
        "function_coordinator.refine" => &["requirement", "module", "functions"],
        "function_coordinator.assemble_module" => &["requirement", "module", "functions_code"],
        "function_coordinator.correct_module" => &["requirement", "module", "module_code", "error_report"],
        "coder.draft_function" => &["requirement", "module", "signature", KNOWLEDGE],
        "coder.review_tests" => &["function_code", "test_code"],
        "coder.regenerate" => &["signature", "previous_code", "error_report"],
        "tester.draft_tests" => &["requirement", "module", "signature", "function_code"],
        "reprompt" => &["error"],
        _ => &[],
    }
}

/// Only Team Leader and Coder prompts may carry retrieved knowledge.
fn knowledge_allowed(name: &str) -> bool {
    name.starts_with("team_leader.") || name.starts_with("coder.")
}

pub fn user_template_name(role: Role, stage: Stage) -> String {
    format!("{role}.{stage}")
}

/// Role definition delivered as the system message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentDefinition {
    pub role: Role,
    pub structural_text: String,
    pub functional_text: String,
}

impl AgentDefinition {
    pub fn system_message(&self) -> String {
        format!("{}\n{}", self.structural_text.trim_end(), self.functional_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// Placeholder names in order of appearance.
pub fn placeholders(text: &str) -> Result<Vec<&str>, ()> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(())?;
        out.push(after[..end].trim());
        rest = &after[end + 2..];
    }
    Ok(out)
}

impl TemplateSet {
    /// Defaults overlaid with any `<name>.txt` found in `dir`.
    pub fn load(dir: Option<&Path>) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        if let Some(dir) = dir {
            let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Io(format!("{}: {e}", dir.display())))?;
            for entry in entries {
                let path = entry.map_err(|e| TemplateError::Io(e.to_string()))?.path();
                let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
                if path.extension().is_some_and(|e| e == "txt") && set.templates.contains_key(stem) {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
                    set.templates.insert(stem.to_string(), text);
                }
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for (name, text) in &self.templates {
            let found = placeholders(text).map_err(|_| TemplateError::Unclosed(name.clone()))?;
            for req in required_placeholders(name) {
                if !found.contains(req) {
                    return Err(TemplateError::MissingPlaceholder { template: name.clone(), name: req.to_string() });
                }
            }
            if !knowledge_allowed(name) && found.contains(&KNOWLEDGE) {
                return Err(TemplateError::ForbiddenPlaceholder { template: name.clone(), name: KNOWLEDGE.into() });
            }
        }
        Ok(())
    }

    pub fn raw(&self, name: &str) -> Result<&str, TemplateError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn definition(&self, role: Role) -> Result<AgentDefinition, TemplateError> {
        Ok(AgentDefinition {
            role,
            structural_text: self.raw(&format!("{role}.structural"))?.to_string(),
            functional_text: self.raw(&format!("{role}.functional"))?.to_string(),
        })
    }

    /// Substitutes every placeholder; a placeholder without a value is an error.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let text = self.raw(name)?;
        let mut out = String::with_capacity(text.len() * 2);
        let mut rest = text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| TemplateError::Unclosed(name.into()))?;
            let key = after[..end].trim();
            let value = values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingValue { template: name.into(), name: key.into() })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
