//! Structured agent output.
//!
//! ```text
//! <<<BEGIN module_leader>>>
//! FUNCTION_NAME: load_image
//! DESCRIPTION: Read the input picture.
//! INPUTS: image_path: str
//! OUTPUTS: image: list of rows of gray values
//! ---
//! FUNCTION_NAME: ...
//! <<<END module_leader>>>
//! ```
//!
//! A section sits between sentinel lines and holds blocks separated by `---`.
//! Each block is a list of `TAG: value` lines; a value continues on following
//! lines indented by two spaces. Blank lines are ignored. Code travels in
//! triple-backtick fences tagged `python`, outside or inside the section.

use std::fmt;

use thiserror::Error;

use crate::domain::{is_identifier, Port};

pub const TAG_ENVIRONMENT: &str = "ENVIRONMENT";
pub const TAG_MODULE_NAME: &str = "MODULE_NAME";
pub const TAG_MODULE_DESCRIPTION: &str = "MODULE_DESCRIPTION";
pub const TAG_FUNCTION_NAME: &str = "FUNCTION_NAME";
pub const TAG_DESCRIPTION: &str = "DESCRIPTION";
pub const TAG_INPUTS: &str = "INPUTS";
pub const TAG_OUTPUTS: &str = "OUTPUTS";
pub const TAG_SIGNATURE: &str = "SIGNATURE";
pub const TAG_DOCSTRING: &str = "DOCSTRING";
pub const TAG_VERDICT: &str = "VERDICT";

const BLOCK_SEPARATOR: &str = "---";
const CONTINUATION: &str = "  ";
const FENCE: &str = "```";

pub fn begin_marker(section: &str) -> String {
    format!("<<<BEGIN {section}>>>")
}

pub fn end_marker(section: &str) -> String {
    format!("<<<END {section}>>>")
}

/// Where in a response a problem was found. Blocks are numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRef {
    pub section: String,
    pub block: usize,
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} block {}", self.section, self.block)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("missing `{}` section", begin_marker(.0))]
    MissingSection(String),
    #[error("`{}` appears more than once", begin_marker(.0))]
    DuplicateSection(String),
    #[error("`{}` has no matching `{}`", begin_marker(.0), end_marker(.0))]
    Unterminated(String),
    #[error("{at}: unexpected line `{line}`")]
    BadLine { at: BlockRef, line: String },
    #[error("{at}: block is empty")]
    EmptyBlock { at: BlockRef },
    #[error("{at}: missing tag {tag}")]
    MissingTag { at: BlockRef, tag: &'static str },
    #[error("{at}: tag {tag} given more than once")]
    DuplicateTag { at: BlockRef, tag: String },
    #[error("{at}: tag {tag} is not allowed here")]
    UnexpectedTag { at: BlockRef, tag: String },
    #[error("{at}: {message}")]
    BadValue { at: BlockRef, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("code fence opened at line {0} is never closed")]
    UnterminatedFence(usize),
    #[error("no ```python code fence in response")]
    NoCode,
    #[error("{0} ```python code fences in response; expected exactly one")]
    AmbiguousCode(usize),
}

/// One `TAG: value` group.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Block {
    pub fields: Vec<(String, String)>,
}

impl Block {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, tag: &str, value: impl Into<String>) -> Self {
        self.fields.push((tag.to_string(), value.into()));
        self
    }

    pub fn get(&self, tag: &str) -> Option<&str> {
        self.fields.iter().find(|(t, _)| t == tag).map(|(_, v)| v.as_str())
    }

    fn render(&self, out: &mut String) {
        for (tag, value) in &self.fields {
            let mut lines = value.lines();
            out.push_str(tag);
            out.push(':');
            if let Some(first) = lines.next() {
                if !first.is_empty() {
                    out.push(' ');
                    out.push_str(first);
                }
            }
            out.push('\n');
            for l in lines.filter(|l| !l.trim().is_empty()) {
                out.push_str(CONTINUATION);
                out.push_str(l);
                out.push('\n');
            }
        }
    }
}

/// Normalizes a value the way a render/parse round trip would.
pub fn normalize_value(v: &str) -> String {
    let mut lines = v.lines();
    let mut out: Vec<String> = Vec::new();
    if let Some(first) = lines.next() {
        out.push(first.trim().to_string());
    }
    for l in lines {
        let t = l.trim_end();
        if !t.trim().is_empty() {
            out.push(t.to_string());
        }
    }
    out.join("\n")
}

pub fn render_section(section: &str, blocks: &[Block]) -> String {
    let mut out = begin_marker(section);
    out.push('\n');
    for (i, b) in blocks.iter().enumerate() {
        if i > 0 {
            out.push_str(BLOCK_SEPARATOR);
            out.push('\n');
        }
        b.render(&mut out);
    }
    out.push_str(&end_marker(section));
    out.push('\n');
    out
}

fn is_tag(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_uppercase() || c == '_')
}

/// Finds the unique `section` in `text` and splits it into blocks.
pub fn parse_section(text: &str, section: &str) -> Result<Vec<Block>, GrammarError> {
    let begin = begin_marker(section);
    let end = end_marker(section);
    let lines: Vec<&str> = text.lines().collect();
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim() == begin)
        .map(|(i, _)| i)
        .collect();
    let start = match starts.as_slice() {
        [] => return Err(GrammarError::MissingSection(section.into())),
        [s] => *s,
        _ => return Err(GrammarError::DuplicateSection(section.into())),
    };
    let stop = lines[start + 1..]
        .iter()
        .position(|l| l.trim() == end)
        .map(|p| start + 1 + p)
        .ok_or_else(|| GrammarError::Unterminated(section.into()))?;

    let mut blocks = vec![Block::new()];
    for raw in &lines[start + 1..stop] {
        let n = blocks.len();
        let at = || BlockRef { section: section.into(), block: n };
        if raw.trim().is_empty() {
            continue;
        }
        if raw.trim() == BLOCK_SEPARATOR {
            if blocks.last().is_some_and(|b| b.fields.is_empty()) {
                return Err(GrammarError::EmptyBlock { at: at() });
            }
            blocks.push(Block::new());
            continue;
        }
        if raw.starts_with(' ') || raw.starts_with('\t') {
            let cont = raw.strip_prefix(CONTINUATION).unwrap_or(raw.trim_start()).trim_end();
            match blocks.last_mut().and_then(|b| b.fields.last_mut()) {
                Some((_, v)) => {
                    if !v.is_empty() {
                        v.push('\n');
                    }
                    v.push_str(cont);
                }
                None => return Err(GrammarError::BadLine { at: at(), line: raw.to_string() }),
            }
            continue;
        }
        match raw.split_once(':') {
            Some((tag, value)) if is_tag(tag) => {
                let block = blocks.last_mut().expect("non-empty");
                if block.get(tag).is_some() {
                    return Err(GrammarError::DuplicateTag { at: at(), tag: tag.into() });
                }
                block.fields.push((tag.to_string(), value.trim().to_string()));
            }
            _ => return Err(GrammarError::BadLine { at: at(), line: raw.to_string() }),
        }
    }
    if blocks.last().is_some_and(|b| b.fields.is_empty()) {
        if blocks.len() == 1 {
            return Ok(Vec::new());
        }
        return Err(GrammarError::EmptyBlock {
            at: BlockRef { section: section.into(), block: blocks.len() },
        });
    }
    Ok(blocks)
}

/// Checks a block carries exactly `required` (plus any of `optional`).
fn check_tags(
    block: &Block,
    at: &BlockRef,
    required: &[&'static str],
    optional: &[&'static str],
) -> Result<(), GrammarError> {
    for (tag, _) in &block.fields {
        if !required.contains(&tag.as_str()) && !optional.contains(&tag.as_str()) {
            return Err(GrammarError::UnexpectedTag { at: at.clone(), tag: tag.clone() });
        }
    }
    for tag in required {
        if block.get(tag).is_none() {
            return Err(GrammarError::MissingTag { at: at.clone(), tag });
        }
    }
    Ok(())
}

fn required<'a>(block: &'a Block, at: &BlockRef, tag: &'static str) -> Result<&'a str, GrammarError> {
    let v = block.get(tag).unwrap_or_default();
    if v.trim().is_empty() {
        return Err(GrammarError::BadValue { at: at.clone(), message: format!("{tag} is empty") });
    }
    Ok(v)
}

fn identifier(block: &Block, at: &BlockRef, tag: &'static str) -> Result<String, GrammarError> {
    let v = required(block, at, tag)?.trim();
    if !is_identifier(v) {
        return Err(GrammarError::BadValue {
            at: at.clone(),
            message: format!("{tag} `{v}` is not a valid identifier"),
        });
    }
    Ok(v.to_string())
}

/// Team Leader output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOutput {
    pub environment: String,
    pub modules: Vec<PlannedModule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedModule {
    pub name: String,
    pub description: String,
}

impl PlanOutput {
    pub const SECTION: &'static str = "team_leader";

    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let blocks = parse_section(text, Self::SECTION)?;
        let at = |i: usize| BlockRef { section: Self::SECTION.into(), block: i + 1 };
        let Some(first) = blocks.first() else {
            return Err(GrammarError::MissingTag { at: at(0), tag: TAG_ENVIRONMENT });
        };
        check_tags(first, &at(0), &[TAG_ENVIRONMENT], &[])?;
        let environment = required(first, &at(0), TAG_ENVIRONMENT)?.trim().to_string();
        let modules = blocks[1..]
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let at = at(i + 1);
                check_tags(b, &at, &[TAG_MODULE_NAME, TAG_MODULE_DESCRIPTION], &[])?;
                Ok(PlannedModule {
                    name: identifier(b, &at, TAG_MODULE_NAME)?,
                    description: required(b, &at, TAG_MODULE_DESCRIPTION)?.to_string(),
                })
            })
            .collect::<Result<Vec<_>, GrammarError>>()?;
        Ok(Self { environment, modules })
    }

    pub fn render(&self) -> String {
        let mut blocks = vec![Block::new().with(TAG_ENVIRONMENT, &self.environment)];
        blocks.extend(self.modules.iter().map(|m| {
            Block::new()
                .with(TAG_MODULE_NAME, &m.name)
                .with(TAG_MODULE_DESCRIPTION, &m.description)
        }));
        render_section(Self::SECTION, &blocks)
    }
}

/// Module Leader output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionListOutput {
    pub functions: Vec<PlannedFunction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedFunction {
    pub name: String,
    pub description: String,
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
}

/// `a: int; b: list of str` ↔ ports. `none` means no ports.
pub fn parse_ports(value: &str) -> Result<Vec<Port>, String> {
    let v = value.trim();
    if v.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    v.split(';')
        .map(|part| {
            let (name, ty) = part
                .split_once(':')
                .ok_or_else(|| format!("port `{}` must read `name: type`", part.trim()))?;
            let (name, ty) = (name.trim(), ty.trim());
            if !is_identifier(name) {
                return Err(format!("port name `{name}` is not a valid identifier"));
            }
            if ty.is_empty() {
                return Err(format!("port `{name}` has no type"));
            }
            Ok(Port::new(name, ty.replace('\n', " ")))
        })
        .collect()
}

pub fn render_ports(ports: &[Port]) -> String {
    if ports.is_empty() {
        return "none".into();
    }
    ports
        .iter()
        .map(|p| format!("{}: {}", p.name, p.described_type))
        .collect::<Vec<_>>()
        .join("; ")
}

impl FunctionListOutput {
    pub const SECTION: &'static str = "module_leader";

    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let blocks = parse_section(text, Self::SECTION)?;
        let functions = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let at = BlockRef { section: Self::SECTION.into(), block: i + 1 };
                check_tags(b, &at, &[TAG_FUNCTION_NAME, TAG_DESCRIPTION, TAG_INPUTS, TAG_OUTPUTS], &[])?;
                let ports = |tag| {
                    parse_ports(b.get(tag).unwrap_or_default())
                        .map_err(|message| GrammarError::BadValue { at: at.clone(), message: format!("{tag}: {message}") })
                };
                Ok(PlannedFunction {
                    name: identifier(b, &at, TAG_FUNCTION_NAME)?,
                    description: required(b, &at, TAG_DESCRIPTION)?.to_string(),
                    inputs: ports(TAG_INPUTS)?,
                    outputs: ports(TAG_OUTPUTS)?,
                })
            })
            .collect::<Result<Vec<_>, GrammarError>>()?;
        Ok(Self { functions })
    }

    pub fn render(&self) -> String {
        let blocks: Vec<Block> = self
            .functions
            .iter()
            .map(|f| {
                Block::new()
                    .with(TAG_FUNCTION_NAME, &f.name)
                    .with(TAG_DESCRIPTION, &f.description)
                    .with(TAG_INPUTS, render_ports(&f.inputs))
                    .with(TAG_OUTPUTS, render_ports(&f.outputs))
            })
            .collect();
        render_section(Self::SECTION, &blocks)
    }
}

/// Function Coordinator output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureListOutput {
    pub signatures: Vec<PlannedSignature>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedSignature {
    pub name: String,
    pub signature: String,
    pub docstring: String,
}

impl SignatureListOutput {
    pub const SECTION: &'static str = "function_coordinator";

    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let blocks = parse_section(text, Self::SECTION)?;
        let signatures = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let at = BlockRef { section: Self::SECTION.into(), block: i + 1 };
                check_tags(b, &at, &[TAG_FUNCTION_NAME, TAG_SIGNATURE, TAG_DOCSTRING], &[])?;
                let signature = required(b, &at, TAG_SIGNATURE)?.trim().to_string();
                super::signature::parse_signature(&signature)
                    .map_err(|message| GrammarError::BadValue { at: at.clone(), message })?;
                Ok(PlannedSignature {
                    name: identifier(b, &at, TAG_FUNCTION_NAME)?,
                    signature,
                    docstring: required(b, &at, TAG_DOCSTRING)?.to_string(),
                })
            })
            .collect::<Result<Vec<_>, GrammarError>>()?;
        Ok(Self { signatures })
    }

    pub fn render(&self) -> String {
        let blocks: Vec<Block> = self
            .signatures
            .iter()
            .map(|s| {
                Block::new()
                    .with(TAG_FUNCTION_NAME, &s.name)
                    .with(TAG_SIGNATURE, &s.signature)
                    .with(TAG_DOCSTRING, &s.docstring)
            })
            .collect();
        render_section(Self::SECTION, &blocks)
    }
}

/// Coder's verdict on the Tester's script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReviewOutput {
    NoChanges,
    Revised(String),
}

impl ReviewOutput {
    pub const SECTION: &'static str = "coder_review";

    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let blocks = parse_section(text, Self::SECTION)?;
        let at = BlockRef { section: Self::SECTION.into(), block: 1 };
        let [block] = blocks.as_slice() else {
            return Err(GrammarError::Invalid(format!(
                "{} must hold exactly one block, found {}",
                Self::SECTION,
                blocks.len()
            )));
        };
        check_tags(block, &at, &[TAG_VERDICT], &[])?;
        match required(block, &at, TAG_VERDICT)?.trim() {
            "no_changes" => Ok(Self::NoChanges),
            "revised" => Ok(Self::Revised(extract_code(text)?)),
            other => Err(GrammarError::BadValue {
                at,
                message: format!("VERDICT must be `no_changes` or `revised`, got `{other}`"),
            }),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Self::NoChanges => render_section(Self::SECTION, &[Block::new().with(TAG_VERDICT, "no_changes")]),
            Self::Revised(code) => format!(
                "{}{}",
                render_section(Self::SECTION, &[Block::new().with(TAG_VERDICT, "revised")]),
                fence(code)
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fence {
    pub language: String,
    pub body: String,
}

/// All fenced code blocks, in order.
pub fn extract_fences(text: &str) -> Result<Vec<Fence>, GrammarError> {
    let mut out = Vec::new();
    let mut open: Option<(usize, String, Vec<&str>)> = None;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        match open.as_mut() {
            None => {
                if let Some(lang) = trimmed.strip_prefix(FENCE) {
                    open = Some((i + 1, lang.trim().to_ascii_lowercase(), Vec::new()));
                }
            }
            Some((_, _, body)) => {
                if trimmed.trim_end() == FENCE {
                    let (_, language, body) = open.take().expect("open");
                    out.push(Fence { language, body: body.join("\n") });
                } else {
                    body.push(line);
                }
            }
        }
    }
    if let Some((line, _, _)) = open {
        return Err(GrammarError::UnterminatedFence(line));
    }
    Ok(out)
}

/// The single `python` fence in a response.
pub fn extract_code(text: &str) -> Result<String, GrammarError> {
    let py: Vec<Fence> = extract_fences(text)?
        .into_iter()
        .filter(|f| f.language == "python" || f.language == "py")
        .collect();
    match py.len() {
        0 => Err(GrammarError::NoCode),
        1 => Ok(py.into_iter().next().expect("one").body),
        n => Err(GrammarError::AmbiguousCode(n)),
    }
}

pub fn fence(code: &str) -> String {
    format!("{FENCE}python\n{}\n{FENCE}\n", code.trim_end_matches('\n'))
}
