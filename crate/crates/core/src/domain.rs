//! Decomposition tree, thoughts, code artifacts and run configuration.
//!
//! Everything here is an immutable value once constructed. The tree is
//! addressed by index paths from the project root: the root is `/`, the second
//! module's first function is `/1/0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::BackendRef;

/// The only target language the orchestrator emits.
pub const CODE_LANGUAGE: &str = "python";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("project description is empty")]
    EmptyDescription,
    #[error("input file path `{0}` must be relative without `..` components")]
    BadInputPath(String),
    #[error("`{0}` is not a valid identifier")]
    BadIdentifier(String),
    #[error("node is not registered in the decomposition tree")]
    DetachedNode,
    #[error("malformed tree address `{0}`")]
    BadAddress(String),
    #[error("invalid run configuration: {0}")]
    BadConfig(String),
}

/// Conservative identifier rule: letter or underscore start, alphanumeric or
/// underscore body.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Relative, no parent traversal, no absolute root.
pub fn is_safe_relative_path(p: &str) -> bool {
    use std::path::{Component, Path};
    if p.is_empty() {
        return false;
    }
    Path::new(p)
        .components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

/// Index path from the project root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct TreeAddress(Vec<usize>);

impl TreeAddress {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn module(index: usize) -> Self {
        Self(vec![index])
    }

    pub fn function(module: usize, function: usize) -> Self {
        Self(vec![module, function])
    }

    pub fn from_indices(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, index: usize) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        Self(v)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(Self(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// True if `self` lies on the path from the root to `other` (inclusive).
    pub fn is_prefix_of(&self, other: &TreeAddress) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Ancestors from the root down to and including `self`.
    pub fn path_from_root(&self) -> Vec<TreeAddress> {
        (0..=self.0.len()).map(|n| Self(self.0[..n].to_vec())).collect()
    }
}

impl fmt::Display for TreeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("/");
        }
        for i in &self.0 {
            write!(f, "/{i}")?;
        }
        Ok(())
    }
}

impl FromStr for TreeAddress {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "/" {
            return Ok(Self::root());
        }
        let rest = s
            .strip_prefix('/')
            .ok_or_else(|| DomainError::BadAddress(s.to_string()))?;
        rest.split('/')
            .map(|part| part.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
            .map_err(|_| DomainError::BadAddress(s.to_string()))
    }
}

impl From<TreeAddress> for String {
    fn from(a: TreeAddress) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for TreeAddress {
    type Error = DomainError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Image,
    Data,
    Other,
}

impl InputKind {
    /// Guess from the file extension.
    pub fn from_path(path: &str) -> Self {
        let ext = path.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).unwrap_or_default();
        match ext.as_str() {
            "png" | "jpg" | "jpeg" | "bmp" | "pgm" | "ppm" | "pnm" | "tif" | "tiff" | "gif" | "webp" => Self::Image,
            "csv" | "json" | "txt" | "npy" | "tsv" | "yaml" | "yml" => Self::Data,
            _ => Self::Other,
        }
    }
}

impl FromStr for InputKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(Self::Image),
            "data" => Ok(Self::Data),
            "other" => Ok(Self::Other),
            other => Err(format!("unknown input kind `{other}`")),
        }
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Image => "image",
            Self::Data => "data",
            Self::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub kind: InputKind,
}

/// The root task handed to the Team Leader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRequirement {
    pub id: String,
    pub description: String,
    pub input_files: Vec<InputFile>,
    pub workdir: String,
    pub environment_hint: Option<String>,
}

impl ProjectRequirement {
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        input_files: Vec<InputFile>,
        workdir: impl Into<String>,
        environment_hint: Option<String>,
    ) -> Result<Self, DomainError> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(DomainError::EmptyDescription);
        }
        for f in &input_files {
            if !is_safe_relative_path(&f.path) {
                return Err(DomainError::BadInputPath(f.path.clone()));
            }
        }
        let workdir = workdir.into();
        if !is_safe_relative_path(&workdir) {
            return Err(DomainError::BadInputPath(workdir));
        }
        Ok(Self {
            id: id.into(),
            description,
            input_files,
            workdir,
            environment_hint,
        })
    }

    /// Input files of kind image.
    pub fn images(&self) -> impl Iterator<Item = &InputFile> {
        self.input_files.iter().filter(|f| f.kind == InputKind::Image)
    }
}

/// Fixed facts about a module, set by the Team Leader and inherited verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperThought {
    module_name: String,
    language: String,
    runtime_environment: String,
    work_directory: String,
}

impl HyperThought {
    pub fn new(
        module_name: impl Into<String>,
        runtime_environment: impl Into<String>,
        work_directory: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let module_name = module_name.into();
        if !is_identifier(&module_name) {
            return Err(DomainError::BadIdentifier(module_name));
        }
        Ok(Self {
            module_name,
            language: CODE_LANGUAGE.to_string(),
            runtime_environment: runtime_environment.into(),
            work_directory: work_directory.into(),
        })
    }

    pub fn module_name(&self) -> &str {
        &self.module_name
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn runtime_environment(&self) -> &str {
        &self.runtime_environment
    }

    pub fn work_directory(&self) -> &str {
        &self.work_directory
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleThought {
    pub hyper: HyperThought,
    pub description: String,
    pub index: usize,
    pub parent: String,
}

impl ModuleThought {
    pub fn name(&self) -> &str {
        self.hyper.module_name()
    }

    pub fn address(&self) -> TreeAddress {
        TreeAddress::module(self.index)
    }

    /// Snake-case form used for the module file and entry function.
    pub fn file_stem(&self) -> String {
        snake_case(self.name())
    }

    pub fn entry_name(&self) -> String {
        format!("run_{}", self.file_stem())
    }
}

/// A named value flowing in or out of a function, with a prose type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub described_type: String,
}

impl Port {
    pub fn new(name: impl Into<String>, described_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            described_type: described_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionThought {
    pub name: String,
    pub description: String,
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub parent: TreeAddress,
}

impl FunctionThought {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        inputs: Vec<Port>,
        outputs: Vec<Port>,
        parent: TreeAddress,
    ) -> Result<Self, DomainError> {
        let name = name.into();
        if !is_identifier(&name) {
            return Err(DomainError::BadIdentifier(name));
        }
        for p in inputs.iter().chain(&outputs) {
            if !is_identifier(&p.name) {
                return Err(DomainError::BadIdentifier(p.name.clone()));
            }
        }
        Ok(Self {
            name,
            description: description.into(),
            inputs,
            outputs,
            parent,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSignature {
    pub thought: FunctionThought,
    pub signature_text: String,
    pub docstring: String,
}

impl FunctionSignature {
    pub fn name(&self) -> &str {
        &self.thought.name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactLevel {
    Function,
    Module,
    Project,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Validation {
    Untested,
    Passed,
    Failed { attempts: u32 },
    UnvalidatedExhausted,
}

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Untested => f.write_str("untested"),
            Self::Passed => f.write_str("passed"),
            Self::Failed { attempts } => write!(f, "failed({attempts})"),
            Self::UnvalidatedExhausted => f.write_str("unvalidated_exhausted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub level: ArtifactLevel,
    pub source: String,
    pub origin: TreeAddress,
    pub validation: Validation,
    pub attempts: u32,
}

impl CodeArtifact {
    pub fn new(level: ArtifactLevel, source: impl Into<String>, origin: TreeAddress) -> Self {
        Self {
            level,
            source: source.into(),
            origin,
            validation: Validation::Untested,
            attempts: 1,
        }
    }

    pub fn with_validation(mut self, validation: Validation) -> Self {
        self.validation = validation;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    #[default]
    Deterministic,
    Llm,
}

impl FromStr for AssemblyMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "llm" => Ok(Self::Llm),
            other => Err(format!("unknown assembly mode `{other}`")),
        }
    }
}

impl fmt::Display for AssemblyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Deterministic => "deterministic",
            Self::Llm => "llm",
        })
    }
}

/// Source of `created_at` stamps on thought records. Logical stamps make
/// scripted runs byte-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Wall,
    Logical,
}

pub const DEFAULT_MAX_FUNCTION_RETRIES: u32 = 3;
pub const DEFAULT_MODULE_CORRECTION_BUDGET: u32 = 2;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub decision_model: BackendRef,
    pub implementer_model: BackendRef,
    pub max_function_retries: u32,
    pub module_correction_budget: u32,
    pub module_parallelism: usize,
    pub sandbox_timeout: f64,
    pub assembly_mode: AssemblyMode,
    pub clock: ClockMode,
    /// Pair-programming review of tester output; on by default.
    pub review_tests: bool,
    /// Knowledge hits injected into Team Leader and Coder prompts.
    pub kb_top_k: usize,
}

impl RunConfig {
    pub fn new(decision_model: BackendRef, implementer_model: BackendRef) -> Self {
        Self {
            decision_model,
            implementer_model,
            max_function_retries: DEFAULT_MAX_FUNCTION_RETRIES,
            module_correction_budget: DEFAULT_MODULE_CORRECTION_BUDGET,
            module_parallelism: 1,
            sandbox_timeout: 60.0,
            assembly_mode: AssemblyMode::Deterministic,
            clock: ClockMode::Wall,
            review_tests: true,
            kb_top_k: 2,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.sandbox_timeout > 0.0) {
            return Err(DomainError::BadConfig("sandbox_timeout must be > 0".into()));
        }
        if self.module_parallelism == 0 {
            return Err(DomainError::BadConfig("module_parallelism must be >= 1".into()));
        }
        Ok(())
    }

    /// Generation rounds a function may consume: the draft plus regenerations.
    pub fn max_function_attempts(&self) -> u32 {
        1 + self.max_function_retries
    }
}

/// A node handed to [`DecompositionTree::address_of`].
#[derive(Debug, Clone, Copy)]
pub enum TreeNode<'a> {
    Project(&'a ProjectRequirement),
    Module(&'a ModuleThought),
    Function(&'a FunctionThought),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionNode {
    pub thought: FunctionThought,
    pub signature: Option<FunctionSignature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleNode {
    pub thought: ModuleThought,
    pub functions: Vec<FunctionNode>,
}

/// Project → modules → functions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionTree {
    pub requirement: ProjectRequirement,
    pub environment: Option<String>,
    pub modules: Vec<ModuleNode>,
}

impl DecompositionTree {
    pub fn new(requirement: ProjectRequirement) -> Self {
        Self {
            requirement,
            environment: None,
            modules: Vec::new(),
        }
    }

    pub fn address_of(&self, node: TreeNode<'_>) -> Result<TreeAddress, DomainError> {
        match node {
            TreeNode::Project(p) if *p == self.requirement => Ok(TreeAddress::root()),
            TreeNode::Project(_) => Err(DomainError::DetachedNode),
            TreeNode::Module(m) => self
                .modules
                .get(m.index)
                .filter(|n| n.thought == *m)
                .map(|_| TreeAddress::module(m.index))
                .ok_or(DomainError::DetachedNode),
            TreeNode::Function(f) => {
                let &[mi] = f.parent.indices() else {
                    return Err(DomainError::DetachedNode);
                };
                let module = self.modules.get(mi).ok_or(DomainError::DetachedNode)?;
                module
                    .functions
                    .iter()
                    .position(|n| n.thought == *f)
                    .map(|fi| TreeAddress::function(mi, fi))
                    .ok_or(DomainError::DetachedNode)
            }
        }
    }

    pub fn function_count(&self) -> usize {
        self.modules.iter().map(|m| m.functions.len()).sum()
    }

    /// Every registered address, in tree order.
    pub fn addresses(&self) -> Vec<TreeAddress> {
        let mut out = vec![TreeAddress::root()];
        for (mi, m) in self.modules.iter().enumerate() {
            out.push(TreeAddress::module(mi));
            out.extend((0..m.functions.len()).map(|fi| TreeAddress::function(mi, fi)));
        }
        out
    }
}

/// `LicensePlateDetection` → `license_plate_detection`.
pub fn snake_case(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 4);
    let chars: Vec<char> = name.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_uppercase() {
            let prev_lower = i > 0 && (chars[i - 1].is_ascii_lowercase() || chars[i - 1].is_ascii_digit());
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            let prev_upper = i > 0 && chars[i - 1].is_ascii_uppercase();
            if i > 0 && (prev_lower || (prev_upper && next_lower)) && !out.ends_with('_') {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ProjectRequirement {
        ProjectRequirement::new("p", "detect plates", vec![], ".", None).unwrap()
    }

    fn tree() -> DecompositionTree {
        let mut t = DecompositionTree::new(req());
        for (i, name) in ["A", "B"].iter().enumerate() {
            let thought = ModuleThought {
                hyper: HyperThought::new(*name, "img", "work").unwrap(),
                description: "d".into(),
                index: i,
                parent: "p".into(),
            };
            let functions = (0..2)
                .map(|j| FunctionNode {
                    thought: FunctionThought::new(
                        format!("f{j}"),
                        "d",
                        vec![],
                        vec![],
                        TreeAddress::module(i),
                    )
                    .unwrap(),
                    signature: None,
                })
                .collect();
            t.modules.push(ModuleNode { thought, functions });
        }
        t
    }

    #[test]
    fn root_has_empty_address() {
        let t = tree();
        assert_eq!(t.address_of(TreeNode::Project(&t.requirement)).unwrap(), TreeAddress::root());
        assert_eq!(TreeAddress::root().to_string(), "/");
    }

    #[test]
    fn second_module_first_function() {
        let t = tree();
        let f = &t.modules[1].functions[0].thought;
        let addr = t.address_of(TreeNode::Function(f)).unwrap();
        assert_eq!(addr.indices(), &[1, 0]);
        assert_eq!(addr.to_string(), "/1/0");
        assert_eq!("/1/0".parse::<TreeAddress>().unwrap(), addr);
    }

    #[test]
    fn detached_node_is_an_error() {
        let t = tree();
        let stray = FunctionThought::new("zzz", "d", vec![], vec![], TreeAddress::module(0)).unwrap();
        assert_eq!(t.address_of(TreeNode::Function(&stray)), Err(DomainError::DetachedNode));
        let other = ProjectRequirement::new("q", "x", vec![], ".", None).unwrap();
        assert_eq!(t.address_of(TreeNode::Project(&other)), Err(DomainError::DetachedNode));
    }

    #[test]
    fn addresses_are_unique() {
        let t = tree();
        let addrs = t.addresses();
        let set: std::collections::HashSet<_> = addrs.iter().collect();
        assert_eq!(set.len(), addrs.len());
        assert_eq!(addrs.len(), 1 + 2 + 4);
    }

    #[test]
    fn requirement_validation() {
        assert_eq!(
            ProjectRequirement::new("p", "  ", vec![], ".", None),
            Err(DomainError::EmptyDescription)
        );
        let bad = InputFile { path: "../etc/passwd".into(), kind: InputKind::Data };
        assert!(matches!(
            ProjectRequirement::new("p", "x", vec![bad], ".", None),
            Err(DomainError::BadInputPath(_))
        ));
        let abs = InputFile { path: "/etc/passwd".into(), kind: InputKind::Data };
        assert!(ProjectRequirement::new("p", "x", vec![abs], ".", None).is_err());
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("load_image"));
        assert!(is_identifier("_x1"));
        assert!(!is_identifier("1x"));
        assert!(!is_identifier("a-b"));
        assert!(!is_identifier(""));
    }

    #[test]
    fn hyper_thought_language_is_fixed() {
        let h = HyperThought::new("ImageInput", "img", "w").unwrap();
        assert_eq!(h.language(), "python");
    }

    #[test]
    fn snake_case_names() {
        assert_eq!(snake_case("LicensePlateDetection"), "license_plate_detection");
        assert_eq!(snake_case("ImageInput"), "image_input");
        assert_eq!(snake_case("OCRReader"), "ocr_reader");
        assert_eq!(snake_case("already_snake"), "already_snake");
    }

    #[test]
    fn bad_addresses() {
        assert!("1/0".parse::<TreeAddress>().is_err());
        assert!("/a".parse::<TreeAddress>().is_err());
    }
}
