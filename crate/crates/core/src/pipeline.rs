//! The orchestrator: forward decomposition, per-function development loops
//! with pair programming, and backward assembly with single-shot module
//! validation.
//!
//! Every agent output is appended to the thought pool before anything else
//! reads it, and downstream context (the requirement text, the previous
//! version of a function) is read back from the pool.
//!
//! Work runs phase by phase across all modules so that the run stage only
//! ever moves forward. Within a phase, modules and functions are spread over
//! `module_parallelism` workers; results are joined in tree order.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::assembly::{module_interface, ModuleInterface};
use crate::agents::grammar::{PlanOutput, PlannedModule};
use crate::agents::{AgentError, Agents, BranchContext, ModulePlan, Reply, TemplateSet};
use crate::domain::{
    ArtifactLevel, CodeArtifact, DecompositionTree, FunctionNode, FunctionSignature, FunctionThought, ModuleNode,
    ModuleThought, ProjectRequirement, RunConfig, TreeAddress, Validation,
};
use crate::kb::{format_hits, Embedder, KbError, KnowledgeBases, KnowledgeIndex};
use crate::llm::{CostSummary, Gateway, PriceTable, Role, Stage, Tier};
use crate::pool::{Author, NewThought, PoolError, ThoughtKind, ThoughtPool};
use crate::sandbox::{Sandbox, SandboxError, SandboxSpec, StagedFile};

pub const RUN_SUMMARY: &str = "run.json";
pub const POOL_JOURNAL: &str = "pool.jsonl";
pub const PROJECT_DIR: &str = "project";
pub const PROJECT_FILE: &str = "main.py";

/// Sandbox counter labels.
pub const LABEL_FUNCTION: &str = "function";
pub const LABEL_MODULE: &str = "module";
pub const LABEL_PROJECT: &str = "project";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("input file `{path}`: {message}")]
    Input { path: String, message: String },
    #[error("run directory: {0}")]
    Io(#[from] io::Error),
    #[error("stage order violated: {from:?} -> {to:?}")]
    StageOrder { from: RunStage, to: RunStage },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStage {
    Planning,
    Decomposing,
    Implementing,
    AssemblingModules,
    ValidatingModules,
    AssemblingProject,
    Done,
    Failed,
}

impl RunStage {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStage::Planning => "planning",
            RunStage::Decomposing => "decomposing",
            RunStage::Implementing => "implementing",
            RunStage::AssemblingModules => "assembling_modules",
            RunStage::ValidatingModules => "validating_modules",
            RunStage::AssemblingProject => "assembling_project",
            RunStage::Done => "done",
            RunStage::Failed => "failed",
        }
    }
}

/// Status of one tree node as the run progresses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub validation: Validation,
    /// Generations for functions; assembled versions for modules.
    pub attempts: u32,
    /// Sandbox validations run for this node.
    pub validations: u32,
}

impl Default for NodeStatus {
    fn default() -> Self {
        Self { validation: Validation::Untested, attempts: 0, validations: 0 }
    }
}

/// Overall workflow state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub stage: RunStage,
    pub history: Vec<RunStage>,
    pub tree: DecompositionTree,
    pub statuses: BTreeMap<TreeAddress, NodeStatus>,
}

impl RunState {
    pub fn new(requirement: ProjectRequirement) -> Self {
        Self {
            stage: RunStage::Planning,
            history: vec![RunStage::Planning],
            tree: DecompositionTree::new(requirement),
            statuses: BTreeMap::new(),
        }
    }

    /// Moves strictly forward; `Failed` is reachable from any live stage.
    pub fn advance(&mut self, to: RunStage) -> Result<(), PipelineError> {
        let ok = match to {
            RunStage::Failed => !matches!(self.stage, RunStage::Done | RunStage::Failed),
            _ => to > self.stage && self.stage != RunStage::Failed,
        };
        if !ok {
            return Err(PipelineError::StageOrder { from: self.stage, to });
        }
        self.stage = to;
        self.history.push(to);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSummary {
    pub address: TreeAddress,
    pub name: String,
    #[serde(flatten)]
    pub status: NodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSummary {
    pub address: TreeAddress,
    pub name: String,
    #[serde(flatten)]
    pub status: NodeStatus,
    pub functions: Vec<FunctionSummary>,
}

/// What `run.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub requirement_id: String,
    pub stage: RunStage,
    pub stages: Vec<RunStage>,
    pub error: Option<String>,
    pub environment: Option<String>,
    pub modules: Vec<ModuleSummary>,
    /// Addresses whose artifacts ended `unvalidated_exhausted`.
    pub exhausted: Vec<TreeAddress>,
    pub llm_requests: BTreeMap<Tier, u64>,
    pub sandbox_invocations: BTreeMap<String, u64>,
    pub cost: Option<CostSummary>,
    pub notes: Vec<String>,
    pub project_file: Option<String>,
}

impl RunSummary {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn function_count(&self) -> usize {
        self.modules.iter().map(|m| m.functions.len()).sum()
    }

    pub fn render(&self) -> String {
        let mut s = format!("run {}: {}\n", self.requirement_id, self.stage.as_str());
        if let Some(e) = &self.error {
            s.push_str(&format!("error: {e}\n"));
        }
        if let Some(env) = &self.environment {
            s.push_str(&format!("environment: {env}\n"));
        }
        for m in &self.modules {
            s.push_str(&format!("module {} {} [{}]\n", m.address, m.name, m.status.validation));
            for f in &m.functions {
                s.push_str(&format!(
                    "  function {} {} [{}] generations={}\n",
                    f.address, f.name, f.status.validation, f.status.attempts
                ));
            }
        }
        for (label, n) in &self.sandbox_invocations {
            s.push_str(&format!("sandbox {label}: {n}\n"));
        }
        if let Some(c) = &self.cost {
            s.push_str(&c.render());
        }
        s
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub project: Option<CodeArtifact>,
    pub summary: RunSummary,
    pub state: RunState,
    pub run_dir: PathBuf,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.summary.stage == RunStage::Done
    }
}

/// Per-run resources: the pool, the run directory and the staged inputs.
pub struct RunContext {
    pub pool: ThoughtPool,
    pub run_dir: PathBuf,
    pub inputs: Vec<StagedFile>,
    pub requirement: ProjectRequirement,
    /// Runtime image chosen by the Team Leader.
    pub image: String,
}

impl RunContext {
    /// Creates `run_dir`, opens the pool journal and reads input files
    /// relative to `input_root`.
    pub fn create(
        requirement: &ProjectRequirement,
        run_dir: &Path,
        input_root: &Path,
        config: &RunConfig,
    ) -> Result<Self, PipelineError> {
        let inputs = read_inputs(requirement, input_root)?;
        fs::create_dir_all(run_dir)?;
        let pool = ThoughtPool::with_journal(&run_dir.join(POOL_JOURNAL), config.clock)?;
        Ok(Self {
            pool,
            run_dir: run_dir.to_path_buf(),
            inputs,
            requirement: requirement.clone(),
            image: String::new(),
        })
    }

    /// The requirement as recorded in the pool.
    pub fn requirement_text(&self) -> String {
        self.pool
            .latest(&TreeAddress::root(), ThoughtKind::Requirement)
            .map(|r| r.payload)
            .unwrap_or_else(|| self.requirement.description.clone())
    }

    fn sandbox_dir(&self, address: &TreeAddress, what: &str) -> PathBuf {
        self.run_dir.join("sandbox").join(node_dir(address)).join(what)
    }
}

pub fn read_inputs(requirement: &ProjectRequirement, root: &Path) -> Result<Vec<StagedFile>, PipelineError> {
    requirement
        .input_files
        .iter()
        .map(|f| {
            fs::read(root.join(&f.path))
                .map(|bytes| StagedFile::new(f.path.clone(), bytes))
                .map_err(|e| PipelineError::Input { path: f.path.clone(), message: e.to_string() })
        })
        .collect()
}

/// `/0/1` → `m0-f1`; root → `project`.
pub fn node_dir(address: &TreeAddress) -> String {
    match address.indices() {
        [] => "project".into(),
        [m] => format!("m{m}"),
        [m, f] => format!("m{m}-f{f}"),
        other => other.iter().map(usize::to_string).collect::<Vec<_>>().join("-"),
    }
}

/// Result of one function's development loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionOutcome {
    pub artifact: CodeArtifact,
    pub test_source: String,
    pub coder_calls: u32,
    pub validations: u32,
}

/// Result of validating one module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleOutcome {
    pub artifact: CodeArtifact,
    pub validations: u32,
    pub corrections: u32,
}

pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Everything a run needs besides the requirement.
pub struct Pipeline<'a> {
    pub config: &'a RunConfig,
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub sandbox: &'a Sandbox,
    pub knowledge: &'a KnowledgeBases,
    pub embedder: &'a (dyn Embedder + Sync),
    pub prices: PriceTable,
}

impl<'a> Pipeline<'a> {
    fn agents(&self) -> Agents<'_> {
        Agents::new(self.gateway, self.templates)
    }

    fn knowledge_for(&self, index: &KnowledgeIndex, query: &str) -> Result<String, PipelineError> {
        if self.config.kb_top_k == 0 || index.is_empty() {
            return Ok(String::new());
        }
        let hits = index.retrieve(query, self.config.kb_top_k, self.embedder)?;
        Ok(format_hits(&hits))
    }

    fn append(
        &self,
        run: &RunContext,
        author: Author,
        stage: impl std::fmt::Display,
        address: &TreeAddress,
        kind: ThoughtKind,
        payload: impl Into<String>,
    ) -> Result<u64, PipelineError> {
        Ok(run.pool.append(NewThought::new(author, stage, address.clone(), kind, payload))?)
    }

    fn notes<T>(&self, run: &RunContext, role: Role, stage: Stage, address: &TreeAddress, reply: &Reply<T>) -> Result<(), PipelineError> {
        for n in &reply.notes {
            self.append(run, Author::Agent(role), stage, address, ThoughtKind::Note, n.clone())?;
        }
        Ok(())
    }

    /// Team Leader only; nothing is executed. Used for dry runs.
    pub fn plan(&self, requirement: &ProjectRequirement) -> Result<ModulePlan, PipelineError> {
        let knowledge = self.knowledge_for(&self.knowledge.team_leader, &requirement.description)?;
        Ok(self
            .agents()
            .split_module_thoughts(requirement, &knowledge, self.sandbox.catalog())?
            .value)
    }

    /// Runs the whole flow, writing the run directory as it goes. Setup
    /// problems (unreadable inputs, unwritable run directory) are errors;
    /// everything after that ends in an outcome with stage `done` or `failed`.
    pub fn run_project(
        &self,
        requirement: &ProjectRequirement,
        run_dir: &Path,
        input_root: &Path,
    ) -> Result<RunOutcome, PipelineError> {
        let mut run = RunContext::create(requirement, run_dir, input_root, self.config)?;
        let mut state = RunState::new(requirement.clone());
        let mut notes = Vec::new();
        let result = self.drive(&mut run, &mut state, &mut notes);
        let (project, error) = match result {
            Ok(p) => (Some(p), None),
            Err(e) => {
                tracing::warn!(error = %e, stage = state.stage.as_str(), "run failed");
                let _ = self.append(&run, Author::Pipeline, state.stage.as_str(), &TreeAddress::root(), ThoughtKind::Note, format!("run failed: {e}"));
                state.advance(RunStage::Failed)?;
                (None, Some(e.to_string()))
            }
        };
        self.snapshot(&run, &state)?;
        let summary = self.summarize(&state, error, notes, project.is_some());
        fs::write(
            run.run_dir.join(RUN_SUMMARY),
            serde_json::to_string_pretty(&summary).map_err(io::Error::other)? + "\n",
        )?;
        Ok(RunOutcome { project, summary, state, run_dir: run.run_dir })
    }

    fn drive(&self, run: &mut RunContext, state: &mut RunState, notes: &mut Vec<String>) -> Result<CodeArtifact, PipelineError> {
        let root = TreeAddress::root();
        let requirement = run.requirement.clone();
        self.append(run, Author::Pipeline, RunStage::Planning.as_str(), &root, ThoughtKind::Requirement, requirement.description.clone())?;

        // forward: plan
        let knowledge = self.knowledge_for(&self.knowledge.team_leader, &run.requirement_text())?;
        let reply = self
            .agents()
            .split_module_thoughts(&requirement, &knowledge, self.sandbox.catalog())?;
        self.notes(run, Role::TeamLeader, Stage::Plan, &root, &reply)?;
        let plan = reply.value;
        run.image = plan.environment.clone();
        state.tree.environment = Some(plan.environment.clone());
        for m in &plan.modules {
            let addr = m.address();
            run.pool.register_node(&addr)?;
            self.append(run, Author::Agent(Role::TeamLeader), Stage::Plan, &addr, ThoughtKind::ModulePlan, render_module_plan(&plan.environment, m))?;
            state.tree.modules.push(ModuleNode { thought: m.clone(), functions: Vec::new() });
            state.statuses.insert(addr, NodeStatus::default());
        }
        self.snapshot(run, state)?;

        // forward: modules → functions → signatures
        state.advance(RunStage::Decomposing)?;
        let requirement_text = run.requirement_text();
        let run_ref: &RunContext = run;
        let decomposed = parallel_map(&plan.modules, self.config.module_parallelism, |m| {
            self.decompose_module(run_ref, m, &requirement_text)
        });
        for (mi, d) in decomposed.into_iter().enumerate() {
            let sigs = d?;
            for (fi, sig) in sigs.into_iter().enumerate() {
                state.tree.modules[mi].functions.push(FunctionNode { thought: sig.thought.clone(), signature: Some(sig) });
                state.statuses.insert(TreeAddress::function(mi, fi), NodeStatus::default());
            }
        }
        self.snapshot(run, state)?;

        // development groups
        state.advance(RunStage::Implementing)?;
        let jobs: Vec<(usize, usize)> = state
            .tree
            .modules
            .iter()
            .enumerate()
            .flat_map(|(mi, m)| (0..m.functions.len()).map(move |fi| (mi, fi)))
            .collect();
        let tree = &state.tree;
        let implemented = parallel_map(&jobs, self.config.module_parallelism, |&(mi, fi)| {
            let module = &tree.modules[mi].thought;
            let sig = tree.modules[mi].functions[fi].signature.as_ref().expect("refined");
            self.implement_function(run_ref, sig, &TreeAddress::function(mi, fi), module)
        });
        let mut functions: Vec<Vec<(FunctionThought, CodeArtifact)>> = vec![Vec::new(); state.tree.modules.len()];
        for (&(mi, fi), r) in jobs.iter().zip(implemented) {
            let out = r?;
            let addr = TreeAddress::function(mi, fi);
            state.statuses.insert(
                addr.clone(),
                NodeStatus { validation: out.artifact.validation, attempts: out.artifact.attempts, validations: out.validations },
            );
            if out.artifact.validation == Validation::UnvalidatedExhausted {
                notes.push(format!("function {addr} `{}` exhausted its retries", state.tree.modules[mi].functions[fi].thought.name));
            }
            functions[mi].push((state.tree.modules[mi].functions[fi].thought.clone(), out.artifact));
        }
        self.snapshot(run, state)?;

        // backward: module assembly
        state.advance(RunStage::AssemblingModules)?;
        let mut modules: Vec<CodeArtifact> = Vec::new();
        for (mi, fs_) in functions.iter().enumerate() {
            let module = &state.tree.modules[mi].thought;
            let ctx = BranchContext { requirement: &requirement_text, module };
            let reply = self.agents().assemble_module(fs_, ctx, self.config.assembly_mode)?;
            self.notes(run, Role::FunctionCoordinator, Stage::AssembleModule, &module.address(), &reply)?;
            self.append(run, Author::Agent(Role::FunctionCoordinator), Stage::AssembleModule, &module.address(), ThoughtKind::ModuleCode, reply.value.source.clone())?;
            modules.push(reply.value);
        }
        self.snapshot(run, state)?;

        // backward: single-shot module validation
        state.advance(RunStage::ValidatingModules)?;
        let indices: Vec<usize> = (0..modules.len()).collect();
        let tree = &state.tree;
        let validated = parallel_map(&indices, self.config.module_parallelism, |&mi| {
            self.validate_module(run_ref, &modules[mi], &tree.modules[mi].thought, &requirement_text)
        });
        let mut module_parts = Vec::new();
        for (mi, r) in validated.into_iter().enumerate() {
            let out = r?;
            let m = &state.tree.modules[mi].thought;
            state.statuses.insert(
                m.address(),
                NodeStatus { validation: out.artifact.validation, attempts: out.artifact.attempts, validations: out.validations },
            );
            if out.artifact.validation == Validation::UnvalidatedExhausted {
                notes.push(format!("module {} `{}` exhausted its correction budget", m.address(), m.name()));
            }
            let thoughts: Vec<FunctionThought> = functions[mi].iter().map(|(t, _)| t.clone()).collect();
            let iface: ModuleInterface = module_interface(m, &thoughts);
            module_parts.push((m.clone(), out.artifact, iface));
        }
        self.snapshot(run, state)?;

        // backward: project assembly, never executed
        state.advance(RunStage::AssemblingProject)?;
        let plan_text = PlanOutput {
            environment: plan.environment.clone(),
            modules: plan
                .modules
                .iter()
                .map(|m| PlannedModule { name: m.name().to_string(), description: m.description.clone() })
                .collect(),
        }
        .render();
        let reply = self
            .agents()
            .assemble_project(&module_parts, &requirement, &plan_text, self.config.assembly_mode)?;
        self.notes(run, Role::TeamLeader, Stage::AssembleProject, &root, &reply)?;
        notes.extend(reply.notes.iter().cloned());
        let project = reply.value;
        self.append(run, Author::Agent(Role::TeamLeader), Stage::AssembleProject, &root, ThoughtKind::ProjectCode, project.source.clone())?;
        let dir = run.run_dir.join(PROJECT_DIR);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(PROJECT_FILE), &project.source)?;
        state.advance(RunStage::Done)?;
        Ok(project)
    }

    fn decompose_module(
        &self,
        run: &RunContext,
        module: &ModuleThought,
        requirement_text: &str,
    ) -> Result<Vec<FunctionSignature>, PipelineError> {
        let ctx = BranchContext { requirement: requirement_text, module };
        let addr = module.address();
        let list = self.agents().split_function_thoughts(ctx)?;
        self.notes(run, Role::ModuleLeader, Stage::SplitFunctions, &addr, &list)?;
        for (fi, f) in list.value.functions.iter().enumerate() {
            let faddr = addr.child(fi);
            run.pool.register_node(&faddr)?;
            self.append(run, Author::Agent(Role::ModuleLeader), Stage::SplitFunctions, &faddr, ThoughtKind::FunctionThought, crate::agents::render_function_thought(f))?;
        }
        let sigs = self.agents().refine_function_thoughts(&list.value.functions, ctx)?;
        self.notes(run, Role::FunctionCoordinator, Stage::Refine, &addr, &sigs)?;
        for (fi, s) in sigs.value.iter().enumerate() {
            self.append(
                run,
                Author::Agent(Role::FunctionCoordinator),
                Stage::Refine,
                &addr.child(fi),
                ThoughtKind::Signature,
                format!("{}\n\n{}", s.signature_text, s.docstring),
            )?;
        }
        Ok(sigs.value)
    }

    fn spec(&self, run: &RunContext, dir: PathBuf) -> Result<SandboxSpec, PipelineError> {
        Ok(self.sandbox.spec(&run.image, dir)?)
    }

    /// Draft, draft tests, review, then validate; regenerate on failure up
    /// to `max_function_retries` times. The test script is drafted once.
    pub fn implement_function(
        &self,
        run: &RunContext,
        sig: &FunctionSignature,
        address: &TreeAddress,
        module: &ModuleThought,
    ) -> Result<FunctionOutcome, PipelineError> {
        let requirement = run.requirement_text();
        let ctx = BranchContext { requirement: &requirement, module };
        let agents = self.agents();
        let knowledge = self.knowledge_for(
            &self.knowledge.coder,
            &format!("{}\n{}", sig.signature_text, sig.docstring),
        )?;

        let draft = agents.draft_function(sig, address, ctx, &knowledge)?;
        self.notes(run, Role::Coder, Stage::DraftFunction, address, &draft)?;
        self.append(run, Author::Agent(Role::Coder), Stage::DraftFunction, address, ThoughtKind::FunctionCode, draft.value.source.clone())?;
        let mut coder_calls = 1;

        let tests = agents.draft_tests(&draft.value, sig, ctx)?;
        self.notes(run, Role::Tester, Stage::DraftTests, address, &tests)?;
        self.append(run, Author::Agent(Role::Tester), Stage::DraftTests, address, ThoughtKind::TestCode, tests.value.clone())?;
        let mut test_source = tests.value;

        if self.config.review_tests {
            let reviewed = agents.review_tests(&test_source, &draft.value, sig.name())?;
            self.notes(run, Role::Coder, Stage::ReviewTests, address, &reviewed)?;
            if reviewed.value != test_source {
                self.append(run, Author::Agent(Role::Coder), Stage::ReviewTests, address, ThoughtKind::TestCode, reviewed.value.clone())?;
                test_source = reviewed.value;
            }
        }

        let max = self.config.max_function_attempts();
        let mut attempts = 1;
        let mut validations = 0;
        loop {
            // backtrack through the pool rather than trusting local state
            let current = run
                .pool
                .latest(address, ThoughtKind::FunctionCode)
                .expect("function code appended above")
                .payload;
            let spec = self.spec(run, run.sandbox_dir(address, &format!("attempt-{attempts}")))?;
            let v = self
                .sandbox
                .run_validation(&spec, sig.name(), &current, &test_source, &run.inputs, LABEL_FUNCTION)?;
            validations += 1;
            if v.passed {
                let artifact = CodeArtifact { attempts, ..CodeArtifact::new(ArtifactLevel::Function, current, address.clone()) }
                    .with_validation(Validation::Passed);
                return Ok(FunctionOutcome { artifact, test_source, coder_calls, validations });
            }
            let report = v.result.report();
            self.append(run, Author::Sandbox, "validate_function", address, ThoughtKind::ErrorReport, report.clone())?;
            if attempts >= max {
                let artifact = CodeArtifact { attempts, ..CodeArtifact::new(ArtifactLevel::Function, current, address.clone()) }
                    .with_validation(Validation::UnvalidatedExhausted);
                return Ok(FunctionOutcome { artifact, test_source, coder_calls, validations });
            }
            let previous = CodeArtifact { attempts, ..CodeArtifact::new(ArtifactLevel::Function, current, address.clone()) }
                .with_validation(Validation::Failed { attempts });
            let next = agents.regenerate_function(sig, &previous, &report, ctx, self.config.max_function_retries)?;
            self.notes(run, Role::Coder, Stage::Regenerate, address, &next)?;
            self.append(run, Author::Agent(Role::Coder), Stage::Regenerate, address, ThoughtKind::FunctionCode, next.value.source.clone())?;
            coder_calls += 1;
            attempts = next.value.attempts;
        }
    }

    /// One test draft, one validation, then correction rounds up to the
    /// module correction budget.
    pub fn validate_module(
        &self,
        run: &RunContext,
        artifact: &CodeArtifact,
        module: &ModuleThought,
        requirement_text: &str,
    ) -> Result<ModuleOutcome, PipelineError> {
        let ctx = BranchContext { requirement: requirement_text, module };
        let addr = module.address();
        let agents = self.agents();
        let tests = agents.draft_module_tests(artifact, ctx)?;
        self.notes(run, Role::ModuleLeader, Stage::ModuleTests, &addr, &tests)?;
        self.append(run, Author::Agent(Role::ModuleLeader), Stage::ModuleTests, &addr, ThoughtKind::TestCode, tests.value.clone())?;
        let stem = module.file_stem();
        let mut current = artifact.clone();
        let mut validations = 0;
        let mut corrections = 0;
        loop {
            let spec = self.spec(run, run.sandbox_dir(&addr, &format!("validation-{}", validations + 1)))?;
            let v = self
                .sandbox
                .run_validation(&spec, &stem, &current.source, &tests.value, &run.inputs, LABEL_MODULE)?;
            validations += 1;
            if v.passed {
                return Ok(ModuleOutcome { artifact: current.with_validation(Validation::Passed), validations, corrections });
            }
            let report = v.result.report();
            self.append(run, Author::Sandbox, "validate_module", &addr, ThoughtKind::ErrorReport, report.clone())?;
            if corrections >= self.config.module_correction_budget {
                return Ok(ModuleOutcome {
                    artifact: current.with_validation(Validation::UnvalidatedExhausted),
                    validations,
                    corrections,
                });
            }
            let failed = current.clone().with_validation(Validation::Failed { attempts: current.attempts });
            let fixed = agents.correct_module(&failed, &report, ctx, corrections, self.config.module_correction_budget)?;
            self.notes(run, Role::FunctionCoordinator, Stage::CorrectModule, &addr, &fixed)?;
            self.append(run, Author::Agent(Role::FunctionCoordinator), Stage::CorrectModule, &addr, ThoughtKind::ModuleCode, fixed.value.source.clone())?;
            corrections += 1;
            current = fixed.value;
        }
    }

    fn snapshot(&self, run: &RunContext, state: &RunState) -> Result<(), PipelineError> {
        let dir = run.run_dir.join("snapshots");
        fs::create_dir_all(&dir)?;
        let n = state.history.len();
        let path = dir.join(format!("{n:02}-{}.json", state.stage.as_str()));
        fs::write(path, serde_json::to_string_pretty(state).map_err(io::Error::other)? + "\n")?;
        Ok(())
    }

    fn summarize(
        &self,
        state: &RunState,
        error: Option<String>,
        notes: Vec<String>,
        has_project: bool,
    ) -> RunSummary {
        let status = |a: &TreeAddress| state.statuses.get(a).cloned().unwrap_or_default();
        let modules: Vec<ModuleSummary> = state
            .tree
            .modules
            .iter()
            .enumerate()
            .map(|(mi, m)| ModuleSummary {
                address: TreeAddress::module(mi),
                name: m.thought.name().to_string(),
                status: status(&TreeAddress::module(mi)),
                functions: m
                    .functions
                    .iter()
                    .enumerate()
                    .map(|(fi, f)| FunctionSummary {
                        address: TreeAddress::function(mi, fi),
                        name: f.thought.name.clone(),
                        status: status(&TreeAddress::function(mi, fi)),
                    })
                    .collect(),
            })
            .collect();
        let exhausted = state
            .statuses
            .iter()
            .filter(|(_, s)| s.validation == Validation::UnvalidatedExhausted)
            .map(|(a, _)| a.clone())
            .collect();
        let ledger = self.gateway.ledger();
        let mut sandbox_invocations = self.sandbox.all_invocations();
        for label in [LABEL_FUNCTION, LABEL_MODULE, LABEL_PROJECT] {
            sandbox_invocations.entry(label.to_string()).or_insert(0);
        }
        let mut notes = notes;
        let cost = match ledger.report(&self.prices) {
            Ok(c) => Some(c),
            Err(e) => {
                notes.push(format!("cost unavailable: {e}"));
                None
            }
        };
        RunSummary {
            requirement_id: state.tree.requirement.id.clone(),
            stage: state.stage,
            stages: state.history.clone(),
            error,
            environment: state.tree.environment.clone(),
            modules,
            exhausted,
            llm_requests: ledger.per_tier().into_iter().map(|(t, v)| (t, v.requests)).collect(),
            sandbox_invocations,
            cost,
            notes,
            project_file: has_project.then(|| format!("{PROJECT_DIR}/{PROJECT_FILE}")),
        }
    }
}

fn render_module_plan(environment: &str, m: &ModuleThought) -> String {
    format!(
        "ENVIRONMENT: {environment}\nMODULE_NAME: {}\nMODULE_DESCRIPTION: {}",
        m.name(),
        m.description
    )
}
