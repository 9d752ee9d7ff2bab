//! The five agent roles.
//!
//! Each operation renders a prompt from the role's definition and a stage
//! template, calls the gateway, and parses the reply with the strict output
//! grammar. A malformed reply earns exactly one reprompt; a second failure is
//! an error (or, for review and llm-mode assembly, a recorded degradation).

pub mod assembly;
pub mod grammar;
pub mod pysrc;
pub mod signature;
pub mod templates;

use std::collections::HashSet;

use thiserror::Error;

use crate::domain::{
    ArtifactLevel, AssemblyMode, CodeArtifact, FunctionSignature, FunctionThought, HyperThought,
    ModuleThought, ProjectRequirement, TreeAddress, Validation,
};
use crate::llm::{CallKey, ChatMessage, Gateway, LlmError, Role, Stage};
use crate::sandbox::Catalog;

use assembly::{assemble_module_source, assemble_project_source, AssemblyError, ModuleInterface, ProjectPart};
use grammar::{
    extract_code, FunctionListOutput, PlanOutput, ReviewOutput, SignatureListOutput,
};
use pysrc::{split_imports, top_level_defs};
pub use templates::{AgentDefinition, TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("decomposition failed at {key}: {message}")]
    Decomposition { key: CallKey, message: String },
    #[error("code generation failed at {key}: {message}")]
    Draft { key: CallKey, message: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("module correction budget of {0} round(s) exhausted")]
    BudgetExhausted(u32),
    #[error("assembly failed: {0}")]
    Assembly(#[from] AssemblyError),
}

/// A parsed reply plus how many backend calls it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply<T> {
    pub value: T,
    pub calls: u32,
    pub notes: Vec<String>,
}

impl<T> Reply<T> {
    fn map<U>(self, f: impl FnOnce(T) -> U) -> Reply<U> {
        Reply { value: f(self.value), calls: self.calls, notes: self.notes }
    }
}

enum AskError {
    Llm(LlmError),
    Template(TemplateError),
    Malformed(String),
}

/// Context shared by every operation below the project root: the root
/// requirement text as read back from the thought pool, and the module.
#[derive(Debug, Clone, Copy)]
pub struct BranchContext<'a> {
    pub requirement: &'a str,
    pub module: &'a ModuleThought,
}

pub fn render_module(module: &ModuleThought) -> String {
    format!("{}: {}", module.name(), module.description)
}

pub fn render_hyper(h: &HyperThought) -> String {
    format!(
        "module name: {}\nlanguage: {}\nruntime environment: {}\nwork directory: {}",
        h.module_name(),
        h.language(),
        h.runtime_environment(),
        h.work_directory()
    )
}

pub fn render_function_thought(f: &FunctionThought) -> String {
    FunctionListOutput {
        functions: vec![grammar::PlannedFunction {
            name: f.name.clone(),
            description: f.description.clone(),
            inputs: f.inputs.clone(),
            outputs: f.outputs.clone(),
        }],
    }
    .render()
}

pub fn render_requirement(req: &ProjectRequirement) -> String {
    req.description.clone()
}

fn check_function_code(code: &str, name: &str) -> Result<(), String> {
    let defs = top_level_defs(code);
    match defs.as_slice() {
        [only] if only == name => Ok(()),
        [only] => Err(format!("the top-level function is `{only}`, expected `{name}`")),
        [] => Err(format!("the code defines no top-level function `{name}`")),
        many => Err(format!(
            "the code defines {} top-level functions ({}); expected exactly one",
            many.len(),
            many.join(", ")
        )),
    }
}

fn check_script(code: &str, must_mention: &str) -> Result<(), String> {
    if code.trim().is_empty() {
        return Err("the script is empty".into());
    }
    if !code.contains(must_mention) {
        return Err(format!("the script never references `{must_mention}`"));
    }
    Ok(())
}

/// Operations of every role, bound to one gateway and template set.
pub struct Agents<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
}

impl<'a> Agents<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet) -> Self {
        Self { gateway, templates }
    }

    fn ask<T>(
        &self,
        key: &CallKey,
        values: &[(&str, &str)],
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Reply<T>, AskError> {
        let def = self.templates.definition(key.role).map_err(AskError::Template)?;
        let user = self
            .templates
            .render(&templates::user_template_name(key.role, key.stage), values)
            .map_err(AskError::Template)?;
        let mut messages = vec![ChatMessage::system(def.system_message()), ChatMessage::user(user)];
        let first = self.gateway.complete(key, &messages).map_err(AskError::Llm)?;
        let err = match parse(&first.text) {
            Ok(v) => return Ok(Reply { value: v, calls: 1, notes: Vec::new() }),
            Err(e) => e,
        };
        tracing::debug!(%key, error = %err, "malformed reply, reprompting");
        let reprompt = self
            .templates
            .render("reprompt", &[("error", &err)])
            .map_err(AskError::Template)?;
        messages.push(ChatMessage::assistant(first.text));
        messages.push(ChatMessage::user(reprompt));
        let second = self.gateway.complete(key, &messages).map_err(AskError::Llm)?;
        parse(&second.text)
            .map(|v| Reply { value: v, calls: 2, notes: vec![format!("reprompted after: {err}")] })
            .map_err(AskError::Malformed)
    }

    fn decomposition<T>(&self, key: CallKey, r: Result<Reply<T>, AskError>) -> Result<Reply<T>, AgentError> {
        r.map_err(|e| match e {
            AskError::Llm(e) => AgentError::Llm(e),
            AskError::Template(e) => AgentError::Template(e),
            AskError::Malformed(message) => AgentError::Decomposition { key, message },
        })
    }

    fn draft<T>(&self, key: CallKey, r: Result<Reply<T>, AskError>) -> Result<Reply<T>, AgentError> {
        r.map_err(|e| match e {
            AskError::Llm(e) => AgentError::Llm(e),
            AskError::Template(e) => AgentError::Template(e),
            AskError::Malformed(message) => AgentError::Draft { key, message },
        })
    }

    /// Team Leader: project → modules plus the runtime environment.
    pub fn split_module_thoughts(
        &self,
        requirement: &ProjectRequirement,
        knowledge: &str,
        catalog: &Catalog,
    ) -> Result<Reply<ModulePlan>, AgentError> {
        let key = CallKey::new(Role::TeamLeader, Stage::Plan, TreeAddress::root());
        let mut inputs: Vec<String> = requirement
            .input_files
            .iter()
            .map(|f| format!("- {} ({})", f.path, f.kind))
            .collect();
        if inputs.is_empty() {
            inputs.push("(none)".into());
        }
        if let Some(hint) = &requirement.environment_hint {
            inputs.push(format!("Suggested environment: {hint}"));
        }
        let input_files = inputs.join("\n");
        let catalog_text = catalog.render();
        let knowledge = knowledge_section(knowledge);
        let values = [
            ("requirement", requirement.description.as_str()),
            ("input_files", input_files.as_str()),
            ("catalog", catalog_text.as_str()),
            ("knowledge", knowledge.as_str()),
        ];
        let parse = |text: &str| -> Result<ModulePlan, String> {
            let plan = PlanOutput::parse(text).map_err(|e| e.to_string())?;
            if plan.modules.is_empty() {
                return Err("the plan contains no modules".into());
            }
            if !catalog.contains(&plan.environment) {
                return Err(format!(
                    "environment `{}` is not in the catalog ({})",
                    plan.environment,
                    catalog.names().join(", ")
                ));
            }
            let mut seen = HashSet::new();
            let mut modules = Vec::with_capacity(plan.modules.len());
            for (index, m) in plan.modules.iter().enumerate() {
                if !seen.insert(m.name.as_str()) {
                    return Err(format!("module name `{}` is used twice", m.name));
                }
                let hyper = HyperThought::new(&m.name, &plan.environment, &requirement.workdir)
                    .map_err(|e| e.to_string())?;
                modules.push(ModuleThought {
                    hyper,
                    description: m.description.clone(),
                    index,
                    parent: requirement.id.clone(),
                });
            }
            Ok(ModulePlan { environment: plan.environment.clone(), modules, output: plan })
        };
        let r = self.ask(&key, &values, parse);
        self.decomposition(key, r)
    }

    /// Module Leader: module → function thoughts.
    pub fn split_function_thoughts(&self, ctx: BranchContext<'_>) -> Result<Reply<FunctionList>, AgentError> {
        let module = ctx.module;
        let key = CallKey::new(Role::ModuleLeader, Stage::SplitFunctions, module.address());
        let module_text = render_module(module);
        let hyper = render_hyper(&module.hyper);
        let values = [("requirement", ctx.requirement), ("module", module_text.as_str()), ("hyper", hyper.as_str())];
        let parse = |text: &str| -> Result<FunctionList, String> {
            let out = FunctionListOutput::parse(text).map_err(|e| e.to_string())?;
            if out.functions.is_empty() {
                return Err(format!("module `{}` has no functions", module.name()));
            }
            let mut seen = HashSet::new();
            let mut functions = Vec::new();
            for f in &out.functions {
                if !seen.insert(f.name.as_str()) {
                    return Err(format!("function name `{}` is used twice in module `{}`", f.name, module.name()));
                }
                functions.push(
                    FunctionThought::new(&f.name, &f.description, f.inputs.clone(), f.outputs.clone(), module.address())
                        .map_err(|e| e.to_string())?,
                );
            }
            Ok(FunctionList { functions, output: out })
        };
        let r = self.ask(&key, &values, parse);
        self.decomposition(key, r)
    }

    /// Function Coordinator: thoughts → typed signatures, order preserved.
    pub fn refine_function_thoughts(
        &self,
        functions: &[FunctionThought],
        ctx: BranchContext<'_>,
    ) -> Result<Reply<Vec<FunctionSignature>>, AgentError> {
        let module = ctx.module;
        if functions.is_empty() {
            return Err(AgentError::Precondition("no function thoughts to refine".into()));
        }
        if let Some(f) = functions.iter().find(|f| f.parent != module.address()) {
            return Err(AgentError::Precondition(format!(
                "function `{}` belongs to {}, not module {}",
                f.name,
                f.parent,
                module.address()
            )));
        }
        let key = CallKey::new(Role::FunctionCoordinator, Stage::Refine, module.address());
        let module_text = render_module(module);
        let thoughts = FunctionListOutput {
            functions: functions
                .iter()
                .map(|f| grammar::PlannedFunction {
                    name: f.name.clone(),
                    description: f.description.clone(),
                    inputs: f.inputs.clone(),
                    outputs: f.outputs.clone(),
                })
                .collect(),
        }
        .render();
        let values = [("requirement", ctx.requirement), ("module", module_text.as_str()), ("functions", thoughts.as_str())];
        let parse = |text: &str| -> Result<Vec<FunctionSignature>, String> {
            let out = SignatureListOutput::parse(text).map_err(|e| e.to_string())?;
            if out.signatures.len() != functions.len() {
                return Err(format!(
                    "expected {} signatures, got {}",
                    functions.len(),
                    out.signatures.len()
                ));
            }
            functions
                .iter()
                .zip(&out.signatures)
                .enumerate()
                .map(|(i, (thought, planned))| {
                    let block = i + 1;
                    if planned.name != thought.name {
                        return Err(format!(
                            "{} block {block}: expected function `{}`, got `{}`",
                            SignatureListOutput::SECTION,
                            thought.name,
                            planned.name
                        ));
                    }
                    let parsed = signature::parse_signature(&planned.signature)?;
                    if parsed.name != thought.name {
                        return Err(format!(
                            "{} block {block}: signature names `{}`, expected `{}`",
                            SignatureListOutput::SECTION,
                            parsed.name,
                            thought.name
                        ));
                    }
                    if parsed.params.len() != thought.inputs.len() {
                        return Err(format!(
                            "{} block {block}: `{}` takes {} parameter(s) but the thought lists {} input(s)",
                            SignatureListOutput::SECTION,
                            thought.name,
                            parsed.params.len(),
                            thought.inputs.len()
                        ));
                    }
                    Ok(FunctionSignature {
                        thought: thought.clone(),
                        signature_text: planned.signature.clone(),
                        docstring: planned.docstring.clone(),
                    })
                })
                .collect()
        };
        let r = self.ask(&key, &values, parse);
        self.decomposition(key, r)
    }

    /// Coder: first version of one function.
    pub fn draft_function(
        &self,
        sig: &FunctionSignature,
        address: &TreeAddress,
        ctx: BranchContext<'_>,
        knowledge: &str,
    ) -> Result<Reply<CodeArtifact>, AgentError> {
        signature::parse_signature(&sig.signature_text).map_err(AgentError::Precondition)?;
        let key = CallKey::new(Role::Coder, Stage::DraftFunction, address.clone());
        let module_text = render_module(ctx.module);
        let hyper = render_hyper(&ctx.module.hyper);
        let knowledge = knowledge_section(knowledge);
        let values = [
            ("requirement", ctx.requirement),
            ("module", module_text.as_str()),
            ("hyper", hyper.as_str()),
            ("signature", sig.signature_text.as_str()),
            ("docstring", sig.docstring.as_str()),
            ("function_file", sig.name()),
            ("knowledge", knowledge.as_str()),
        ];
        let parse = |text: &str| -> Result<String, String> {
            let code = extract_code(text).map_err(|e| e.to_string())?;
            check_function_code(&code, sig.name())?;
            Ok(code)
        };
        let r = self.ask(&key, &values, parse);
        Ok(self
            .draft(key, r)?
            .map(|code| CodeArtifact::new(ArtifactLevel::Function, code, address.clone())))
    }

    /// Tester: a standalone script exercising the Coder's first version.
    pub fn draft_tests(
        &self,
        function: &CodeArtifact,
        sig: &FunctionSignature,
        ctx: BranchContext<'_>,
    ) -> Result<Reply<String>, AgentError> {
        if function.validation != Validation::Untested {
            return Err(AgentError::Precondition(format!(
                "tests are drafted against an untested first version, found {}",
                function.validation
            )));
        }
        let key = CallKey::new(Role::Tester, Stage::DraftTests, function.origin.clone());
        let module_text = render_module(ctx.module);
        let hyper = render_hyper(&ctx.module.hyper);
        let values = [
            ("requirement", ctx.requirement),
            ("module", module_text.as_str()),
            ("hyper", hyper.as_str()),
            ("signature", sig.signature_text.as_str()),
            ("docstring", sig.docstring.as_str()),
            ("function_code", function.source.as_str()),
            ("function_file", sig.name()),
            ("function_name", sig.name()),
        ];
        let parse = |text: &str| -> Result<String, String> {
            let code = extract_code(text).map_err(|e| e.to_string())?;
            check_script(&code, sig.name())?;
            Ok(code)
        };
        let r = self.ask(&key, &values, parse);
        self.draft(key, r)
    }

    /// Coder reviews the Tester's script (pair programming). A malformed
    /// review keeps the original script and records a note.
    pub fn review_tests(&self, test_source: &str, function: &CodeArtifact, function_name: &str) -> Result<Reply<String>, AgentError> {
        if test_source.trim().is_empty() || function.source.trim().is_empty() {
            return Err(AgentError::Precondition("review needs both the test and the function source".into()));
        }
        let key = CallKey::new(Role::Coder, Stage::ReviewTests, function.origin.clone());
        let def = self.templates.definition(Role::Coder)?;
        let user = self.templates.render(
            "coder.review_tests",
            &[
                ("function_code", function.source.as_str()),
                ("test_code", test_source),
                ("function_file", function_name),
            ],
        )?;
        let reply = self
            .gateway
            .complete(&key, &[ChatMessage::system(def.system_message()), ChatMessage::user(user)])?;
        Ok(match ReviewOutput::parse(&reply.text) {
            Ok(ReviewOutput::NoChanges) => Reply { value: test_source.to_string(), calls: 1, notes: vec![] },
            Ok(ReviewOutput::Revised(code)) => Reply { value: code, calls: 1, notes: vec![] },
            Err(e) => Reply {
                value: test_source.to_string(),
                calls: 1,
                notes: vec![format!("review skipped, test script kept as drafted: {e}")],
            },
        })
    }

    /// Coder rewrites a failed function using the sandbox report. `previous`
    /// must be the version read back from the thought pool.
    pub fn regenerate_function(
        &self,
        sig: &FunctionSignature,
        previous: &CodeArtifact,
        error_report: &str,
        ctx: BranchContext<'_>,
        max_retries: u32,
    ) -> Result<Reply<CodeArtifact>, AgentError> {
        if !matches!(previous.validation, Validation::Failed { .. }) {
            return Err(AgentError::Precondition(format!(
                "regeneration needs a failed artifact, found {}",
                previous.validation
            )));
        }
        if previous.attempts > max_retries {
            return Err(AgentError::Precondition(format!(
                "attempt budget spent: {} of {} generations used",
                previous.attempts,
                1 + max_retries
            )));
        }
        let key = CallKey::new(Role::Coder, Stage::Regenerate, previous.origin.clone());
        let module_text = render_module(ctx.module);
        let values = [
            ("requirement", ctx.requirement),
            ("module", module_text.as_str()),
            ("signature", sig.signature_text.as_str()),
            ("docstring", sig.docstring.as_str()),
            ("function_file", sig.name()),
            ("previous_code", previous.source.as_str()),
            ("error_report", error_report),
        ];
        let parse = |text: &str| -> Result<String, String> {
            let code = extract_code(text).map_err(|e| e.to_string())?;
            check_function_code(&code, sig.name())?;
            Ok(code)
        };
        let r = self.ask(&key, &values, parse);
        let attempts = previous.attempts + 1;
        Ok(self.draft(key, r)?.map(|code| CodeArtifact {
            attempts,
            ..CodeArtifact::new(ArtifactLevel::Function, code, previous.origin.clone())
        }))
    }

    /// Function Coordinator: validated functions → module script.
    pub fn assemble_module(
        &self,
        functions: &[(FunctionThought, CodeArtifact)],
        ctx: BranchContext<'_>,
        mode: AssemblyMode,
    ) -> Result<Reply<CodeArtifact>, AgentError> {
        let module = ctx.module;
        if functions.is_empty() {
            return Err(AssemblyError::Empty.into());
        }
        if let Some((t, a)) = functions
            .iter()
            .find(|(_, a)| !matches!(a.validation, Validation::Passed | Validation::UnvalidatedExhausted))
        {
            return Err(AgentError::Precondition(format!(
                "function `{}` is {}, not validated or exhausted",
                t.name, a.validation
            )));
        }
        let pairs: Vec<(&FunctionThought, &str)> = functions.iter().map(|(t, a)| (t, a.source.as_str())).collect();
        let deterministic = || -> Result<CodeArtifact, AgentError> {
            let src = assemble_module_source(module, &pairs)?;
            Ok(CodeArtifact::new(ArtifactLevel::Module, src, module.address()))
        };
        if mode == AssemblyMode::Deterministic {
            return Ok(Reply { value: deterministic()?, calls: 0, notes: vec![] });
        }

        let key = CallKey::new(Role::FunctionCoordinator, Stage::AssembleModule, module.address());
        let module_text = render_module(module);
        let functions_code: String = functions
            .iter()
            .map(|(t, a)| format!("# {}\n{}", t.name, grammar::fence(&a.source)))
            .collect::<Vec<_>>()
            .join("\n");
        let entry = module.entry_name();
        let values = [
            ("requirement", ctx.requirement),
            ("module", module_text.as_str()),
            ("functions_code", functions_code.as_str()),
            ("entry", entry.as_str()),
        ];
        let bodies: Vec<String> = functions.iter().map(|(_, a)| split_imports(&a.source).body).collect();
        let parse = |text: &str| -> Result<String, String> {
            let code = extract_code(text).map_err(|e| e.to_string())?;
            if let Some((i, _)) = bodies.iter().enumerate().find(|(_, b)| !code.contains(b.as_str())) {
                return Err(format!("the body of `{}` was not kept verbatim", functions[i].0.name));
            }
            if !top_level_defs(&code).contains(&entry) {
                return Err(format!("entry function `{entry}` is missing"));
            }
            Ok(code)
        };
        match self.ask(&key, &values, parse) {
            Ok(r) => Ok(r.map(|src| CodeArtifact::new(ArtifactLevel::Module, src, module.address()))),
            Err(AskError::Malformed(e)) => Ok(Reply {
                value: deterministic()?,
                calls: 2,
                notes: vec![format!("llm assembly rejected ({e}); used deterministic assembly")],
            }),
            Err(AskError::Llm(e)) => Err(e.into()),
            Err(AskError::Template(e)) => Err(e.into()),
        }
    }

    /// Module Leader: test script for an assembled module.
    pub fn draft_module_tests(&self, module_artifact: &CodeArtifact, ctx: BranchContext<'_>) -> Result<Reply<String>, AgentError> {
        let module = ctx.module;
        let key = CallKey::new(Role::ModuleLeader, Stage::ModuleTests, module.address());
        let module_text = render_module(module);
        let hyper = render_hyper(&module.hyper);
        let stem = module.file_stem();
        let entry = module.entry_name();
        let values = [
            ("requirement", ctx.requirement),
            ("module", module_text.as_str()),
            ("hyper", hyper.as_str()),
            ("module_code", module_artifact.source.as_str()),
            ("module_file", stem.as_str()),
            ("entry", entry.as_str()),
        ];
        let parse = |text: &str| -> Result<String, String> {
            let code = extract_code(text).map_err(|e| e.to_string())?;
            check_script(&code, &stem)?;
            Ok(code)
        };
        let r = self.ask(&key, &values, parse);
        self.draft(key, r)
    }

    /// Function Coordinator fixes a module that failed its tests.
    pub fn correct_module(
        &self,
        module_artifact: &CodeArtifact,
        error_report: &str,
        ctx: BranchContext<'_>,
        rounds_used: u32,
        budget: u32,
    ) -> Result<Reply<CodeArtifact>, AgentError> {
        if !matches!(module_artifact.validation, Validation::Failed { .. }) {
            return Err(AgentError::Precondition(format!(
                "correction needs a failed module, found {}",
                module_artifact.validation
            )));
        }
        if rounds_used >= budget {
            return Err(AgentError::BudgetExhausted(budget));
        }
        let module = ctx.module;
        let key = CallKey::new(Role::FunctionCoordinator, Stage::CorrectModule, module.address());
        let module_text = render_module(module);
        let values = [
            ("requirement", ctx.requirement),
            ("module", module_text.as_str()),
            ("module_code", module_artifact.source.as_str()),
            ("error_report", error_report),
        ];
        let parse = |text: &str| extract_code(text).map_err(|e| e.to_string());
        let r = self.ask(&key, &values, parse);
        let attempts = module_artifact.attempts + 1;
        Ok(self.draft(key, r)?.map(|src| CodeArtifact {
            attempts,
            ..CodeArtifact::new(ArtifactLevel::Module, src, module.address())
        }))
    }

    /// Team Leader: modules → project script. Never validated afterwards.
    pub fn assemble_project(
        &self,
        modules: &[(ModuleThought, CodeArtifact, ModuleInterface)],
        requirement: &ProjectRequirement,
        plan_text: &str,
        mode: AssemblyMode,
    ) -> Result<Reply<CodeArtifact>, AgentError> {
        if modules.is_empty() {
            return Err(AssemblyError::Empty.into());
        }
        let parts: Vec<ProjectPart<'_>> = modules
            .iter()
            .map(|(m, a, i)| ProjectPart { module: m, source: &a.source, interface: i.clone() })
            .collect();
        let deterministic = || -> Result<(CodeArtifact, Vec<String>), AgentError> {
            let out = assemble_project_source(&parts, requirement)?;
            Ok((CodeArtifact::new(ArtifactLevel::Project, out.source, TreeAddress::root()), out.notes))
        };
        if mode == AssemblyMode::Deterministic {
            let (a, notes) = deterministic()?;
            return Ok(Reply { value: a, calls: 0, notes });
        }

        let key = CallKey::new(Role::TeamLeader, Stage::AssembleProject, TreeAddress::root());
        let modules_text: String = modules
            .iter()
            .map(|(m, a, i)| {
                format!(
                    "# module {} `{}`: entry {}({}) returns {}\n{}",
                    m.index,
                    m.name(),
                    i.entry,
                    i.params.join(", "),
                    if i.returns.is_empty() { "nothing".to_string() } else { i.returns.join(", ") },
                    grammar::fence(&a.source)
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let values = [
            ("requirement", requirement.description.as_str()),
            ("module_plan", plan_text),
            ("modules", modules_text.as_str()),
        ];
        let bodies: Vec<String> = modules.iter().map(|(_, a, _)| split_imports(&a.source).body).collect();
        let parse = |text: &str| -> Result<String, String> {
            let code = extract_code(text).map_err(|e| e.to_string())?;
            if let Some((i, _)) = bodies.iter().enumerate().find(|(_, b)| !code.contains(b.as_str())) {
                return Err(format!("module `{}` was not kept verbatim", modules[i].0.name()));
            }
            Ok(code)
        };
        match self.ask(&key, &values, parse) {
            Ok(r) => Ok(r.map(|src| CodeArtifact::new(ArtifactLevel::Project, src, TreeAddress::root()))),
            Err(AskError::Malformed(e)) => {
                let (a, mut notes) = deterministic()?;
                notes.insert(0, format!("llm assembly rejected ({e}); used deterministic assembly"));
                Ok(Reply { value: a, calls: 2, notes })
            }
            Err(AskError::Llm(e)) => Err(e.into()),
            Err(AskError::Template(e)) => Err(e.into()),
        }
    }
}

fn knowledge_section(block: &str) -> String {
    if block.is_empty() {
        String::new()
    } else {
        format!("\nReference examples:\n{block}\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModulePlan {
    pub environment: String,
    pub modules: Vec<ModuleThought>,
    pub output: PlanOutput,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionList {
    pub functions: Vec<FunctionThought>,
    pub output: FunctionListOutput,
}
