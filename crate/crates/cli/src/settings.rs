//! Configuration resolution. Clap merges flags over environment variables;
//! [`Settings::resolve`] layers the result over the config file and then
//! the built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use tiercode::agents::TemplateSet;
use tiercode::domain::{AssemblyMode, DEFAULT_MAX_FUNCTION_RETRIES, DEFAULT_MODULE_CORRECTION_BUDGET};
use tiercode::eval::{CompareMode, SCRIPTED_DIR};
use tiercode::kb::{Embedder, HashingEmbedder, KnowledgeBases, KnowledgeIndex, RemoteEmbedder, DEFAULT_DIMENSION};
use tiercode::llm::{BackendRef, Price, PriceTable, Script};
use tiercode::sandbox::{BackendKind, Catalog, Sandbox};
use tiercode::RunConfig;

pub const DEFAULT_CREDENTIALS_ENV: &str = "TIERCODE_API_KEY";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_RUNS_DIR: &str = "runs";
pub const DEFAULT_SANDBOX_TIMEOUT: f64 = 60.0;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files. Nothing was run.
    #[error("{0}")]
    Usage(String),
    /// Something failed while doing the work.
    #[error("{0}")]
    Runtime(String),
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SandboxArg {
    Container,
    Subprocess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CompareArg {
    Exact,
    #[value(name = "image_tolerance")]
    ImageTolerance,
}

impl From<CompareArg> for CompareMode {
    fn from(c: CompareArg) -> Self {
        match c {
            CompareArg::Exact => CompareMode::Exact,
            CompareArg::ImageTolerance => CompareMode::ImageTolerance,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = "TIERCODE_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Decision-tier backend: `scripted:<file or dir>` or `remote:<model>@<endpoint>`.
    #[arg(long, global = true, env = "TIERCODE_BACKEND_DECISION", value_name = "SPEC")]
    pub backend_decision: Option<String>,

    /// Implementer-tier backend, same forms as --backend-decision.
    #[arg(long, global = true, env = "TIERCODE_BACKEND_IMPLEMENTER", value_name = "SPEC")]
    pub backend_implementer: Option<String>,

    /// Scripted replies for both tiers: a script file, a directory of
    /// `*.script` files, or a fixture directory holding `scripted/`.
    #[arg(long, global = true, env = "TIERCODE_SCRIPTED", value_name = "DIR")]
    pub scripted: Option<PathBuf>,

    /// Where generated code runs.
    #[arg(long, global = true, env = "TIERCODE_SANDBOX", value_enum)]
    pub sandbox: Option<SandboxArg>,

    /// Seconds before a sandboxed execution is killed.
    #[arg(long, global = true, env = "TIERCODE_SANDBOX_TIMEOUT", value_name = "SECS")]
    pub sandbox_timeout: Option<f64>,

    /// Regenerations allowed per function after the first draft.
    #[arg(long, global = true, env = "TIERCODE_MAX_RETRIES", value_name = "N")]
    pub max_retries: Option<u32>,

    /// Concurrent modules in a run, concurrent fixtures in a benchmark.
    #[arg(long, global = true, env = "TIERCODE_PARALLELISM", value_name = "N",
          value_parser = clap::value_parser!(u32).range(1..))]
    pub parallelism: Option<u32>,

    /// Output comparison for benchmarks; overrides fixture manifests.
    #[arg(long, global = true, env = "TIERCODE_COMPARE", value_enum)]
    pub compare: Option<CompareArg>,

    /// Plan only: print the module plan (run) or the fixture list (bench)
    /// without executing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// Directory of prompt templates overriding the built-in set.
    #[arg(long, global = true, env = "TIERCODE_TEMPLATES", value_name = "DIR")]
    pub templates: Option<PathBuf>,

    /// Runtime image catalog file.
    #[arg(long, global = true, env = "TIERCODE_CATALOG", value_name = "FILE")]
    pub catalog: Option<PathBuf>,

    /// Parent directory for run and benchmark output.
    #[arg(long, global = true, env = "TIERCODE_RUNS_DIR", value_name = "DIR")]
    pub runs_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub runs_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub sandbox: Option<String>,
    pub sandbox_timeout: Option<f64>,
    pub max_retries: Option<u32>,
    pub module_correction_budget: Option<u32>,
    pub parallelism: Option<u32>,
    pub compare: Option<String>,
    pub review_tests: Option<bool>,
    pub kb_top_k: Option<usize>,
    pub assembly: Option<String>,
    pub kb_team_leader: Option<PathBuf>,
    pub kb_coder: Option<PathBuf>,
    #[serde(default)]
    pub backends: FileBackends,
    pub embedder: Option<EmbedderConfig>,
    #[serde(default)]
    pub prices: BTreeMap<String, Price>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBackends {
    pub decision: Option<BackendConfig>,
    pub implementer: Option<BackendConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Remote {
        model: String,
        endpoint: String,
        credentials_env: Option<String>,
        max_in_flight: Option<usize>,
    },
    Scripted {
        script: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hashing {
        dimension: Option<usize>,
    },
    Remote {
        model: String,
        endpoint: String,
        credentials_env: Option<String>,
        dimension: usize,
    },
}

impl FileConfig {
    /// Parses `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let mut c: FileConfig =
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut c.runs_dir);
        rebase(&mut c.templates);
        rebase(&mut c.catalog);
        rebase(&mut c.kb_team_leader);
        rebase(&mut c.kb_coder);
        for b in [&mut c.backends.decision, &mut c.backends.implementer].into_iter().flatten() {
            if let BackendConfig::Scripted { script } = b {
                if script.is_relative() {
                    *script = base.join(&*script);
                }
            }
        }
        Ok(c)
    }
}

/// How one tier reaches its model, before connecting.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Remote { model: String, endpoint: String, credentials_env: String, max_in_flight: usize },
    Scripted { path: PathBuf },
}

impl BackendChoice {
    /// `scripted:<path>` or `remote:<model>@<endpoint>`. Remote credentials
    /// come from `credentials_env`, never from the spec itself.
    pub fn parse(spec: &str, credentials_env: &str) -> Result<Self, CliError> {
        let bad = || usage(format!("backend `{spec}`: expected `scripted:<path>` or `remote:<model>@<endpoint>`"));
        let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
        match kind {
            "scripted" if !rest.is_empty() => Ok(Self::Scripted { path: rest.into() }),
            "remote" => {
                let (model, endpoint) = rest.split_once('@').ok_or_else(bad)?;
                if model.is_empty() || endpoint.is_empty() {
                    return Err(bad());
                }
                Ok(Self::Remote {
                    model: model.into(),
                    endpoint: endpoint.into(),
                    credentials_env: credentials_env.into(),
                    max_in_flight: DEFAULT_MAX_IN_FLIGHT,
                })
            }
            _ => Err(bad()),
        }
    }

    fn from_file(c: &BackendConfig) -> Self {
        match c.clone() {
            BackendConfig::Remote { model, endpoint, credentials_env, max_in_flight } => Self::Remote {
                model,
                endpoint,
                credentials_env: credentials_env.unwrap_or_else(|| DEFAULT_CREDENTIALS_ENV.into()),
                max_in_flight: max_in_flight.unwrap_or(DEFAULT_MAX_IN_FLIGHT),
            },
            BackendConfig::Scripted { script } => Self::Scripted { path: script },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Remote { model, endpoint, credentials_env, max_in_flight } => {
                format!("remote {model} at {endpoint} (key from ${credentials_env}, max in flight {max_in_flight})")
            }
            Self::Scripted { path } => format!("scripted {}", path.display()),
        }
    }

    pub fn connect(&self) -> Result<BackendRef, CliError> {
        Ok(match self {
            Self::Remote { model, endpoint, credentials_env, max_in_flight } => BackendRef::Remote {
                endpoint: endpoint.clone(),
                model_name: model.clone(),
                credentials_env: credentials_env.clone(),
                max_in_flight: *max_in_flight,
            },
            Self::Scripted { path } => BackendRef::scripted(Arc::new(load_script(path)?)),
        })
    }
}

/// A script file, a directory of scripts, or a fixture directory whose
/// `scripted/` subdirectory holds them.
pub fn load_script(path: &Path) -> Result<Script, CliError> {
    let err = |e: tiercode::llm::ScriptError| usage(format!("script {}: {e}", path.display()));
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("script {}: {e}", path.display())))?;
        return Script::parse(&text).map_err(err);
    }
    if !path.is_dir() {
        return Err(usage(format!("script {} does not exist", path.display())));
    }
    let nested = path.join(SCRIPTED_DIR);
    let dir = if nested.is_dir() { nested } else { path.to_path_buf() };
    let script = Script::load_dir(&dir).map_err(err)?;
    if script.is_empty() {
        return Err(usage(format!("no scripted replies under {}", dir.display())));
    }
    Ok(script)
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub decision: Option<BackendChoice>,
    pub implementer: Option<BackendChoice>,
    pub runs_dir: PathBuf,
    pub templates: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub sandbox: BackendKind,
    pub sandbox_timeout: f64,
    pub max_retries: u32,
    pub module_correction_budget: u32,
    pub parallelism: usize,
    pub compare: Option<CompareMode>,
    pub review_tests: bool,
    pub kb_top_k: usize,
    pub assembly: AssemblyMode,
    pub kb_team_leader: Option<PathBuf>,
    pub kb_coder: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub prices: PriceTable,
    pub dry_run: bool,
}

impl Settings {
    pub fn resolve(args: &GlobalArgs, file: FileConfig) -> Result<Self, CliError> {
        let field = |name: &str, e: String| usage(format!("config field `{name}`: {e}"));
        let cred = |c: &Option<BackendConfig>| match c {
            Some(BackendConfig::Remote { credentials_env: Some(env), .. }) => env.clone(),
            _ => DEFAULT_CREDENTIALS_ENV.to_string(),
        };
        let scripted = args.scripted.as_ref().map(|p| BackendChoice::Scripted { path: p.clone() });
        let tier = |flag: &Option<String>, from_file: &Option<BackendConfig>| -> Result<Option<BackendChoice>, CliError> {
            if let Some(spec) = flag {
                return BackendChoice::parse(spec, &cred(from_file)).map(Some);
            }
            if let Some(s) = &scripted {
                return Ok(Some(s.clone()));
            }
            Ok(from_file.as_ref().map(BackendChoice::from_file))
        };
        let decision = tier(&args.backend_decision, &file.backends.decision)?;
        let implementer = tier(&args.backend_implementer, &file.backends.implementer)?;

        let sandbox = match args.sandbox {
            Some(SandboxArg::Container) => BackendKind::container(),
            Some(SandboxArg::Subprocess) => BackendKind::subprocess(),
            None => match &file.sandbox {
                Some(s) => s.parse().map_err(|e| field("sandbox", e))?,
                None => BackendKind::subprocess(),
            },
        };
        let compare = match args.compare {
            Some(c) => Some(c.into()),
            None => file.compare.as_deref().map(str::parse).transpose().map_err(|e| field("compare", e))?,
        };
        let assembly = match &file.assembly {
            Some(a) => a.parse().map_err(|e| field("assembly", e))?,
            None => AssemblyMode::Deterministic,
        };
        let sandbox_timeout = args.sandbox_timeout.or(file.sandbox_timeout).unwrap_or(DEFAULT_SANDBOX_TIMEOUT);
        if !(sandbox_timeout.is_finite() && sandbox_timeout > 0.0) {
            return Err(usage(format!("sandbox timeout must be a positive number of seconds, got {sandbox_timeout}")));
        }
        let parallelism = args.parallelism.or(file.parallelism).unwrap_or(1);
        if parallelism == 0 {
            return Err(field("parallelism", "must be at least 1".into()));
        }
        let mut prices = PriceTable::default();
        for (model, p) in file.prices {
            prices.insert(model, p);
        }

        Ok(Self {
            decision,
            implementer,
            runs_dir: args.runs_dir.clone().or(file.runs_dir).unwrap_or_else(|| DEFAULT_RUNS_DIR.into()),
            templates: args.templates.clone().or(file.templates),
            catalog: args.catalog.clone().or(file.catalog),
            sandbox,
            sandbox_timeout,
            max_retries: args.max_retries.or(file.max_retries).unwrap_or(DEFAULT_MAX_FUNCTION_RETRIES),
            module_correction_budget: file.module_correction_budget.unwrap_or(DEFAULT_MODULE_CORRECTION_BUDGET),
            parallelism: parallelism as usize,
            compare,
            review_tests: file.review_tests.unwrap_or(true),
            kb_top_k: file.kb_top_k.unwrap_or(tiercode::kb::DEFAULT_TOP_K),
            assembly,
            kb_team_leader: file.kb_team_leader,
            kb_coder: file.kb_coder,
            embedder: file.embedder.unwrap_or(EmbedderConfig::Hashing { dimension: None }),
            prices,
            dry_run: args.dry_run,
        })
    }

    /// Reads the config file named by the flags (or environment), if any.
    pub fn from_args(args: &GlobalArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::resolve(args, file)
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        fn need<'a>(c: &'a Option<BackendChoice>, tier: &str) -> Result<&'a BackendChoice, CliError> {
            c.as_ref().ok_or_else(|| {
                usage(format!(
                    "no {tier} backend configured: pass --backend-{tier}, --scripted, or set backends.{tier} in the config file"
                ))
            })
        }
        let decision = need(&self.decision, "decision")?.connect()?;
        let implementer = need(&self.implementer, "implementer")?.connect()?;
        let mut c = RunConfig::new(decision, implementer);
        c.max_function_retries = self.max_retries;
        c.module_correction_budget = self.module_correction_budget;
        c.module_parallelism = self.parallelism;
        c.sandbox_timeout = self.sandbox_timeout;
        c.assembly_mode = self.assembly;
        c.review_tests = self.review_tests;
        c.kb_top_k = self.kb_top_k;
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }

    pub fn templates(&self) -> Result<TemplateSet, CliError> {
        let t = TemplateSet::load(self.templates.as_deref()).map_err(|e| usage(format!("templates: {e}")))?;
        t.validate().map_err(|e| usage(format!("templates: {e}")))?;
        Ok(t)
    }

    pub fn sandbox(&self) -> Result<Sandbox, CliError> {
        let catalog = match &self.catalog {
            Some(p) => Catalog::load(p).map_err(|e| usage(format!("catalog {}: {e}", p.display())))?,
            None => Catalog::default(),
        };
        Ok(Sandbox::new(
            catalog,
            self.sandbox.clone(),
            Duration::from_secs_f64(self.sandbox_timeout),
            self.parallelism,
        ))
    }

    pub fn embedder(&self) -> Box<dyn Embedder + Sync> {
        match &self.embedder {
            EmbedderConfig::Hashing { dimension } => {
                Box::new(HashingEmbedder { dimension: dimension.unwrap_or(DEFAULT_DIMENSION) })
            }
            EmbedderConfig::Remote { model, endpoint, credentials_env, dimension } => Box::new(RemoteEmbedder {
                endpoint: endpoint.clone(),
                model: model.clone(),
                credentials_env: credentials_env.clone().unwrap_or_else(|| DEFAULT_CREDENTIALS_ENV.into()),
                dimension: *dimension,
            }),
        }
    }

    /// Built-in seeds unless the config names prebuilt indices.
    pub fn knowledge(&self, embedder: &dyn Embedder) -> Result<KnowledgeBases, CliError> {
        let mut kb = KnowledgeBases::seed(embedder).map_err(runtime)?;
        let load = |p: &Path| -> Result<KnowledgeIndex, CliError> {
            let index = KnowledgeIndex::load(p).map_err(|e| usage(format!("knowledge index {}: {e}", p.display())))?;
            if index.embedder != embedder.identity() {
                return Err(usage(format!(
                    "knowledge index {} was built with `{}`, configured embedder is `{}`",
                    p.display(),
                    index.embedder,
                    embedder.identity()
                )));
            }
            Ok(index)
        };
        if let Some(p) = &self.kb_team_leader {
            kb.team_leader = load(p)?;
        }
        if let Some(p) = &self.kb_coder {
            kb.coder = load(p)?;
        }
        Ok(kb)
    }

    pub fn describe(&self) -> String {
        let backend = |b: &Option<BackendChoice>| b.as_ref().map_or("(none)".to_string(), BackendChoice::describe);
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("(built-in)".to_string(), |p| p.display().to_string());
        let mut s = String::new();
        let _ = writeln!(s, "backend.decision = {}", backend(&self.decision));
        let _ = writeln!(s, "backend.implementer = {}", backend(&self.implementer));
        let _ = writeln!(s, "runs_dir = {}", self.runs_dir.display());
        let _ = writeln!(s, "templates = {}", path(&self.templates));
        let _ = writeln!(s, "catalog = {}", path(&self.catalog));
        let _ = writeln!(s, "sandbox = {}", self.sandbox);
        let _ = writeln!(s, "sandbox_timeout = {}", self.sandbox_timeout);
        let _ = writeln!(s, "max_retries = {}", self.max_retries);
        let _ = writeln!(s, "module_correction_budget = {}", self.module_correction_budget);
        let _ = writeln!(s, "parallelism = {}", self.parallelism);
        let _ = writeln!(s, "compare = {}", self.compare.map_or("(per fixture)".to_string(), |c| c.to_string()));
        let _ = writeln!(s, "review_tests = {}", self.review_tests);
        let _ = writeln!(s, "kb_top_k = {}", self.kb_top_k);
        let _ = writeln!(s, "assembly = {}", self.assembly);
        let _ = writeln!(s, "kb.team_leader = {}", path(&self.kb_team_leader));
        let _ = writeln!(s, "kb.coder = {}", path(&self.kb_coder));
        let _ = writeln!(s, "embedder = {}", self.embedder().identity());
        s
    }
}
