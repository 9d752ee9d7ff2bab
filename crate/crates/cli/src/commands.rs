use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Subcommand};

use tiercode::eval::{
    load_fixtures, run_benchmark, BenchmarkReport, ExternalCommand, PipelineGenerator, ProjectGenerator,
};
use tiercode::kb::{build_index, parse_entries, KnowledgeBases, KnowledgeIndex};
use tiercode::manifest::parse_project;
use tiercode::pipeline::{Pipeline, POOL_JOURNAL, RUN_SUMMARY};
use tiercode::pool::ThoughtKind;
use tiercode::{ThoughtPool, TreeAddress};

use crate::settings::{runtime, usage, CliError, Settings};
use crate::{fresh_dir, EXIT_FAILED, EXIT_OK};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Project manifest: header fields, description, `inputs:` list.
    pub manifest: PathBuf,

    /// Directory the manifest's input paths are relative to [default: the manifest's directory].
    #[arg(long, value_name = "DIR")]
    pub inputs: Option<PathBuf>,

    /// Run directory [default: <runs-dir>/<project id>, suffixed if taken].
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// A fixture directory, or a directory whose subdirectories are fixtures.
    pub fixtures: PathBuf,

    /// Output directory for work files and reports [default: <runs-dir>/bench, suffixed if taken].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Replay each fixture's own `scripted/` replies for both tiers.
    #[arg(long, conflicts_with = "command")]
    pub fixture_scripts: bool,

    /// External generator, run as `<PROGRAM> [--command-arg ...] <fixture dir> <output file>`.
    #[arg(long, value_name = "PROGRAM")]
    pub command: Option<String>,

    /// Argument passed to --command before the fixture directory; repeatable.
    #[arg(long = "command-arg", value_name = "ARG", requires = "command", allow_hyphen_values = true)]
    pub command_args: Vec<String>,

    /// Seconds the external generator may take per fixture.
    #[arg(long, value_name = "SECS", default_value_t = 600.0, requires = "command")]
    pub command_timeout: f64,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Embed an entries file (one JSON object per line) into an index file.
    Build {
        /// Entries with `id`, `task_text`, `response_text` and optional `tags`.
        entries: PathBuf,
        /// Index file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Print the k entries closest to a query, with scores.
    Query {
        /// Index file, or `seed:team_leader` / `seed:coder` for the built-in seeds.
        index: String,
        /// Query text.
        text: String,
        /// Number of results.
        #[arg(short, long, default_value_t = 2)]
        k: usize,
    },
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Run directory holding the pool journal.
    pub run_dir: PathBuf,

    /// Only records at this tree address: `/`, `/0`, `/0/1`.
    #[arg(long, value_name = "ADDR", value_parser = parse_address)]
    pub address: Option<TreeAddress>,

    /// Only records of this kind (requirement, module_plan, function_thought,
    /// signature, function_code, test_code, module_code, project_code,
    /// error_report, note).
    #[arg(long, value_name = "KIND", value_parser = parse_kind)]
    pub kind: Option<ThoughtKind>,

    /// With --address, also records below it.
    #[arg(long, requires = "address")]
    pub subtree: bool,

    /// With --address, records on the path from the root down to it.
    #[arg(long, requires = "address", conflicts_with = "subtree")]
    pub lineage: bool,

    /// Print whole payloads instead of their first line.
    #[arg(long)]
    pub full: bool,
}

fn parse_address(s: &str) -> Result<TreeAddress, String> {
    s.parse().map_err(|e: tiercode::domain::DomainError| e.to_string())
}

fn parse_kind(s: &str) -> Result<ThoughtKind, String> {
    s.parse()
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("{what} {}: {e}", path.display())))
}

pub fn run(settings: &Settings, args: &RunArgs) -> Result<u8, CliError> {
    let text = read_text(&args.manifest, "manifest")?;
    let requirement =
        parse_project(&text).map_err(|e| usage(format!("manifest {}: {e}", args.manifest.display())))?;
    let input_root = match &args.inputs {
        Some(d) => d.clone(),
        None => args.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let config = settings.run_config()?;
    let templates = settings.templates()?;
    let sandbox = settings.sandbox()?;
    let embedder = settings.embedder();
    let knowledge = settings.knowledge(embedder.as_ref())?;
    let gateway = tiercode::llm::Gateway::connect(&config.decision_model, &config.implementer_model)
        .map_err(|e| usage(e.to_string()))?;
    let pipeline = Pipeline {
        config: &config,
        gateway: &gateway,
        templates: &templates,
        sandbox: &sandbox,
        knowledge: &knowledge,
        embedder: embedder.as_ref(),
        prices: settings.prices.clone(),
    };

    if settings.dry_run {
        let plan = pipeline.plan(&requirement).map_err(runtime)?;
        println!("project {}: {} module(s), environment {}", requirement.id, plan.modules.len(), plan.environment);
        for m in &plan.modules {
            println!("module {} {}: {}", m.address(), m.name(), m.description);
        }
        return Ok(EXIT_OK);
    }

    sandbox.probe().map_err(runtime)?;
    let run_dir = match &args.run_dir {
        Some(d) => d.clone(),
        None => fresh_dir(settings.runs_dir.clone(), &requirement.id),
    };
    let outcome = pipeline.run_project(&requirement, &run_dir, &input_root).map_err(runtime)?;
    println!("run directory: {}", outcome.run_dir.display());
    print!("{}", outcome.summary.render());
    if let Some(p) = &outcome.summary.project_file {
        println!("project: {}", outcome.run_dir.join(p).display());
    }
    Ok(if outcome.succeeded() { EXIT_OK } else { EXIT_FAILED })
}

pub fn bench(settings: &Settings, args: &BenchArgs) -> Result<u8, CliError> {
    if !args.fixtures.is_dir() {
        return Err(usage(format!("fixtures directory {} does not exist", args.fixtures.display())));
    }
    let fixtures = load_fixtures(&args.fixtures).map_err(|e| usage(e.to_string()))?;
    if fixtures.is_empty() {
        return Err(usage(format!("no fixtures (directories with manifest.txt) under {}", args.fixtures.display())));
    }

    if settings.dry_run {
        for (path, f) in &fixtures {
            match f {
                Ok(f) => println!("{:<7} {} ({})", f.difficulty.as_str(), f.id, path.display()),
                Err(e) => println!("ERROR   {e}"),
            }
        }
        let broken = fixtures.iter().any(|(_, f)| f.is_err());
        return Ok(if broken { EXIT_FAILED } else { EXIT_OK });
    }

    let sandbox = settings.sandbox()?;
    let out = match &args.out {
        Some(d) => d.clone(),
        None => fresh_dir(settings.runs_dir.clone(), "bench"),
    };
    let report = if let Some(program) = &args.command {
        if !(args.command_timeout.is_finite() && args.command_timeout > 0.0) {
            return Err(usage("--command-timeout must be a positive number of seconds"));
        }
        let generator = ExternalCommand {
            program: program.clone(),
            args: args.command_args.clone(),
            timeout: Duration::from_secs_f64(args.command_timeout),
        };
        sandbox.probe().map_err(runtime)?;
        execute(settings, fixtures, &generator, &sandbox, &out)
    } else {
        let config = if args.fixture_scripts {
            // placeholders; each fixture swaps in its own script
            let empty = tiercode::llm::BackendRef::scripted(Default::default());
            let mut c = tiercode::RunConfig::new(empty.clone(), empty);
            c.max_function_retries = settings.max_retries;
            c.module_correction_budget = settings.module_correction_budget;
            c.sandbox_timeout = settings.sandbox_timeout;
            c.assembly_mode = settings.assembly;
            c.review_tests = settings.review_tests;
            c.kb_top_k = settings.kb_top_k;
            c
        } else {
            settings.run_config()?
        };
        let templates = settings.templates()?;
        let embedder = settings.embedder();
        let knowledge: KnowledgeBases = settings.knowledge(embedder.as_ref())?;
        let generator = PipelineGenerator {
            config: &config,
            scripted_per_fixture: args.fixture_scripts,
            templates: &templates,
            sandbox: &sandbox,
            knowledge: &knowledge,
            embedder: embedder.as_ref(),
            prices: settings.prices.clone(),
        };
        sandbox.probe().map_err(runtime)?;
        execute(settings, fixtures, &generator, &sandbox, &out)
    }?;

    let table = report.render_table();
    print!("{table}");
    println!("report: {}", out.join(REPORT_JSON).display());
    Ok(if report.is_clean() { EXIT_OK } else { EXIT_FAILED })
}

fn execute(
    settings: &Settings,
    fixtures: Vec<(PathBuf, Result<tiercode::eval::ProjectFixture, tiercode::eval::EvalError>)>,
    generator: &dyn ProjectGenerator,
    sandbox: &tiercode::sandbox::Sandbox,
    out: &Path,
) -> Result<BenchmarkReport, CliError> {
    let work = out.join("work");
    fs::create_dir_all(&work).map_err(|e| runtime(format!("{}: {e}", work.display())))?;
    let report = run_benchmark(fixtures, generator, sandbox, &work, settings.compare, settings.parallelism, &settings.prices);
    let write = |name: &str, body: String| {
        fs::write(out.join(name), body).map_err(|e| runtime(format!("{}: {e}", out.join(name).display())))
    };
    write(REPORT_JSON, report.to_json())?;
    write(REPORT_TEXT, report.render_table())?;
    Ok(report)
}

fn load_index(spec: &str, settings: &Settings) -> Result<KnowledgeIndex, CliError> {
    let embedder = settings.embedder();
    if let Some(which) = spec.strip_prefix("seed:") {
        let kb = KnowledgeBases::seed(embedder.as_ref()).map_err(runtime)?;
        return match which {
            "team_leader" => Ok(kb.team_leader),
            "coder" => Ok(kb.coder),
            other => Err(usage(format!("unknown seed `{other}`; expected team_leader or coder"))),
        };
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(usage(format!("index {spec} does not exist")));
    }
    KnowledgeIndex::load(path).map_err(|e| usage(format!("index {spec}: {e}")))
}

pub fn kb(settings: &Settings, command: &KbCommand) -> Result<u8, CliError> {
    let embedder = settings.embedder();
    match command {
        KbCommand::Build { entries, out } => {
            let text = read_text(entries, "entries")?;
            let sources = parse_entries(&text).map_err(|e| usage(format!("entries {}: {e}", entries.display())))?;
            let index = build_index(&sources, embedder.as_ref()).map_err(|e| usage(e.to_string()))?;
            index.save(out).map_err(runtime)?;
            println!("{} entries, dimension {}, embedder {} -> {}", index.len(), index.dimension, index.embedder, out.display());
        }
        KbCommand::Query { index, text, k } => {
            let index = load_index(index, settings)?;
            let hits = index.retrieve(text, *k, embedder.as_ref()).map_err(|e| usage(e.to_string()))?;
            if hits.is_empty() {
                println!("no results");
            }
            for (i, h) in hits.iter().enumerate() {
                println!("{}. {} score={:.4}", i + 1, h.entry.id, h.score);
                println!("   {}", h.entry.task_text.lines().next().unwrap_or(""));
            }
        }
    }
    Ok(EXIT_OK)
}

pub fn inspect(args: &InspectArgs) -> Result<u8, CliError> {
    let journal = args.run_dir.join(POOL_JOURNAL);
    if !journal.is_file() {
        return Err(usage(format!("{} holds no {POOL_JOURNAL}", args.run_dir.display())));
    }
    let pool = ThoughtPool::load(&journal).map_err(runtime)?;
    let records = match (&args.address, args.lineage) {
        (Some(a), true) => pool.lineage(a).map_err(|e| usage(e.to_string()))?,
        _ => pool.records(),
    };
    if let Some(a) = &args.address {
        if !pool.is_node(a) {
            return Err(usage(format!("address {a} is not a node of this run")));
        }
    }
    let selected: Vec<_> = records
        .into_iter()
        .filter(|r| match (&args.address, args.subtree, args.lineage) {
            (None, _, _) | (Some(_), _, true) => true,
            (Some(a), true, _) => a.is_prefix_of(&r.address),
            (Some(a), false, _) => &r.address == a,
        })
        .filter(|r| args.kind.is_none_or(|k| r.kind == k))
        .collect();

    if let Ok(text) = fs::read_to_string(args.run_dir.join(RUN_SUMMARY)) {
        if let Ok(s) = tiercode::pipeline::RunSummary::from_json(&text) {
            println!("run {}: {}", s.requirement_id, s.stage.as_str());
        }
    }
    println!("{} record(s)", selected.len());
    for r in &selected {
        println!("#{:<4} {:<7} {:<16} {:<20} {}", r.id, r.address.to_string(), r.kind.as_str(), r.author.to_string(), r.stage);
        if args.full {
            for line in r.payload.lines() {
                println!("    {line}");
            }
        } else if let Some(first) = r.payload.lines().find(|l| !l.trim().is_empty()) {
            println!("    {first}");
        }
    }
    Ok(EXIT_OK)
}
