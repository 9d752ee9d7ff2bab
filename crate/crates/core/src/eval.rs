//! Scripted evaluation: run a generated project and a fixture's sample
//! solution on the same inputs, compare what they write, aggregate accuracy.
//!
//! Fixture layout:
//!
//! ```text
//! <fixture>/manifest.txt      id, difficulty, optional environment/compare/threshold, description
//! <fixture>/inputs/           staged into the working directory of both runs
//! <fixture>/solution/main.py  sample solution
//! <fixture>/expected/         expected output files, or
//! <fixture>/test/compare.py   comparison script (exit 0 on match)
//! <fixture>/scripted/         optional scripted replies for the pipeline generator
//! ```
//!
//! A compare script runs with the generated outputs under `generated/` and
//! the sample solution's outputs under `expected/` in its working directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::TemplateSet;
use crate::domain::{InputFile, InputKind, ProjectRequirement, RunConfig};
use crate::kb::{Embedder, KnowledgeBases};
use crate::llm::{BackendRef, CostSummary, Gateway, PriceTable, Script, UsageLedger};
use crate::manifest::{parse_raw, ManifestError};
use crate::pipeline::{parallel_map, Pipeline};
use crate::sandbox::{ExecutionResult, ProducedFile, Sandbox, SandboxError, StagedFile};

pub const MANIFEST: &str = "manifest.txt";
pub const INPUTS_DIR: &str = "inputs";
pub const SOLUTION_FILE: &str = "solution/main.py";
pub const EXPECTED_DIR: &str = "expected";
pub const COMPARE_SCRIPT: &str = "test/compare.py";
pub const SCRIPTED_DIR: &str = "scripted";
pub const DEFAULT_THRESHOLD: f64 = 1.0;
pub const FIXTURE_FIELDS: &[&str] = &["id", "difficulty", "environment", "compare", "threshold"];

pub const LABEL_SOLUTION: &str = "solution";
pub const LABEL_EVALUATE: &str = "evaluate";
pub const LABEL_COMPARE: &str = "compare";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fixture {}: {message}", path.display())]
    Fixture { path: PathBuf, message: String },
    #[error("comparing `{file}`: {message}")]
    Compare { file: String, message: String },
    #[error("sample solution of `{id}` failed:\n{report}")]
    SampleFailed { id: String, report: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Simple,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::Medium => "medium",
            Self::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown difficulty `{s}` (expected simple, medium or hard)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    Exact,
    #[default]
    ImageTolerance,
}

impl CompareMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::ImageTolerance => "image_tolerance",
        }
    }
}

impl fmt::Display for CompareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompareMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "image_tolerance" => Ok(Self::ImageTolerance),
            _ => Err(format!("unknown compare mode `{s}` (expected exact or image_tolerance)")),
        }
    }
}

/// Relative path → contents.
pub type OutputSet = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone)]
pub enum TestModule {
    Expected(OutputSet),
    Script(String),
}

#[derive(Debug, Clone)]
pub struct ProjectFixture {
    pub id: String,
    pub difficulty: Difficulty,
    pub description: String,
    pub root: PathBuf,
    pub input_files: Vec<InputFile>,
    pub inputs: Vec<StagedFile>,
    pub sample_solution: String,
    pub test_module: TestModule,
    pub environment: Option<String>,
    pub compare: Option<CompareMode>,
    pub threshold: f64,
}

impl ProjectFixture {
    pub fn requirement(&self) -> ProjectRequirement {
        ProjectRequirement {
            id: self.id.clone(),
            description: self.description.clone(),
            input_files: self.input_files.clone(),
            workdir: ".".into(),
            environment_hint: self.environment.clone(),
        }
    }

    pub fn inputs_dir(&self) -> PathBuf {
        self.root.join(INPUTS_DIR)
    }

    pub fn scripted_dir(&self) -> Option<PathBuf> {
        let d = self.root.join(SCRIPTED_DIR);
        d.is_dir().then_some(d)
    }
}

/// Reads every file below `dir`, keyed by `/`-separated relative path.
pub fn read_tree(dir: &Path) -> io::Result<OutputSet> {
    fn walk(base: &Path, dir: &Path, out: &mut OutputSet) -> io::Result<()> {
        for e in fs::read_dir(dir)? {
            let path = e?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("below base");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = OutputSet::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Files a run created or changed, read back from its working directory.
pub fn outputs_of(result: &ExecutionResult) -> Result<OutputSet, EvalError> {
    let mut out = OutputSet::new();
    for f in &result.produced_files {
        out.insert(f.path.clone(), fs::read(result.outputs_dir.join(&f.path))?);
    }
    Ok(out)
}

pub fn load_fixture(dir: &Path) -> Result<ProjectFixture, EvalError> {
    let err = |message: String| EvalError::Fixture { path: dir.to_path_buf(), message };
    let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| err(format!("manifest absent: {e}")))?;
    let m = parse_raw(&text, FIXTURE_FIELDS).map_err(|e: ManifestError| err(e.to_string()))?;
    let id = m.field("id").filter(|s| !s.is_empty()).ok_or_else(|| err("manifest lacks `id`".into()))?;
    let difficulty = m
        .field("difficulty")
        .ok_or_else(|| err("manifest lacks `difficulty`".into()))?
        .parse::<Difficulty>()
        .map_err(err)?;
    if m.description.is_empty() {
        return Err(err("description absent".into()));
    }
    let compare = m.field("compare").map(str::parse::<CompareMode>).transpose().map_err(err)?;
    let threshold = match m.field("threshold") {
        None => DEFAULT_THRESHOLD,
        Some(t) => t
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| err(format!("threshold `{t}` is not a non-negative number")))?,
    };

    let inputs_dir = dir.join(INPUTS_DIR);
    if !inputs_dir.is_dir() {
        return Err(err("inputs absent".into()));
    }
    let tree = read_tree(&inputs_dir)?;
    let input_files = tree.keys().map(|p| InputFile { path: p.clone(), kind: InputKind::from_path(p) }).collect();
    let inputs = tree.into_iter().map(|(p, bytes)| StagedFile::new(p, bytes)).collect();

    let sample_solution =
        fs::read_to_string(dir.join(SOLUTION_FILE)).map_err(|_| err("sample_solution absent".into()))?;
    let expected = dir.join(EXPECTED_DIR);
    let script = dir.join(COMPARE_SCRIPT);
    let test_module = if script.is_file() {
        TestModule::Script(fs::read_to_string(&script)?)
    } else if expected.is_dir() {
        TestModule::Expected(read_tree(&expected)?)
    } else {
        return Err(err("test_module absent (need expected/ or test/compare.py)".into()));
    };

    Ok(ProjectFixture {
        id: id.to_string(),
        difficulty,
        description: m.description.clone(),
        root: dir.to_path_buf(),
        input_files,
        inputs,
        sample_solution,
        test_module,
        environment: m.field("environment").map(str::to_string),
        compare,
        threshold,
    })
}

/// Every subdirectory holding a manifest, in name order. A directory that
/// fails to load is returned as an error rather than skipped.
pub fn load_fixtures(root: &Path) -> Result<Vec<(PathBuf, Result<ProjectFixture, EvalError>)>, EvalError> {
    if root.join(MANIFEST).is_file() {
        return Ok(vec![(root.to_path_buf(), load_fixture(root))]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|d| {
        let f = load_fixture(&d);
        (d, f)
    }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub equal: bool,
    /// Same file names and, for images, same dimensions.
    pub structural_match: bool,
    pub detail: String,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pbm", "pnm", "pam", "bmp", "jpg", "jpeg"];

pub fn is_image(path: &str) -> bool {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

struct Pixels {
    width: u32,
    height: u32,
    alpha: bool,
    img: image::DynamicImage,
}

fn decode(file: &str, bytes: &[u8]) -> Result<Pixels, EvalError> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| EvalError::Compare { file: file.to_string(), message: e.to_string() })?;
    Ok(Pixels { width: img.width(), height: img.height(), alpha: img.color().has_alpha(), img })
}

struct PixelDiff {
    mean: f64,
    differing: usize,
    values: usize,
}

impl fmt::Display for PixelDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mean abs diff {:.4}, {} of {} channel values differ", self.mean, self.differing, self.values)
    }
}

/// Mean absolute difference per channel on a 0–255 scale. Grayscale is
/// widened to RGB first, which leaves the mean unchanged.
fn mean_abs_diff(a: &Pixels, b: &Pixels) -> PixelDiff {
    let (x, y) = if a.alpha || b.alpha {
        (a.img.to_rgba8().into_raw(), b.img.to_rgba8().into_raw())
    } else {
        (a.img.to_rgb8().into_raw(), b.img.to_rgb8().into_raw())
    };
    if x.is_empty() {
        return PixelDiff { mean: 0.0, differing: 0, values: 0 };
    }
    let total: u64 = x.iter().zip(&y).map(|(p, q)| u64::from(p.abs_diff(*q))).sum();
    let differing = x.iter().zip(&y).filter(|(p, q)| p != q).count();
    PixelDiff { mean: total as f64 / x.len() as f64, differing, values: x.len() }
}

/// Exact: same file set, identical bytes. Image tolerance: same file set,
/// non-images identical, images of equal size whose mean absolute channel
/// difference is at most `threshold`.
pub fn compare_outputs(
    generated: &OutputSet,
    expected: &OutputSet,
    mode: CompareMode,
    threshold: f64,
) -> Result<Comparison, EvalError> {
    let a: BTreeSet<&String> = generated.keys().collect();
    let b: BTreeSet<&String> = expected.keys().collect();
    let mut problems: Vec<String> = Vec::new();
    for p in b.difference(&a) {
        problems.push(format!("missing output `{p}`"));
    }
    for p in a.difference(&b) {
        problems.push(format!("unexpected output `{p}`"));
    }
    if !problems.is_empty() {
        return Ok(Comparison { equal: false, structural_match: false, detail: problems.join("; ") });
    }

    let mut structural = true;
    let mut notes = Vec::new();
    for (name, g) in generated {
        let e = &expected[name];
        if g == e {
            continue;
        }
        if !is_image(name) {
            problems.push(format!("`{name}` differs"));
            continue;
        }
        let pair = match mode {
            CompareMode::ImageTolerance => Some((decode(name, g)?, decode(name, e)?)),
            CompareMode::Exact => decode(name, g).ok().zip(decode(name, e).ok()),
        };
        let Some((pg, pe)) = pair else {
            structural = false;
            problems.push(format!("`{name}` differs"));
            continue;
        };
        if (pg.width, pg.height) != (pe.width, pe.height) {
            structural = false;
            problems.push(format!(
                "`{name}` is {}x{} but {}x{} was expected",
                pg.width, pg.height, pe.width, pe.height
            ));
            continue;
        }
        let diff = mean_abs_diff(&pg, &pe);
        match mode {
            CompareMode::Exact => problems.push(format!("`{name}` differs ({diff})")),
            CompareMode::ImageTolerance if diff.mean <= threshold => {
                notes.push(format!("`{name}` within tolerance ({diff})"))
            }
            CompareMode::ImageTolerance => {
                problems.push(format!("`{name}` exceeds tolerance {threshold} ({diff})"))
            }
        }
    }
    let equal = problems.is_empty();
    let detail = if equal {
        let mut d = format!("{} file(s) match", generated.len());
        for n in notes {
            d.push_str("; ");
            d.push_str(&n);
        }
        d
    } else {
        problems.join("; ")
    };
    Ok(Comparison { equal, structural_match: structural, detail })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutcome {
    pub id: String,
    pub difficulty: Difficulty,
    pub acc_p: u8,
    pub failure_reason: Option<String>,
    pub flagged_for_manual_review: bool,
    pub detail: String,
    pub generated_output: Vec<ProducedFile>,
    pub expected_output: Vec<ProducedFile>,
}

impl EvalOutcome {
    pub fn failed(fixture: &ProjectFixture, reason: impl Into<String>) -> Self {
        Self {
            id: fixture.id.clone(),
            difficulty: fixture.difficulty,
            acc_p: 0,
            failure_reason: Some(reason.into()),
            flagged_for_manual_review: false,
            detail: String::new(),
            generated_output: Vec::new(),
            expected_output: Vec::new(),
        }
    }
}

fn tail(text: &str, lines: usize) -> String {
    let v: Vec<&str> = text.lines().collect();
    v[v.len().saturating_sub(lines)..].join("\n")
}

/// Runs the sample solution and the generated project in separate fresh
/// sandboxes under `work_dir`, then compares their outputs. `mode`
/// overrides the fixture's own compare mode.
pub fn evaluate_project(
    fixture: &ProjectFixture,
    generated_source: &str,
    sandbox: &Sandbox,
    work_dir: &Path,
    mode: Option<CompareMode>,
) -> Result<EvalOutcome, EvalError> {
    let mode = mode.or(fixture.compare).unwrap_or_default();
    let image = match &fixture.environment {
        Some(e) => e.clone(),
        None => sandbox.catalog().first().name.clone(),
    };

    let spec = sandbox.spec(&image, work_dir.join("solution"))?;
    let sample = sandbox.run_script(&spec, &fixture.sample_solution, &fixture.inputs, LABEL_SOLUTION)?;
    if !sample.succeeded() {
        return Err(EvalError::SampleFailed { id: fixture.id.clone(), report: sample.report() });
    }
    let expected = outputs_of(&sample)?;
    if let TestModule::Expected(declared) = &fixture.test_module {
        let c = compare_outputs(&expected, declared, mode, fixture.threshold)?;
        if !c.equal {
            return Err(EvalError::Fixture {
                path: fixture.root.clone(),
                message: format!("sample solution output disagrees with {EXPECTED_DIR}/: {}", c.detail),
            });
        }
    }

    let spec = sandbox.spec(&image, work_dir.join("generated"))?;
    let run = sandbox.run_script(&spec, generated_source, &fixture.inputs, LABEL_EVALUATE)?;
    let mut outcome = EvalOutcome {
        expected_output: sample.produced_files.clone(),
        generated_output: run.produced_files.clone(),
        ..EvalOutcome::failed(fixture, "")
    };
    if run.timed_out {
        outcome.failure_reason = Some(format!("timeout: no exit within {:?}", sandbox.timeout()));
        return Ok(outcome);
    }
    if !run.succeeded() {
        outcome.failure_reason =
            Some(format!("crash: exit code {}\n{}", run.exit_code, tail(&run.stderr, 20)));
        return Ok(outcome);
    }
    let generated = outputs_of(&run)?;

    let comparison = match &fixture.test_module {
        TestModule::Expected(_) => compare_outputs(&generated, &expected, mode, fixture.threshold)?,
        TestModule::Script(script) => {
            let staged: Vec<StagedFile> = generated
                .iter()
                .map(|(p, b)| StagedFile::new(format!("generated/{p}"), b.clone()))
                .chain(expected.iter().map(|(p, b)| StagedFile::new(format!("expected/{p}"), b.clone())))
                .collect();
            let spec = sandbox.spec(&image, work_dir.join("compare"))?;
            let r = sandbox.run_script(&spec, script, &staged, LABEL_COMPARE)?;
            let same_names = generated.keys().eq(expected.keys());
            Comparison {
                equal: r.succeeded(),
                structural_match: same_names,
                detail: tail(&format!("{}{}", r.stdout, r.stderr), 20),
            }
        }
    };
    outcome.acc_p = u8::from(comparison.equal);
    outcome.flagged_for_manual_review = !comparison.equal && comparison.structural_match;
    outcome.failure_reason = (!comparison.equal).then(|| format!("output mismatch: {}", comparison.detail));
    outcome.detail = comparison.detail;
    Ok(outcome)
}

/// What a generator produced for one fixture.
#[derive(Debug, Clone)]
pub struct Generation {
    pub source: Result<String, String>,
    pub ledger: UsageLedger,
}

pub trait ProjectGenerator: Sync {
    fn name(&self) -> String;
    fn generate(&self, fixture: &ProjectFixture, work_dir: &Path) -> Generation;
}

/// Runs `program args... <fixture dir> <output file>` and reads the
/// project source from the output file.
#[derive(Debug, Clone)]
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ProjectGenerator for ExternalCommand {
    fn name(&self) -> String {
        self.program.clone()
    }

    fn generate(&self, fixture: &ProjectFixture, work_dir: &Path) -> Generation {
        let source = (|| -> Result<String, String> {
            fs::create_dir_all(work_dir).map_err(|e| e.to_string())?;
            let work_dir = std::path::absolute(work_dir).map_err(|e| e.to_string())?;
            let root = std::path::absolute(&fixture.root).map_err(|e| e.to_string())?;
            let out = work_dir.join("project.py");
            let mut child = Command::new(&self.program)
                .args(&self.args)
                .arg(&root)
                .arg(&out)
                .current_dir(&work_dir)
                .spawn()
                .map_err(|e| format!("cannot launch `{}`: {e}", self.program))?;
            let start = Instant::now();
            let status = loop {
                if let Some(s) = child.try_wait().map_err(|e| e.to_string())? {
                    break s;
                }
                if start.elapsed() > self.timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(format!("`{}` ran longer than {:?}", self.program, self.timeout));
                }
                std::thread::sleep(Duration::from_millis(20));
            };
            if !status.success() {
                return Err(format!("`{}` exited with {status}", self.program));
            }
            fs::read_to_string(&out).map_err(|e| format!("no project written to {}: {e}", out.display()))
        })();
        Generation { source, ledger: UsageLedger::default() }
    }
}

/// Runs the full pipeline per fixture. With `scripted_per_fixture`, both
/// tiers replay the fixture's `scripted/` directory.
pub struct PipelineGenerator<'a> {
    pub config: &'a RunConfig,
    pub scripted_per_fixture: bool,
    pub templates: &'a TemplateSet,
    pub sandbox: &'a Sandbox,
    pub knowledge: &'a KnowledgeBases,
    pub embedder: &'a (dyn Embedder + Sync),
    pub prices: PriceTable,
}

impl ProjectGenerator for PipelineGenerator<'_> {
    fn name(&self) -> String {
        "tiercode".into()
    }

    fn generate(&self, fixture: &ProjectFixture, work_dir: &Path) -> Generation {
        let mut config = self.config.clone();
        if self.scripted_per_fixture {
            let script = fixture
                .scripted_dir()
                .ok_or_else(|| format!("fixture `{}` has no {SCRIPTED_DIR}/ directory", fixture.id))
                .and_then(|d| Script::load_dir(&d).map_err(|e| e.to_string()));
            match script {
                Ok(s) => {
                    let r = BackendRef::scripted(Arc::new(s));
                    config.decision_model = r.clone();
                    config.implementer_model = r;
                }
                Err(e) => return Generation { source: Err(e), ledger: UsageLedger::default() },
            }
        }
        let gateway = match Gateway::connect(&config.decision_model, &config.implementer_model) {
            Ok(g) => g,
            Err(e) => return Generation { source: Err(e.to_string()), ledger: UsageLedger::default() },
        };
        let pipeline = Pipeline {
            config: &config,
            gateway: &gateway,
            templates: self.templates,
            sandbox: self.sandbox,
            knowledge: self.knowledge,
            embedder: self.embedder,
            prices: self.prices.clone(),
        };
        let source = match pipeline.run_project(&fixture.requirement(), &work_dir.join("run"), &fixture.inputs_dir()) {
            Ok(out) => out.project.map(|p| p.source).ok_or_else(|| {
                format!(
                    "pipeline stopped at {}: {}",
                    out.summary.stage.as_str(),
                    out.summary.error.unwrap_or_default()
                )
            }),
            Err(e) => Err(e.to_string()),
        };
        Generation { source, ledger: gateway.ledger() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TierScore {
    pub passed: u32,
    pub total: u32,
    /// Fraction in [0, 1]; `None` for an empty tier.
    pub accuracy: Option<f64>,
}

impl TierScore {
    pub fn new(passed: u32, total: u32) -> Self {
        assert!(passed <= total, "{passed} passed of {total}");
        Self { passed, total, accuracy: (total > 0).then(|| f64::from(passed) / f64::from(total)) }
    }

    /// Percentage with two decimals, or `n/a`.
    pub fn percent(&self) -> String {
        match self.accuracy {
            Some(a) => format!("{:.2}%", a * 100.0),
            None => "n/a".into(),
        }
    }
}

/// Per-tier and overall accuracy. Overall is the mean of every `acc_p`,
/// which is the project-weighted mean of the tiers.
pub fn aggregate(results: impl IntoIterator<Item = (Difficulty, u8)>) -> (BTreeMap<Difficulty, TierScore>, TierScore) {
    let mut counts: BTreeMap<Difficulty, (u32, u32)> = Difficulty::ALL.iter().map(|d| (*d, (0, 0))).collect();
    for (d, acc) in results {
        let c = counts.get_mut(&d).expect("all tiers present");
        c.0 += u32::from(acc == 1);
        c.1 += 1;
    }
    let passed = counts.values().map(|c| c.0).sum();
    let total = counts.values().map(|c| c.1).sum();
    (counts.into_iter().map(|(d, (p, t))| (d, TierScore::new(p, t))).collect(), TierScore::new(passed, total))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureError {
    pub fixture: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub method: String,
    pub tiers: BTreeMap<Difficulty, TierScore>,
    pub overall: TierScore,
    pub outcomes: Vec<EvalOutcome>,
    pub fixture_errors: Vec<FixtureError>,
    pub cost: Option<CostSummary>,
    pub notes: Vec<String>,
}

impl BenchmarkReport {
    pub fn from_outcomes(method: impl Into<String>, mut outcomes: Vec<EvalOutcome>, fixture_errors: Vec<FixtureError>) -> Self {
        outcomes.sort_by(|a, b| a.id.cmp(&b.id));
        let (tiers, overall) = aggregate(outcomes.iter().map(|o| (o.difficulty, o.acc_p)));
        Self { method: method.into(), tiers, overall, outcomes, fixture_errors, cost: None, notes: Vec::new() }
    }

    /// Exit status rule: only fixture errors count, never accuracy.
    pub fn is_clean(&self) -> bool {
        self.fixture_errors.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Accuracy table in the Simple / Medium / Hard / Overall layout,
    /// followed by per-project lines and the cost tally.
    pub fn render_table(&self) -> String {
        let cell = |s: &TierScore| format!("{} ({}/{})", s.percent(), s.passed, s.total);
        let width = self.method.len().max(6) + 2;
        let mut out = format!(
            "{:<width$}{:<20}{:<20}{:<20}{}\n",
            "Method", "Simple", "Medium", "Hard", "Overall"
        );
        out.push_str(&format!(
            "{:<width$}{:<20}{:<20}{:<20}{}\n",
            self.method,
            cell(&self.tiers[&Difficulty::Simple]),
            cell(&self.tiers[&Difficulty::Medium]),
            cell(&self.tiers[&Difficulty::Hard]),
            cell(&self.overall)
        ));
        if !self.outcomes.is_empty() {
            out.push('\n');
        }
        for o in &self.outcomes {
            let flag = if o.flagged_for_manual_review { " [manual review]" } else { "" };
            let why = o.failure_reason.as_deref().map(|r| r.lines().next().unwrap_or("")).unwrap_or("");
            out.push_str(&format!(
                "{:<6} {:<7} {}{}{}\n",
                if o.acc_p == 1 { "PASS" } else { "FAIL" },
                o.difficulty.as_str(),
                o.id,
                flag,
                if why.is_empty() { String::new() } else { format!(": {why}") }
            ));
        }
        for e in &self.fixture_errors {
            out.push_str(&format!("ERROR  {}: {}\n", e.fixture, e.message.lines().next().unwrap_or("")));
        }
        if let Some(c) = &self.cost {
            out.push('\n');
            out.push_str(&c.render());
        }
        out
    }
}

/// Evaluates every loaded fixture; unloadable fixtures and failing sample
/// solutions become fixture errors.
pub fn run_benchmark(
    fixtures: Vec<(PathBuf, Result<ProjectFixture, EvalError>)>,
    generator: &dyn ProjectGenerator,
    sandbox: &Sandbox,
    work_root: &Path,
    mode: Option<CompareMode>,
    parallelism: usize,
    prices: &PriceTable,
) -> BenchmarkReport {
    let mut errors = Vec::new();
    let mut loaded = Vec::new();
    for (path, f) in fixtures {
        match f {
            Ok(f) => loaded.push(f),
            Err(e) => errors.push(FixtureError { fixture: path.display().to_string(), message: e.to_string() }),
        }
    }
    let results = parallel_map(&loaded, parallelism, |f| {
        let dir = work_root.join(&f.id);
        let generation = generator.generate(f, &dir.join("generate"));
        let outcome = match &generation.source {
            Err(reason) => Ok(EvalOutcome::failed(f, format!("generator: {reason}"))),
            Ok(src) => evaluate_project(f, src, sandbox, &dir.join("evaluate"), mode),
        };
        tracing::info!(fixture = %f.id, ok = outcome.as_ref().map(|o| o.acc_p == 1).unwrap_or(false), "evaluated");
        (f.id.clone(), outcome, generation.ledger)
    });

    let mut ledger = UsageLedger::default();
    let mut outcomes = Vec::new();
    for (id, outcome, l) in results {
        ledger.merge(&l);
        match outcome {
            Ok(o) => outcomes.push(o),
            Err(e) => errors.push(FixtureError { fixture: id, message: e.to_string() }),
        }
    }
    let mut report = BenchmarkReport::from_outcomes(generator.name(), outcomes, errors);
    match ledger.report(prices) {
        Ok(c) => report.cost = Some(c),
        Err(e) => report.notes.push(format!("cost unavailable: {e}")),
    }
    report
}
