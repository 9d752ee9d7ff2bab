//! Isolated execution of generated Python.
//!
//! Every execution owns a directory laid out as
//!
//! ```text
//! <dir>/inputs/   staged input files, as given
//! <dir>/code/     the script and any code under test
//! <dir>/outputs/  working directory; staged inputs are copied here too
//! <dir>/logs/     stdout.txt, stderr.txt, result.json
//! ```
//!
//! `produced_files` is the diff of `outputs/` before and after the run.
//! Absolute sandbox paths in captured output are rewritten to `<sandbox>` so
//! that reports do not depend on where the run directory lives.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::is_safe_relative_path;
use crate::sync::Semaphore;

/// Extra wall-clock allowance on top of the configured timeout.
pub const TIMEOUT_GRACE: Duration = Duration::from_secs(5);
/// `exit_code` reported for a run killed by the timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;
pub const PATH_PLACEHOLDER: &str = "<sandbox>";

const DEFAULT_CATALOG: &str = include_str!("../assets/catalog.txt");

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox backend unavailable: {0}")]
    Unavailable(String),
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("image `{0}` is not in the catalog")]
    UnknownImage(String),
    #[error("staged path `{0}` must be relative without `..`")]
    BadPath(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sandbox I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub description: String,
}

/// Runtime images the Team Leader may choose from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    entries: Vec<CatalogEntry>,
}

impl Catalog {
    /// `name: description` per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, SandboxError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, desc) = line
                .split_once(':')
                .ok_or_else(|| SandboxError::Catalog(format!("line {}: expected `name: description`", i + 1)))?;
            let (name, desc) = (name.trim(), desc.trim());
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(SandboxError::Catalog(format!("line {}: bad image name `{name}`", i + 1)));
            }
            if entries.iter().any(|e: &CatalogEntry| e.name == name) {
                return Err(SandboxError::Catalog(format!("line {}: duplicate image `{name}`", i + 1)));
            }
            entries.push(CatalogEntry { name: name.into(), description: desc.into() });
        }
        if entries.is_empty() {
            return Err(SandboxError::Catalog("catalog lists no images".into()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SandboxError::Catalog(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn first(&self) -> &CatalogEntry {
        &self.entries[0]
    }

    /// The listing shown to the Team Leader.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("- {}: {}", e.name, e.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("shipped catalog parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// `docker run` (or a compatible CLI) per execution.
    Container { runtime: String },
    /// A local `python3` child process confined to the sandbox directory.
    Subprocess { python: String },
}

impl BackendKind {
    pub fn container() -> Self {
        BackendKind::Container { runtime: "docker".into() }
    }

    pub fn subprocess() -> Self {
        BackendKind::Subprocess { python: "python3".into() }
    }
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "container" => Ok(Self::container()),
            "subprocess" => Ok(Self::subprocess()),
            other => Err(format!("unknown sandbox backend `{other}`")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Container { .. } => f.write_str("container"),
            BackendKind::Subprocess { .. } => f.write_str("subprocess"),
        }
    }
}

/// One execution request.
#[derive(Debug, Clone, PartialEq)]
pub struct SandboxSpec {
    pub image: String,
    pub host_dir: PathBuf,
    pub timeout: Duration,
    pub backend: BackendKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedFile {
    pub path: String,
    pub bytes: Vec<u8>,
}

impl StagedFile {
    pub fn new(path: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self { path: path.into(), bytes: bytes.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    #[serde(skip)]
    pub duration: Duration,
    pub produced_files: Vec<ProducedFile>,
    pub timed_out: bool,
    /// Where the outputs live on the host.
    #[serde(skip)]
    pub outputs_dir: PathBuf,
}

impl ExecutionResult {
    pub fn succeeded(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }

    /// Text handed back to agents after a failed validation.
    pub fn report(&self) -> String {
        let mut s = if self.timed_out {
            "status: timed out\n".to_string()
        } else {
            format!("status: exit code {}\n", self.exit_code)
        };
        if !self.stdout.trim().is_empty() {
            s.push_str("stdout:\n");
            s.push_str(self.stdout.trim_end());
            s.push('\n');
        }
        if !self.stderr.trim().is_empty() {
            s.push_str("stderr:\n");
            s.push_str(self.stderr.trim_end());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRun {
    pub passed: bool,
    pub result: ExecutionResult,
}

/// Executes scripts; counts invocations per caller-supplied label.
pub struct Sandbox {
    catalog: Catalog,
    backend: BackendKind,
    timeout: Duration,
    limit: Semaphore,
    counters: Mutex<BTreeMap<String, u64>>,
}

static CONTAINER_SEQ: AtomicU64 = AtomicU64::new(0);

impl Sandbox {
    pub fn new(catalog: Catalog, backend: BackendKind, timeout: Duration, max_concurrent: usize) -> Self {
        Self { catalog, backend, timeout, limit: Semaphore::new(max_concurrent), counters: Mutex::default() }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn backend(&self) -> &BackendKind {
        &self.backend
    }

    /// Checks the backend can actually run something.
    pub fn probe(&self) -> Result<(), SandboxError> {
        let (prog, arg) = match &self.backend {
            BackendKind::Subprocess { python } => (python.as_str(), "--version"),
            BackendKind::Container { runtime } => (runtime.as_str(), "version"),
        };
        let status = Command::new(prog)
            .arg(arg)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| SandboxError::Unavailable(format!("`{prog}`: {e}")))?;
        if !status.success() {
            return Err(SandboxError::Unavailable(format!("`{prog} {arg}` exited with {status}")));
        }
        Ok(())
    }

    pub fn spec(&self, image: &str, host_dir: impl Into<PathBuf>) -> Result<SandboxSpec, SandboxError> {
        if !self.catalog.contains(image) {
            return Err(SandboxError::UnknownImage(image.to_string()));
        }
        Ok(SandboxSpec {
            image: image.to_string(),
            host_dir: host_dir.into(),
            timeout: self.timeout,
            backend: self.backend.clone(),
        })
    }

    pub fn invocations(&self, label: &str) -> u64 {
        self.lock_counters().get(label).copied().unwrap_or(0)
    }

    pub fn all_invocations(&self) -> BTreeMap<String, u64> {
        self.lock_counters().clone()
    }

    fn lock_counters(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, u64>> {
        self.counters.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs `script` as `code/main.py` with `outputs/` as working directory.
    pub fn run_script(
        &self,
        spec: &SandboxSpec,
        script: &str,
        staged: &[StagedFile],
        label: &str,
    ) -> Result<ExecutionResult, SandboxError> {
        self.execute(spec, "main.py", &[("main.py", script)], staged, label)
    }

    /// Stages `code_under_test` as `code/<module>.py` and runs the test
    /// script next to it. Passes iff the script exits 0 within the timeout.
    pub fn run_validation(
        &self,
        spec: &SandboxSpec,
        module: &str,
        code_under_test: &str,
        test_script: &str,
        inputs: &[StagedFile],
        label: &str,
    ) -> Result<ValidationRun, SandboxError> {
        if code_under_test.trim().is_empty() || test_script.trim().is_empty() {
            return Err(SandboxError::Precondition("validation needs both code and test source".into()));
        }
        let code_file = format!("{module}.py");
        let test_file = format!("test_{module}.py");
        let result = self.execute(
            spec,
            &test_file,
            &[(&code_file, code_under_test), (&test_file, test_script)],
            inputs,
            label,
        )?;
        Ok(ValidationRun { passed: result.succeeded(), result })
    }

    fn execute(
        &self,
        spec: &SandboxSpec,
        main: &str,
        code: &[(&str, &str)],
        staged: &[StagedFile],
        label: &str,
    ) -> Result<ExecutionResult, SandboxError> {
        if !spec.timeout.as_secs_f64().is_normal() {
            return Err(SandboxError::Precondition("timeout must be > 0".into()));
        }
        for f in staged {
            if !is_safe_relative_path(&f.path) {
                return Err(SandboxError::BadPath(f.path.clone()));
            }
        }
        for (name, _) in code {
            if !is_safe_relative_path(name) {
                return Err(SandboxError::BadPath(name.to_string()));
            }
        }
        let root = absolute(&spec.host_dir)?;
        let (inputs, code_dir, outputs, logs) =
            (root.join("inputs"), root.join("code"), root.join("outputs"), root.join("logs"));
        for d in [&inputs, &code_dir, &outputs, &logs] {
            fs::create_dir_all(d)?;
        }
        for f in staged {
            write_file(&inputs.join(&f.path), &f.bytes)?;
            write_file(&outputs.join(&f.path), &f.bytes)?;
        }
        for (name, src) in code {
            write_file(&code_dir.join(name), src.as_bytes())?;
        }
        let before = snapshot(&outputs)?;

        let _permit = self.limit.acquire();
        *self.lock_counters().entry(label.to_string()).or_default() += 1;
        let stdout_path = logs.join("stdout.txt");
        let stderr_path = logs.join("stderr.txt");
        let started = Instant::now();
        let (exit_code, timed_out) = match &spec.backend {
            BackendKind::Subprocess { python } => {
                let mut cmd = Command::new(python);
                cmd.arg("-B")
                    .arg("-s")
                    .arg(code_dir.join(main))
                    .current_dir(&outputs)
                    .env_clear()
                    .env("PATH", std::env::var_os("PATH").unwrap_or_default())
                    .env("PYTHONPATH", &code_dir)
                    .env("PYTHONDONTWRITEBYTECODE", "1")
                    .env("PYTHONHASHSEED", "0")
                    .env("PYTHONIOENCODING", "utf-8")
                    .env("HOME", &outputs)
                    .env("MPLBACKEND", "Agg");
                run_child(cmd, &stdout_path, &stderr_path, spec.timeout, None)?
            }
            BackendKind::Container { runtime } => {
                let name = format!(
                    "tiercode-{}-{}",
                    std::process::id(),
                    CONTAINER_SEQ.fetch_add(1, Ordering::Relaxed)
                );
                let mut cmd = Command::new(runtime);
                cmd.args(["run", "--rm", "--network", "none", "--name", &name])
                    .arg("-v")
                    .arg(format!("{}:/sandbox", root.display()))
                    .args(["-w", "/sandbox/outputs"])
                    .args(["-e", "PYTHONPATH=/sandbox/code", "-e", "PYTHONDONTWRITEBYTECODE=1", "-e", "PYTHONHASHSEED=0"])
                    .arg(&spec.image)
                    .args(["python3", "-B", &format!("/sandbox/code/{main}")]);
                run_child(cmd, &stdout_path, &stderr_path, spec.timeout, Some((runtime, &name)))?
            }
        };
        let duration = started.elapsed();

        let normalize = |path: &Path| -> io::Result<String> {
            let raw = String::from_utf8_lossy(&fs::read(path)?).into_owned();
            let text = raw
                .replace(&root.display().to_string(), PATH_PLACEHOLDER)
                .replace("/sandbox", PATH_PLACEHOLDER);
            fs::write(path, &text)?;
            Ok(text)
        };
        let stdout = normalize(&stdout_path)?;
        let stderr = normalize(&stderr_path)?;

        let after = snapshot(&outputs)?;
        let produced_files: Vec<ProducedFile> = after
            .into_iter()
            .filter(|(p, h)| before.get(p) != Some(h))
            .map(|(path, sha256)| ProducedFile { path, sha256 })
            .collect();
        let result = ExecutionResult {
            exit_code,
            stdout,
            stderr,
            duration,
            produced_files,
            timed_out,
            outputs_dir: outputs,
        };
        fs::write(
            logs.join("result.json"),
            serde_json::to_string_pretty(&result).map_err(io::Error::other)? + "\n",
        )?;
        Ok(result)
    }
}

fn absolute(p: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(p)?;
    p.canonicalize()
}

fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

/// Relative path → sha256 hex for every regular file under `dir`.
pub fn snapshot(dir: &Path) -> io::Result<BTreeMap<String, String>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> io::Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let ty = e.file_type()?;
            let path = e.path();
            if ty.is_dir() {
                walk(base, &path, out)?;
            } else if ty.is_file() {
                let rel = path
                    .strip_prefix(base)
                    .expect("under base")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&path)?)));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    if dir.exists() {
        walk(dir, dir, &mut out)?;
    }
    Ok(out)
}

fn run_child(
    mut cmd: Command,
    stdout: &Path,
    stderr: &Path,
    timeout: Duration,
    container: Option<(&str, &str)>,
) -> Result<(i32, bool), SandboxError> {
    use std::os::unix::process::{CommandExt, ExitStatusExt};

    cmd.stdin(Stdio::null())
        .stdout(fs::File::create(stdout)?)
        .stderr(fs::File::create(stderr)?)
        .process_group(0);
    let program = cmd.get_program().to_string_lossy().into_owned();
    let mut child = cmd.spawn().map_err(|e| match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => {
            SandboxError::Unavailable(format!("cannot start `{program}`: {e}"))
        }
        _ => SandboxError::Io(e),
    })?;
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            let code = status
                .code()
                .unwrap_or_else(|| 128 + status.signal().unwrap_or(0));
            if container.is_some() && code == 125 {
                return Err(SandboxError::Unavailable(format!(
                    "container runtime failed to start the image: {}",
                    fs::read_to_string(stderr).unwrap_or_default().trim()
                )));
            }
            return Ok((code, false));
        }
        if Instant::now() >= deadline {
            if let Some((runtime, name)) = container {
                let _ = Command::new(runtime)
                    .args(["kill", name])
                    .stdout(Stdio::null())
                    .stderr(Stdio::null())
                    .status();
            }
            // the child leads its own process group; take the whole group down
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
            return Ok((TIMEOUT_EXIT_CODE, true));
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}
