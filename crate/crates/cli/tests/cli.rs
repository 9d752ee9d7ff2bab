use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn seeds() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/kb")
}

/// The binary with a clean environment: no inherited TIERCODE_* settings.
fn tiercode(cwd: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tiercode"));
    c.current_dir(cwd);
    for (k, _) in std::env::vars() {
        if k.starts_with("TIERCODE_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("binary runs");
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

const USAGE: i32 = 2;

fn plate() -> (PathBuf, PathBuf) {
    let d = fixtures().join("license_plate");
    (d.join("project.txt"), d.join("script.txt"))
}

#[test]
fn help_documents_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let global = [
        "--config", "--backend-decision", "--backend-implementer", "--scripted", "--sandbox", "--max-retries",
        "--parallelism", "--compare", "--dry-run", "--templates", "--catalog", "--runs-dir",
    ];
    for (sub, own) in [
        (vec!["run"], vec!["--inputs", "--run-dir"]),
        (vec!["bench"], vec!["--out", "--fixture-scripts", "--command", "--command-arg", "--command-timeout"]),
        (vec!["kb", "build"], vec!["--out"]),
        (vec!["kb", "query"], vec!["-k"]),
        (vec!["inspect"], vec!["--address", "--kind", "--subtree", "--lineage", "--full"]),
    ] {
        let (code, out, _) = run(tiercode(tmp.path()).args(&sub).arg("--help"));
        assert_eq!(code, 0, "{sub:?}");
        for flag in global.iter().chain(own.iter()) {
            assert!(out.contains(flag), "{sub:?} --help lacks {flag}:\n{out}");
        }
    }
    assert!(run(tiercode(tmp.path()).args(["run", "--help"])).1.contains("container"));
}

#[test]
fn scripted_run_writes_the_project_and_can_be_inspected() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, script) = plate();
    let (code, out, err) = run(tiercode(tmp.path())
        .arg("--scripted")
        .arg(&script)
        .arg("run")
        .arg(&manifest)
        .args(["--run-dir", "r"]));
    assert_eq!(code, 0, "{out}\n{err}");
    assert!(out.contains("run license-plate: done"), "{out}");
    let project = fs::read_to_string(tmp.path().join("r/project/main.py")).unwrap();
    assert!(project.contains("def main("));

    let (code, out, _) = run(tiercode(tmp.path()).args(["inspect", "r", "--address", "/"]));
    assert_eq!(code, 0);
    let kinds: Vec<&str> = out.lines().filter(|l| l.starts_with('#')).map(|l| l.split_whitespace().nth(2).unwrap()).collect();
    assert_eq!(kinds, ["requirement", "project_code"], "{out}");

    let (code, out, _) = run(tiercode(tmp.path()).args(["inspect", "r", "--kind", "function_code"]));
    assert_eq!(code, 0);
    let records: Vec<&str> = out.lines().filter(|l| l.starts_with('#')).collect();
    assert_eq!(records.len(), 6, "{out}");
    assert!(records.iter().all(|l| l.contains("function_code")));

    let (code, out, _) = run(tiercode(tmp.path()).args(["inspect", "r", "--address", "/1", "--lineage", "--full"]));
    assert_eq!(code, 0);
    assert!(out.contains("MODULE_NAME: LicensePlateDetection"), "{out}");

    for bad in [["--address", "/0/x"], ["--address", "/7"], ["--kind", "sketch"]] {
        let (code, _, err) = run(tiercode(tmp.path()).args(["inspect", "r"]).args(bad));
        assert_eq!(code, USAGE, "{bad:?}: {err}");
    }
    assert_eq!(run(tiercode(tmp.path()).args(["inspect", "nowhere"])).0, USAGE);
}

#[test]
fn dry_run_plans_without_executing() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, script) = plate();
    let (code, out, err) = run(tiercode(tmp.path())
        .arg("--dry-run")
        .arg("--scripted")
        .arg(&script)
        .arg("run")
        .arg(&manifest)
        .args(["--run-dir", "r"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("3 module(s)"), "{out}");
    assert!(out.contains("module /2 LicensePlateRecognition"), "{out}");
    assert!(!tmp.path().join("r").exists(), "no run directory, no sandbox");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn manifest_and_backend_problems_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, script) = plate();
    let (code, _, err) = run(tiercode(tmp.path()).arg("--scripted").arg(&script).args(["run", "missing.txt"]));
    assert_eq!(code, USAGE, "{err}");

    fs::write(tmp.path().join("bad.txt"), "id: x\ncolour: red\n\nDo things.\n").unwrap();
    let (code, _, err) = run(tiercode(tmp.path()).arg("--scripted").arg(&script).args(["run", "bad.txt"]));
    assert_eq!(code, USAGE, "{err}");
    assert!(err.contains("colour"), "{err}");

    let (code, _, err) = run(tiercode(tmp.path()).arg("run").arg(&manifest));
    assert_eq!(code, USAGE);
    assert!(err.contains("no decision backend"), "{err}");

    // flag parsing failures never start a run
    let (code, _, _) = run(tiercode(tmp.path())
        .arg("--scripted")
        .arg(&script)
        .args(["--max-retries", "many", "run"])
        .arg(&manifest)
        .args(["--run-dir", "r"]));
    assert_eq!(code, USAGE);
    assert!(!tmp.path().join("r").exists());
    assert_eq!(run(tiercode(tmp.path()).args(["--sandbox", "vm", "config"])).0, USAGE);
    assert_eq!(run(tiercode(tmp.path()).args(["--parallelism", "0", "config"])).0, USAGE);
}

#[test]
fn remote_credentials_come_from_the_named_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, script) = plate();
    fs::write(
        tmp.path().join("c.toml"),
        "[backends.decision]\nkind = \"remote\"\nmodel = \"m\"\nendpoint = \"http://127.0.0.1:9\"\ncredentials_env = \"TIERCODE_TEST_UNSET_KEY\"\n",
    )
    .unwrap();
    let (code, _, err) = run(tiercode(tmp.path())
        .args(["--config", "c.toml", "--backend-implementer"])
        .arg(format!("scripted:{}", script.display()))
        .arg("run")
        .arg(&manifest));
    assert_eq!(code, USAGE, "{err}");
    assert!(err.contains("TIERCODE_TEST_UNSET_KEY"), "{err}");
}

#[test]
fn precedence_is_flag_env_file_default() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "max_retries = 1\nparallelism = 4\ncompare = \"exact\"\n").unwrap();
    let get = |out: &str, key: &str| {
        out.lines().find_map(|l| l.strip_prefix(&format!("{key} = "))).unwrap_or_default().to_string()
    };

    let (_, out, _) = run(tiercode(tmp.path()).arg("config"));
    assert_eq!(get(&out, "max_retries"), "3");
    assert_eq!(get(&out, "compare"), "(per fixture)");

    let (_, out, _) = run(tiercode(tmp.path()).args(["--config", "c.toml", "config"]));
    assert_eq!((get(&out, "max_retries"), get(&out, "parallelism")), ("1".into(), "4".into()));
    assert_eq!(get(&out, "compare"), "exact");

    let (_, out, _) = run(tiercode(tmp.path())
        .env("TIERCODE_CONFIG", "c.toml")
        .env("TIERCODE_MAX_RETRIES", "5")
        .env("TIERCODE_COMPARE", "image_tolerance")
        .arg("config"));
    assert_eq!((get(&out, "max_retries"), get(&out, "parallelism")), ("5".into(), "4".into()));
    assert_eq!(get(&out, "compare"), "image_tolerance");

    let (_, out, _) = run(tiercode(tmp.path())
        .env("TIERCODE_CONFIG", "c.toml")
        .env("TIERCODE_MAX_RETRIES", "5")
        .args(["--max-retries", "0", "config"]));
    assert_eq!(get(&out, "max_retries"), "0");

    fs::write(tmp.path().join("typo.toml"), "max_retry = 1\n").unwrap();
    assert_eq!(run(tiercode(tmp.path()).args(["--config", "typo.toml", "config"])).0, USAGE);
    assert_eq!(run(tiercode(tmp.path()).args(["--config", "absent.toml", "config"])).0, USAGE);
}

#[test]
fn bench_threads_the_compare_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = fixtures().join("bench/edge-magnitude");
    let bench = |mode: &str, out: &str| {
        run(tiercode(tmp.path())
            .args(["--compare", mode, "bench"])
            .arg(&fixture)
            .args(["--fixture-scripts", "--out", out]))
    };

    let (code, out, err) = bench("image_tolerance", "tol");
    assert_eq!(code, 0, "{out}\n{err}");
    assert!(out.contains("PASS   medium  edge-magnitude"), "{out}");
    assert!(out.contains("100.00% (1/1)"), "{out}");
    let report = fs::read_to_string(tmp.path().join("tol/report.json")).unwrap();
    assert!(report.contains("\"acc_p\": 1"), "{report}");
    assert!(tmp.path().join("tol/report.txt").is_file());

    let (code, out, _) = bench("exact", "exact");
    assert_eq!(code, 0, "accuracy never affects the exit code");
    assert!(out.contains("FAIL   medium  edge-magnitude [manual review]"), "{out}");
}

#[test]
fn bench_usage_and_fixture_errors() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(run(tiercode(tmp.path()).args(["bench", "empty", "--fixture-scripts"])).0, USAGE);
    assert_eq!(run(tiercode(tmp.path()).args(["bench", "absent", "--fixture-scripts"])).0, USAGE);

    let broken = tmp.path().join("suite/broken");
    fs::create_dir_all(broken.join("inputs")).unwrap();
    fs::write(broken.join("manifest.txt"), "id: broken\ndifficulty: simple\n\nNo solution here.\n").unwrap();
    let (code, out, _) = run(tiercode(tmp.path()).args(["--dry-run", "bench", "suite"]));
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("sample_solution absent"), "{out}");

    let (code, out, err) = run(tiercode(tmp.path()).args(["bench", "suite", "--fixture-scripts", "--out", "o"]));
    assert_eq!(code, 1, "fixture errors fail the benchmark\n{out}\n{err}");
    assert!(out.contains("ERROR"), "{out}");
}

#[test]
fn external_generator_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = fixtures().join("bench/invert");
    let gen = tmp.path().join("gen.py");
    fs::write(
        &gen,
        "import shutil, sys\nfixture, out = sys.argv[-2], sys.argv[-1]\nshutil.copy(fixture + '/solution/main.py', out)\n",
    )
    .unwrap();
    let (code, out, err) = run(tiercode(tmp.path())
        .arg("bench")
        .arg(&fixture)
        .args(["--command", "python3", "--command-arg"])
        .arg(&gen)
        .args(["--out", "o"]));
    assert_eq!(code, 0, "{out}\n{err}");
    assert!(out.contains("PASS   simple  invert"), "{out}");
    assert!(out.lines().nth(1).unwrap().starts_with("python3"), "{out}");
}

#[test]
fn kb_build_and_query() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, out, err) = run(tiercode(tmp.path())
        .args(["kb", "build"])
        .arg(seeds().join("coder.jsonl"))
        .args(["--out", "idx/coder.kb"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("embedder hashing"), "{out}");
    assert!(tmp.path().join("idx/coder.kb").is_file());

    let (code, out, _) = run(tiercode(tmp.path()).args(["kb", "query", "idx/coder.kb", "otsu threshold binarize", "-k", "2"]));
    assert_eq!(code, 0);
    let ranked: Vec<&str> = out.lines().filter(|l| l.contains("score=")).collect();
    assert_eq!(ranked.len(), 2, "{out}");
    assert!(ranked[0].starts_with("1. c-otsu"), "{out}");

    let (_, seed_out, _) = run(tiercode(tmp.path()).args(["kb", "query", "seed:coder", "otsu threshold binarize", "-k", "2"]));
    assert_eq!(seed_out, out, "built index matches the embedded seed");

    assert_eq!(run(tiercode(tmp.path()).args(["kb", "query", "nope.kb", "x"])).0, USAGE);
    assert_eq!(run(tiercode(tmp.path()).args(["kb", "query", "seed:artist", "x"])).0, USAGE);
    fs::write(tmp.path().join("bad.jsonl"), "{\"id\": 1}\n").unwrap();
    assert_eq!(run(tiercode(tmp.path()).args(["kb", "build", "bad.jsonl", "--out", "x.kb"])).0, USAGE);
}
