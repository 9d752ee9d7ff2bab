//! Acceptance suite. Prints one `PASS`/`FAIL`/`SKIP` line per criterion and
//! exits non-zero if any gating criterion fails. Criterion 12 needs a live
//! model endpoint and a container runtime and only runs with
//! `TIERCODE_LIVE_SMOKE=1`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use common::{config, fixtures, scenario_requirement, scenario_script, script_from, Harness};
use tiercode::agents::grammar::{
    extract_code, FunctionListOutput, PlanOutput, PlannedFunction, PlannedModule, SignatureListOutput,
};
use tiercode::agents::TemplateSet;
use tiercode::domain::{ClockMode, Port, DEFAULT_MAX_FUNCTION_RETRIES};
use tiercode::eval::{
    aggregate, compare_outputs, load_fixtures, run_benchmark, BenchmarkReport, CompareMode, Difficulty, EvalOutcome,
    OutputSet, PipelineGenerator,
};
use tiercode::kb::{EntrySource, HashingEmbedder, KnowledgeBases, KnowledgeIndex};
use tiercode::llm::{BackendRef, CallKey, ChatMessage, Gateway, Price, PriceTable, Role, Stage, Tier};
use tiercode::manifest::parse_project;
use tiercode::pipeline::{RunOutcome, RunStage, LABEL_FUNCTION, LABEL_MODULE, LABEL_PROJECT, POOL_JOURNAL};
use tiercode::pool::{Author, NewThought, ThoughtKind};
use tiercode::sandbox::{snapshot, BackendKind, Catalog, Sandbox, StagedFile};
use tiercode::{ThoughtPool, TreeAddress, Validation};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn plate_run(dir: &Path) -> (Harness, RunOutcome) {
    let root = fixtures().join("license_plate");
    let script = script_from(&fs::read_to_string(root.join("script.txt")).unwrap());
    let req = parse_project(&fs::read_to_string(root.join("project.txt")).unwrap()).unwrap();
    let h = Harness::new(config(&script));
    let out = h.run(&req, dir, &root);
    (h, out)
}

fn scripted_replay() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let (_, a) = plate_run(&tmp.path().join("a"));
    let elapsed = started.elapsed();
    let (_, b) = plate_run(&tmp.path().join("b"));
    ensure!(a.succeeded(), "run stopped at {}", a.summary.stage.as_str());
    let s = &a.summary;
    ensure!(s.modules.len() == 3, "{} modules", s.modules.len());
    ensure!(s.function_count() == 6, "{} functions", s.function_count());
    ensure!(s.modules.iter().all(|m| m.functions.len() == 2), "uneven split");
    let (sa, sb) = (snapshot(&a.run_dir).unwrap(), snapshot(&b.run_dir).unwrap());
    ensure!(sa == sb, "run directories differ");
    Ok(format!("3 modules, 6 functions, {} identical files, first run {:.1}s", sa.len(), elapsed.as_secs_f64()))
}

fn run_scenario(script: &str) -> (Harness, RunOutcome, tempfile::TempDir) {
    let h = Harness::new(config(&script_from(script)));
    let tmp = tempfile::tempdir().unwrap();
    let out = h.run(&scenario_requirement(), &tmp.path().join("run"), tmp.path());
    (h, out, tmp)
}

fn retry_budget() -> Check {
    ensure!(DEFAULT_MAX_FUNCTION_RETRIES == 3, "default max_retries is {DEFAULT_MAX_FUNCTION_RETRIES}");
    let mut seen = Vec::new();
    for (schedule, generations, status) in [
        (vec![true], 1, Validation::Passed),
        (vec![false, true], 2, Validation::Passed),
        (vec![false; 4], 4, Validation::UnvalidatedExhausted),
    ] {
        let (_, out, _tmp) = run_scenario(&scenario_script(&schedule, &[true]));
        let f = &out.summary.modules[0].functions[0].status;
        ensure!(out.summary.stage == RunStage::Done, "{schedule:?}: run stopped at {}", out.summary.stage.as_str());
        ensure!(f.attempts == generations, "{schedule:?}: {} generations", f.attempts);
        ensure!(f.validation == status, "{schedule:?}: status {:?}", f.validation);
        ensure!(out.project.is_some(), "{schedule:?}: no project");
        seen.push(f.attempts.to_string());
    }
    Ok(format!("generations {}; exhausted run still assembles", seen.join("/")))
}

fn single_shot_validation() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let (h, out) = plate_run(&tmp.path().join("run"));
    ensure!(out.succeeded(), "run failed");
    let (f, m, p) = (h.sandbox.invocations(LABEL_FUNCTION), h.sandbox.invocations(LABEL_MODULE), h.sandbox.invocations(LABEL_PROJECT));
    ensure!(f == 6, "{f} function validations");
    ensure!(m == 3, "{m} module validations");
    ensure!(p == 0, "{p} project executions");
    for module in &out.summary.modules {
        ensure!(module.status.validations == 1, "{} validated {} times", module.name, module.status.validations);
    }
    Ok("function=6 module=3 project=0".into())
}

fn pair_run(review: bool) -> (RunOutcome, tempfile::TempDir) {
    let root = fixtures().join("pair_programming");
    let script = script_from(&fs::read_to_string(root.join("script.txt")).unwrap());
    let req = parse_project(&fs::read_to_string(root.join("project.txt")).unwrap()).unwrap();
    let mut c = config(&script);
    c.review_tests = review;
    c.max_function_retries = 0;
    let h = Harness::new(c);
    let tmp = tempfile::tempdir().unwrap();
    let out = h.run(&req, &tmp.path().join("run"), &root);
    (out, tmp)
}

fn pair_programming() -> Check {
    let (with, _a) = pair_run(true);
    let f = &with.summary.modules[0].functions[0].status;
    ensure!(f.validation == Validation::Passed, "with review: {:?}", f.validation);
    let (without, _b) = pair_run(false);
    let f = &without.summary.modules[0].functions[0].status;
    ensure!(f.validation != Validation::Passed, "without review the test still passed");
    let stderr = fs::read_to_string(without.run_dir.join("sandbox/m0-f0/attempt-1/logs/stderr.txt")).unwrap();
    ensure!(
        stderr.contains("ModuleNotFoundError") || stderr.contains("ImportError") || stderr.contains("NameError"),
        "stderr lacks the import error: {stderr}"
    );
    Ok("review passes, no review fails on the missing import".into())
}

fn pool_answers(pool: &ThoughtPool) -> (BTreeMap<String, Option<u64>>, BTreeMap<String, Vec<u64>>) {
    let mut latest = BTreeMap::new();
    let mut lineage = BTreeMap::new();
    for node in pool.nodes() {
        for kind in ThoughtKind::ALL {
            latest.insert(format!("{node} {kind}"), pool.latest(&node, kind).map(|r| r.id));
        }
        lineage.insert(node.to_string(), pool.lineage(&node).unwrap().iter().map(|r| r.id).collect());
    }
    (latest, lineage)
}

fn backtracking() -> Check {
    let (out, _tmp) = pair_run(true);
    let pool = ThoughtPool::load(&out.run_dir.join(POOL_JOURNAL)).unwrap();
    let addr = TreeAddress::function(0, 0);
    let code = pool.latest(&addr, ThoughtKind::FunctionCode).ok_or("no function code")?;
    ensure!(code.author == Author::Agent(Role::Coder), "latest code authored by {}", code.author);
    ensure!(code.payload.starts_with("def double_values"), "latest code is not the draft: {}", code.payload);
    let test = pool.latest(&addr, ThoughtKind::TestCode).ok_or("no test code")?;
    ensure!(code.payload != test.payload, "code and test coincide");

    // random trees and appends, journaled then reloaded
    let kinds = proptest::sample::select(ThoughtKind::ALL.to_vec());
    let ops = proptest::collection::vec((0usize..3, 0usize..3, kinds, "[a-z ]{0,12}"), 1..60);
    let mut r = runner(30);
    r.run(&ops, |ops| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(POOL_JOURNAL);
        let live = ThoughtPool::with_journal(&path, ClockMode::Logical).unwrap();
        for (m, f, kind, payload) in ops {
            let (ma, fa) = (TreeAddress::module(m), TreeAddress::function(m, f));
            live.register_node(&ma).unwrap();
            let addr = if f == 2 { ma } else {
                live.register_node(&fa).unwrap();
                fa
            };
            live.append(NewThought::new(Author::Pipeline, "test", addr, kind, payload)).unwrap();
        }
        let reloaded = ThoughtPool::load(&path).unwrap();
        prop_assert_eq!(live.records(), reloaded.records());
        prop_assert_eq!(pool_answers(&live), pool_answers(&reloaded));
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok("latest(function_code) is the coder draft; 30 journals reload identically".into())
}

fn sentence() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ,.()]{0,40}[A-Za-z0-9.]"
}

fn description() -> impl Strategy<Value = String> {
    (sentence(), proptest::option::of(sentence()))
        .prop_map(|(a, b)| b.map_or(a.clone(), |b| format!("{a}\n{b}")))
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,10}"
}

fn ports() -> impl Strategy<Value = Vec<Port>> {
    proptest::collection::vec((ident(), "[a-z][a-z ]{0,10}[a-z]"), 0..3)
        .prop_map(|v| v.into_iter().map(|(n, t)| Port::new(n, t)).collect())
}

fn grammar_round_trip() -> Check {
    let plans = (
        "[a-z][a-z-]{0,14}[a-z]",
        proptest::collection::vec(("[A-Z][A-Za-z0-9]{0,12}", description()), 1..7),
    )
        .prop_map(|(environment, modules)| PlanOutput {
            environment,
            modules: modules.into_iter().map(|(name, description)| PlannedModule { name, description }).collect(),
        });
    runner(100)
        .run(&plans, |plan| {
            let text = plan.render();
            let parsed = PlanOutput::parse(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&parsed, &plan);
            prop_assert_eq!(parsed.render(), text);
            Ok(())
        })
        .map_err(|e| format!("plans: {e}"))?;

    let lists = proptest::collection::vec((ident(), description(), ports(), ports()), 1..6).prop_map(|fs| {
        FunctionListOutput {
            functions: fs
                .into_iter()
                .map(|(name, description, inputs, outputs)| PlannedFunction { name, description, inputs, outputs })
                .collect(),
        }
    });
    runner(100)
        .run(&lists, |list| {
            let text = list.render();
            let parsed = FunctionListOutput::parse(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(parsed.render(), text);
            Ok(())
        })
        .map_err(|e| format!("function lists: {e}"))?;

    let corpus: &[(&str, fn(&str) -> Option<String>, &str)] = &[
        (
            "<<<BEGIN team_leader>>>\nENVIRONMENT: python-imaging\n---\nMODULE_NAME: Input\n<<<END team_leader>>>\n",
            |t| PlanOutput::parse(t).err().map(|e| e.to_string()),
            "team_leader block 2",
        ),
        (
            "<<<BEGIN team_leader>>>\nENVIRONMENT: python-imaging\n---\nMODULE_NAME: A\nMODULE_DESCRIPTION: a\n---\n---\nMODULE_NAME: B\nMODULE_DESCRIPTION: b\n<<<END team_leader>>>\n",
            |t| PlanOutput::parse(t).err().map(|e| e.to_string()),
            "team_leader block 3",
        ),
        (
            "<<<BEGIN team_leader>>>\nENVIRONMENT: python-imaging\n---\nMODULE_NAME: A\nMODULE_DESCRIPTION: a\n---\nthe output module\n<<<END team_leader>>>\n",
            |t| PlanOutput::parse(t).err().map(|e| e.to_string()),
            "team_leader block 3",
        ),
        (
            "<<<BEGIN team_leader>>>\nENVIRONMENT: python-imaging\n---\nMODULE_NAME: 9lives\nMODULE_DESCRIPTION: a\n<<<END team_leader>>>\n",
            |t| PlanOutput::parse(t).err().map(|e| e.to_string()),
            "team_leader block 2",
        ),
        (
            "<<<BEGIN team_leader>>>\nENVIRONMENT: python-imaging\n---\nMODULE_NAME: A\nMODULE_NAME: B\nMODULE_DESCRIPTION: a\n<<<END team_leader>>>\n",
            |t| PlanOutput::parse(t).err().map(|e| e.to_string()),
            "team_leader block 2",
        ),
        (
            "<<<BEGIN team_leader>>>\nENVIRONMENT: python-imaging\n---\nMODULE_NAME: A\nMODULE_DESCRIPTION: a\n",
            |t| PlanOutput::parse(t).err().map(|e| e.to_string()),
            "team_leader",
        ),
        (
            "<<<BEGIN module_leader>>>\nFUNCTION_NAME: f\nDESCRIPTION: d\nINPUTS: x int\nOUTPUTS: none\n<<<END module_leader>>>\n",
            |t| FunctionListOutput::parse(t).err().map(|e| e.to_string()),
            "module_leader block 1",
        ),
        (
            "<<<BEGIN module_leader>>>\nFUNCTION_NAME: f\nDESCRIPTION: d\nINPUTS: none\nOUTPUTS: none\n---\nFUNCTION_NAME: g\nDESCRIPTION: d\nINPUTS: none\n<<<END module_leader>>>\n",
            |t| FunctionListOutput::parse(t).err().map(|e| e.to_string()),
            "module_leader block 2",
        ),
        (
            "<<<BEGIN function_coordinator>>>\nFUNCTION_NAME: f\nSIGNATURE: def f(x:\nDOCSTRING: d\n<<<END function_coordinator>>>\n",
            |t| SignatureListOutput::parse(t).err().map(|e| e.to_string()),
            "function_coordinator block 1",
        ),
        (
            "Here:\n```python\ndef f(x):\n    return x\n",
            |t| extract_code(t).err().map(|e| e.to_string()),
            "line 2",
        ),
        (
            "```python\ndef f():\n    pass\n```\n```python\ndef g():\n    pass\n```\n",
            |t| extract_code(t).err().map(|e| e.to_string()),
            "2 ```python",
        ),
    ];
    for (i, (text, parse, needle)) in corpus.iter().enumerate() {
        match parse(text) {
            None => return Err(format!("malformed input {} parsed", i + 1)),
            Some(msg) if !msg.contains(needle) => {
                return Err(format!("malformed input {}: `{msg}` does not name `{needle}`", i + 1))
            }
            Some(_) => {}
        }
    }
    Ok(format!("100 plans + 100 function lists at a fixed point; {} malformed inputs rejected", corpus.len()))
}

fn retrieval() -> Check {
    let embedder = HashingEmbedder::default();
    let kb = KnowledgeBases::seed(&embedder).unwrap();
    let index = &kb.team_leader;
    let first = &index.entries[0];
    let hits = index.retrieve(&first.task_text, 1, &embedder).unwrap();
    ensure!(hits[0].entry.id == first.id, "self-query ranked {} first", hits[0].entry.id);
    ensure!((hits[0].score - 1.0).abs() < 1e-6, "self-query score {}", hits[0].score);

    let src = |id: &str| EntrySource { id: id.into(), task_text: id.into(), response_text: String::new(), tags: vec![] };
    let unit = |c: f32| vec![c, (1.0 - c * c).sqrt()];
    let fixture = KnowledgeIndex::from_vectors(
        2,
        "hand",
        vec![(src("low"), unit(0.1)), (src("high"), unit(0.9)), (src("mid"), unit(0.5))],
    )
    .unwrap();
    let hits = fixture.retrieve_by_vector(&[1.0, 0.0], 3);
    let got: Vec<(String, String)> = hits.iter().map(|h| (h.entry.id.clone(), format!("{:.4}", h.score))).collect();
    let want: Vec<(String, String)> =
        [("high", "0.9000"), ("mid", "0.5000"), ("low", "0.1000")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    ensure!(got == want, "order {got:?}");
    ensure!(fixture.retrieve_by_vector(&[1.0, 0.0], 0).is_empty(), "k=0 returned hits");
    ensure!(index.retrieve("anything", 0, &embedder).unwrap().is_empty(), "k=0 returned hits");
    let empty = KnowledgeIndex::empty(&embedder);
    ensure!(empty.retrieve("anything", 3, &embedder).unwrap().is_empty(), "empty index returned hits");
    Ok("self-query 1.0 at rank 1; 0.9 > 0.5 > 0.1; k=0 and empty index empty".into())
}

fn sandbox_isolation() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let tripwire = tmp.path().join("tripwire");
    fs::create_dir_all(tripwire.join("nested")).unwrap();
    fs::write(tripwire.join("a.txt"), "alpha\n").unwrap();
    fs::write(tripwire.join("nested/b.bin"), [0u8, 1, 2, 3]).unwrap();
    let before = snapshot(&tripwire).unwrap();
    let sb = Sandbox::new(Catalog::default(), BackendKind::subprocess(), Duration::from_secs(20), 4);

    let ops = proptest::collection::vec((0u8..5, "[a-z]{1,8}", 0usize..200), 1..6);
    let n = std::cell::Cell::new(0);
    runner(50)
        .run(&ops, |ops| {
            n.set(n.get() + 1);
            let staged: Vec<StagedFile> = snapshot(&tripwire)
                .unwrap()
                .keys()
                .map(|p| StagedFile::new(p.clone(), fs::read(tripwire.join(p)).unwrap()))
                .collect();
            let mut script = String::from("import os, shutil\n");
            for (op, name, size) in ops {
                script.push_str(&match op {
                    0 => format!("open('a.txt', 'w').write('x' * {size})\n"),
                    1 => "os.remove('nested/b.bin')\n".to_string(),
                    2 => format!("open('{name}.out', 'wb').write(bytes(range(256)) * {size})\n"),
                    3 => "open('a.txt', 'a').write('more')\n".to_string(),
                    _ => format!("os.makedirs('{name}', exist_ok=True)\nshutil.copy('a.txt', '{name}/copy.txt')\n"),
                });
            }
            let spec = sb.spec("python-imaging", tmp.path().join(format!("run-{}", n.get()))).unwrap();
            let r = sb.run_script(&spec, &script, &staged, "tripwire").unwrap();
            prop_assert!(!r.timed_out);
            prop_assert_eq!(&snapshot(&tripwire).unwrap(), &before);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    ensure!(sb.invocations("tripwire") == 50, "{} runs", sb.invocations("tripwire"));

    let slow = Sandbox::new(Catalog::default(), BackendKind::subprocess(), Duration::from_secs(2), 1);
    let spec = slow.spec("python-imaging", tmp.path().join("loop")).unwrap();
    let started = Instant::now();
    let r = slow.run_script(&spec, "while True:\n    pass\n", &[], "loop").unwrap();
    let took = started.elapsed();
    ensure!(r.timed_out, "infinite loop not reported as timed out");
    ensure!(took < Duration::from_secs(7), "timeout reported after {:.1}s", took.as_secs_f64());
    Ok(format!("tripwire unchanged over 50 runs; 2s loop timed out after {:.1}s", took.as_secs_f64()))
}

fn outcome(id: String, difficulty: Difficulty, acc_p: u8) -> EvalOutcome {
    EvalOutcome {
        id,
        difficulty,
        acc_p,
        failure_reason: None,
        flagged_for_manual_review: false,
        detail: String::new(),
        generated_output: vec![],
        expected_output: vec![],
    }
}

fn benchmark_arithmetic() -> Check {
    let mut outcomes = Vec::new();
    for (d, passed, total) in [(Difficulty::Simple, 26, 30), (Difficulty::Medium, 34, 50), (Difficulty::Hard, 5, 10)] {
        for i in 0..total {
            outcomes.push(outcome(format!("{}-{i:02}", d.as_str()), d, u8::from(i < passed)));
        }
    }
    let report = BenchmarkReport::from_outcomes("planted", outcomes, vec![]);
    let got = [
        report.tiers[&Difficulty::Simple].percent(),
        report.tiers[&Difficulty::Medium].percent(),
        report.tiers[&Difficulty::Hard].percent(),
        report.overall.percent(),
    ];
    ensure!(got == ["86.67%", "68.00%", "50.00%", "72.22%"], "report {got:?}");
    let table = report.render_table();
    ensure!(table.contains("72.22% (65/90)"), "table lacks the overall cell:\n{table}");
    let (_, overall) = aggregate([(Difficulty::Simple, 1), (Difficulty::Simple, 1), (Difficulty::Hard, 0)]);
    ensure!(overall.percent() == "66.67%", "{{1,1,0}} gives {}", overall.percent());
    Ok(format!("{} / {{1,1,0}} -> 66.67%", got.join(" / ")))
}

fn png(pixels: &[u8], w: u32, h: u32, compression: png::Compression) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w, h);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(compression);
    enc.write_header().unwrap().write_image_data(pixels).unwrap();
    out
}

fn set(files: &[(&str, Vec<u8>)]) -> OutputSet {
    files.iter().map(|(n, b)| (n.to_string(), b.clone())).collect()
}

fn comparator_semantics() -> Check {
    let pixels: Vec<u8> = (0..256u32).map(|v| (v * 7 % 251) as u8).collect();
    let fast = png(&pixels, 16, 16, png::Compression::Fast);
    let best = png(&pixels, 16, 16, png::Compression::Best);
    ensure!(fast != best, "re-encoding produced identical bytes");
    let (a, b) = (set(&[("p.png", fast.clone())]), set(&[("p.png", best)]));
    ensure!(compare_outputs(&a, &b, CompareMode::ImageTolerance, 0.0).unwrap().equal, "tolerance mode rejects re-encoding");
    ensure!(!compare_outputs(&a, &b, CompareMode::Exact, 0.0).unwrap().equal, "exact mode accepts re-encoding");
    let extra = set(&[("p.png", fast), ("extra.txt", b"1".to_vec())]);
    for mode in [CompareMode::Exact, CompareMode::ImageTolerance] {
        ensure!(!compare_outputs(&a, &extra, mode, 255.0).unwrap().equal, "extra file equal under {}", mode.as_str());
        ensure!(!compare_outputs(&extra, &a, mode, 255.0).unwrap().equal, "extra file equal under {}", mode.as_str());
    }

    let corpus = (
        proptest::collection::vec(any::<u8>(), 12),
        proptest::collection::vec(any::<u8>(), 12),
        0.0f64..60.0,
        any::<bool>(),
    );
    runner(200)
        .run(&corpus, |(x, y, t, text)| {
            let (a, b) = if text {
                (set(&[("v.txt", x)]), set(&[("v.txt", y)]))
            } else {
                (
                    set(&[("p.png", png(&x, 4, 3, png::Compression::Default))]),
                    set(&[("p.png", png(&y, 4, 3, png::Compression::Default))]),
                )
            };
            for mode in [CompareMode::Exact, CompareMode::ImageTolerance] {
                let ab = compare_outputs(&a, &b, mode, t).unwrap().equal;
                let ba = compare_outputs(&b, &a, mode, t).unwrap().equal;
                prop_assert_eq!(ab, ba);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("re-encoded png equal/unequal by mode; extra file unequal; symmetric over 200 pairs".into())
}

/// Answers every request with the same completion and usage. Each
/// connection serves one request.
fn mock_completions(prompt_tokens: u64, completion_tokens: u64) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let json = format!(
                "{{\"choices\":[{{\"message\":{{\"role\":\"assistant\",\"content\":\"ok\"}},\"finish_reason\":\"stop\"}}],\
                 \"usage\":{{\"prompt_tokens\":{prompt_tokens},\"completion_tokens\":{completion_tokens}}}}}"
            );
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{json}",
                json.len()
            );
        }
    });
    format!("http://{addr}/v1")
}

fn cost_ledger() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out) = plate_run(&tmp.path().join("run"));
    let scripted = out.summary.cost.as_ref().ok_or("no cost summary")?.cost;
    ensure!(scripted == 0.0, "scripted run cost {scripted}");

    const KEY_VAR: &str = "TIERCODE_ACCEPTANCE_MOCK_KEY";
    std::env::set_var(KEY_VAR, "not-a-real-key");
    let remote = BackendRef::Remote {
        endpoint: mock_completions(500, 500),
        model_name: "mock-model".into(),
        credentials_env: KEY_VAR.into(),
        max_in_flight: 2,
    };
    let gateway = Gateway::connect(&remote, &remote).map_err(|e| e.to_string())?;
    let messages = [ChatMessage::system("You plan."), ChatMessage::user("Plan it.")];
    for (role, stage) in [(Role::TeamLeader, Stage::Plan), (Role::Coder, Stage::DraftFunction)] {
        gateway.complete(&CallKey::new(role, stage, TreeAddress::root()), &messages).map_err(|e| e.to_string())?;
    }
    let mut prices = PriceTable::default();
    prices.insert("mock-model", Price { prompt_per_1k: 1.0, completion_per_1k: 2.0 });
    let report = gateway.ledger().report(&prices).map_err(|e| e.to_string())?;
    ensure!(report.total.prompt_tokens == 1000 && report.total.completion_tokens == 1000, "usage {:?}", report.total);
    ensure!((report.cost - 3.0).abs() < 1e-12, "cost {}", report.cost);
    let backend = report.per_backend.get("remote:mock-model").ok_or("no per-backend entry")?;
    let (mut p, mut c, mut r, mut cost) = (0, 0, 0, 0.0);
    for tier in [Tier::DecisionMaker, Tier::Implementer] {
        let t = report.per_tier.get(&tier).ok_or(format!("no {tier:?} split"))?;
        p += t.tally.prompt_tokens;
        c += t.tally.completion_tokens;
        r += t.tally.requests;
        cost += t.cost;
    }
    ensure!(
        (p, c, r) == (backend.prompt_tokens, backend.completion_tokens, backend.requests),
        "role splits {p}/{c}/{r} vs backend {backend:?}"
    );
    ensure!((cost - report.cost).abs() < 1e-12, "split costs sum to {cost}");
    Ok("scripted cost 0; mocked remote 1000/1000 tokens at 1/2 per 1k = 3; splits sum to totals".into())
}

/// Needs `TIERCODE_LIVE_ENDPOINT`, `TIERCODE_LIVE_MODEL`, the key in
/// `TIERCODE_API_KEY` and a container runtime with the catalog images.
fn live_smoke() -> Check {
    let var = |k: &str| std::env::var(k).map_err(|_| format!("{k} is not set"));
    let remote = BackendRef::Remote {
        endpoint: var("TIERCODE_LIVE_ENDPOINT")?,
        model_name: var("TIERCODE_LIVE_MODEL")?,
        credentials_env: "TIERCODE_API_KEY".into(),
        max_in_flight: 4,
    };
    let c = tiercode::RunConfig::new(remote.clone(), remote);
    let sb = Sandbox::new(Catalog::default(), BackendKind::container(), Duration::from_secs(120), 2);
    sb.probe().map_err(|e| e.to_string())?;
    let embedder = HashingEmbedder::default();
    let knowledge = KnowledgeBases::seed(&embedder).unwrap();
    let templates = TemplateSet::default();
    let generator = PipelineGenerator {
        config: &c,
        scripted_per_fixture: false,
        templates: &templates,
        sandbox: &sb,
        knowledge: &knowledge,
        embedder: &embedder,
        prices: PriceTable::default(),
    };
    let fixture: Vec<_> = load_fixtures(&fixtures().join("bench"))
        .unwrap()
        .into_iter()
        .filter(|(p, _)| p.ends_with("invert"))
        .collect();
    let tmp = tempfile::tempdir().unwrap();
    let report = run_benchmark(fixture, &generator, &sb, tmp.path(), None, 1, &PriceTable::default());
    ensure!(report.is_clean(), "fixture errors: {:?}", report.fixture_errors);
    let o = &report.outcomes[0];
    ensure!(o.acc_p == 1, "invert failed: {:?}", o.failure_reason);
    Ok("invert generated live and passed".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("scripted end-to-end replay", scripted_replay),
        ("retry budget", retry_budget),
        ("single-shot module validation", single_shot_validation),
        ("pair programming", pair_programming),
        ("thought-pool backtracking", backtracking),
        ("grammar round trip", grammar_round_trip),
        ("retrieval correctness", retrieval),
        ("sandbox isolation and timeout", sandbox_isolation),
        ("benchmark arithmetic", benchmark_arithmetic),
        ("comparator semantics", comparator_semantics),
        ("cost ledger", cost_ledger),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if std::env::var("TIERCODE_LIVE_SMOKE").as_deref() == Ok("1") {
        match live_smoke() {
            Ok(detail) => println!("criterion 12 PASS  live smoke: {detail}"),
            Err(why) => println!("criterion 12 FAIL  live smoke (not gating): {why}"),
        }
    } else {
        println!("criterion 12 SKIP  live smoke: set TIERCODE_LIVE_SMOKE=1 to run");
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
