mod common;

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use tiercode::agents::TemplateSet;
use tiercode::eval::{
    compare_outputs, evaluate_project, load_fixture, load_fixtures, run_benchmark, CompareMode, Difficulty,
    OutputSet, PipelineGenerator,
};
use tiercode::kb::{HashingEmbedder, KnowledgeBases};
use tiercode::llm::PriceTable;

use common::{config, fixtures, sandbox, script_from};

fn bench_dir() -> std::path::PathBuf {
    fixtures().join("bench")
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

fn one(name: &str, bytes: Vec<u8>) -> OutputSet {
    [(name.to_string(), bytes)].into_iter().collect()
}

fn write_fixture(dir: &Path, manifest: &str, solution: Option<&str>) {
    fs::create_dir_all(dir.join("inputs")).unwrap();
    fs::write(dir.join("inputs/values.txt"), "3\n").unwrap();
    fs::write(dir.join("manifest.txt"), manifest).unwrap();
    if let Some(s) = solution {
        fs::create_dir_all(dir.join("solution")).unwrap();
        fs::write(dir.join("solution/main.py"), s).unwrap();
    }
}

const TRIPLE: &str = "n = int(open('values.txt').read())\nopen('out.txt', 'w').write(str(n * 3))\n";

#[test]
fn fixtures_load_in_name_order() {
    let all = load_fixtures(&bench_dir()).unwrap();
    let ids: Vec<_> = all.iter().map(|(_, f)| f.as_ref().unwrap().id.clone()).collect();
    assert_eq!(ids, ["blob-count", "coin-count", "contrast", "edge-magnitude", "invert", "mirror"]);
    let invert = load_fixture(&bench_dir().join("invert")).unwrap();
    assert_eq!(invert.difficulty, Difficulty::Simple);
    assert_eq!(invert.requirement().input_files[0].path, "gradient.png");
}

#[test]
fn incomplete_fixtures_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("nosol");
    write_fixture(&d, "id: nosol\ndifficulty: simple\n\nTriple it.\n", None);
    assert!(load_fixture(&d).unwrap_err().to_string().contains("sample_solution absent"));

    let d = tmp.path().join("notest");
    write_fixture(&d, "id: notest\ndifficulty: simple\n\nTriple it.\n", Some(TRIPLE));
    assert!(load_fixture(&d).unwrap_err().to_string().contains("test_module absent"));

    let d = tmp.path().join("badtier");
    write_fixture(&d, "id: badtier\ndifficulty: extreme\n\nTriple it.\n", Some(TRIPLE));
    assert!(load_fixture(&d).unwrap_err().to_string().contains("extreme"));
}

fn triple_fixture(tmp: &Path) -> tiercode::eval::ProjectFixture {
    let d = tmp.join("triple");
    write_fixture(&d, "id: triple\ndifficulty: simple\ncompare: exact\n\nTriple the number.\n", Some(TRIPLE));
    fs::create_dir_all(d.join("expected")).unwrap();
    fs::write(d.join("expected/out.txt"), "9").unwrap();
    load_fixture(&d).unwrap()
}

#[test]
fn identical_output_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let f = triple_fixture(tmp.path());
    let src = "def main():\n    n = int(open('values.txt').read())\n    open('out.txt', 'w').write(str(3 * n))\n\nmain()\n";
    let o = evaluate_project(&f, src, &sandbox(20.0), &tmp.path().join("w"), None).unwrap();
    assert_eq!(o.acc_p, 1, "{o:?}");
    assert!(o.failure_reason.is_none());
}

#[test]
fn crash_scores_zero_with_reason() {
    let tmp = tempfile::tempdir().unwrap();
    let f = triple_fixture(tmp.path());
    let o = evaluate_project(&f, "raise RuntimeError('boom')\n", &sandbox(20.0), &tmp.path().join("w"), None).unwrap();
    assert_eq!(o.acc_p, 0);
    let reason = o.failure_reason.unwrap();
    assert!(reason.starts_with("crash") && reason.contains("boom"), "{reason}");
    assert!(!o.flagged_for_manual_review);
}

#[test]
fn wrong_value_is_flagged_for_review() {
    let tmp = tempfile::tempdir().unwrap();
    let f = triple_fixture(tmp.path());
    let o = evaluate_project(&f, "open('out.txt', 'w').write('10')\n", &sandbox(20.0), &tmp.path().join("w"), None)
        .unwrap();
    assert_eq!(o.acc_p, 0);
    assert!(o.flagged_for_manual_review);
}

#[test]
fn timeout_is_a_failure_not_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let f = triple_fixture(tmp.path());
    let o = evaluate_project(&f, "import time\ntime.sleep(30)\n", &sandbox(1.0), &tmp.path().join("w"), None).unwrap();
    assert_eq!(o.acc_p, 0);
    assert!(o.failure_reason.unwrap().starts_with("timeout"));
}

#[test]
fn sub_tolerance_noise_is_equal_and_unflagged() {
    let base: Vec<u8> = (0..64u8).map(|v| v * 3).collect();
    let noisy: Vec<u8> = base.iter().enumerate().map(|(i, v)| if i % 4 == 0 { v + 1 } else { *v }).collect();
    let a = one("x.png", png(&base, 8, 8, png::Compression::Default));
    let b = one("x.png", png(&noisy, 8, 8, png::Compression::Default));
    let c = compare_outputs(&a, &b, CompareMode::ImageTolerance, 1.0).unwrap();
    assert!(c.equal && c.structural_match, "{c:?}");
    assert!(!compare_outputs(&a, &b, CompareMode::ImageTolerance, 0.1).unwrap().equal);
}

#[test]
fn reencoded_png_differs_only_in_bytes() {
    let pixels: Vec<u8> = (0..256u32).map(|v| (v * 7 % 251) as u8).collect();
    let fast = png(&pixels, 16, 16, png::Compression::Fast);
    let best = png(&pixels, 16, 16, png::Compression::Best);
    assert_ne!(fast, best, "encodings differ");
    let (a, b) = (one("p.png", fast), one("p.png", best));
    assert!(compare_outputs(&a, &b, CompareMode::ImageTolerance, 0.0).unwrap().equal);
    let exact = compare_outputs(&a, &b, CompareMode::Exact, 0.0).unwrap();
    assert!(!exact.equal && exact.structural_match);
}

#[test]
fn dimension_mismatch_is_not_structural() {
    let a = one("p.png", png(&[0; 16], 4, 4, png::Compression::Default));
    let b = one("p.png", png(&[0; 32], 8, 4, png::Compression::Default));
    let c = compare_outputs(&a, &b, CompareMode::ImageTolerance, 1.0).unwrap();
    assert!(!c.equal && !c.structural_match);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn comparison_is_symmetric(
        x in proptest::collection::vec(any::<u8>(), 12),
        y in proptest::collection::vec(any::<u8>(), 12),
        t in 0.0f64..40.0,
    ) {
        let a = one("p.png", png(&x, 4, 3, png::Compression::Default));
        let b = one("p.png", png(&y, 4, 3, png::Compression::Default));
        for mode in [CompareMode::Exact, CompareMode::ImageTolerance] {
            let ab = compare_outputs(&a, &b, mode, t).unwrap();
            let ba = compare_outputs(&b, &a, mode, t).unwrap();
            prop_assert_eq!(ab.equal, ba.equal);
            prop_assert_eq!(ab.structural_match, ba.structural_match);
        }
        prop_assert!(compare_outputs(&a, &a, CompareMode::ImageTolerance, 0.0).unwrap().equal);
    }
}

fn scripted_benchmark(work: &Path) -> tiercode::eval::BenchmarkReport {
    let placeholder = script_from("");
    let mut c = config(&placeholder);
    c.max_function_retries = 1;
    let embedder = HashingEmbedder::default();
    let knowledge = KnowledgeBases::seed(&embedder).unwrap();
    let templates = TemplateSet::default();
    let sb = sandbox(60.0);
    let generator = PipelineGenerator {
        config: &c,
        scripted_per_fixture: true,
        templates: &templates,
        sandbox: &sb,
        knowledge: &knowledge,
        embedder: &embedder,
        prices: PriceTable::default(),
    };
    run_benchmark(load_fixtures(&bench_dir()).unwrap(), &generator, &sb, work, None, 3, &PriceTable::default())
}

#[test]
fn scripted_benchmark_reports_per_tier_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let report = scripted_benchmark(tmp.path());
    let table = report.render_table();
    assert!(report.is_clean(), "{table}");
    assert_eq!(report.outcomes.len(), 6, "{table}");
    let failed: Vec<_> = report.outcomes.iter().filter(|o| o.acc_p == 0).map(|o| o.id.as_str()).collect();
    assert_eq!(failed, ["contrast"], "{table}");
    let contrast = report.outcomes.iter().find(|o| o.id == "contrast").unwrap();
    assert!(contrast.flagged_for_manual_review, "{table}");
    assert_eq!(report.tiers[&Difficulty::Simple].percent(), "100.00%");
    assert_eq!(report.tiers[&Difficulty::Hard].percent(), "50.00%");
    assert_eq!(report.overall.percent(), "83.33%");
    assert!(table.contains("83.33% (5/6)"), "{table}");

    let again = scripted_benchmark(&tmp.path().join("again"));
    assert_eq!(again.render_table(), table, "scripted benchmarks are reproducible");
}

#[test]
fn exact_mode_fails_the_rounding_difference() {
    let f = load_fixture(&bench_dir().join("edge-magnitude")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    // same pipeline as the scripted project, truncating instead of rounding
    let src = r#"
import numpy as np
from PIL import Image

a = np.asarray(Image.open("shapes.png").convert("L")).astype(np.float32)
p = np.pad(a, 1, mode="edge")
gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
Image.fromarray(np.clip(np.hypot(gx, gy), 0, 255).astype(np.uint8), "L").save("edges.png")
"#;
    let sb = sandbox(30.0);
    let tol = evaluate_project(&f, src, &sb, &tmp.path().join("t"), None).unwrap();
    assert_eq!(tol.acc_p, 1, "{tol:?}");
    let exact = evaluate_project(&f, src, &sb, &tmp.path().join("e"), Some(CompareMode::Exact)).unwrap();
    assert_eq!(exact.acc_p, 0);
    assert!(exact.flagged_for_manual_review);
}
