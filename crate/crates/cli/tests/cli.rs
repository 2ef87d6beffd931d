use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtpd::assembler::Form;
use mtpd::report::Report;
use tempfile::TempDir;

fn mtpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtpd"))
        .args(args)
        .env_remove("MTPD_CATALOG_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_plan(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("plan.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn gen(dir: &Path, plan: &str, name: &str) -> PathBuf {
    let plan = write_plan(dir, plan);
    let out = dir.join(name);
    let o = mtpd(&["gen-corpus", "--plan", plan.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn detect_report(input: &Path, patterns: &[&str], extra: &[&str]) -> Report {
    let mut args = vec!["detect", "--input", input.to_str().unwrap()];
    for p in patterns {
        args.extend(["--pattern", p]);
    }
    args.extend(extra);
    let o = mtpd(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    Report::from_json(&stdout(&o)).unwrap()
}

#[test]
fn match_prints_end_and_distance() {
    let o = mtpd(&["match", "--pattern-string", "nA", "--text-string", "RLnAnB", "--k", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "4:0\n");
    let g = mtpd(&["match", "--pattern-string", "kitten", "--text-string", "sitting", "--mode", "global"]);
    assert_eq!(stdout(&g), "3\n");
}

#[test]
fn missing_pattern_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let t = gen(dir.path(), r#"{"seed": 1, "patterns": [{"pattern": "visitor", "exact": 1}]}"#, "t.mtj");
    let o = mtpd(&["detect", "--input", t.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--pattern"));
}

#[test]
fn planted_fixed_point_is_found_complete() {
    let dir = TempDir::new().unwrap();
    let t = gen(
        dir.path(),
        r#"{"seed": 11, "patterns": [{"pattern": "fixed_point_iteration", "exact": 1}], "noise_rules": 4}"#,
        "t.mtj",
    );
    let r = detect_report(&t, &["fixed_point_iteration"], &[]);
    assert_eq!(r.results.len(), 1);
    let occ = &r.results[0].occurrences;
    assert_eq!(occ.iter().filter(|o| o.form == Form::Complete).count(), 1);
}

#[test]
fn zero_threshold_reports_no_approximate_occurrences() {
    let dir = TempDir::new().unwrap();
    let t = gen(
        dir.path(),
        r#"{"seed": 5, "patterns": [{"pattern": "transitive_closure", "mutated": 2}, {"pattern": "visitor", "mutated": 2}], "noise_rules": 3}"#,
        "t.mtj",
    );
    let r = detect_report(&t, &["transitive_closure", "visitor"], &["--k-override", "0"]);
    assert!(r.occurrences().all(|(_, o)| o.form != Form::Approximate));
    let loose = detect_report(&t, &["transitive_closure", "visitor"], &[]);
    assert!(loose.occurrences().any(|(_, o)| o.form == Form::Approximate));
}

#[test]
fn reports_are_deterministic_and_render() {
    let dir = TempDir::new().unwrap();
    let t = gen(
        dir.path(),
        r#"{"seed": 2, "patterns": [{"pattern": "visitor", "exact": 1, "broken": 1}, {"pattern": "entities_before_relations", "dropped": 1}], "noise_rules": 5}"#,
        "t.mtj",
    );
    let pats = ["visitor", "entities_before_relations"];
    let mut a = detect_report(&t, &pats, &[]);
    let mut b = detect_report(&t, &pats, &[]);
    a.generated_at.clear();
    b.generated_at.clear();
    assert_eq!(a.to_json(), b.to_json());

    let path = dir.path().join("r.json");
    let o = mtpd(&[
        "detect", "--input", t.to_str().unwrap(), "--pattern", "visitor", "--report", path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for format in ["text", "markdown"] {
        let o = mtpd(&["report", "--report", path.to_str().unwrap(), "--format", format]);
        assert!(o.status.success(), "{}", stderr(&o));
        let stored = Report::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for (_, occ) in stored.occurrences() {
            assert!(stdout(&o).contains(&occ.id));
        }
    }
}

#[test]
fn encode_prints_one_line_per_rule() {
    let dir = TempDir::new().unwrap();
    let t = gen(dir.path(), r#"{"seed": 3, "patterns": [{"pattern": "visitor", "exact": 1}], "noise_rules": 2}"#, "t.mtj");
    let o = mtpd(&["encode", "--input", t.to_str().unwrap()]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l.is_ascii() && l.contains("\tR")));
    let dump = mtpd(&["encode", "--pattern", "visitor", "--dump-token-map"]);
    assert!(stdout(&dump).contains("\tA = ?T1"));
}

#[test]
fn atl_inputs_are_accepted() {
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("m.atl");
    std::fs::write(
        &src,
        "module M;\ncreate OUT : DB from IN : UML;\nrule C2T {\n  from c : UML!Class (c.isAbstract = false)\n  to t : DB!Table (name <- c.name)\n}\n",
    )
    .unwrap();
    let o = mtpd(&["encode", "--input", src.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "C2T\tRLnAaA=GnBbBCs\n");

    std::fs::write(&src, "module M;\nhelper def : x : Integer = 1;\n").unwrap();
    let bad = mtpd(&["encode", "--input", src.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("helper"));
}

#[test]
fn keep_going_skips_broken_inputs() {
    let dir = TempDir::new().unwrap();
    let good = gen(dir.path(), r#"{"seed": 4, "patterns": [{"pattern": "visitor", "exact": 1}]}"#, "good.mtj");
    let bad = dir.path().join("bad.mtj");
    std::fs::write(&bad, "{ not json").unwrap();
    let (g, b) = (good.to_str().unwrap(), bad.to_str().unwrap());

    let strict = mtpd(&["detect", "--input", g, b, "--pattern", "visitor"]);
    assert!(!strict.status.success());
    assert!(stdout(&strict).is_empty());

    let lenient = mtpd(&["detect", "--input", g, b, "--pattern", "visitor", "--keep-going"]);
    assert!(!lenient.status.success());
    assert!(stderr(&lenient).contains("bad.mtj"));
    let r = Report::from_json(&stdout(&lenient)).unwrap();
    assert_eq!(r.results.len(), 1);
}

#[test]
fn review_keeps_prior_verdicts() {
    let dir = TempDir::new().unwrap();
    let t = gen(
        dir.path(),
        r#"{"seed": 8, "patterns": [{"pattern": "visitor", "exact": 1}, {"pattern": "transitive_closure", "exact": 1}]}"#,
        "t.mtj",
    );
    let report = dir.path().join("r.json");
    let review = dir.path().join("rev.json");
    let o = mtpd(&[
        "detect", "--input", t.to_str().unwrap(), "--pattern", "visitor", "--pattern", "transitive_closure",
        "--report", report.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let stored = Report::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let first = stored.occurrences().next().unwrap().1.id.clone();
    std::fs::write(
        &review,
        format!(r#"[{{"occurrence_id": "{first}", "verdict": "rejected", "annotation": "checked"}}]"#),
    )
    .unwrap();
    let o = mtpd(&["review", "--report", report.to_str().unwrap(), "--review", review.to_str().unwrap(), "--accept-all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let entries: Vec<mtpd::review::ReviewEntry> =
        serde_json::from_str(&std::fs::read_to_string(&review).unwrap()).unwrap();
    assert_eq!(entries.len(), stored.occurrences().count());
    assert_eq!(entries[0].occurrence_id, first);
    assert_eq!(entries[0].verdict, mtpd::review::Verdict::Rejected);
    assert!(entries[1..].iter().all(|e| e.verdict == mtpd::review::Verdict::Accepted));
}

#[test]
fn catalog_dir_overrides_bundled_patterns() {
    let dir = TempDir::new().unwrap();
    let t = gen(dir.path(), r#"{"seed": 9, "patterns": [{"pattern": "visitor", "exact": 1}]}"#, "t.mtj");
    let o = Command::new(env!("CARGO_BIN_EXE_mtpd"))
        .args(["detect", "--input", t.to_str().unwrap(), "--pattern", "visitor"])
        .env("MTPD_CATALOG_DIR", dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("visitor"));

    let spec = mtpd::catalog::builtin_catalog().into_iter().find(|p| p.name == "visitor").unwrap();
    std::fs::write(dir.path().join("visitor.mtp"), spec.to_mtp()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mtpd"))
        .args(["detect", "--input", t.to_str().unwrap(), "--pattern", "visitor"])
        .env("MTPD_CATALOG_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_corpus_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let plan = r#"{"seed": 1, "patterns": [{"pattern": "visitor", "exact": 1, "mutated": 1}], "noise_rules": 3}"#;
    let a = gen(dir.path(), plan, "a.mtj");
    let b = gen(dir.path(), plan, "b.mtj");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ta = std::fs::read(a.with_extension("truth.json")).unwrap();
    let tb = std::fs::read(b.with_extension("truth.json")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn unknown_extension_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("t.txt");
    std::fs::write(&p, "x").unwrap();
    let o = mtpd(&["encode", "--input", p.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown input format"));
}
