use std::fs;
use std::path::Path;
use std::process::Command;

use recomp::cli::run_cli;
use recomp::HistoryDb;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

fn fixture(name: &str) -> String {
    format!("{FIXTURES}/{name}")
}

fn cli(ws: &Path, args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["recomp".to_string(), "--workspace".into(), ws.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(ws: &Path, args: &[&str]) -> String {
    let (code, out, err) = cli(ws, args);
    assert_eq!(code, 0, "{args:?}: {err}");
    out
}

/// Workspace with OMIM 1995 and ClinVar 2014 registered.
fn seeded() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["register", "omim", "1995", &fixture("om1995.tsv")]);
    ok(dir.path(), &["register", "clinvar", "2014", &fixture("cv2014.tsv")]);
    dir
}

fn counts(out: &str, patient: &str) -> String {
    out.lines()
        .find(|l| l.split('\t').nth(1) == Some(patient))
        .map(|l| l.split('\t').skip(2).collect::<Vec<_>>().join("/"))
        .unwrap()
}

#[test]
fn register_prints_tag_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["register", "clinvar", "2014", &fixture("cv2014.tsv")]);
    assert_eq!(out, "clinvar@1 (2014)\n");
    let (code, _, err) = cli(dir.path(), &["register", "clinvar", "2014", &fixture("cv2014.tsv")]);
    assert_ne!(code, 0);
    assert!(err.contains("already registered"), "{err}");
    assert!(dir.path().join("datasets/clinvar/1_2014.tsv").exists());
}

#[test]
fn malformed_snapshot_cites_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    let good: String = (1..=6).map(|i| format!("{i}\tBRCA1\tbenign\n")).collect();
    fs::write(&bad, format!("{good}7\tno status column\n")).unwrap();
    let (code, _, err) = cli(dir.path(), &["register", "clinvar", "x", bad.to_str().unwrap()]);
    assert_ne!(code, 0);
    assert!(err.contains("line 7"), "{err}");
}

#[test]
fn run_empty_cohort_and_unknown_tag() {
    let dir = seeded();
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "# nobody\n").unwrap();
    let out = ok(dir.path(), &["run", empty.to_str().unwrap()]);
    assert_eq!(out.lines().count(), 1);
    assert!(HistoryDb::open(dir.path()).unwrap().is_empty());
    let (code, _, err) = cli(dir.path(), &["run", &fixture("cohort.tsv"), "--clinvar", "2099"]);
    assert_ne!(code, 0);
    assert!(err.contains("2099"), "{err}");
}

#[test]
fn black_box_run_stores_one_activity() {
    let dir = seeded();
    let out = ok(dir.path(), &["--transparency", "black", "run", &fixture("cohort.tsv")]);
    let id = out.lines().nth(1).unwrap().split('\t').next().unwrap();
    let text = fs::read_to_string(dir.path().join(format!("prov/{id}.prov.json"))).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["activities"].as_array().unwrap().len(), 1);
    assert_eq!(doc["granularity"], "black_box");
}

#[test]
fn diff_sections() {
    let dir = seeded();
    ok(dir.path(), &["register", "clinvar", "2015", &fixture("cv2015.tsv")]);
    let same = ok(dir.path(), &["diff", "clinvar", "2015", "2015"]);
    assert!(same.contains("added\t0\t-\nremoved\t0\t-\nchanged\t0\t-\n"), "{same}");

    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    fs::write(&a, "BRCA1\thigh\nTP53\thigh\n").unwrap();
    fs::write(&b, "BRCA1\thigh\nTP53\tlow\n").unwrap();
    ok(dir.path(), &["register", "panel", "a", a.to_str().unwrap()]);
    ok(dir.path(), &["register", "panel", "b", b.to_str().unwrap()]);
    let out = ok(dir.path(), &["diff", "panel", "a", "b"]);
    assert!(out.contains("changed\t1\tTP53\n"), "{out}");
    assert!(out.contains("added\t0\t-\n"));
}

#[test]
fn scope_plan_rerun_cycle() {
    let dir = seeded();
    let before = ok(dir.path(), &["run", &fixture("cohort.tsv"), "--omim", "1995", "--clinvar", "2014"]);
    assert_eq!(counts(&before, "p1"), "0/1/0");
    assert_eq!(counts(&before, "p2"), "0/1/0");
    assert!(ok(dir.path(), &["scope", "clinvar", "2014"]).lines().count() == 1);

    ok(dir.path(), &["register", "clinvar", "2015", &fixture("cv2015.tsv")]);
    let scope = ok(dir.path(), &["scope", "clinvar", "clinvar@2015"]);
    let subjects: Vec<&str> = scope.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(subjects, ["p1", "p2"]);

    let dry = ok(dir.path(), &["rerun", "--dry-run", "clinvar", "2015"]);
    assert!(dry.lines().skip(1).all(|l| l.split('\t').nth(5) == Some("false")));
    assert_eq!(HistoryDb::open(dir.path()).unwrap().len(), 3);

    let rerun = ok(dir.path(), &["rerun", "clinvar", "2015"]);
    let classes: Vec<&str> = rerun.lines().skip(1).map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(classes, ["0/1/0", "0/0/1"]);
    let db = HistoryDb::open(dir.path()).unwrap();
    assert_eq!(db.len(), 5);
    assert_eq!(db.records()[4].supersedes.as_deref(), Some("h000002"));

    // Already refreshed records are not picked up again.
    assert_eq!(ok(dir.path(), &["rerun", "clinvar", "2015"]).lines().count(), 1);
}

#[test]
fn report_rows_and_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let one = ok(dir.path(), &["report", &fixture("cohort.tsv"), "--epochs", "1", "--seed", "3"]);
    assert_eq!(one.lines().count(), 2);
    assert!(one.starts_with("epoch\trelevant_genes\trelevant_variants\tn_conclusive\n"));
    let (code, _, err) = cli(dir.path(), &["report", &fixture("cohort.tsv"), "--epochs", "many"]);
    assert_ne!(code, 0);
    assert!(err.contains("many"));
    let (code, _, _) = cli(dir.path(), &["report", &fixture("cohort.tsv"), "--epochs", "0"]);
    assert_ne!(code, 0);
}

#[test]
fn binary_separates_streams() {
    let dir = seeded();
    let bin = env!("CARGO_BIN_EXE_recomp");
    let out = Command::new(bin)
        .args(["--workspace", dir.path().to_str().unwrap(), "--human", "diff", "clinvar", "2014", "2014"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("dataset"));
    let out = Command::new(bin)
        .args(["--workspace", dir.path().to_str().unwrap(), "diff", "clinvar", "2014", "nope"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}
