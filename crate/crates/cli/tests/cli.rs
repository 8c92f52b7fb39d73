//! End-to-end tests of the command-line contract: exit codes, output
//! formats and pinned JSON field names.

use std::collections::BTreeSet;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ito-reorder")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn golden(name: &str) -> BTreeSet<String> {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Every object key as a dotted path; array elements share a `[]` segment.
fn field_paths(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.insert(path.clone());
                field_paths(child, &path, out);
            }
        }
        Value::Array(items) => {
            for item in items.iter().filter(|i| i.is_object()) {
                field_paths(item, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

fn json_fields(text: &str) -> BTreeSet<String> {
    let v: Value = serde_json::from_str(text).expect("valid JSON");
    let mut out = BTreeSet::new();
    field_paths(&v, "", &mut out);
    out
}

const SMALL: [&str; 4] = ["--paths", "200", "--seed", "7"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

#[test]
fn verify_json_fields_are_pinned() {
    let o = run(&with_small(&["verify", "--identity", "J110", "--steps", "512", "--format", "json"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json_fields(&stdout(&o)), golden("verify_fields.txt"));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["results"][0]["identity_id"], "J110");
    assert_eq!(v["results"][0]["citation"], "closed-form:J110");
}

#[test]
fn sweep_and_covariance_json_fields_are_pinned() {
    let o = run(&with_small(&["sweep", "--identity", "J1010", "--steps", "32,64,128", "--format", "json"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json_fields(&stdout(&o)), golden("sweep_fields.txt"));

    let o = run(&with_small(&["covariance", "--i1", "1", "--i2", "2", "--steps", "32", "--format", "json"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json_fields(&stdout(&o)), golden("covariance_fields.txt"));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["results"][0]["target"], 0.0);
}

#[test]
fn csv_headers_are_pinned() {
    let o = run(&["catalog", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert_eq!(first, golden("catalog_csv_header.txt").into_iter().next().unwrap());

    let o = run(&with_small(&["verify", "--identity", "J00", "--steps", "64", "--format", "csv"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), golden("verify_csv_header.txt").into_iter().next().unwrap());
    assert!(lines.next().unwrap().starts_with("J00,riemann-reference:J00,64,200,7,"));
}

#[test]
fn catalog_listing() {
    let o = run(&["catalog"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().count() >= 40);
    assert!(text.lines().any(|l| l.starts_with("rrr111 ")));

    let o = run(&["catalog", "--filter", "thm5*", "--format", "csv"]);
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        assert!(row.starts_with("thm5-"), "{row}");
        assert!(row.contains("martingale-order-replacement:"), "{row}");
        assert!(row.contains("dM0"), "{row}");
    }

    let o = run(&["catalog", "--filter", "J10", "--format", "json"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["identities"].as_array().unwrap().len(), 1);
    let keys: Vec<&str> = v["bibliography"].as_array().unwrap().iter().map(|b| b["key"].as_str().unwrap()).collect();
    assert!(keys.contains(&"closed-form"));
}

#[test]
fn glob_selects_sum_identities() {
    let o = run(&with_small(&["verify", "--identity", "sum*", "--steps", "16", "--format", "csv"]));
    let text = stdout(&o);
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let listed = stdout(&run(&["catalog", "--filter", "sum*", "--format", "csv"]));
    let expected: Vec<&str> = listed.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, expected);
    assert!(ids.len() >= 20);
    assert!(ids.iter().all(|i| i.starts_with("sum")));
}

#[test]
fn exit_codes() {
    let o = run(&["verify", "--identity", "nosuch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown identity"));

    assert_eq!(run(&["sweep", "--identity", "J10", "--steps", "256"]).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--identity", "J10", "--steps", "64,64,128"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--paths", "10"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--start", "1", "--end", "1"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--threads", "0", "--identity", "J00"]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));

    // A tiny envelope factor turns a healthy run into a statistical failure.
    let args = with_small(&["verify", "--identity", "thm1-case1", "--steps", "64", "--envelope-factor", "0.01"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("failed: thm1-case1"));
}

#[test]
fn thread_count_does_not_change_reports() {
    let base = with_small(&["verify", "--identity", "thm1-case*", "--steps", "64", "--format", "json"]);
    let mut one = base.clone();
    one.extend(["--threads", "1"]);
    let mut three = base.clone();
    three.extend(["--threads", "3"]);
    let (a, b) = (run(&one), run(&three));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn report_written_to_file() {
    let dir = std::env::temp_dir().join(format!("ito-reorder-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let o = run(&with_small(&["verify", "--identity", "J00", "--steps", "32", "--format", "json", "--output", path.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(json_fields(&text).contains("results[].ms_error"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn covariance_kernel_targets() {
    let o = run(&["covariance", "--phi1", "second", "--steps", "64", "--paths", "4000", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let q = v["results"][0]["quadrature"].as_f64().unwrap();
    assert!((q - 1.0 / 6.0).abs() < 1e-6, "{q}");
}
