use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn infoprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infoprobe"))
        .args(args)
        .env_remove("INFOPROBE_JOBS")
        .output()
        .unwrap()
}

fn json_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().next().unwrap_or_default())
        .unwrap_or_else(|e| panic!("bad json {text:?}: {e}; stderr {}", String::from_utf8_lossy(&out.stderr)))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn entropy_of_identical_vectors_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("same.txt");
    fs::write(&f, "0.5 1.5 -2\n0.5 1.5 -2\n0.5 1.5 -2\n0.5 1.5 -2\n").unwrap();
    let out = infoprobe(&["entropy", "--input", path(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_line(&out);
    assert!(v["value"].as_f64().unwrap().abs() <= 1e-9);
    assert_eq!(v["alpha"], 1.01);
    assert_eq!(v["log_base"], "2");
    assert_eq!(v["bandwidth"], "median");
    assert_eq!(v["n"], 4);
}

#[test]
fn cond_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("z.json");
    fs::write(&f, "[[0, 1], [2, 0.5], [-1, 3], [4, 4]]").unwrap();
    let out = infoprobe(&["cond", "--prompt", path(&f), "--response", path(&f), "--sigma-policy", "prompt-only"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_line(&out);
    assert!(v["value"].as_f64().unwrap().abs() <= 1e-9);
    assert_eq!(v["sigma_policy"], "prompt-only");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("z.txt");
    fs::write(&f, "1,2\n3,4\n").unwrap();
    assert_eq!(infoprobe(&["entropy", "--input", path(&f), "--alpha", "1"]).status.code(), Some(2));
    assert_eq!(infoprobe(&["entropy", "--input", path(&f), "--sigma", "abc"]).status.code(), Some(2));
    assert_eq!(infoprobe(&["entropy"]).status.code(), Some(2));
    let missing = dir.path().join("nope.txt");
    assert_eq!(infoprobe(&["entropy", "--input", path(&missing)]).status.code(), Some(3));
    let ragged = dir.path().join("ragged.txt");
    fs::write(&ragged, "1 2\n3\n").unwrap();
    assert_eq!(infoprobe(&["entropy", "--input", path(&ragged)]).status.code(), Some(3));
}

#[test]
fn synth_probe_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("dep");
    let out = infoprobe(&["synth", "dependency", "--seeds", "2", "--out", path(&trace)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let check = infoprobe(&["fmt", "check", "--manifest", path(&trace)]);
    assert_eq!(check.status.code(), Some(0));
    assert_eq!(json_line(&check)["records"], 12);

    let csv = dir.path().join("results.csv");
    let out = infoprobe(&["--jobs", "2", "probe", "--manifest", path(&trace), "--level", "both", "--out", path(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 13);

    let charts = dir.path().join("charts");
    let table = dir.path().join("table.csv");
    let out = infoprobe(&[
        "report",
        "--results",
        path(&csv),
        "--group-by",
        "layer,type_tag,metric",
        "--charts",
        path(&charts),
        "--out",
        path(&table),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(charts.join("entropy.svg").is_file());
    assert!(charts.join("cond_entropy.svg").is_file());
    let table = fs::read_to_string(&table).unwrap();
    assert!(table.starts_with("layer,type_tag,metric,mean,stdev,count\n"));
    assert_eq!(table.lines().count(), 7);

    let bad_key = infoprobe(&["report", "--results", path(&csv), "--group-by", "colour"]);
    assert_eq!(bad_key.status.code(), Some(2));
}

#[test]
fn probe_reports_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("cl");
    assert!(infoprobe(&["synth", "clusters", "--k", "2,3", "--total", "12", "--d", "4", "--out", path(&trace)])
        .status
        .success());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(trace.join("manifest.json")).unwrap()).unwrap();
    let blob = trace.join(manifest["records"][0]["path"].as_str().unwrap());
    let mut bytes = fs::read(&blob).unwrap();
    bytes[8..16].copy_from_slice(&f64::INFINITY.to_le_bytes());
    fs::write(&blob, bytes).unwrap();

    let check = infoprobe(&["fmt", "check", "--manifest", path(&trace)]);
    assert_eq!(check.status.code(), Some(3));
    assert_eq!(json_line(&check)["valid"], false);

    let csv = dir.path().join("r.csv");
    let out = infoprobe(&["probe", "--manifest", path(&trace), "--level", "prompt", "--out", path(&csv)]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_line(&out);
    assert_eq!(v["rows"], 1);
    assert_eq!(v["failures"][0]["kind"], "load");
}

#[test]
fn corrupt_manifest_is_a_structured_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("manifest.json"),
        r#"{"version":"1","model_id":"m","records":[
            {"id":"a","prompt_id":"p","role":"prompt","modality":"text","shape":[2,2],"dtype":"f64","path":"a.bin"},
            {"id":"a","prompt_id":"p","role":"oracle","modality":"text","shape":[2,2],"dtype":"f64","path":"a.bin"}]}"#,
    )
    .unwrap();
    fs::write(dir.path().join("a.bin"), [0u8; 32]).unwrap();
    let out = infoprobe(&["fmt", "check", "--manifest", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let v = json_line(&out);
    let kinds: Vec<&str> = v["violations"].as_array().unwrap().iter().map(|x| x["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["duplicate_id"]);
}

#[test]
fn entropy_reads_a_trace_record() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("cl");
    assert!(infoprobe(&["synth", "clusters", "--k", "1", "--spread", "0", "--out", path(&trace)]).status.success());
    let spec = format!("{}#k1-seed0", path(&trace));
    let v = json_line(&infoprobe(&["entropy", "--input", &spec]));
    assert!(v["value"].as_f64().unwrap().abs() <= 1e-9);
    assert_eq!(v["n"], 400);
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(infoprobe(&["synth", "clusters", "--k", "1,5", "--seed", "7", "--out", path(d)]).status.success());
    }
    let records = |d: &Path| {
        let mut files: Vec<_> = fs::read_dir(d.join("records")).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(records(&a), records(&b));
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn synth_validate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = infoprobe(&["synth", "validate", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_line(&out);
    assert_eq!(v["passed"], true);
    let csv = fs::read_to_string(dir.path().join("validation.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "experiment,param,seed,entropy_or_proxy,sigma,n,alpha,log_base");
    assert!(csv.starts_with("# sampler: ChaCha8Rng"));
    // 10 seeds x 4 cluster counts + 40 seeds x 3 dependency modes
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 40 + 120);
    let k1: Vec<f64> = csv
        .lines()
        .filter(|l| l.starts_with("clusters,k=1,"))
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(k1.len(), 10);
    assert!(k1.iter().all(|h| h.abs() <= 1e-9));
}
