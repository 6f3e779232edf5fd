use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use attrbench_core::backend::conformance::load_vectors;
use attrbench_core::{Capability, Error};

const ATTRBENCH: &str = env!("CARGO_BIN_EXE_attrbench");
const SIDECAR: &str = env!("CARGO_BIN_EXE_attrbench-stub-sidecar");
const CORE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core");

fn run(args: &[&str]) -> Output {
    Command::new(ATTRBENCH)
        .args(args)
        .env_remove("ATTRBENCH_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(rel: &str) -> String {
    Path::new(CORE).join(rel).to_str().unwrap().to_string()
}

#[test]
fn explain_prints_one_json_line_per_method() {
    let out = run(&[
        "explain",
        "--text",
        "a good movie",
        "--method",
        "saliency,integrated_gradients",
        "--backend",
        "reference",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["method"], "saliency");
    assert_eq!(lines[1]["method"], "integrated_gradients");
    for l in &lines {
        assert_eq!(l["instance_id"], "input");
        assert_eq!(l["scores"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn explain_writes_a_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let html = dir.path().join("h.html");
    let out = run(&[
        "explain",
        "--text",
        "a man sleeps",
        "--hypothesis",
        "a man runs",
        "--method",
        "lime",
        "--heatmap",
        html.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let page = fs::read_to_string(html).unwrap();
    assert!(page.contains("[SEP]") && page.contains("<th>lime</th>"));
}

#[test]
fn unknown_method_lists_the_valid_ones() {
    let out = run(&["explain", "--text", "x", "--method", "magic"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for m in [
        "saliency",
        "integrated_gradients",
        "deeplift",
        "lime",
        "shap_i",
    ] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn empty_text_is_a_user_error() {
    let out = run(&["explain", "--text", "   ", "--method", "saliency"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn check_backend_reports_the_sidecar() {
    let out = run(&["check-backend", "--cmd", SIDECAR]);
    assert!(out.status.success(), "{}", stderr(&out));
    let info: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let caps = info["capabilities"].as_array().unwrap();
    assert!(caps.iter().any(|c| c == "gradients"), "{info}");
    assert!(stderr(&out).is_empty());

    let out = run(&[
        "check-backend",
        "--cmd",
        SIDECAR,
        "--capabilities",
        "gradients",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("deeplift"), "{}", stderr(&out));
}

#[test]
fn native_method_on_gradient_only_remote_is_a_user_error() {
    let out = run(&[
        "explain",
        "--text",
        "good",
        "--method",
        "deeplift",
        "--cmd",
        SIDECAR,
        "--capabilities",
        "gradients",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("deeplift"));
}

#[test]
fn dead_backends_exit_with_two() {
    let out = run(&["check-backend", "--cmd", "true"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = run(&["check-backend", "--cmd", "/nonexistent/sidecar"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = run(&[
        "check-backend",
        "--endpoint",
        "http://127.0.0.1:9",
        "--timeout-secs",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

fn capability_flag(caps: &BTreeSet<Capability>) -> String {
    caps.iter()
        .map(|c| {
            serde_json::to_value(c)
                .unwrap()
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join(",")
}

#[test]
fn stub_sidecar_passes_the_shared_vectors() {
    let cases = load_vectors().unwrap();
    let groups: BTreeSet<Option<String>> = cases
        .iter()
        .map(|c| c.capabilities.as_ref().map(capability_flag))
        .collect();
    for caps in groups {
        let mut cmd = Command::new(SIDECAR);
        if let Some(c) = &caps {
            cmd.args(["--capabilities", c]);
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut stdin = child.stdin.take().unwrap();
        let mut reader = BufReader::new(child.stdout.take().unwrap());
        let mut send = |line: &str| -> attrbench_core::Result<String> {
            writeln!(stdin, "{line}")?;
            stdin.flush()?;
            let mut reply = String::new();
            if reader.read_line(&mut reply)? == 0 {
                return Err(Error::BackendUnavailable("sidecar closed stdout".into()));
            }
            Ok(reply)
        };
        for case in cases
            .iter()
            .filter(|c| c.capabilities.as_ref().map(capability_flag) == caps)
        {
            case.run(&mut send).unwrap();
        }
        drop(stdin);
        assert!(child.wait().unwrap().success());
    }
}

#[test]
fn benchmark_then_report_then_verbalize() {
    let dir = tempfile::tempdir().unwrap();
    let outdir = dir.path().join("out");
    let out = run(&[
        "benchmark",
        "--dataset",
        &fixture("fixtures/movies_mini.jsonl"),
        "--methods",
        "saliency,lime",
        "--metrics",
        "complexity,token_f1,fad_nauc",
        "--output-dir",
        outdir.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.starts_with("method"), "{table}");
    assert!(table.contains("token_f1 ↑") && table.contains("fad_nauc ↓"));
    for f in [
        "report.json",
        "table.csv",
        "attributions.jsonl",
        "timings.json",
    ] {
        assert!(outdir.join(f).exists(), "{f}");
    }
    let report = outdir.join("report.json");
    let report = report.to_str().unwrap();

    let again = run(&["report", report]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), table);

    let csv = run(&["report", report, "--format", "csv"]);
    assert_eq!(
        stdout(&csv),
        fs::read_to_string(outdir.join("table.csv")).unwrap()
    );

    let offline = run(&["verbalize", report, "--offline"]);
    assert!(offline.status.success(), "{}", stderr(&offline));
    assert!(
        stdout(&offline).contains("token_f1"),
        "{}",
        stdout(&offline)
    );

    let one = run(&[
        "verbalize",
        report,
        "--offline",
        "--instance",
        "m01",
        "--method",
        "lime",
        "--json",
    ]);
    assert!(one.status.success(), "{}", stderr(&one));
    let v: serde_json::Value = serde_json::from_str(stdout(&one).trim()).unwrap();
    assert_eq!(v["fallback"], true);

    let missing_key = run(&[
        "verbalize",
        report,
        "--api-key-env",
        "ATTRBENCH_UNSET_KEY_FOR_TEST",
    ]);
    assert_eq!(
        missing_key.status.code(),
        Some(1),
        "{}",
        stderr(&missing_key)
    );
}

#[test]
fn benchmark_config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(
        fixture("fixtures/esnli_mini.jsonl"),
        dir.path().join("data.jsonl"),
    )
    .unwrap();
    let config = dir.path().join("bench.json");
    fs::write(
        &config,
        r#"{"dataset": "data.jsonl", "methods": ["saliency"], "metrics": ["complexity"], "seed": 3}"#,
    )
    .unwrap();
    let outdir = dir.path().join("o");
    let out = run(&[
        "benchmark",
        "--config",
        config.to_str().unwrap(),
        "--metrics",
        "sparseness",
        "--output-dir",
        outdir.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(table["methods"], serde_json::json!(["saliency"]));
    assert_eq!(table["metrics"], serde_json::json!(["sparseness"]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outdir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 3);

    let bad = run(&["benchmark", "--dataset", "x.jsonl", "--train", "y.jsonl"]);
    assert_eq!(bad.status.code(), Some(1));
    let neither = run(&["benchmark"]);
    assert_eq!(neither.status.code(), Some(1));
}

#[test]
fn convert_movies_to_file_and_stdout() {
    let raw = fixture("fixtures/raw/movies");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("movies.jsonl");
    let to_file = run(&[
        "convert",
        "movies",
        &raw,
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(to_file.status.success(), "{}", stderr(&to_file));
    let to_stdout = run(&["convert", "movies", &raw]);
    assert_eq!(fs::read_to_string(&path).unwrap(), stdout(&to_stdout));
    assert_eq!(stdout(&to_stdout).lines().count(), 3);

    let missing = run(&["convert", "esnli", "/nonexistent.csv"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    assert!(run(&["--help"]).status.success());
    assert!(stdout(&run(&["--version"])).contains(env!("CARGO_PKG_VERSION")));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}
