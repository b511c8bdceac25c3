//! End-to-end checks of the `dadopt` binary: exit codes, file outputs,
//! determinism, and the wording of the diagnostics the interface promises.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dadopt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dadopt"))
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).expect("temp dir is writable");
    path
}

const QUAD_CYCLE: &str = r#"
[problem]
kind = "quadratic"
dim = 3

[graph]
kind = "cycle"
nodes = 5

[optimizer]
kind = "damsgrad"
alpha = 0.02
epsilon = 1.0

[noise]
kind = "uniform-bounded"
sigma = 0.1

[run]
horizon = 7
seed = 3
init = "shared-random"
"#;

#[test]
fn run_writes_the_documented_csv_header_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.toml", QUAD_CYCLE);
    let csv = dir.path().join("trace.csv");
    let jsonl = dir.path().join("trace.jsonl");

    let out = dadopt()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&csv)
        .arg("--jsonl")
        .arg(&jsonl)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,mean_loss,grad_norm_sq,scaled_grad_metric,consensus_err,u_spread,vt_cumulative"
    );
    assert_eq!(lines.count(), 7, "one row per round at record_every = 1");

    for line in fs::read_to_string(&jsonl).unwrap().lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["xbar"].as_array().unwrap().len(), 3);
    }

    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(summary["method"], "damsgrad");
    assert_eq!(summary["rounds"], 7);
}

#[test]
fn missing_alpha_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "noalpha.toml",
        r#"
[problem]
kind = "counterexample"
[graph]
kind = "complete"
nodes = 2
[optimizer]
kind = "dadam"
[run]
horizon = 10
"#,
    );
    let out = dadopt()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("alpha"), "{}", stderr_of(&out));
}

#[test]
fn equal_seeds_give_byte_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.toml", QUAD_CYCLE);
    let run_once = |name: &str| {
        let path = dir.path().join(name);
        let out = dadopt()
            .args(["run", "--seed", "7", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
        fs::read(path).unwrap()
    };
    assert_eq!(run_once("a.csv"), run_once("b.csv"));
}

#[test]
fn spectral_reports_the_five_cycle_contraction_factor() {
    let out = dadopt()
        .args([
            "spectral", "--graph", "cycle", "--nodes", "5", "--mixing", "uniform",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    // (1 + sqrt 5)/6 = 0.53934466...
    assert!(text.contains("0.53934466"), "{text}");
    assert!(text.contains("spectrum:"), "{text}");
}

#[test]
fn spectral_tabulates_a_family() {
    let out = dadopt()
        .args(["spectral", "--family", "cycle", "--nodes", "4,8,16,32"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    let gaps: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|row| {
            let columns: Vec<&str> = row.split_whitespace().collect();
            columns[2].parse().unwrap()
        })
        .collect();
    assert_eq!(gaps.len(), 4);
    assert!(
        gaps.windows(2).all(|pair| pair[1] < pair[0]),
        "1 - lambda shrinks with N: {gaps:?}"
    );
}

#[test]
fn disconnected_graphs_are_rejected_citing_the_connectivity_assumption() {
    let out = dadopt()
        .args(["spectral", "--graph", "custom", "--edges", "0-1,2-3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("A4"), "{}", stderr_of(&out));
}

#[test]
fn periodic_mixing_is_rejected_citing_the_gap_assumption() {
    // The 4-cycle with max-degree weights and no identity blend alternates
    // between the two bipartition classes, so its gap closes.
    let out = dadopt()
        .args([
            "spectral", "--graph", "cycle", "--nodes", "4", "--mixing", "mdm",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("A4"), "{}", stderr_of(&out));
}

#[test]
fn uniform_weights_on_an_irregular_graph_are_rejected() {
    let out = dadopt()
        .args([
            "spectral", "--graph", "star", "--nodes", "5", "--mixing", "uniform",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("regular"), "{}", stderr_of(&out));
}

#[test]
fn counterexample_prints_both_limits_and_passes() {
    let out = dadopt()
        .args(["counterexample", "--horizon", "20000"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("dadam"), "{text}");
    assert!(text.contains("damsgrad"), "{text}");
    assert!(text.lines().last().unwrap().starts_with("PASS"), "{text}");
}

#[test]
fn counterexample_warns_outside_the_stepsize_premise() {
    let out = dadopt()
        .args(["counterexample", "--alpha", "0.3", "--horizon", "4000"])
        .output()
        .unwrap();
    // The tool still runs and the limits still land, just with a warning.
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr_of(&out).contains("1/4"), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("PASS"), "{}", stdout_of(&out));
}

#[test]
fn sweep_writes_per_cell_traces_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.toml", QUAD_CYCLE);
    let out_dir = dir.path().join("grid");
    let out = dadopt()
        .args([
            "sweep", "--axis", "alpha", "--values", "0.1,0.01", "--config",
        ])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(manifest["axis"], "alpha");
    let cells = manifest["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for cell in cells {
        assert!(cell["error"].is_null(), "{cell}");
        let trace = fs::read_to_string(out_dir.join(cell["file"].as_str().unwrap())).unwrap();
        assert!(trace.starts_with("t,mean_loss"), "{trace}");
    }
}

#[test]
fn a_failing_sweep_cell_is_reported_without_sinking_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.toml", QUAD_CYCLE);
    let out_dir = dir.path().join("grid");
    // lambda = 0.1 sits below the 5-cycle's own contraction factor, so that
    // cell cannot be built; 0.8 is reachable by identity blending.
    let out = dadopt()
        .args([
            "sweep", "--axis", "lambda", "--values", "0.8,0.1", "--config",
        ])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("1 of 2"), "{}", stderr_of(&out));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    let cells = manifest["cells"].as_array().unwrap();
    assert!(cells[0]["error"].is_null(), "{}", cells[0]);
    assert!(cells[1]["error"].is_string(), "{}", cells[1]);
}

#[test]
fn verify_lemmas_emits_a_machine_readable_report() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let out = dadopt()
        .args(["verify", "--suite", "lemmas", "--out"])
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let text = stdout_of(&out);
    let verdicts = text
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"));
    assert!(verdicts.count() >= 5, "one verdict line per check: {text}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["suite"], "lemmas");
    assert_eq!(report["pass"], true);
    for check in report["checks"].as_array().unwrap() {
        assert!(check["residual"].is_number(), "{check}");
        assert!(check["tolerance"].is_number(), "{check}");
    }
}

#[test]
fn verify_bounds_reports_margins() {
    let out = dadopt()
        .args(["verify", "--suite", "bounds"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    let json_start = text.find('{').expect("report follows the verdict lines");
    let report: serde_json::Value = serde_json::from_str(&text[json_start..]).unwrap();
    assert_eq!(report["pass"], true);
    for check in report["checks"].as_array().unwrap() {
        let margin = check["margin"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&margin), "{check}");
    }
}

#[test]
fn help_enumerates_every_config_key() {
    let out = dadopt().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    for section in ["[problem]", "[graph]", "[optimizer]", "[noise]", "[run]"] {
        assert!(text.contains(section), "missing {section}");
    }
    for key in [
        "kind",
        "dim",
        "condition",
        "hetero",
        "num_classes",
        "classes_per_node",
        "samples_per_node",
        "nodes",
        "edge_list",
        "mixing",
        "gamma",
        "alpha",
        "beta1",
        "beta2",
        "beta3",
        "epsilon",
        "u_premix",
        "sigma",
        "horizon",
        "seed",
        "record_every",
        "init",
        "init_value",
    ] {
        assert!(text.contains(key), "missing config key {key}");
    }
}

#[test]
fn thread_cap_misuse_is_a_usage_error() {
    let out = dadopt()
        .env("DADOPT_THREADS", "zero")
        .args(["spectral", "--graph", "complete", "--nodes", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("DADOPT_THREADS"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn thread_cap_applies_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quad.toml", QUAD_CYCLE);
    let csv = dir.path().join("capped.csv");
    let out = dadopt()
        .env("DADOPT_THREADS", "1")
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(csv.exists());
}
