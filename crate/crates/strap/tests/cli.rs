//! End-to-end tests of the `strap` binary: exit codes, determinism, and the
//! JSON/CSV surfaces of each subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn strap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strap"))
}

fn run(args: &[&str]) -> Output {
    strap().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_two_with_synopsis() {
    let out = run(&["retrieve"]);
    assert_code(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "stderr: {err}");

    let out = run(&["no-such-command"]);
    assert_code(&out, 2);

    let out = run(&["--help"]);
    assert_code(&out, 0);
}

#[test]
fn synth_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "synth",
            "--seed",
            "7",
            "--tasks",
            "3",
            "--n-skills",
            "4",
            "--trajectories-per-task",
            "2",
            "--embedding-dim",
            "6",
            "--skill-len-min",
            "12",
            "--skill-len-max",
            "20",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    assert_eq!(dir_snapshot(&a), dir_snapshot(&b));
    assert!(a.join("prior/manifest.json").is_file());
    assert!(a.join("target/manifest.json").is_file());
    assert!(a.join("ground_truth.json").is_file());
}

/// Full pipeline through the binary: synth, validate, segment, retrieve,
/// export, report.
#[test]
fn pipeline_subcommands_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_code(
        &run(&[
            "synth", "--seed", "3", "--tasks", "4", "--n-skills", "4",
            "--trajectories-per-task", "2", "--embedding-dim", "6",
            "--skill-len-min", "25", "--skill-len-max", "40",
            "--out", data.to_str().unwrap(),
        ]),
        0,
    );

    let prior = data.join("prior");
    let target = data.join("target");
    assert_code(&run(&["validate", "--dataset", prior.to_str().unwrap()]), 0);

    let seg = dir.path().join("seg.json");
    assert_code(
        &run(&[
            "segment", "--dataset", target.to_str().unwrap(),
            "--epsilon", "auto", "--min-len", "10",
            "--out", seg.to_str().unwrap(),
        ]),
        0,
    );
    let seg_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&seg).unwrap()).unwrap();
    let rows = seg_json.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["chunks"].as_array().unwrap().len() >= 2);

    let result = dir.path().join("r.json");
    assert_code(
        &run(&[
            "retrieve", "--target", target.to_str().unwrap(),
            "--prior", prior.to_str().unwrap(),
            "--k", "10", "--metric", "l2", "--epsilon", "auto",
            "--min-len", "10", "--out", result.to_str().unwrap(),
        ]),
        0,
    );
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert!(r["matches"].as_array().unwrap().len() <= 10);
    assert_eq!(r["config"]["method"], "strap");
    for m in r["matches"].as_array().unwrap() {
        assert!(m["cost"].as_f64().unwrap() >= 0.0);
        assert!(m["language"].is_string());
        assert!(m["query"]["traj"].is_string());
        assert!(m["prior"]["start"].is_u64());
    }

    let exported = dir.path().join("exported");
    assert_code(
        &run(&[
            "export", "--result", result.to_str().unwrap(),
            "--target", target.to_str().unwrap(),
            "--prior", prior.to_str().unwrap(),
            "--out", exported.to_str().unwrap(),
        ]),
        0,
    );
    assert_code(&run(&["validate", "--dataset", exported.to_str().unwrap()]), 0);

    let report = dir.path().join("report");
    assert_code(
        &run(&[
            "report", "--result", result.to_str().unwrap(),
            "--prior", prior.to_str().unwrap(),
            "--ground-truth", data.join("ground_truth.json").to_str().unwrap(),
            "--out", report.to_str().unwrap(),
        ]),
        0,
    );
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!(rep["ground_truth"]["relevant_share"].as_f64().unwrap() >= 0.0);
    assert!(dir.path().join("report.csv").is_file());
    assert!(dir.path().join("report_matches.csv").is_file());
}

#[test]
fn retrieve_reports_dim_mismatch_on_stderr_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out_dir, dim) in [(&a, "6"), (&b, "8")] {
        assert_code(
            &run(&[
                "synth", "--seed", "1", "--tasks", "2", "--n-skills", "3",
                "--trajectories-per-task", "1", "--embedding-dim", dim,
                "--skill-len-min", "12", "--skill-len-max", "16",
                "--out", out_dir.to_str().unwrap(),
            ]),
            0,
        );
    }
    let out = run(&[
        "retrieve",
        "--target", a.join("target").to_str().unwrap(),
        "--prior", b.join("prior").to_str().unwrap(),
        "--k", "5", "--epsilon", "0.01",
    ]);
    assert_code(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("DIM_MISMATCH"), "stderr: {err}");
}

#[test]
fn validate_flags_broken_dataset_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_code(
        &run(&[
            "synth", "--seed", "5", "--tasks", "2", "--n-skills", "3",
            "--trajectories-per-task", "1", "--embedding-dim", "4",
            "--skill-len-min", "12", "--skill-len-max", "16",
            "--out", data.to_str().unwrap(),
        ]),
        0,
    );
    // Truncate one payload file: loading now fails shape checks.
    let prior = data.join("prior");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(prior.join("manifest.json")).unwrap())
            .unwrap();
    let id = manifest["trajectories"][0]["id"].as_str().unwrap();
    let payload = prior.join(id).join("embeddings.f32");
    let bytes = std::fs::read(&payload).unwrap();
    std::fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();

    let out = run(&["validate", "--dataset", prior.to_str().unwrap()]);
    assert_code(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("shape mismatch"), "stderr: {err}");
}

#[test]
fn retrieval_json_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_code(
        &run(&[
            "synth", "--seed", "2", "--tasks", "3", "--n-skills", "4",
            "--trajectories-per-task", "2", "--embedding-dim", "6",
            "--skill-len-min", "25", "--skill-len-max", "40",
            "--out", data.to_str().unwrap(),
        ]),
        0,
    );
    let mut outputs = Vec::new();
    for threads in ["1", "2", "4"] {
        let result = dir.path().join(format!("r{threads}.json"));
        let out = strap()
            .env("STRAP_THREADS", threads)
            .args([
                "retrieve",
                "--target", data.join("target").to_str().unwrap(),
                "--prior", data.join("prior").to_str().unwrap(),
                "--k", "20", "--epsilon", "auto",
                "--min-len", "10",
                "--out", result.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_code(&out, 0);
        outputs.push(std::fs::read(&result).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn config_file_supplies_flags_and_cli_wins() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_code(
        &run(&[
            "synth", "--seed", "4", "--tasks", "2", "--n-skills", "3",
            "--trajectories-per-task", "1", "--embedding-dim", "5",
            "--skill-len-min", "25", "--skill-len-max", "30",
            "--out", data.to_str().unwrap(),
        ]),
        0,
    );
    let cfg_path = dir.path().join("strap.json");
    std::fs::write(
        &cfg_path,
        serde_json::json!({
            "dataset": data.join("target").to_str().unwrap(),
            "epsilon": "auto",
            "min-len": 7,
        })
        .to_string(),
    )
    .unwrap();

    // All flags from the config file.
    let out = run(&["segment", "--config", cfg_path.to_str().unwrap()]);
    assert_code(&out, 0);
    let from_cfg: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();

    // Explicit flag overrides the config's min-len.
    let out = run(&[
        "segment",
        "--config", cfg_path.to_str().unwrap(),
        "--min-len", "1000",
    ]);
    assert_code(&out, 0);
    let overridden: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();

    // min-len 1000 forces single chunks; min-len 7 does not.
    assert!(from_cfg[0]["chunks"].as_array().unwrap().len() >= 2);
    assert_eq!(overridden[0]["chunks"].as_array().unwrap().len(), 1);
}

#[test]
fn bench_smoke_writes_rows_fit_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("bench.json");
    let csv = dir.path().join("bench.csv");
    let out = run(&[
        "bench",
        "--sizes", "2,4",
        "--traj-len", "20",
        "--queries", "2",
        "--query-len", "5",
        "--embedding-dim", "8",
        "--trials", "3",
        "--seed", "1",
        "--out", json.to_str().unwrap(),
        "--csv", csv.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert!(report["fit"]["r_squared"].is_f64());
    let csv_body = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_body.starts_with("prior_size,"));

    // M = 0 is rejected.
    let out = run(&["bench", "--sizes", "0,2", "--trials", "3", "--embedding-dim", "4"]);
    assert_code(&out, 1);
}
