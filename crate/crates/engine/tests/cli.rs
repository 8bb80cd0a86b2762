//! The command line: scene generation, registration, queries, denial and
//! budget inspection against a temporary state directory.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vidpriv(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidpriv"))
        .env("VIDPRIV_STATE_DIR", state)
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn owner_and_analyst_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state");
    let trace = dir.path().join("cam.jsonl");
    let trace_s = trace.to_str().unwrap();

    let out = vidpriv(
        &state,
        &["gen-scene", "--out", trace_s, "--duration", "3600", "--seed", "9"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = vidpriv(&state, &["estimate-policy", "--trace", trace_s]);
    assert!(out.status.success());
    let est = &stdout_json(&out)[0];
    assert!(est["rho"].as_f64().unwrap() <= 90.0);

    let out = vidpriv(&state, &["gen-masks", "--trace", trace_s, "--max-steps", "3"]);
    assert!(out.status.success());

    let out = vidpriv(
        &state,
        &["register-camera", "--trace", trace_s, "--epsilon", "1", "--masks", "1"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let query = dir.path().join("q.sql");
    fs::write(
        &query,
        format!(
            "SPLIT cam BEGIN 0 END 3600 BY TIME 60sec STRIDE 0sec INTO ch;\n\
             PROCESS ch USING {} TIMEOUT 5sec PRODUCING 5 ROWS\n\
               WITH SCHEMA (plate:STRING=\"\", color:STRING=\"\", speed:NUMBER=0) INTO cars;\n\
             SELECT color, COUNT(*) FROM cars GROUP BY color WITH KEYS [\"RED\", \"WHITE\"] CONSUMING 0.3;\n",
            env!("CARGO_BIN_EXE_vp-cars")
        ),
    )
    .unwrap();
    let q = query.to_str().unwrap();

    let out = vidpriv(&state, &["submit-query", "--query", q, "--trace", trace_s, "--explain"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("COUNT"));

    let status = |state: &Path| {
        let out = vidpriv(state, &["budget", "status", "--camera", "cam"]);
        assert!(out.status.success());
        stdout_json(&out)[0]["min_remaining"].as_f64().unwrap()
    };
    // explaining is free
    assert_eq!(status(&state), 1.0);

    let out = vidpriv(
        &state,
        &["submit-query", "--query", q, "--trace", trace_s, "--seed", "1"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let releases = stdout_json(&out);
    assert_eq!(releases.len(), 2);
    assert_eq!(releases[0]["key"][0], "RED");
    assert!(releases[0].get("raw").is_none());
    assert!((status(&state) - 0.4).abs() < 1e-9);

    let out = vidpriv(&state, &["submit-query", "--query", q, "--trace", trace_s]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    assert!((status(&state) - 0.4).abs() < 1e-9);

    let out = vidpriv(
        &state,
        &[
            "sweep", "--param", "chunk", "--values", "60", "--query", q, "--trace", trace_s,
        ],
    );
    assert!(!out.status.success());
}

#[test]
fn malformed_query_is_rejected_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("bad.sql");
    fs::write(&q, "SELECT COUNT(* FROM t;").unwrap();
    let trace = dir.path().join("t.jsonl");
    let out = vidpriv(
        dir.path(),
        &["gen-scene", "--out", trace.to_str().unwrap(), "--duration", "60"],
    );
    assert!(out.status.success());
    let out = vidpriv(
        dir.path(),
        &[
            "submit-query",
            "--query",
            q.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
}
