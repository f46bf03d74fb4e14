use std::path::Path;
use std::process::{Command, Output};

fn kage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kage"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Data rows as maps from column name to value.
fn rows(csv: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(str::to_owned))
                .collect()
        })
        .collect()
}

#[test]
fn analyze_reports_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.json",
        r#"{"network": {"shn": {"n": 6, "lambda_e": 100}}, "lambda_s": 10, "k": 2}"#,
    );
    let text = stdout(&kage(&["--config", &cfg, "--deterministic", "analyze"]));
    assert!(!text.contains("# timestamp"));
    assert!(text.contains("# resolved_k: 2 2 2 2 2 2"));
    let rows = rows(&text);
    assert_eq!(rows.len(), 2);
    let age = |scheme: &str| -> f64 {
        rows.iter().find(|r| r["scheme"] == scheme).unwrap()["analytic_age"]
            .parse()
            .unwrap()
    };
    assert!((age("memory") - 0.225).abs() < 1e-12);
    assert!((age("memoryless") - 0.2375).abs() < 1e-12);
}

#[test]
fn explicit_network_gets_per_node_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"network": {"explicit": {"n": 3, "profile_id": "tri",
              "edges": [[1, 2, 1.0], [2, 3, 2.0], [3, 1, 3.0], [1, 3, 1.0]]}},
            "lambda_s": 1, "k": [1, 1, 2], "scheme": "memory"}"#,
    );
    let rows = rows(&stdout(&kage(&["--config", &cfg, "analyze"])));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["lambda_e_or_edge_profile_id"], "tri");
    // node 1 hears only from node 3 at rate 3
    let first: f64 = rows[0]["analytic_age"].parse().unwrap();
    assert!((first - 1.0 / 3.0).abs() < 1e-12);
    // node 3 needs both in-edges, rates 2 and 1: E[max] = 1/2 + 1 - 1/3
    let third: f64 = rows[2]["analytic_age"].parse().unwrap();
    assert!((third - 7.0 / 6.0).abs() < 1e-12);
}

#[test]
fn sweep_covers_grid_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = (1..=20).map(|i| (5 * i).to_string()).collect();
    let cfg = write(
        dir.path(),
        "s.json",
        &format!(
            r#"{{"network": {{"shn": {{"n": 8, "lambda_e": 10}}}}, "lambda_s": 10, "k": 2,
                "sweep": [{{"parameter": "k", "values": [2, 4]}},
                          {{"parameter": "lambda_e", "values": [{}]}}]}}"#,
            values.join(",")
        ),
    );
    let out = dir.path().join("sweep.csv");
    let status = kage(&[
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "3",
        "sweep",
    ]);
    assert!(status.status.success());
    let rows = rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 80);
    for pair in rows.chunks(2) {
        let mem: f64 = pair[0]["analytic_age"].parse().unwrap();
        let less: f64 = pair[1]["analytic_age"].parse().unwrap();
        assert_eq!(pair[0]["scheme"], "memory");
        assert_eq!(pair[1]["scheme"], "memoryless");
        assert_eq!(
            pair[0]["lambda_e_or_edge_profile_id"],
            pair[1]["lambda_e_or_edge_profile_id"]
        );
        assert!(mem <= less);
    }
    assert_eq!(rows[0]["k"], "2");
    assert_eq!(rows[79]["k"], "4");
}

#[test]
fn precision_sweep_reports_required_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.json",
        r#"{"network": {"shn": {"n": 6, "lambda_e": 10}}, "lambda_s": 1,
            "beta": 0.5, "alpha": 0.5,
            "sweep": [{"parameter": "alpha", "values": [0.01, 0.5, 0.99]}]}"#,
    );
    let rows = rows(&stdout(&kage(&["--config", &cfg, "precision"])));
    let keys: Vec<&str> = rows.iter().map(|r| r["k"].as_str()).collect();
    // D(k, 6, 0.5) for k = 0..: 1/64, 7/64, 22/64, 42/64, 57/64, 63/64
    // 63/64 < 0.99, so alpha = 0.99 needs all six keys, more than any node can hear
    assert_eq!(keys, ["0", "3", "6"]);
    let feasible: Vec<&str> = rows.iter().map(|r| r["feasible"].as_str()).collect();
    assert_eq!(feasible, ["true", "true", "false"]);
}

#[test]
fn simulate_writes_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.json",
        r#"{"network": {"shn": {"n": 4, "lambda_e": 6}}, "lambda_s": 2, "k": 2,
            "scheme": "memoryless", "horizon": 50, "seed": 3}"#,
    );
    let log = dir.path().join("events.log");
    let text = stdout(&kage(&[
        "--config",
        &cfg,
        "--emit-event-log",
        log.to_str().unwrap(),
        "simulate",
    ]));
    assert!(text.contains("# seed: 3"));
    let events = std::fs::read_to_string(&log).unwrap();
    assert!(events.lines().count() > 100);
    assert!(events.lines().any(|l| l.contains(",source,0,,")));
    assert!(events.lines().any(|l| l.contains(",edge,")));

    let reseeded = stdout(&kage(&[
        "--config", &cfg, "--seed", "4", "--warmup", "0.2", "simulate",
    ]));
    assert!(reseeded.contains("# seed: 4"));
    assert!(reseeded.contains("# warmup: 0.2"));
    let out = kage(&["--config", &cfg, "--warmup", "1", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_configs_fail_with_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            r#"{"network": {"shn": {"n": 6, "lambda_e": 1}}, "lambda_s": 1, "k": 2, "bogus": 1}"#,
            "bogus",
        ),
        (
            r#"{"network": {"shn": {"n": 6, "lambda_e": 1}}, "lambda_s": 1, "k": 2, "beta": 0.5, "alpha": 0.5}"#,
            "`k`",
        ),
        (
            r#"{"network": {"shn": {"n": 6, "lambda_e": 1}}, "lambda_s": -1, "k": 2}"#,
            "lambda_s",
        ),
        (
            r#"{"network": {"shn": {"n": 6, "lambda_e": 1}}, "lambda_s": 1, "k": 6}"#,
            "infeasible",
        ),
        ("{not json", "line 1"),
    ];
    for (i, (body, needle)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{i}.json"), body);
        let out = kage(&["--config", &cfg, "analyze"]);
        assert_eq!(out.status.code(), Some(2), "case {i}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "case {i}: {err}");
    }
    let out = kage(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_validation_passes() {
    let out = kage(&["--deterministic", "validate", "--quick"]);
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("PASS path_equivalence")));
    assert!(!text.contains("FAIL"));
}
