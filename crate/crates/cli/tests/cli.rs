use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use codeforensic::corpus::{
    load_jsonl, CodeSnippet, EmbeddingRecord, LogProbRecord, MembershipLabel,
};
use codeforensic::learners::{load_model, SavedModel};
use serde_json::Value;

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_codeforensic"));
    cmd.args(args).env_remove("CODEFORENSIC_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args, &[]);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Exit status plus the parsed single-line error document.
fn failure(args: &[&str], env: &[(&str, &str)]) -> (i32, Value) {
    let out = run(args, env);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    (
        out.status.code().unwrap(),
        serde_json::from_str(stderr.trim_end()).unwrap(),
    )
}

fn simulate(benchmark: &str, dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "simulate",
        "--benchmark",
        benchmark,
        "--seed",
        "7",
        "--out",
        p(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn membership_audit_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    simulate("membership", dir.path(), &[]);
    assert_eq!(
        load_jsonl::<CodeSnippet>(dir.path().join("snippets.jsonl"))
            .unwrap()
            .len(),
        1000
    );
    assert_eq!(
        load_jsonl::<LogProbRecord>(dir.path().join("logprobs.jsonl"))
            .unwrap()
            .len(),
        3000
    );
    assert_eq!(
        load_jsonl::<MembershipLabel>(dir.path().join("membership.jsonl"))
            .unwrap()
            .len(),
        1000
    );

    let mut aucs = Vec::new();
    for name in ["audit-lrt-s", "audit-lrt-g", "audit-loss"] {
        let report = dir.path().join(format!("{name}.json"));
        let config = dir.path().join(format!("{name}.toml"));
        ok(&[
            "audit-membership",
            "--config",
            p(&config),
            "--out",
            p(&report),
        ]);
        aucs.push(json(&report)["auc"].as_f64().unwrap());
    }
    assert!(aucs[0] > aucs[1] && aucs[1] > aucs[2], "{aucs:?}");
}

#[test]
fn attribution_corpus_feeds_every_attributor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate("attribution", d, &["--per-class", "80"]);
    let test: Vec<EmbeddingRecord> = load_jsonl(d.join("test_embeddings.jsonl")).unwrap();
    assert_eq!(test.len(), 5 * 80);

    let model = d.join("clf.jsonl");
    let report = d.join("classify.json");
    ok(&[
        "attr-classify",
        "--config",
        p(&d.join("classify.toml")),
        "--out",
        p(&report),
        "--save-model",
        p(&model),
    ]);
    assert!(json(&report)["accuracy"].is_number());
    assert!(matches!(load_model(&model).unwrap(), SavedModel::Softmax(c) if c.class_count() == 5));

    let lik: Value = serde_json::from_str(&ok(&[
        "attr-single",
        "--config",
        p(&d.join("single-likelihood.toml")),
    ]))
    .unwrap();
    assert!(lik["extras"]["calibrated"]["tpr"].is_number());

    let oc_model = d.join("oc.jsonl");
    let oc: Value = serde_json::from_str(&ok(&[
        "attr-single",
        "--config",
        p(&d.join("single-oneclass.toml")),
        "--nu",
        "0.2",
        "--save-model",
        p(&oc_model),
    ]))
    .unwrap();
    assert_eq!(oc["extras"]["nu"], 0.2);
    assert!(matches!(
        load_model(&oc_model).unwrap(),
        SavedModel::OneClass(_)
    ));

    let verdict: Value = serde_json::from_str(&ok(&[
        "attr-verify",
        "--claimed",
        "toy-A",
        "--candidates",
        p(&d.join("pool-toy-B.jsonl")),
        "--reference",
        p(&d.join("pool-toy-A.jsonl")),
        "--n",
        "30",
    ]))
    .unwrap();
    let test_result = &verdict["extras"]["test_result"];
    assert_eq!(test_result["n"], 30);
    assert!(test_result["reject"].is_boolean());

    let from_config: Value =
        serde_json::from_str(&ok(&["attr-verify", "--config", p(&d.join("verify.toml"))])).unwrap();
    assert_eq!(from_config["task"], "attr-verify/toy-A");
}

#[test]
fn detection_grid_exports_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate("detection", d, &["--per-class", "100"]);
    let report = d.join("detect.json");
    ok(&[
        "detect",
        "--config",
        p(&d.join("detect.toml")),
        "--out",
        p(&report),
    ]);
    assert!(json(&report)["auc"].as_f64().unwrap() > 0.95);
    let csv = ok(&["export-report", "--report", p(&report)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "train,toy-A,toy-B,toy-C");
    assert_eq!(lines.len(), 4);
    let roc = ok(&["export-report", "--report", p(&report), "--roc"]);
    assert_eq!(roc.lines().next(), Some("fpr,tpr"));
    assert_eq!(roc.lines().nth(1), Some("0,0"));
}

#[test]
fn sampling_shift_study_runs_from_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("shift.toml");
    fs::write(
        &config,
        "per_class = 40\nepochs = 20\ntemperatures = [0.2, 1.0]\nnucleus_ps = [1.0]\n",
    )
    .unwrap();
    let report: Value =
        serde_json::from_str(&ok(&["detect", "--sampling-shift", "--config", p(&config)])).unwrap();
    assert_eq!(
        report["extras"]["sampling_shift"]["values"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn reports_are_byte_identical_and_seed_is_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate("family", d, &["--per-class", "50"]);
    let config = d.join("classify.toml");
    let first = ok(&["attr-classify", "--config", p(&config)]);
    let second = ok(&["attr-classify", "--config", p(&config)]);
    assert_eq!(first, second);

    let out = run(
        &["attr-classify", "--config", p(&config)],
        &[("CODEFORENSIC_SEED", "99")],
    );
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["seed"], 99);
}

#[test]
fn eval_scores_and_projection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scores = d.join("scores.jsonl");
    fs::write(
        &scores,
        "{\"score\": 1, \"label\": 1}\n{\"score\": 3, \"label\": 1}\n{\"score\": 2, \"label\": 0}\n{\"score\": 0, \"label\": 0}\n",
    )
    .unwrap();
    let report: Value = serde_json::from_str(&ok(&["eval", "--scores", p(&scores)])).unwrap();
    assert_eq!(report["auc"], 0.75);

    simulate("attribution", d, &["--per-class", "20"]);
    let csv = d.join("pca.csv");
    ok(&[
        "eval",
        "--project",
        p(&d.join("pool-toy-A.jsonl")),
        "--project-out",
        p(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("snippet_id,pc1,pc2"));
    assert_eq!(text.lines().count(), 501);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate("membership", d, &[]);

    // Unknown key: validation.
    let bad = d.join("bad.toml");
    fs::write(&bad, "method = \"LOSS\"\ntarget_model = \"target\"\nlogprobs = \"logprobs.jsonl\"\nlabels = \"membership.jsonl\"\ncolour = 1\n").unwrap();
    let (code, err) = failure(&["audit-membership", "--config", p(&bad)], &[]);
    assert_eq!(code, 2);
    assert_eq!(err["error"], "validation");
    assert!(err["message"].as_str().unwrap().contains("colour"));

    // Missing data file: data.
    let gone = d.join("gone.toml");
    fs::write(&gone, "method = \"LOSS\"\ntarget_model = \"target\"\nlogprobs = \"nowhere.jsonl\"\nlabels = \"membership.jsonl\"\n").unwrap();
    assert_eq!(
        failure(&["audit-membership", "--config", p(&gone)], &[]).0,
        3
    );

    // Reference model with no log-probs: data error naming snippets.
    let orphan = d.join("orphan.toml");
    fs::write(&orphan, "method = \"LRT\"\ntarget_model = \"target\"\nreference_model = \"ghost\"\nlogprobs = \"logprobs.jsonl\"\nlabels = \"membership.jsonl\"\n").unwrap();
    let (code, err) = failure(&["audit-membership", "--config", p(&orphan)], &[]);
    assert_eq!(code, 3);
    assert!(err["message"].as_str().unwrap().contains("mem-00000"));

    // Diverging optimizer: solver.
    simulate("family", d, &["--per-class", "20"]);
    let wild = d.join("wild.toml");
    fs::write(
        &wild,
        fs::read_to_string(d.join("classify.toml")).unwrap() + "learning_rate = 1e300\n",
    )
    .unwrap();
    assert_eq!(failure(&["attr-classify", "--config", p(&wild)], &[]).0, 4);

    // Bad flags and environment.
    assert_eq!(failure(&["attr-verify", "--n", "zero"], &[]).0, 2);
    let good = d.join("audit-loss.toml");
    assert_eq!(
        failure(
            &["audit-membership", "--config", p(&good)],
            &[("CODEFORENSIC_SEED", "-1")]
        )
        .0,
        2
    );
}
