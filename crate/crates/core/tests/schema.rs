use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn validator() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn cli_reports_match_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        json!({
            "corpus": {
                "classes": 3, "d_low": 3, "d_high": 1, "frames_per_utterance": 10, "utterances_per_split": 4,
                "speakers": {"count": 2, "distortion": 0.1}, "conditions": [{"type": "clean"}],
                "coupling_strength": 0.5, "seed": 1
            },
            "front_end": {"dynamics_order": 1, "mean_normalize": true, "context": 3},
            "hidden": [4, 4],
            "train": {"learning_rate": 0.5, "minibatch_size": 8, "epochs": 1, "seed": 0, "init_scale": 0.3},
            "adapt": {"iterations": 1, "steps": 2, "learning_rate": 1.0}
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("o");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    let test = out.join("test.utt");
    let model = out.join("model.json");
    let (t, m) = (test.to_str().unwrap(), model.to_str().unwrap());
    let runs: [&[&str]; 5] = [
        &["gen", "--config", c, "--out", o],
        &["train", "--config", c, "--out", o],
        &["eval", "--config", c, "--out", o, "--model", m, "--data", t],
        &["probe", "--config", c, "--out", o, "--model", m, "--data", t, "--pairs", t],
        &["adapt", "--config", c, "--out", o, "--model", m, "--data", t],
    ];
    let v = validator();
    for args in runs {
        let res = Command::new(env!("CARGO_BIN_EXE_dnnlab")).args(args).output().unwrap();
        assert!(res.status.success(), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert_valid(&v, &serde_json::from_slice(&res.stdout).unwrap());
    }
}

#[test]
fn malformed_envelopes_are_rejected() {
    let v = validator();
    let good = json!({"report": "eval", "version": 1, "config_hash": "a".repeat(64),
        "results": {"frames": 3, "accuracy": 0.5, "frame_error_rate": 0.5, "model_sha256": "b".repeat(64)}});
    assert_valid(&v, &good);
    let mut bad_hash = good.clone();
    bad_hash["config_hash"] = json!("xyz");
    let mut bad_kind = good.clone();
    bad_kind["report"] = json!("unknown");
    let mut extra = good.clone();
    extra["timestamp"] = json!(0);
    let mut bad_acc = good.clone();
    bad_acc["results"]["accuracy"] = json!(1.5);
    for doc in [bad_hash, bad_kind, extra, bad_acc] {
        assert!(!v.is_valid(&doc), "{doc}");
    }
}
