mod common;

use common::*;
use dnnlab::adaptation::FdlrTransform;
use dnnlab::corpus::{generate, Condition, CorpusSpec, Dataset};
use dnnlab::experiment::ExperimentConfig;
use dnnlab::features::{add_dynamics, mask_high_band, FeatureSpec};
use dnnlab::{Error, Network};

#[test]
fn network_file_reproduces_forward() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let net = random_network(seed, 5, 7, 3.0);
        let path = dir.path().join(format!("{seed}.json"));
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        let x = random_vec(&mut rng(seed), net.input_dim(), 2.0);
        let (a, b) = (net.posteriors(&x).unwrap(), back.posteriors(&x).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12);
        }
        assert_eq!(back, net);
    }
}

#[test]
fn dataset_file_round_trip() {
    let spec = CorpusSpec {
        utterances_per_split: 12,
        conditions: vec![Condition::Clean, Condition::noise(12.5)],
        ..CorpusSpec::default()
    };
    let (train_set, _) = generate(&spec).unwrap();
    let fs = FeatureSpec { n_low: spec.d_low, n_high: spec.d_high, context: 1, dynamics_order: 2 };
    // mix static-only, dynamic and narrowband utterances in one file
    let mut utts = train_set.utterances.clone();
    utts[1] = add_dynamics(&utts[1], 2).unwrap();
    utts[2] = mask_high_band(&add_dynamics(&utts[2], 2).unwrap(), &fs).unwrap();
    let data = Dataset::new(utts);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.utt");
    data.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.speaker_id, b.speaker_id);
        assert_eq!(a.condition_id, b.condition_id);
        assert_eq!(a.band, b.band);
        assert_eq!(a.d_static, b.d_static);
        assert_eq!(a.class_count, b.class_count);
        assert_eq!(a.frames.cols(), b.frames.cols());
        for (x, y) in a.frames.as_slice().iter().zip(b.frames.as_slice()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn empty_and_truncated_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.utt");
    Dataset::default().save(&path).unwrap();
    assert!(Dataset::load(&path).unwrap().is_empty());

    let (train_set, _) = generate(&CorpusSpec { utterances_per_split: 2, ..CorpusSpec::default() }).unwrap();
    let full = dir.path().join("full.utt");
    train_set.save(&full).unwrap();
    let text = std::fs::read_to_string(&full).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // drop the last frame of the final utterance
    let cut = dir.path().join("cut.utt");
    std::fs::write(&cut, lines[..lines.len() - 1].join("\n")).unwrap();
    match Dataset::load(&cut) {
        Err(Error::Parse { line, .. }) => assert!(line >= 1 && line <= lines.len()),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let garbled = dir.path().join("garbled.utt");
    let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    broken[3] = "1.0,abc,2.0".into();
    std::fs::write(&garbled, broken.join("\n")).unwrap();
    match Dataset::load(&garbled) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(Dataset::load(&dir.path().join("none.utt")), Err(Error::MissingFile(_))));
}

#[test]
fn transform_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(5);
    let t = FdlrTransform::new(random_matrix(&mut r, 6, 6), random_vec(&mut r, 6, 1.0)).unwrap();
    let path = dir.path().join("t.json");
    t.save(&path).unwrap();
    assert_eq!(FdlrTransform::load(&path).unwrap(), t);
    let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
    assert_eq!(v["dim"], 6);
    assert_eq!(v["A"].as_array().unwrap().len(), 36);
}

#[test]
fn config_file_round_trip_and_corpus_reference() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { seed: 17, ..CorpusSpec::default() };
    std::fs::write(dir.path().join("corpus.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let cfg_path = dir.path().join("exp.json");
    std::fs::write(&cfg_path, r#"{"corpus": "corpus.json", "hidden": [8, 8]}"#).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap().resolve().unwrap();
    assert_eq!(cfg.corpus_spec().unwrap(), &spec);
    assert_eq!(cfg.hidden, vec![8, 8]);

    let text = serde_json::to_string(&cfg).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());

    std::fs::write(&cfg_path, r#"{"corpus": "missing.json"}"#).unwrap();
    let err = ExperimentConfig::load(&cfg_path).and_then(|c| c.resolve());
    assert!(matches!(err, Err(Error::MissingFile(_))), "{err:?}");
}
