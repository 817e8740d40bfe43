use std::path::{Path, PathBuf};

use keystep::corpus::*;
use keystep::synthetic::bundled_corpus_records;
use keystep::Error;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(name)
}

#[test]
fn embedding_matches_golden_vector() {
    let golden: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(data("tests/data/embedding_golden.json")).unwrap(),
    )
    .unwrap();
    let expected: Vec<f64> = serde_json::from_value(golden["embedding"].clone()).unwrap();
    let got = embed_question("add the calories", 64, 7).unwrap();
    assert_eq!(got.len(), 64);
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-15, "{got:?}");
    }
}

#[test]
fn bundled_file_matches_generator() {
    let on_disk = std::fs::read(data("data/synthetic_corpus.jsonl")).unwrap();
    let generated = keystep::io::to_jsonl(&bundled_corpus_records()).unwrap();
    assert!(
        on_disk == generated,
        "regenerate with `cargo run -p keystep --example gen_corpus`"
    );
}

#[test]
fn bundled_corpus_parses() {
    let c = parse_corpus(
        &data("data/synthetic_corpus.jsonl"),
        &ParseOptions::default(),
    )
    .unwrap();
    assert_eq!(c.len(), 50);
    assert!(c
        .questions
        .iter()
        .all(|q| q.token_logprobs.is_some() && q.n_steps() >= 3));
}

#[test]
fn serialize_then_parse_is_identity() {
    let opts = ParseOptions {
        embedding_seed: 11,
        ..Default::default()
    };
    let c = parse_corpus(&data("data/synthetic_corpus.jsonl"), &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    c.write_jsonl(&path).unwrap();
    // Spans and embeddings are now explicit, so the seed no longer matters.
    let back = parse_corpus(&path, &ParseOptions::default()).unwrap();
    assert_eq!(back, c);

    let rich = r#"{"id":"r","question":"How much ?","answer":"3.5","rationale_tokens":["it","is","3.5",".","done"],"token_logprobs":[-0.1,-0.2,-0.3,-0.4,-0.5],"token_weights":[0.0,0.5,1.0,0.25,0.125],"step_spans":[[0,4],[4,5]],"embedding":[0.6,0.8]}"#;
    let c = parse_corpus_str(rich, &ParseOptions::default()).unwrap();
    assert_eq!(c.embedding_dim, 2);
    let text = String::from_utf8(keystep::io::to_jsonl(&c.to_records()).unwrap()).unwrap();
    assert_eq!(
        parse_corpus_str(&text, &ParseOptions::default()).unwrap(),
        c
    );
}

#[test]
fn missing_file_is_reported() {
    let err = parse_corpus(
        Path::new("/nonexistent/corpus.jsonl"),
        &ParseOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::CorpusNotFound(_)));
    assert!(err.to_string().contains("corpus not found"));
}

#[test]
fn validation_errors_carry_exit_code_two() {
    let bad = r#"{"id":"x","question":"q","answer":"a","rationale_tokens":["a","."],"token_logprobs":[0.5,-1.0]}"#;
    let err = parse_corpus_str(bad, &ParseOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains('x'));
}

#[test]
fn step_examples() {
    let t = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    assert_eq!(
        segment_steps(&t("30 + 80 = 110 . Therefore 110 .")).unwrap(),
        vec![(0, 6), (6, 9)]
    );
    assert_eq!(
        segment_steps(&t("3.5 cups needed .")).unwrap(),
        vec![(0, 4)]
    );
    assert_eq!(segment_steps(&t("done")).unwrap(), vec![(0, 1)]);
}
