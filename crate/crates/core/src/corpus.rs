//! Corpus data model: JSONL records, validation, step segmentation and
//! deterministic question embeddings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::fnv1a;

/// Half-open token range `[start, end)` of one reasoning step.
pub type Span = (usize, usize);

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

const KNOWN_KEYS: [&str; 8] = [
    "id",
    "question",
    "answer",
    "rationale_tokens",
    "token_logprobs",
    "token_weights",
    "step_spans",
    "embedding",
];

/// One corpus record on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub rationale_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_spans: Option<Vec<Span>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub question_text: String,
    pub answer_text: String,
    pub rationale_tokens: Vec<String>,
    pub token_logprobs: Option<Vec<f64>>,
    pub token_weights: Option<Vec<f64>>,
    pub step_spans: Vec<Span>,
    pub embedding: Vec<f64>,
}

impl Question {
    pub fn n_tokens(&self) -> usize {
        self.rationale_tokens.len()
    }

    pub fn n_steps(&self) -> usize {
        self.step_spans.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_tokens();
        if n == 0 {
            return Err(Error::validation(
                &self.id,
                "rationale_tokens",
                "must not be empty",
            ));
        }
        validate_spans(&self.step_spans, n)
            .map_err(|msg| Error::validation(&self.id, "step_spans", msg))?;
        if let Some(lp) = &self.token_logprobs {
            if lp.len() != n {
                return Err(Error::validation(
                    &self.id,
                    "token_logprobs",
                    format!("length {} does not match {} rationale tokens", lp.len(), n),
                ));
            }
            if let Some((j, v)) = lp.iter().enumerate().find(|(_, v)| !(**v <= 0.0)) {
                return Err(Error::validation(
                    &self.id,
                    "token_logprobs",
                    format!("entry {j} = {v} is not a log-probability (must be <= 0)"),
                ));
            }
        }
        if let Some(w) = &self.token_weights {
            if w.len() != n {
                return Err(Error::validation(
                    &self.id,
                    "token_weights",
                    format!("length {} does not match {} rationale tokens", w.len(), n),
                ));
            }
            if let Some((j, v)) = w
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::validation(
                    &self.id,
                    "token_weights",
                    format!("entry {j} = {v} outside [0, 1]"),
                ));
            }
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(&self.id, "embedding", "non-finite entry"));
        }
        Ok(())
    }

    pub fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            question: self.question_text.clone(),
            answer: self.answer_text.clone(),
            rationale_tokens: self.rationale_tokens.clone(),
            token_logprobs: self.token_logprobs.clone(),
            token_weights: self.token_weights.clone(),
            step_spans: Some(self.step_spans.clone()),
            embedding: Some(self.embedding.clone()),
        }
    }
}

/// Checks that spans are ordered, contiguous and exactly cover `[0, n)`.
pub fn validate_spans(spans: &[Span], n: usize) -> std::result::Result<(), String> {
    if spans.is_empty() {
        return Err("at least one step is required".into());
    }
    let mut cursor = 0;
    for (k, &(s, e)) in spans.iter().enumerate() {
        if s != cursor {
            return Err(format!("step {k} starts at {s}, expected {cursor}"));
        }
        if e <= s {
            return Err(format!("step {k} is empty or reversed ({s}, {e})"));
        }
        cursor = e;
    }
    if cursor != n {
        return Err(format!(
            "steps end at {cursor} but rationale has {n} tokens"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub questions: Vec<Question>,
    pub embedding_dim: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id.as_str(), i))
            .collect()
    }

    /// Distinct answers in first-seen order; these are the predictor's classes.
    pub fn answer_classes(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.questions
            .iter()
            .filter(|q| seen.insert(q.answer_text.as_str()))
            .map(|q| q.answer_text.clone())
            .collect()
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.questions.iter().map(Question::to_record).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, &self.to_records())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Ignore unknown keys instead of rejecting them.
    pub lenient: bool,
    /// Dimension of hashed embeddings when the corpus supplies none.
    pub embedding_dim: usize,
    pub embedding_seed: u64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            lenient: false,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            embedding_seed: 0,
        }
    }
}

pub fn parse_corpus(path: &Path, opts: &ParseOptions) -> Result<Corpus> {
    if !path.is_file() {
        return Err(Error::CorpusNotFound(path.to_path_buf()));
    }
    let text = crate::io::read_to_string(path)?;
    parse_corpus_str(&text, opts)
}

pub fn parse_corpus_str(text: &str, opts: &ParseOptions) -> Result<Corpus> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(line, i + 1, opts.lenient)?);
    }
    corpus_from_records(records, opts)
}

fn parse_record(line: &str, line_no: usize, lenient: bool) -> Result<Record> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if !lenient {
        if let Some(obj) = value.as_object() {
            if let Some(k) = obj.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown key `{k}` (use --lenient to ignore)"),
                });
            }
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

/// Validates records, fills missing step spans and embeddings.
pub fn corpus_from_records(records: Vec<Record>, opts: &ParseOptions) -> Result<Corpus> {
    let mut seen = std::collections::HashSet::new();
    let mut dim: Option<usize> = None;
    for r in &records {
        if !seen.insert(r.id.clone()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
        if let Some(e) = &r.embedding {
            match dim {
                None if e.is_empty() => {
                    return Err(Error::validation(&r.id, "embedding", "must not be empty"))
                }
                None => dim = Some(e.len()),
                Some(d) if d != e.len() => {
                    return Err(Error::validation(
                        &r.id,
                        "embedding",
                        format!("dimension {} differs from corpus dimension {d}", e.len()),
                    ))
                }
                Some(_) => {}
            }
        }
    }
    let embedding_dim = dim.unwrap_or(opts.embedding_dim);
    if embedding_dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }

    let mut questions = Vec::with_capacity(records.len());
    for r in records {
        if r.rationale_tokens.is_empty() {
            return Err(Error::validation(
                &r.id,
                "rationale_tokens",
                "must not be empty",
            ));
        }
        let step_spans = match r.step_spans {
            Some(s) => s,
            None => segment_steps(&r.rationale_tokens)?,
        };
        let embedding =
            match r.embedding {
                Some(e) => e,
                None => embed_question(&r.question, embedding_dim, opts.embedding_seed).map_err(
                    |_| Error::validation(&r.id, "question", "empty text cannot be embedded"),
                )?,
            };
        let q = Question {
            id: r.id,
            question_text: r.question,
            answer_text: r.answer,
            rationale_tokens: r.rationale_tokens,
            token_logprobs: r.token_logprobs,
            token_weights: r.token_weights,
            step_spans,
            embedding,
        };
        q.validate()?;
        questions.push(q);
    }
    Ok(Corpus {
        questions,
        embedding_dim,
    })
}

/// Splits a tokenized rationale into steps at periods.
///
/// A period ends a step unless, in the space-joined text, it sits between two
/// digits (`3.5`). Tokens after the last terminating period form a final step.
pub fn segment_steps<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<Span>> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot segment an empty rationale"));
    }
    let text = tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ");
    let chars: Vec<char> = text.chars().collect();
    let is_digit = |i: Option<usize>| {
        i.and_then(|i| chars.get(i))
            .is_some_and(char::is_ascii_digit)
    };

    let mut spans = Vec::new();
    let mut start = 0;
    let mut offset = 0; // char offset of the current token in `chars`
    for (t, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        let terminates = tok.chars().enumerate().any(|(c, ch)| {
            let at = offset + c;
            ch == '.' && !(is_digit(at.checked_sub(1)) && is_digit(Some(at + 1)))
        });
        if terminates {
            spans.push((start, t + 1));
            start = t + 1;
        }
        offset += tok.chars().count() + 1;
    }
    if start < tokens.len() {
        spans.push((start, tokens.len()));
    }
    Ok(spans)
}

/// Signed feature-hashing embedding of lowercased whitespace tokens,
/// averaged and L2-normalized.
pub fn embed_question(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::invalid("cannot embed empty text"));
    }
    let mut v = vec![0.0f64; dim];
    for tok in &tokens {
        let h = fnv1a(seed, tok.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
    let count = tokens.len() as f64;
    v.iter_mut().for_each(|x| *x /= count);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    const TWO: &str = r#"{"id":"a","question":"q one","answer":"1","rationale_tokens":["x","."]}
{"id":"b","question":"q two","answer":"2","rationale_tokens":["y","z"]}"#;

    #[test]
    fn parses_records_in_order() {
        let c = parse_corpus_str(TWO, &ParseOptions::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.questions[0].id, "a");
        assert_eq!(c.questions[1].id, "b");
        assert_eq!(c.embedding_dim, DEFAULT_EMBEDDING_DIM);
        assert_eq!(c.questions[1].step_spans, vec![(0, 2)]);
    }

    #[test]
    fn logprob_length_mismatch_names_id() {
        let line = r#"{"id":"bad","question":"q","answer":"1","rationale_tokens":["a","b"],"token_logprobs":[-0.1]}"#;
        let err = parse_corpus_str(line, &ParseOptions::default()).unwrap_err();
        assert!(
            matches!(&err, Error::Validation { id, field: "token_logprobs", .. } if id == "bad")
        );
    }

    #[test]
    fn positive_logprob_rejected() {
        let line = r#"{"id":"p","question":"q","answer":"1","rationale_tokens":["a"],"token_logprobs":[0.5]}"#;
        let err = parse_corpus_str(line, &ParseOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Validation {
                field: "token_logprobs",
                ..
            }
        ));
    }

    #[test]
    fn weights_outside_unit_interval_rejected() {
        let line = r#"{"id":"w","question":"q","answer":"1","rationale_tokens":["a"],"token_weights":[1.5]}"#;
        let err = parse_corpus_str(line, &ParseOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Validation {
                field: "token_weights",
                ..
            }
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json", TWO.lines().next().unwrap());
        let err = parse_corpus_str(&text, &ParseOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = TWO.lines().next().unwrap();
        let text = format!("{line}\n{line}");
        let err = parse_corpus_str(&text, &ParseOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn unknown_keys_strict_vs_lenient() {
        let line = r#"{"id":"u","question":"q","answer":"1","rationale_tokens":["a"],"extra":3}"#;
        assert!(matches!(
            parse_corpus_str(line, &ParseOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
        let lenient = ParseOptions {
            lenient: true,
            ..Default::default()
        };
        assert_eq!(parse_corpus_str(line, &lenient).unwrap().len(), 1);
    }

    #[test]
    fn bad_spans_rejected() {
        let line = r#"{"id":"s","question":"q","answer":"1","rationale_tokens":["a","b","c"],"step_spans":[[0,1],[2,3]]}"#;
        let err = parse_corpus_str(line, &ParseOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Validation {
                field: "step_spans",
                ..
            }
        ));
    }

    #[test]
    fn mixed_embedding_dims_rejected() {
        let text = r#"{"id":"a","question":"q","answer":"1","rationale_tokens":["a"],"embedding":[1.0,0.0]}
{"id":"b","question":"q","answer":"1","rationale_tokens":["a"],"embedding":[1.0]}"#;
        let err = parse_corpus_str(text, &ParseOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Validation {
                field: "embedding",
                ..
            }
        ));
    }

    #[test]
    fn segment_arithmetic_rationale() {
        let spans = segment_steps(&toks("30 + 80 = 110 . Therefore 110 .")).unwrap();
        assert_eq!(spans, vec![(0, 6), (6, 9)]);
    }

    #[test]
    fn segment_keeps_decimals_together() {
        assert_eq!(
            segment_steps(&toks("3.5 cups needed .")).unwrap(),
            vec![(0, 4)]
        );
    }

    #[test]
    fn segment_without_period_is_one_step() {
        assert_eq!(segment_steps(&toks("done")).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn segment_attached_period_and_trailing_step() {
        let spans = segment_steps(&toks("it costs 110. then more")).unwrap();
        assert_eq!(spans, vec![(0, 3), (3, 5)]);
    }

    #[test]
    fn segment_rejects_empty() {
        assert!(segment_steps::<&str>(&[]).is_err());
    }

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let a = embed_question("Add the calories", 64, 7).unwrap();
        let b = embed_question("add   the calories", 64, 7).unwrap();
        assert_eq!(a, b);
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_ne!(a, embed_question("add the calories", 64, 8).unwrap());
    }

    #[test]
    fn embedding_rejects_empty_text() {
        assert!(embed_question("   ", 64, 7).is_err());
    }

    proptest! {
        #[test]
        fn segment_always_covers(tokens in proptest::collection::vec(
            prop_oneof![
                Just(".".to_string()),
                Just("3.5".to_string()),
                Just("7.".to_string()),
                Just(".2".to_string()),
                "[0-9]{1,3}",
                "[a-z]{1,4}",
                "[a-z0-9.]{1,5}",
            ], 1..40)) {
            let spans = segment_steps(&tokens).unwrap();
            prop_assert!(validate_spans(&spans, tokens.len()).is_ok());
        }

        #[test]
        fn embedding_unit_norm_or_zero(text in "[a-z ]{1,40}[a-z]", dim in 1usize..96, seed in any::<u64>()) {
            let v = embed_question(&text, dim, seed).unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
            prop_assert_eq!(v, embed_question(&text, dim, seed).unwrap());
        }
    }
}
