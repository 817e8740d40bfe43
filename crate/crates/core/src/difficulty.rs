//! Step difficulty: significance-weighted generation loss per reasoning step.

use indexmap::IndexMap;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Question, Span};
use crate::error::{Error, Result};
use crate::numeric::{rng, softmax, stable_sum};

/// Softmax of the raw weights restricted to `span`.
pub fn normalize_step_weights(weights: &[f64], span: Span) -> Result<Vec<f64>> {
    let (s, e) = span;
    if e <= s {
        return Err(Error::invalid(format!("empty step span ({s}, {e})")));
    }
    if e > weights.len() {
        return Err(Error::invalid(format!(
            "span ({s}, {e}) exceeds {} weights",
            weights.len()
        )));
    }
    Ok(softmax(&weights[s..e]))
}

/// `-sum(w_hat_j * logprob_j)` over the span; `normalized` is aligned to the span.
pub fn step_difficulty(logprobs: &[f64], normalized: &[f64], span: Span) -> Result<f64> {
    let (s, e) = span;
    if e > logprobs.len() || normalized.len() != e.saturating_sub(s) {
        return Err(Error::invalid(format!(
            "span ({s}, {e}) not covered by {} logprobs / {} weights",
            logprobs.len(),
            normalized.len()
        )));
    }
    let d = -stable_sum(normalized.iter().zip(&logprobs[s..e]).map(|(w, lp)| w * lp));
    // -0.0 from all-zero logprobs
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDifficulty {
    pub id: String,
    pub step_difficulties: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DifficultyTable {
    pub rows: IndexMap<String, QuestionDifficulty>,
}

impl DifficultyTable {
    pub fn from_rows(rows: Vec<QuestionDifficulty>) -> Result<Self> {
        let mut map = IndexMap::with_capacity(rows.len());
        for r in rows {
            if r.step_difficulties
                .iter()
                .any(|d| !(*d >= 0.0) || !d.is_finite())
            {
                return Err(Error::validation(
                    &r.id,
                    "step_difficulties",
                    "must be finite and >= 0",
                ));
            }
            let id = r.id.clone();
            if map.insert(id.clone(), r).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self { rows: map })
    }

    pub fn steps(&self, id: &str) -> Result<&[f64]> {
        self.rows
            .get(id)
            .map(|r| r.step_difficulties.as_slice())
            .ok_or_else(|| Error::invalid(format!("no difficulty row for `{id}`")))
    }

    pub fn n_steps(&self, id: &str) -> Result<usize> {
        self.steps(id).map(<[f64]>::len)
    }

    /// Difficulty of generating steps `c+1..n` (1-based), i.e. with `c` input steps.
    pub fn question_generation_difficulty(&self, id: &str, c: usize) -> Result<f64> {
        let steps = self.steps(id)?;
        if c > steps.len() {
            return Err(Error::invalid(format!(
                "input-step count {c} exceeds {} steps of `{id}`",
                steps.len()
            )));
        }
        Ok(stable_sum(steps[c..].iter().copied()))
    }

    pub fn corpus_total_difficulty(&self) -> f64 {
        stable_sum(self.rows.values().map(|r| r.total))
    }

    pub fn to_records(&self) -> Vec<serde_json::Value> {
        let mut out: Vec<serde_json::Value> = self
            .rows
            .values()
            .map(|r| serde_json::to_value(r).expect("difficulty row serializes"))
            .collect();
        out.push(serde_json::json!({ "B": self.corpus_total_difficulty() }));
        out
    }

    /// Parses difficulty JSONL; the trailing `{"B": ..}` summary is checked.
    pub fn from_records(values: Vec<serde_json::Value>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut summary = None;
        for (i, v) in values.into_iter().enumerate() {
            if let Some(b) = v.get("B").filter(|_| v.get("id").is_none()) {
                summary = b.as_f64();
                continue;
            }
            let row: QuestionDifficulty = serde_json::from_value(v).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        let table = Self::from_rows(rows)?;
        if let Some(b) = summary {
            let actual = table.corpus_total_difficulty();
            if (b - actual).abs() > 1e-9 * actual.abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "difficulty summary B = {b} disagrees with row totals {actual}"
                )));
            }
        }
        Ok(table)
    }
}

/// Step difficulties for one question.
pub fn assess_question(
    q: &Question,
    weights: &[f64],
    logprobs: &[f64],
) -> Result<QuestionDifficulty> {
    if weights.len() != q.n_tokens() {
        return Err(Error::validation(
            &q.id,
            "token_weights",
            "length does not match rationale",
        ));
    }
    if logprobs.len() != q.n_tokens() {
        return Err(Error::validation(
            &q.id,
            "token_logprobs",
            "length does not match rationale",
        ));
    }
    let mut steps = Vec::with_capacity(q.n_steps());
    for &span in &q.step_spans {
        let w_hat = normalize_step_weights(weights, span)?;
        steps.push(step_difficulty(logprobs, &w_hat, span)?);
    }
    let total = stable_sum(steps.iter().copied());
    Ok(QuestionDifficulty {
        id: q.id.clone(),
        step_difficulties: steps,
        total,
    })
}

/// Where per-token logprobs come from when assessing a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogprobSource {
    /// Only logprobs recorded in the corpus.
    Corpus,
    /// Corpus logprobs, with seeded synthetic draws filling questions that lack them.
    SyntheticFill(u64),
}

/// Seeded synthetic logprobs: `ln` of Beta(2, 2) draws.
pub fn synthetic_logprobs(n: usize, seed: u64) -> Vec<f64> {
    let beta = Beta::new(2.0, 2.0).expect("valid beta parameters");
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let p: f64 = beta.sample(&mut r);
            p.max(f64::MIN_POSITIVE).ln().min(0.0)
        })
        .collect()
}

pub fn question_logprobs(q: &Question, source: LogprobSource) -> Result<Vec<f64>> {
    match (&q.token_logprobs, source) {
        (Some(lp), _) => Ok(lp.clone()),
        (None, LogprobSource::SyntheticFill(seed)) => Ok(synthetic_logprobs(
            q.n_tokens(),
            crate::numeric::fnv1a(seed, q.id.as_bytes()),
        )),
        (None, LogprobSource::Corpus) => Err(Error::MissingLogprobs { id: q.id.clone() }),
    }
}

/// Builds the difficulty table for a whole corpus, in corpus order.
pub fn assess_corpus(
    corpus: &Corpus,
    weights: &IndexMap<String, Vec<f64>>,
    source: LogprobSource,
) -> Result<DifficultyTable> {
    let mut rows = Vec::with_capacity(corpus.len());
    for q in &corpus.questions {
        let w = weights
            .get(&q.id)
            .ok_or_else(|| Error::validation(&q.id, "token_weights", "no weights for question"))?;
        let lp = question_logprobs(q, source)?;
        rows.push(assess_question(q, w, &lp)?);
    }
    DifficultyTable::from_rows(rows)
}
