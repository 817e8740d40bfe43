//! Per-stage loss specifications and a seeded toy student that trains on them.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Question};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, rng, softmax, stable_sum};
use crate::schedule::Schedule;

/// What an external trainer needs for one question at one stage: tokens
/// `[0, input_end)` are context, `[gen_start, gen_end)` are generated with
/// the given per-token loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub t: usize,
    pub id: String,
    pub input_end: usize,
    pub gen_start: usize,
    pub gen_end: usize,
    pub weights: Vec<f64>,
}

impl LossSpec {
    pub fn generation_len(&self) -> usize {
        self.gen_end - self.gen_start
    }
}

/// Loss spec with `c` input steps. Without weights every generated token
/// gets weight 1 (the unweighted progressive loss).
pub fn shape_stage_loss(
    q: &Question,
    t: usize,
    c: usize,
    weights: Option<&[f64]>,
) -> Result<LossSpec> {
    let n = q.n_steps();
    if c > n {
        return Err(Error::invalid(format!(
            "input-step count {c} exceeds {n} steps of `{}`",
            q.id
        )));
    }
    let gen_start = if c == n {
        q.n_tokens()
    } else {
        q.step_spans[c].0
    };
    let gen_end = q.n_tokens();
    let weights = match weights {
        Some(w) if w.len() != gen_end => {
            return Err(Error::validation(
                &q.id,
                "token_weights",
                "length does not match rationale",
            ))
        }
        Some(w) => w[gen_start..].to_vec(),
        None => vec![1.0; gen_end - gen_start],
    };
    Ok(LossSpec {
        t,
        id: q.id.clone(),
        input_end: gen_start,
        gen_start,
        gen_end,
        weights,
    })
}

/// `-sum(weight_j * logprob_j)` over the generation range; `logprobs` is
/// aligned to the whole rationale.
pub fn evaluate_loss(spec: &LossSpec, logprobs: &[f64]) -> Result<f64> {
    if logprobs.len() != spec.gen_end || spec.weights.len() != spec.generation_len() {
        return Err(Error::invalid(format!(
            "loss spec for `{}` covers [{}, {}) but got {} logprobs and {} weights",
            spec.id,
            spec.gen_start,
            spec.gen_end,
            logprobs.len(),
            spec.weights.len()
        )));
    }
    Ok(-stable_sum(
        spec.weights
            .iter()
            .zip(&logprobs[spec.gen_start..])
            .map(|(w, lp)| w * lp),
    ))
}

/// Loss specs for every training epoch `1..=epochs` of a schedule.
pub fn shape_schedule(
    corpus: &Corpus,
    schedule: &Schedule,
    weights: Option<&IndexMap<String, Vec<f64>>>,
) -> Result<Vec<LossSpec>> {
    let mut out = Vec::new();
    for stage in schedule.stages.iter().filter(|s| s.t >= 1) {
        for q in &corpus.questions {
            let c = *stage
                .c
                .get(&q.id)
                .ok_or_else(|| Error::invalid(format!("schedule has no entry for `{}`", q.id)))?;
            let w = match weights {
                Some(map) => Some(
                    map.get(&q.id)
                        .ok_or_else(|| {
                            Error::validation(&q.id, "token_weights", "no weights for question")
                        })?
                        .as_slice(),
                ),
                None => None,
            };
            out.push(shape_stage_loss(q, stage.t, c, w)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Bigram logits plus shared unigram (class) logits over the rationale vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyStudent {
    vocab: HashMap<String, usize>,
    v: usize,
    /// `(v + 1) x v`; the last row is the start-of-rationale context.
    bigram: Vec<f64>,
    unigram: Vec<f64>,
}

impl ToyStudent {
    pub fn new(corpus: &Corpus) -> Self {
        let mut vocab = HashMap::new();
        for q in &corpus.questions {
            for t in &q.rationale_tokens {
                let next = vocab.len();
                vocab.entry(t.clone()).or_insert(next);
            }
        }
        let v = vocab.len();
        Self {
            vocab,
            v,
            bigram: vec![0.0; (v + 1) * v],
            unigram: vec![0.0; v],
        }
    }

    fn encode(&self, q: &Question) -> Result<Vec<usize>> {
        q.rationale_tokens
            .iter()
            .map(|t| {
                self.vocab.get(t).copied().ok_or_else(|| {
                    Error::invalid(format!("token `{t}` outside student vocabulary"))
                })
            })
            .collect()
    }

    fn logits(&self, prev: usize) -> Vec<f64> {
        let row = &self.bigram[prev * self.v..(prev + 1) * self.v];
        row.iter().zip(&self.unigram).map(|(b, u)| b + u).collect()
    }

    fn prev_of(&self, tokens: &[usize], j: usize) -> usize {
        if j == 0 {
            self.v
        } else {
            tokens[j - 1]
        }
    }

    /// Per-token log-probabilities of the whole rationale.
    pub fn token_logprobs(&self, tokens: &[usize]) -> Vec<f64> {
        (0..tokens.len())
            .map(|j| {
                let z = self.logits(self.prev_of(tokens, j));
                z[tokens[j]] - log_sum_exp(&z)
            })
            .collect()
    }

    /// One gradient step on `-sum_j w_j log P(r_j | r_{j-1})` over
    /// `[start, len)`. Returns the pre-step loss and the weight mass.
    fn step(
        &mut self,
        tokens: &[usize],
        start: usize,
        weights: Option<&[f64]>,
        lr: f64,
    ) -> (f64, f64) {
        let mut loss = 0.0;
        let mut mass = 0.0;
        let mut d_bigram: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut d_unigram = vec![0.0; self.v];
        for j in start..tokens.len() {
            let w = weights.map_or(1.0, |w| w[j - start]);
            let prev = self.prev_of(tokens, j);
            let z = self.logits(prev);
            let lp = z[tokens[j]] - log_sum_exp(&z);
            loss += w * -lp;
            mass += w;
            let mut g = softmax(&z);
            g[tokens[j]] -= 1.0;
            g.iter_mut().for_each(|x| *x *= w);
            for (du, gi) in d_unigram.iter_mut().zip(&g) {
                *du += gi;
            }
            d_bigram.push((prev, g));
        }
        for (prev, g) in d_bigram {
            let row = &mut self.bigram[prev * self.v..(prev + 1) * self.v];
            for (b, gi) in row.iter_mut().zip(g) {
                *b -= lr * gi;
            }
        }
        for (u, g) in self.unigram.iter_mut().zip(d_unigram) {
            *u -= lr * g;
        }
        (loss, mass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Weighted training loss per unit of weight over the generated ranges.
    pub train_loss: f64,
    /// Mean unweighted per-token NLL of full rationales after the epoch.
    pub eval_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningTrace {
    pub epochs: Vec<EpochTrace>,
    pub c_trace: IndexMap<String, Vec<usize>>,
    pub final_token_probs: IndexMap<String, Vec<f64>>,
}

fn eval_nll(student: &ToyStudent, encoded: &[Vec<usize>]) -> f64 {
    let mut total = Vec::new();
    for toks in encoded {
        total.extend(student.token_logprobs(toks));
    }
    let n = total.len().max(1) as f64;
    -stable_sum(total) / n
}

fn finish(
    corpus: &Corpus,
    student: &ToyStudent,
    encoded: &[Vec<usize>],
    epochs: Vec<EpochTrace>,
    c_trace: IndexMap<String, Vec<usize>>,
) -> LearningTrace {
    let final_token_probs = corpus
        .questions
        .iter()
        .zip(encoded)
        .map(|(q, t)| {
            (
                q.id.clone(),
                student
                    .token_logprobs(t)
                    .into_iter()
                    .map(f64::exp)
                    .collect(),
            )
        })
        .collect();
    LearningTrace {
        epochs,
        c_trace,
        final_token_probs,
    }
}

/// Trains the toy student following the schedule's input-step counts and
/// the given token weights (all ones when `weights` is `None`).
pub fn simulate_student(
    corpus: &Corpus,
    schedule: &Schedule,
    weights: Option<&IndexMap<String, Vec<f64>>>,
    cfg: &SimulateConfig,
) -> Result<LearningTrace> {
    let epochs = schedule.params.epochs;
    for stage in &schedule.stages {
        if stage.c.len() != corpus.len()
            || corpus
                .questions
                .iter()
                .any(|q| !stage.c.contains_key(&q.id))
        {
            return Err(Error::invalid(format!(
                "schedule stage {} does not match the corpus question ids",
                stage.t
            )));
        }
    }
    let mut student = ToyStudent::new(corpus);
    let encoded = corpus
        .questions
        .iter()
        .map(|q| student.encode(q))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut r = rng(cfg.seed);
    let mut trace = Vec::with_capacity(epochs);
    let mut c_trace: IndexMap<String, Vec<usize>> = corpus
        .questions
        .iter()
        .map(|q| (q.id.clone(), Vec::new()))
        .collect();

    for epoch in 1..=epochs {
        let counts = schedule.counts_for_epoch(epoch);
        order.shuffle(&mut r);
        let (mut loss, mut mass) = (Vec::new(), Vec::new());
        for &i in &order {
            let q = &corpus.questions[i];
            let c = counts.and_then(|m| m.get(&q.id).copied()).unwrap_or(0);
            let spec = shape_stage_loss(
                q,
                epoch,
                c,
                weights.and_then(|m| m.get(&q.id)).map(Vec::as_slice),
            )?;
            let (l, m) = student.step(
                &encoded[i],
                spec.gen_start,
                Some(&spec.weights),
                cfg.learning_rate,
            );
            loss.push(l);
            mass.push(m);
        }
        for q in &corpus.questions {
            let c = counts.and_then(|m| m.get(&q.id).copied()).unwrap_or(0);
            c_trace[&q.id].push(c);
        }
        let (loss, mass) = (stable_sum(loss), stable_sum(mass));
        let train_loss = if mass > 0.0 { loss / mass } else { 0.0 };
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "student loss diverged at epoch {epoch}"
            )));
        }
        trace.push(EpochTrace {
            epoch,
            train_loss,
            eval_nll: eval_nll(&student, &encoded),
        });
    }
    Ok(finish(corpus, &student, &encoded, trace, c_trace))
}

/// Plain full-rationale NLL training of the same student, no schedule.
pub fn train_plain(corpus: &Corpus, epochs: usize, cfg: &SimulateConfig) -> Result<LearningTrace> {
    let mut student = ToyStudent::new(corpus);
    let encoded = corpus
        .questions
        .iter()
        .map(|q| student.encode(q))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut r = rng(cfg.seed);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut r);
        let (mut loss, mut count) = (Vec::new(), Vec::new());
        for &i in &order {
            let (l, m) = student.step(&encoded[i], 0, None, cfg.learning_rate);
            loss.push(l);
            count.push(m);
        }
        let (loss, count) = (stable_sum(loss), stable_sum(count));
        trace.push(EpochTrace {
            epoch,
            train_loss: if count > 0.0 { loss / count } else { 0.0 },
            eval_nll: eval_nll(&student, &encoded),
        });
    }
    let c_trace = corpus
        .questions
        .iter()
        .map(|q| (q.id.clone(), vec![0; epochs]))
        .collect();
    Ok(finish(corpus, &student, &encoded, trace, c_trace))
}
