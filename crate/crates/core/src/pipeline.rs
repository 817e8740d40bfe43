//! End-to-end orchestration: weigh, assess, cluster, schedule, shape-loss
//! and (optionally) simulate. Every stage persists its artifact before the
//! next one starts, and each can be re-run alone from those artifacts.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{parse_corpus, Corpus};
use crate::difficulty::{assess_corpus, DifficultyTable};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::loss_shaping::{shape_schedule, simulate_student, LearningTrace, LossSpec};
use crate::schedule::{plan_full_schedule, BudgetCurve, Schedule};
use crate::selection::{kmeans_cluster, ClusterAssignment};
use crate::weighting::{train_weighting, WeightingOutcome};

pub const WEIGHTS_FILE: &str = "weights.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const DIFFICULTY_FILE: &str = "difficulty.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const SCHEDULE_FILE: &str = "schedule.json";
pub const LOSS_SPECS_FILE: &str = "loss_specs.jsonl";
pub const TRACE_FILE: &str = "trace.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsRecord {
    pub id: String,
    pub weights: Vec<f64>,
}

/// Paths of the artifacts one invocation wrote, in stage order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub written: Vec<PathBuf>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

pub fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    parse_corpus(cfg.corpus_path()?, &cfg.parse_options()?)
}

pub fn weights_to_records(weights: &IndexMap<String, Vec<f64>>) -> Vec<WeightsRecord> {
    weights
        .iter()
        .map(|(id, w)| WeightsRecord {
            id: id.clone(),
            weights: w.clone(),
        })
        .collect()
}

/// Reads `weights.jsonl` and checks it against the corpus.
pub fn read_weights(path: &Path, corpus: &Corpus) -> Result<IndexMap<String, Vec<f64>>> {
    let mut map = IndexMap::new();
    for r in read_jsonl::<WeightsRecord>(path)? {
        if map.insert(r.id.clone(), r.weights).is_some() {
            return Err(Error::DuplicateId(r.id));
        }
    }
    for q in &corpus.questions {
        let w = map.get(&q.id).ok_or_else(|| {
            Error::validation(
                &q.id,
                "token_weights",
                format!("missing from {}", path.display()),
            )
        })?;
        if w.len() != q.n_tokens() {
            return Err(Error::validation(
                &q.id,
                "token_weights",
                format!("{} weights for {} tokens", w.len(), q.n_tokens()),
            ));
        }
    }
    Ok(corpus
        .questions
        .iter()
        .map(|q| (q.id.clone(), map[&q.id].clone()))
        .collect())
}

/// Weights from a previous `weigh` run, else from the corpus itself.
pub fn existing_weights(out: &Path, corpus: &Corpus) -> Result<IndexMap<String, Vec<f64>>> {
    let path = out.join(WEIGHTS_FILE);
    if path.is_file() {
        return read_weights(&path, corpus);
    }
    corpus
        .questions
        .iter()
        .map(|q| match &q.token_weights {
            Some(w) => Ok((q.id.clone(), w.clone())),
            None => Err(Error::validation(
                &q.id,
                "token_weights",
                format!(
                    "no weights in the corpus and no {}; run `weigh` first",
                    path.display()
                ),
            )),
        })
        .collect()
}

pub fn weigh(cfg: &PipelineConfig, corpus: &Corpus, out: &Path) -> Result<WeightingOutcome> {
    stage(
        "weigh",
        (|| {
            let outcome = train_weighting(corpus, &cfg.weighting()?)?;
            write_jsonl(
                &out.join(WEIGHTS_FILE),
                &weights_to_records(&outcome.weights),
            )?;
            write_json(&out.join(MODEL_FILE), &outcome.model.to_checkpoint())?;
            Ok(outcome)
        })(),
    )
}

pub fn assess(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    weights: &IndexMap<String, Vec<f64>>,
    out: &Path,
) -> Result<DifficultyTable> {
    stage(
        "assess",
        (|| {
            let table = assess_corpus(corpus, weights, cfg.logprob_source())?;
            write_jsonl(&out.join(DIFFICULTY_FILE), &table.to_records())?;
            Ok(table)
        })(),
    )
}

pub fn read_difficulty(out: &Path) -> Result<DifficultyTable> {
    DifficultyTable::from_records(read_jsonl(&out.join(DIFFICULTY_FILE))?)
}

pub fn cluster(cfg: &PipelineConfig, corpus: &Corpus, out: &Path) -> Result<ClusterAssignment> {
    stage(
        "cluster",
        (|| {
            let embeddings: IndexMap<String, Vec<f64>> = corpus
                .questions
                .iter()
                .map(|q| (q.id.clone(), q.embedding.clone()))
                .collect();
            let k = cfg.selection.clusters.min(corpus.len());
            let clusters = kmeans_cluster(&embeddings, k, cfg.stage_seed("cluster")?)?;
            write_json(&out.join(CLUSTERS_FILE), &clusters)?;
            Ok(clusters)
        })(),
    )
}

pub fn budget_curve(cfg: &PipelineConfig, table: &DifficultyTable) -> Result<BudgetCurve> {
    let b = table.corpus_total_difficulty();
    let s = &cfg.schedule;
    BudgetCurve::new(b, s.c0_fraction * b, s.p, s.terminal_stage())
}

pub fn schedule(
    cfg: &PipelineConfig,
    table: &DifficultyTable,
    clusters: &ClusterAssignment,
    out: &Path,
) -> Result<Schedule> {
    stage(
        "schedule",
        (|| {
            let curve = budget_curve(cfg, table)?;
            let plan = plan_full_schedule(
                table,
                clusters,
                &curve,
                cfg.schedule.epochs,
                &cfg.selection(),
            )?;
            write_json(&out.join(SCHEDULE_FILE), &plan)?;
            Ok(plan)
        })(),
    )
}

pub fn shape_loss(
    corpus: &Corpus,
    plan: &Schedule,
    weights: &IndexMap<String, Vec<f64>>,
    out: &Path,
) -> Result<Vec<LossSpec>> {
    stage(
        "shape-loss",
        (|| {
            let specs = shape_schedule(corpus, plan, Some(weights))?;
            write_jsonl(&out.join(LOSS_SPECS_FILE), &specs)?;
            Ok(specs)
        })(),
    )
}

pub fn simulate(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    plan: &Schedule,
    weights: &IndexMap<String, Vec<f64>>,
    out: &Path,
) -> Result<LearningTrace> {
    stage(
        "simulate",
        (|| {
            let trace = simulate_student(corpus, plan, Some(weights), &cfg.simulation()?)?;
            write_json(&out.join(TRACE_FILE), &trace)?;
            Ok(trace)
        })(),
    )
}

/// Summary of a `validate` run.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub questions: usize,
    pub tokens: usize,
    pub steps: usize,
    pub with_logprobs: usize,
    pub with_weights: usize,
}

/// Parses the corpus and checks the config; nothing is written.
pub fn validate(cfg: &PipelineConfig) -> Result<ValidationReport> {
    stage(
        "validate",
        (|| {
            cfg.validate()?;
            let corpus = load_corpus(cfg)?;
            if corpus.is_empty() {
                return Err(Error::invalid("corpus has no questions"));
            }
            Ok(ValidationReport {
                questions: corpus.len(),
                tokens: corpus.questions.iter().map(|q| q.n_tokens()).sum(),
                steps: corpus.questions.iter().map(|q| q.n_steps()).sum(),
                with_logprobs: corpus
                    .questions
                    .iter()
                    .filter(|q| q.token_logprobs.is_some())
                    .count(),
                with_weights: corpus
                    .questions
                    .iter()
                    .filter(|q| q.token_weights.is_some())
                    .count(),
            })
        })(),
    )
}

pub fn read_clusters(out: &Path) -> Result<ClusterAssignment> {
    read_json(&out.join(CLUSTERS_FILE))
}

pub fn read_schedule(out: &Path) -> Result<Schedule> {
    read_json(&out.join(SCHEDULE_FILE))
}

/// Runs every stage in order, writing artifacts under the configured
/// output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Artifacts> {
    stage("config", cfg.validate())?;
    let out = cfg.out_dir();
    let corpus = stage("load", load_corpus(cfg))?;
    let mut art = Artifacts::default();
    let mut wrote = |name: &str| art.written.push(out.join(name));

    let weighting = weigh(cfg, &corpus, &out)?;
    wrote(WEIGHTS_FILE);
    wrote(MODEL_FILE);
    let table = assess(cfg, &corpus, &weighting.weights, &out)?;
    wrote(DIFFICULTY_FILE);
    let clusters = cluster(cfg, &corpus, &out)?;
    wrote(CLUSTERS_FILE);
    let plan = schedule(cfg, &table, &clusters, &out)?;
    wrote(SCHEDULE_FILE);
    shape_loss(&corpus, &plan, &weighting.weights, &out)?;
    wrote(LOSS_SPECS_FILE);
    if cfg.simulate.enabled {
        simulate(cfg, &corpus, &plan, &weighting.weights, &out)?;
        wrote(TRACE_FILE);
    }
    Ok(art)
}
