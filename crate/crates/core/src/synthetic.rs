//! Seeded synthetic corpora for tests, demos and the bundled data file.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{corpus_from_records, Corpus, ParseOptions, Record};
use crate::difficulty::synthetic_logprobs;
use crate::error::Result;
use crate::numeric::{rng, sub_seed};

const NAMES: [&str; 8] = ["Ava", "Ben", "Cleo", "Dev", "Emma", "Finn", "Gia", "Hugo"];
const ITEMS: [&str; 8] = [
    "apples", "pencils", "cookies", "stamps", "marbles", "books", "shells", "cards",
];

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Arithmetic word problems with step-structured rationales and seeded
/// Beta(2, 2) token logprobs.
pub fn arithmetic_records(n: usize, seed: u64) -> Vec<Record> {
    let mut r = rng(sub_seed(seed, "arithmetic"));
    (0..n)
        .map(|i| {
            let name = *NAMES.choose(&mut r).expect("non-empty");
            let item = *ITEMS.choose(&mut r).expect("non-empty");
            let a: u32 = r.random_range(2..20);
            let b: u32 = r.random_range(2..12);
            let kind = r.random_range(0..3);
            let (question, mut rationale, answer) = match kind {
                0 => {
                    let c = a + b;
                    (
                        format!("{name} has {a} {item} and buys {b} more . How many {item} does {name} have now ?"),
                        format!("{name} starts with {a} {item} . {name} buys {b} more {item} . {a} + {b} = {c} ."),
                        c,
                    )
                }
                1 => {
                    let (hi, lo) = (a.max(b) + 1, a.min(b));
                    let c = hi - lo;
                    (
                        format!("{name} had {hi} {item} and gave away {lo} . How many {item} are left ?"),
                        format!("{name} had {hi} {item} . {name} gave away {lo} {item} . {hi} - {lo} = {c} ."),
                        c,
                    )
                }
                _ => {
                    let (x, y) = (a % 6 + 2, b % 5 + 2);
                    let c = x * y;
                    (
                        format!("{name} fills {x} boxes with {y} {item} each . How many {item} in total ?"),
                        format!("There are {x} boxes . Each box holds {y} {item} . {x} * {y} = {c} ."),
                        c,
                    )
                }
            };
            if r.random_bool(0.6) {
                rationale.push_str(&format!(" So the answer is {answer} ."));
            }
            if r.random_bool(0.3) {
                rationale = format!("Let us think step by step . {rationale}");
            }
            let rationale_tokens = tokens(&rationale);
            let id = format!("q{:03}", i + 1);
            let lp_seed = sub_seed(seed, &id);
            Record {
                token_logprobs: Some(synthetic_logprobs(rationale_tokens.len(), lp_seed)),
                id,
                question,
                answer: answer.to_string(),
                rationale_tokens,
                token_weights: None,
                step_spans: None,
                embedding: None,
            }
        })
        .collect()
}

/// The bundled 50-question corpus (`data/synthetic_corpus.jsonl`).
pub fn bundled_corpus_records() -> Vec<Record> {
    arithmetic_records(50, 2024)
}

const COLORS: [&str; 4] = ["red", "blue", "green", "amber"];
const SHAPES: [&str; 3] = ["cube", "ball", "cone"];
const FILLER: [&str; 20] = [
    "the", "a", "we", "see", "that", "it", "is", "then", "so", "now", "note", "look", "here",
    "item", "thing", "one", "this", "clearly", "well", "also",
];

/// Corpus whose answer is `color-shape`, determined by exactly two
/// designated tokens per rationale; everything else is random filler.
/// Returns the corpus and, per question, which tokens are keypoints.
pub fn keypoint_corpus(n: usize, seed: u64) -> Result<(Corpus, Vec<Vec<bool>>)> {
    let mut r = rng(sub_seed(seed, "keypoint"));
    let mut records = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        let len = r.random_range(8..=12);
        let mut toks: Vec<String> = (0..len)
            .map(|_| FILLER.choose(&mut r).expect("non-empty").to_string())
            .collect();
        let color = *COLORS.choose(&mut r).expect("non-empty");
        let shape = *SHAPES.choose(&mut r).expect("non-empty");
        let pc = r.random_range(0..len);
        let mut ps = r.random_range(0..len);
        while ps == pc {
            ps = r.random_range(0..len);
        }
        toks[pc] = color.to_string();
        toks[ps] = shape.to_string();
        let mut f = vec![false; len];
        f[pc] = true;
        f[ps] = true;
        records.push(Record {
            id: format!("k{:03}", i + 1),
            question: "which object is described ?".into(),
            answer: format!("{color}-{shape}"),
            rationale_tokens: toks,
            token_logprobs: None,
            token_weights: None,
            step_spans: None,
            embedding: None,
        });
        flags.push(f);
    }
    let corpus = corpus_from_records(records, &ParseOptions::default())?;
    Ok((corpus, flags))
}
