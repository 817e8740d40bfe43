use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::WeightingConfig;
use crate::corpus::{Corpus, Question};
use crate::error::{Error, Result};
use crate::numeric::{rng, sigmoid, softmax};

pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) const UNK: usize = 0;
pub(crate) const QUESTION_MARK: usize = 1;
const RESERVED: [&str; 2] = ["<unk>", "<question>"];

/// Parameter blocks, stored contiguously in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    GenEmbed,
    Query,
    Key,
    Value,
    Hidden,
    HiddenBias,
    Out,
    OutBias,
    PredEmbed,
    PoolQuery,
    Classifier,
    ClassifierBias,
}

impl Block {
    pub const ALL: [Block; 12] = [
        Block::GenEmbed,
        Block::Query,
        Block::Key,
        Block::Value,
        Block::Hidden,
        Block::HiddenBias,
        Block::Out,
        Block::OutBias,
        Block::PredEmbed,
        Block::PoolQuery,
        Block::Classifier,
        Block::ClassifierBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::GenEmbed => "generator.embed",
            Block::Query => "mixer.query",
            Block::Key => "mixer.key",
            Block::Value => "mixer.value",
            Block::Hidden => "generator.hidden.weight",
            Block::HiddenBias => "generator.hidden.bias",
            Block::Out => "generator.out.weight",
            Block::OutBias => "generator.out.bias",
            Block::PredEmbed => "predictor.embed",
            Block::PoolQuery => "predictor.pool_query",
            Block::Classifier => "predictor.classifier.weight",
            Block::ClassifierBias => "predictor.classifier.bias",
        }
    }

    /// Generator-side blocks (everything that shapes `w`).
    pub fn is_generator(self) -> bool {
        !matches!(
            self,
            Block::PredEmbed | Block::PoolQuery | Block::Classifier | Block::ClassifierBias
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub vocab: usize,
    pub classes: usize,
    pub d: usize,
    pub dh: usize,
}

impl Layout {
    pub fn len_of(&self, b: Block) -> usize {
        let (v, c, d, dh) = (self.vocab, self.classes, self.d, self.dh);
        match b {
            Block::GenEmbed | Block::PredEmbed => v * d,
            Block::Query | Block::Key | Block::Value => d * d,
            Block::Hidden => dh * d,
            Block::HiddenBias | Block::Out => dh,
            Block::OutBias => 1,
            Block::PoolQuery => d,
            Block::Classifier => c * d,
            Block::ClassifierBias => c,
        }
    }

    pub fn offset(&self, b: Block) -> usize {
        Block::ALL
            .iter()
            .take_while(|&&x| x != b)
            .map(|&x| self.len_of(x))
            .sum()
    }

    pub fn range(&self, b: Block) -> std::ops::Range<usize> {
        let o = self.offset(b);
        o..o + self.len_of(b)
    }

    pub fn total(&self) -> usize {
        Block::ALL.iter().map(|&b| self.len_of(b)).sum()
    }

    pub fn block_of(&self, index: usize) -> Option<Block> {
        Block::ALL
            .iter()
            .copied()
            .find(|&b| self.range(b).contains(&index))
    }
}

/// A question encoded against a model's vocabulary and class map.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub rationale: Vec<usize>,
    /// Question marker followed by question words.
    pub question: Vec<usize>,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeightModel {
    pub config: WeightingConfig,
    pub layout: Layout,
    pub vocab: Vec<String>,
    pub(crate) index: HashMap<String, usize>,
    pub classes: Vec<String>,
    pub params: Vec<f64>,
}

/// Generator activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct GenCache {
    pub x: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub attn: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub w: Vec<f64>,
}

pub(crate) fn matvec(m: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            m[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn question_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl TokenWeightModel {
    /// Builds vocabulary and classes from the corpus and draws seeded
    /// initial parameters.
    pub fn new(corpus: &Corpus, config: WeightingConfig) -> Result<Self> {
        config.validate()?;
        let mut vocab: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let mut push = |t: String| {
            if !index.contains_key(&t) {
                index.insert(t.clone(), vocab.len());
                vocab.push(t);
            }
        };
        for q in &corpus.questions {
            q.rationale_tokens.iter().cloned().for_each(&mut push);
            question_words(&q.question_text).for_each(&mut push);
        }
        let classes = corpus.answer_classes();
        if classes.is_empty() {
            return Err(Error::invalid("corpus has no answers to predict"));
        }
        let layout = Layout {
            vocab: vocab.len(),
            classes: classes.len(),
            d: config.embed_dim,
            dh: config.hidden_dim,
        };
        let mut model = Self {
            config,
            layout,
            vocab,
            index,
            classes,
            params: vec![0.0; layout.total()],
        };
        model.init_params(config.seed);
        Ok(model)
    }

    fn init_params(&mut self, seed: u64) {
        let mut r = rng(seed);
        let d = self.layout.d as f64;
        let dh = self.layout.dh as f64;
        for b in Block::ALL {
            let scale = match b {
                Block::GenEmbed | Block::PredEmbed => 1.0 / d.sqrt(),
                Block::Query | Block::Key | Block::Value | Block::Hidden => 1.0 / d.sqrt(),
                Block::Out => 1.0 / dh.sqrt(),
                Block::PoolQuery | Block::Classifier => 0.1,
                Block::HiddenBias | Block::OutBias | Block::ClassifierBias => 0.0,
            };
            for p in &mut self.params[self.layout.range(b)] {
                *p = if scale > 0.0 {
                    r.random_range(-scale..scale)
                } else {
                    0.0
                };
            }
        }
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.params[self.layout.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.layout.range(b);
        &mut self.params[r]
    }

    pub fn token_index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn class_index(&self, answer: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == answer)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.token_index(t.as_ref()))
            .collect()
    }

    pub fn encode(&self, q: &Question) -> Result<Encoded> {
        let answer = self.class_index(&q.answer_text).ok_or_else(|| {
            Error::validation(
                &q.id,
                "answer",
                format!("`{}` is not a known answer class", q.answer_text),
            )
        })?;
        let mut question = vec![QUESTION_MARK];
        question.extend(question_words(&q.question_text).map(|w| self.token_index(&w)));
        Ok(Encoded {
            rationale: self.encode_tokens(&q.rationale_tokens),
            question,
            answer,
        })
    }

    fn embed_row(&self, b: Block, tok: usize) -> &[f64] {
        let d = self.layout.d;
        let o = self.layout.offset(b) + tok * d;
        &self.params[o..o + d]
    }

    pub(crate) fn gen_embed(&self, tok: usize) -> &[f64] {
        self.embed_row(Block::GenEmbed, tok)
    }

    pub(crate) fn pred_embed(&self, tok: usize) -> &[f64] {
        self.embed_row(Block::PredEmbed, tok)
    }

    pub(crate) fn generator_forward(&self, tokens: &[usize]) -> GenCache {
        let d = self.layout.d;
        let dh = self.layout.dh;
        let scale = 1.0 / (d as f64).sqrt();
        let x: Vec<Vec<f64>> = tokens.iter().map(|&t| self.gen_embed(t).to_vec()).collect();
        let (wq, wk, wv) = (
            self.block(Block::Query),
            self.block(Block::Key),
            self.block(Block::Value),
        );
        let q: Vec<Vec<f64>> = x.iter().map(|xi| matvec(wq, xi, d)).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|xi| matvec(wk, xi, d)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|xi| matvec(wv, xi, d)).collect();
        let attn: Vec<Vec<f64>> = q
            .iter()
            .map(|qi| softmax(&k.iter().map(|kl| dot(qi, kl) * scale).collect::<Vec<_>>()))
            .collect();
        let e: Vec<Vec<f64>> = x
            .iter()
            .zip(&attn)
            .map(|(xi, ai)| {
                let mut ei = xi.clone();
                for (a, vl) in ai.iter().zip(&v) {
                    for (o, vv) in ei.iter_mut().zip(vl) {
                        *o += a * vv;
                    }
                }
                ei
            })
            .collect();
        let (w1, b1) = (self.block(Block::Hidden), self.block(Block::HiddenBias));
        let (w2, b2) = (self.block(Block::Out), self.block(Block::OutBias)[0]);
        let h: Vec<Vec<f64>> = e
            .iter()
            .map(|ei| {
                matvec(w1, ei, dh)
                    .into_iter()
                    .zip(b1)
                    .map(|(p, b)| (p + b).tanh())
                    .collect()
            })
            .collect();
        let w = h.iter().map(|hi| sigmoid(dot(w2, hi) + b2)).collect();
        GenCache {
            x,
            q,
            k,
            v,
            attn,
            e,
            h,
            w,
        }
    }

    /// Significance weight in `(0, 1)` for every token, context-dependent
    /// through the attention mixer. Unknown tokens map to `<unk>`.
    pub fn forward_weights<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot weight an empty token sequence"));
        }
        Ok(self.generator_forward(&self.encode_tokens(tokens)).w)
    }

    pub fn weigh_corpus(&self, corpus: &Corpus) -> Result<IndexMap<String, Vec<f64>>> {
        corpus
            .questions
            .iter()
            .map(|q| Ok((q.id.clone(), self.forward_weights(&q.rationale_tokens)?)))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config,
            vocab: self.vocab.clone(),
            classes: self.classes.clone(),
            embed_dim: self.layout.d,
            hidden_dim: self.layout.dh,
            params: Block::ALL
                .iter()
                .map(|&b| (b.name().to_string(), self.block(b).to_vec()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format_version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        let layout = Layout {
            vocab: ck.vocab.len(),
            classes: ck.classes.len(),
            d: ck.embed_dim,
            dh: ck.hidden_dim,
        };
        let mut params = Vec::with_capacity(layout.total());
        for b in Block::ALL {
            let block = ck
                .params
                .get(b.name())
                .ok_or_else(|| Error::invalid(format!("checkpoint missing `{}`", b.name())))?;
            if block.len() != layout.len_of(b) {
                return Err(Error::invalid(format!(
                    "checkpoint block `{}` has {} values, expected {}",
                    b.name(),
                    block.len(),
                    layout.len_of(b)
                )));
            }
            params.extend_from_slice(block);
        }
        let index = ck
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            config: ck.config,
            layout,
            vocab: ck.vocab,
            index,
            classes: ck.classes,
            params,
        })
    }
}

/// Flat key-to-array checkpoint document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: WeightingConfig,
    pub vocab: Vec<String>,
    pub classes: Vec<String>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub params: IndexMap<String, Vec<f64>>,
}
