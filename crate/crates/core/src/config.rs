//! Pipeline configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::ParseOptions;
use crate::difficulty::LogprobSource;
use crate::error::{Error, Result};
use crate::loss_shaping::SimulateConfig;
use crate::numeric::sub_seed;
use crate::schedule::SelectionConfig;
use crate::weighting::WeightingConfig;

pub const DEFAULT_OUT_DIR: &str = "keystep-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeighSection {
    pub alpha: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub predictor_learning_rate: f64,
    pub grad_clip: f64,
    pub predictor_warmup_epochs: usize,
    pub prefix_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for WeighSection {
    fn default() -> Self {
        let w = WeightingConfig::default();
        Self {
            alpha: w.alpha,
            tau: w.tau,
            learning_rate: w.learning_rate,
            predictor_learning_rate: w.predictor_learning_rate,
            grad_clip: w.grad_clip,
            predictor_warmup_epochs: w.predictor_warmup_epochs,
            prefix_samples: w.prefix_samples,
            epochs: w.epochs,
            batch_size: w.batch_size,
            embed_dim: w.embed_dim,
            hidden_dim: w.hidden_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Distillation epochs; stage `t` drives epoch `t`.
    pub epochs: usize,
    pub p: f64,
    /// Initial budget as a fraction of the corpus difficulty `B`.
    pub c0_fraction: f64,
    /// Stage reaching the full budget; `epochs / 2` when unset.
    pub terminal_stage: Option<usize>,
    /// Input steps removed per selection.
    pub step_reduction: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            epochs: 20,
            p: 0.5,
            c0_fraction: 0.3,
            terminal_stage: None,
            step_reduction: 1,
        }
    }
}

impl ScheduleSection {
    pub fn terminal_stage(&self) -> usize {
        self.terminal_stage.unwrap_or(self.epochs / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub clusters: usize,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        let s = SelectionConfig::default();
        Self {
            clusters: 5,
            beta: s.beta,
            epsilon: s.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            dim: crate::corpus::DEFAULT_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Whether `run` also trains the toy student.
    pub enabled: bool,
    pub learning_rate: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            enabled: false,
            learning_rate: SimulateConfig::default().learning_rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lenient: bool,
    /// Seed for filling in missing token logprobs; absent means they are
    /// required in the corpus.
    pub synthetic_logprobs: Option<u64>,
    pub weigh: WeighSection,
    pub schedule: ScheduleSection,
    pub selection: SelectionSection,
    pub embedding: EmbeddingSection,
    pub simulate: SimulateSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lenient: bool,
    pub synthetic_logprobs: Option<u64>,
    pub simulate: bool,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a config file. Relative `corpus` and `out` paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corpus, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.corpus.is_some() {
            self.corpus.clone_from(&o.corpus);
        }
        if o.out.is_some() {
            self.out.clone_from(&o.out);
        }
        self.lenient |= o.lenient;
        if o.synthetic_logprobs.is_some() {
            self.synthetic_logprobs = o.synthetic_logprobs;
        }
        self.simulate.enabled |= o.simulate;
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed N)".into()))
    }

    /// Named sub-seed derived from the config seed.
    pub fn stage_seed(&self, name: &str) -> Result<u64> {
        Ok(sub_seed(self.seed()?, name))
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.corpus.as_deref().ok_or_else(|| {
            Error::Config("no corpus given (config `corpus` or --corpus PATH)".into())
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn parse_options(&self) -> Result<ParseOptions> {
        Ok(ParseOptions {
            lenient: self.lenient,
            embedding_dim: self.embedding.dim,
            embedding_seed: self.stage_seed("embed")?,
        })
    }

    pub fn logprob_source(&self) -> LogprobSource {
        match self.synthetic_logprobs {
            Some(s) => LogprobSource::SyntheticFill(s),
            None => LogprobSource::Corpus,
        }
    }

    pub fn weighting(&self) -> Result<WeightingConfig> {
        let w = &self.weigh;
        let cfg = WeightingConfig {
            alpha: w.alpha,
            tau: w.tau,
            learning_rate: w.learning_rate,
            predictor_learning_rate: w.predictor_learning_rate,
            grad_clip: w.grad_clip,
            predictor_warmup_epochs: w.predictor_warmup_epochs,
            prefix_samples: w.prefix_samples,
            epochs: w.epochs,
            batch_size: w.batch_size,
            embed_dim: w.embed_dim,
            hidden_dim: w.hidden_dim,
            seed: self.stage_seed("weigh")?,
            gumbel_seed: self.stage_seed("gumbel")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            beta: self.selection.beta,
            epsilon: self.selection.epsilon,
            step_reduction: self.schedule.step_reduction,
        }
    }

    pub fn simulation(&self) -> Result<SimulateConfig> {
        Ok(SimulateConfig {
            learning_rate: self.simulate.learning_rate,
            seed: self.stage_seed("simulate")?,
        })
    }

    /// Checks every field against the preconditions of the stage using it.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.seed()?;
        self.weighting()?;
        let s = &self.schedule;
        if s.epochs == 0 {
            return bad("schedule.epochs must be >= 1".into());
        }
        let t = s.terminal_stage();
        if t == 0 || t > s.epochs {
            return bad(format!(
                "schedule.terminal_stage = {t} must lie in [1, schedule.epochs = {}]",
                s.epochs
            ));
        }
        if !(s.p >= 0.0) || !s.p.is_finite() {
            return bad("schedule.p must be a finite value >= 0".into());
        }
        if !(0.0..=1.0).contains(&s.c0_fraction) {
            return bad("schedule.c0_fraction must lie in [0, 1]".into());
        }
        if s.step_reduction == 0 {
            return bad("schedule.step_reduction must be >= 1".into());
        }
        let sel = &self.selection;
        if sel.clusters == 0 {
            return bad("selection.clusters must be >= 1".into());
        }
        if !(sel.beta >= 0.0) || !sel.beta.is_finite() {
            return bad("selection.beta must be a finite value >= 0".into());
        }
        if !(sel.epsilon > 0.0 && sel.epsilon < 0.5) {
            return bad("selection.epsilon must lie in (0, 1/2)".into());
        }
        if self.embedding.dim == 0 {
            return bad("embedding.dim must be >= 1".into());
        }
        if !(self.simulate.learning_rate > 0.0) || !self.simulate.learning_rate.is_finite() {
            return bad("simulate.learning_rate must be > 0".into());
        }
        Ok(())
    }
}
