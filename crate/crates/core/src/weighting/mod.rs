//! Token significance weighting by learned masking.
//!
//! A weight generator (embedding, one single-head attention mixer, two-layer
//! MLP, sigmoid) scores every rationale token. Masks are drawn from those
//! scores with a binary Gumbel-Softmax relaxation, and a compact predictor
//! must recover the answer class from the question plus a prefix of the
//! masked rationale. Training minimizes answer loss plus `alpha` times the
//! number of kept tokens, so only tokens the answer depends on keep high
//! weights.

mod gradcheck;
mod gumbel;
mod model;
mod objective;
mod train;

pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport};
pub use gumbel::{gumbel_sample, gumbel_sample_with_noise, GumbelNoise, MaskSample};
pub use model::{Block, Checkpoint, Encoded, Layout, TokenWeightModel, CHECKPOINT_VERSION};
pub use objective::{mask_ratio_loss, total_weighting_loss, LossParts, MaskMode};
pub use train::{train_weighting, WeightingOutcome};

use serde::{Deserialize, Serialize};

/// Lower/upper clamp applied to weights before taking logs.
pub const WEIGHT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingConfig {
    /// Weight of the mask-ratio loss.
    pub alpha: f64,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    /// Step size for the generator (embedding, mixer, MLP).
    pub learning_rate: f64,
    /// Step size for the answer predictor.
    pub predictor_learning_rate: f64,
    /// Largest generator gradient norm per step; larger gradients are
    /// rescaled to this norm.
    pub grad_clip: f64,
    /// Predictor-only epochs (generator frozen) run before joint training.
    pub predictor_warmup_epochs: usize,
    /// Prefix lengths sampled per example per step.
    pub prefix_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Initialization, shuffling and prefix sampling.
    pub seed: u64,
    pub gumbel_seed: u64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tau: 1.0,
            learning_rate: 0.05,
            predictor_learning_rate: 0.1,
            grad_clip: 0.2,
            predictor_warmup_epochs: 50,
            prefix_samples: 4,
            epochs: 200,
            batch_size: 8,
            embed_dim: 32,
            hidden_dim: 32,
            seed: 0,
            gumbel_seed: 1,
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if !(self.alpha >= 0.0) {
            return bad("weigh.alpha must be >= 0");
        }
        if !(self.tau > 0.0) {
            return bad("weigh.tau must be > 0");
        }
        if !(self.learning_rate > 0.0) || !(self.predictor_learning_rate > 0.0) {
            return bad("weigh learning rates must be > 0");
        }
        if !(self.grad_clip > 0.0) {
            return bad("weigh.grad_clip must be > 0");
        }
        if self.prefix_samples == 0 || self.batch_size == 0 {
            return bad("weigh.prefix_samples and weigh.batch_size must be >= 1");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("weigh.embed_dim and weigh.hidden_dim must be >= 1");
        }
        Ok(())
    }
}
