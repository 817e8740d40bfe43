use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;

use super::gumbel::GumbelNoise;
use super::model::{Block, Encoded, TokenWeightModel};
use super::objective::MaskMode;
use super::WeightingConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numeric::{rng, stable_sum, sub_seed};

#[derive(Debug, Clone)]
pub struct WeightingOutcome {
    pub model: TokenWeightModel,
    /// Final per-token weights, in corpus order.
    pub weights: IndexMap<String, Vec<f64>>,
    /// Mean objective per example for each epoch.
    pub epoch_losses: Vec<f64>,
    /// Fraction of tokens hard-masked during the last epoch.
    pub final_mask_ratio: f64,
}

/// `count` prefix lengths drawn uniformly from `1..=n`.
pub(crate) fn sample_prefixes<R: Rng>(n: usize, count: usize, r: &mut R) -> Vec<usize> {
    (0..count).map(|_| r.random_range(1..=n)).collect()
}

/// Seeded mini-batch gradient descent on the weighting objective, generator
/// and predictor trained jointly with straight-through masks. The first
/// `predictor_warmup_epochs` epochs update the predictor only.
pub fn train_weighting(corpus: &Corpus, config: &WeightingConfig) -> Result<WeightingOutcome> {
    let mut model = TokenWeightModel::new(corpus, *config)?;
    let examples: Vec<Encoded> = corpus
        .questions
        .iter()
        .map(|q| model.encode(q))
        .collect::<Result<_>>()?;
    let mut order_rng = rng(sub_seed(config.seed, "order"));
    let mut noise_rng = rng(config.gumbel_seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let predictor_start = model.layout.offset(Block::PredEmbed);
    let mut epoch_losses = Vec::with_capacity(config.predictor_warmup_epochs + config.epochs);
    let mut final_mask_ratio = 0.0;

    let total_epochs = config.predictor_warmup_epochs + config.epochs;
    for epoch in 0..total_epochs {
        let gen_lr = if epoch < config.predictor_warmup_epochs {
            0.0
        } else {
            config.learning_rate
        };
        order.shuffle(&mut order_rng);
        let mut losses = Vec::with_capacity(examples.len());
        let (mut masked, mut tokens) = (0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let ex = &examples[i];
                let n = ex.rationale.len();
                let noise = GumbelNoise::draw(n, &mut noise_rng);
                let prefixes = sample_prefixes(n, config.prefix_samples, &mut order_rng);
                let parts = model.objective(
                    ex,
                    &noise,
                    &prefixes,
                    MaskMode::StraightThrough,
                    Some(&mut grad),
                )?;
                if !parts.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite weighting loss at epoch {} on `{}`; lower weigh.learning_rate",
                        epoch + 1,
                        corpus.questions[i].id
                    )));
                }
                masked += parts.sample.hard_masks.iter().filter(|&&m| m == 0).count();
                tokens += n;
                losses.push(parts.total);
            }
            let scale = 1.0 / batch.len() as f64;
            let gen_norm = scale * stable_sum(grad[..predictor_start].iter().map(|g| g * g)).sqrt();
            let gen_scale = if gen_norm > config.grad_clip {
                config.grad_clip / gen_norm
            } else {
                1.0
            };
            for (i, (p, g)) in model.params.iter_mut().zip(&grad).enumerate() {
                let lr = if i < predictor_start {
                    gen_lr * gen_scale
                } else {
                    config.predictor_learning_rate
                };
                *p -= lr * scale * g;
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!(
                    "parameters diverged at epoch {}; lower weigh.learning_rate",
                    epoch + 1
                )));
            }
        }
        epoch_losses.push(stable_sum(losses) / examples.len().max(1) as f64);
        final_mask_ratio = masked as f64 / tokens.max(1) as f64;
    }

    let weights = model.weigh_corpus(corpus)?;
    Ok(WeightingOutcome {
        model,
        weights,
        epoch_losses,
        final_mask_ratio,
    })
}
