//! Central finite-difference check of the manual backward pass.

use rand::seq::index::sample;

use super::gumbel::GumbelNoise;
use super::model::{Block, TokenWeightModel};
use super::objective::MaskMode;
use super::train::sample_prefixes;
use crate::corpus::Question;
use crate::error::Result;
use crate::numeric::{rng, sub_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub n_params: usize,
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor * max(1, |L|))`
    /// as denominator. Central differences carry round-off near
    /// `eps * |L| / step`, so smaller gradients cannot be resolved.
    pub floor: f64,
    pub seed: u64,
    /// Negative control: zero the analytic gradient of the checked
    /// parameter with the largest numeric gradient.
    pub zero_largest: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            n_params: 100,
            step: 1e-5,
            floor: 1e-6,
            seed: 0,
            zero_largest: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub worst_index: Option<usize>,
    pub worst_block: Option<Block>,
}

/// Max relative error over at least 100 parameters touched by `question`.
pub fn gradient_check(model: &TokenWeightModel, question: &Question, seed: u64) -> Result<f64> {
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    Ok(gradient_check_with(model, question, &opts)?.max_relative_error)
}

pub fn gradient_check_with(
    model: &TokenWeightModel,
    question: &Question,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let ex = model.encode(question)?;
    let n = ex.rationale.len();
    let mut r = rng(sub_seed(opts.seed, "gradcheck"));
    let noise = GumbelNoise::draw(n, &mut r);
    let prefixes = sample_prefixes(n, model.config.prefix_samples, &mut r);

    let mut analytic = vec![0.0; model.params.len()];
    let base = model
        .objective(&ex, &noise, &prefixes, MaskMode::Soft, Some(&mut analytic))?
        .total;
    let floor = opts.floor * base.abs().max(1.0);

    // Parameters the example can reach: dense blocks plus embedding rows
    // of tokens present in the example.
    let layout = model.layout;
    let d = layout.d;
    let mut active: Vec<usize> = Vec::new();
    for b in Block::ALL {
        match b {
            Block::GenEmbed | Block::PredEmbed => {
                let mut toks: Vec<usize> = ex.rationale.clone();
                if b == Block::PredEmbed {
                    toks.extend(&ex.question);
                }
                toks.sort_unstable();
                toks.dedup();
                let off = layout.offset(b);
                for t in toks {
                    active.extend(off + t * d..off + (t + 1) * d);
                }
            }
            _ => active.extend(layout.range(b)),
        }
    }
    if active.is_empty() {
        return Ok(GradCheckReport {
            max_relative_error: 0.0,
            checked: 0,
            worst_index: None,
            worst_block: None,
        });
    }
    let picks: Vec<usize> = if active.len() <= opts.n_params {
        active
    } else {
        let mut p: Vec<usize> = sample(&mut r, active.len(), opts.n_params)
            .into_iter()
            .map(|i| active[i])
            .collect();
        p.sort_unstable();
        p
    };

    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(picks.len());
    for &i in &picks {
        let orig = probe.params[i];
        probe.params[i] = orig + opts.step;
        let up = probe
            .objective(&ex, &noise, &prefixes, MaskMode::Soft, None)?
            .total;
        probe.params[i] = orig - opts.step;
        let down = probe
            .objective(&ex, &noise, &prefixes, MaskMode::Soft, None)?
            .total;
        probe.params[i] = orig;
        numeric.push((up - down) / (2.0 * opts.step));
    }

    if opts.zero_largest {
        if let Some((pos, _)) = numeric
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        {
            analytic[picks[pos]] = 0.0;
        }
    }

    let mut worst = (0.0f64, None);
    for (&i, &num) in picks.iter().zip(&numeric) {
        let a = analytic[i];
        let denom = a.abs().max(num.abs()).max(floor);
        let rel = (a - num).abs() / denom;
        if rel > worst.0 || worst.1.is_none() {
            worst = (rel, Some(i));
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        checked: picks.len(),
        worst_index: worst.1,
        worst_block: worst.1.and_then(|i| layout.block_of(i)),
    })
}
