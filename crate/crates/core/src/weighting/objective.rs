//! Forward and manual backward pass of the weighting objective
//! `L = L_pred + alpha * L_mask`.

use super::gumbel::{relaxed, GumbelNoise, MaskSample};
use super::model::{dot, matvec, Block, Encoded, GenCache, TokenWeightModel};
use super::WEIGHT_CLAMP;
use crate::corpus::Question;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax, stable_sum};

/// How the sampled mask enters the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Hard 0/1 masks forward, gradients through the soft relaxation.
    StraightThrough,
    /// Soft values forward and backward; the objective is then smooth,
    /// which is what finite-difference checks need.
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub prediction: f64,
    pub mask_ratio: f64,
    pub total: f64,
    pub sample: MaskSample,
}

/// Sum of soft mask values.
pub fn mask_ratio_loss(sample: &MaskSample) -> f64 {
    stable_sum(sample.soft_values.iter().copied())
}

pub fn total_weighting_loss(prediction: f64, mask_ratio: f64, alpha: f64) -> f64 {
    prediction + alpha * mask_ratio
}

const MAX_EXCESS_SCORE: f64 = 30.0;

fn clamp_weight(w: f64) -> f64 {
    w.clamp(WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP)
}

fn add_outer(dst: &mut [f64], row: &[f64], col: &[f64]) {
    let cols = col.len();
    for (r, &a) in row.iter().enumerate() {
        for (d, &b) in dst[r * cols..(r + 1) * cols].iter_mut().zip(col) {
            *d += a * b;
        }
    }
}

fn add_transposed_matvec(dst: &mut [f64], m: &[f64], y: &[f64]) {
    let cols = dst.len();
    for (r, &yr) in y.iter().enumerate() {
        for (d, &w) in dst.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *d += w * yr;
        }
    }
}

impl TokenWeightModel {
    fn check_prefixes(&self, n: usize, prefixes: &[usize]) -> Result<()> {
        if let Some(k) = prefixes.iter().find(|&&k| k > n) {
            return Err(Error::invalid(format!(
                "prefix length {k} exceeds {n} rationale tokens"
            )));
        }
        Ok(())
    }

    /// Answer loss summed over prefixes, with masked-out rationale tokens
    /// removed from the predictor's pooling. Accumulates gradients into
    /// `grad` and `d_mask` when given.
    pub(crate) fn predictor_loss(
        &self,
        ex: &Encoded,
        mask: &[f64],
        prefixes: &[usize],
        mut grad: Option<(&mut [f64], &mut [f64])>,
    ) -> f64 {
        let layout = self.layout;
        let d = layout.d;
        let n_classes = layout.classes;
        let pool = self.block(Block::PoolQuery);
        let cls_w = self.block(Block::Classifier);
        let cls_b = self.block(Block::ClassifierBias);

        let mut losses = Vec::with_capacity(prefixes.len());
        for &k in prefixes {
            let items: Vec<(usize, f64, Option<usize>)> = ex
                .question
                .iter()
                .map(|&t| (t, 1.0, None))
                .chain((0..k).map(|j| (ex.rationale[j], mask[j], Some(j))))
                .collect();
            let scores: Vec<f64> = items
                .iter()
                .map(|&(t, _, _)| dot(pool, self.pred_embed(t)))
                .collect();
            let shift = items
                .iter()
                .zip(&scores)
                .filter(|((_, m, _), _)| *m > 0.0)
                .map(|(_, &s)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            // Masked-out items can score far above every kept one; cap their
            // exponent so the straight-through derivative stays finite.
            let ex_scores: Vec<f64> = scores
                .iter()
                .map(|s| (s - shift).min(MAX_EXCESS_SCORE).exp())
                .collect();
            let z: f64 = items
                .iter()
                .zip(&ex_scores)
                .map(|((_, m, _), e)| m * e)
                .sum();
            let alpha: Vec<f64> = items
                .iter()
                .zip(&ex_scores)
                .map(|((_, m, _), e)| if *m > 0.0 { m * e / z } else { 0.0 })
                .collect();
            let mut pooled = vec![0.0; d];
            for (&(t, _, _), &a) in items.iter().zip(&alpha) {
                if a != 0.0 {
                    for (p, e) in pooled.iter_mut().zip(self.pred_embed(t)) {
                        *p += a * e;
                    }
                }
            }
            let logits: Vec<f64> = matvec(cls_w, &pooled, n_classes)
                .into_iter()
                .zip(cls_b)
                .map(|(l, b)| l + b)
                .collect();
            losses.push(log_sum_exp(&logits) - logits[ex.answer]);

            let Some((g, d_mask)) = grad.as_mut() else {
                continue;
            };
            let mut d_logits = softmax(&logits);
            d_logits[ex.answer] -= 1.0;
            add_outer(&mut g[layout.range(Block::Classifier)], &d_logits, &pooled);
            for (gb, dl) in g[layout.range(Block::ClassifierBias)]
                .iter_mut()
                .zip(&d_logits)
            {
                *gb += dl;
            }
            let mut d_pooled = vec![0.0; d];
            add_transposed_matvec(&mut d_pooled, cls_w, &d_logits);

            let d_alpha: Vec<f64> = items
                .iter()
                .map(|&(t, _, _)| dot(&d_pooled, self.pred_embed(t)))
                .collect();
            let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, da)| a * da).sum();
            let pool_off = layout.offset(Block::PoolQuery);
            let emb_off = layout.offset(Block::PredEmbed);
            for (i, &(t, _, j)) in items.iter().enumerate() {
                let r = d_alpha[i] - mean;
                let d_score = alpha[i] * r;
                let row = self.pred_embed(t);
                for c in 0..d {
                    g[pool_off + c] += d_score * row[c];
                    g[emb_off + t * d + c] += alpha[i] * d_pooled[c] + d_score * pool[c];
                }
                if let Some(j) = j {
                    d_mask[j] += r * ex_scores[i] / z;
                }
            }
        }
        stable_sum(losses)
    }

    /// Backpropagates `d_w` (gradient w.r.t. each token's weight) through
    /// the generator.
    pub(crate) fn generator_backward(
        &self,
        tokens: &[usize],
        cache: &GenCache,
        d_w: &[f64],
        g: &mut [f64],
    ) {
        let layout = self.layout;
        let d = layout.d;
        let n = tokens.len();
        let scale = 1.0 / (d as f64).sqrt();
        let w1 = self.block(Block::Hidden);
        let w2 = self.block(Block::Out);

        let mut d_e = vec![vec![0.0; d]; n];
        for j in 0..n {
            let w = cache.w[j];
            let dz = d_w[j] * w * (1.0 - w);
            if dz == 0.0 {
                continue;
            }
            let h = &cache.h[j];
            add_outer(&mut g[layout.range(Block::Out)], &[dz], h);
            g[layout.offset(Block::OutBias)] += dz;
            let d_pre: Vec<f64> = h
                .iter()
                .zip(w2)
                .map(|(hv, wv)| dz * wv * (1.0 - hv * hv))
                .collect();
            add_outer(&mut g[layout.range(Block::Hidden)], &d_pre, &cache.e[j]);
            for (gb, dp) in g[layout.range(Block::HiddenBias)].iter_mut().zip(&d_pre) {
                *gb += dp;
            }
            add_transposed_matvec(&mut d_e[j], w1, &d_pre);
        }

        let mut d_x = d_e.clone();
        let mut d_q = vec![vec![0.0; d]; n];
        let mut d_k = vec![vec![0.0; d]; n];
        let mut d_v = vec![vec![0.0; d]; n];
        for j in 0..n {
            let a = &cache.attn[j];
            let d_a: Vec<f64> = cache.v.iter().map(|vl| dot(&d_e[j], vl)).collect();
            for l in 0..n {
                for c in 0..d {
                    d_v[l][c] += a[l] * d_e[j][c];
                }
            }
            let mean: f64 = a.iter().zip(&d_a).map(|(x, y)| x * y).sum();
            for l in 0..n {
                let d_s = a[l] * (d_a[l] - mean) * scale;
                if d_s == 0.0 {
                    continue;
                }
                for c in 0..d {
                    d_q[j][c] += d_s * cache.k[l][c];
                    d_k[l][c] += d_s * cache.q[j][c];
                }
            }
        }
        for (block, grads) in [
            (Block::Query, &d_q),
            (Block::Key, &d_k),
            (Block::Value, &d_v),
        ] {
            let m = self.block(block);
            for j in 0..n {
                add_outer(&mut g[layout.range(block)], &grads[j], &cache.x[j]);
                add_transposed_matvec(&mut d_x[j], m, &grads[j]);
            }
        }
        let emb_off = layout.offset(Block::GenEmbed);
        for (j, &t) in tokens.iter().enumerate() {
            for c in 0..d {
                g[emb_off + t * d + c] += d_x[j][c];
            }
        }
    }

    /// Full objective for one example with fixed noise and prefixes.
    /// Gradients are accumulated into `grad` when provided.
    pub fn objective(
        &self,
        ex: &Encoded,
        noise: &GumbelNoise,
        prefixes: &[usize],
        mode: MaskMode,
        grad: Option<&mut [f64]>,
    ) -> Result<LossParts> {
        let n = ex.rationale.len();
        if n == 0 {
            return Err(Error::invalid("empty rationale"));
        }
        if noise.keep.len() != n || noise.drop.len() != n {
            return Err(Error::invalid("noise length does not match rationale"));
        }
        self.check_prefixes(n, prefixes)?;
        let tau = self.config.tau;
        let alpha = self.config.alpha;
        let cache = self.generator_forward(&ex.rationale);
        let clamped: Vec<f64> = cache.w.iter().map(|&w| clamp_weight(w)).collect();
        let soft: Vec<f64> = clamped
            .iter()
            .zip(noise.keep.iter().zip(&noise.drop))
            .map(|(&w, (&g1, &g0))| relaxed(w, g1, g0, tau))
            .collect();
        let hard: Vec<u8> = soft.iter().map(|&s| u8::from(s >= 0.5)).collect();
        let mask: Vec<f64> = match mode {
            MaskMode::StraightThrough => hard.iter().map(|&m| f64::from(m)).collect(),
            MaskMode::Soft => soft.clone(),
        };
        let sample = MaskSample {
            hard_masks: hard,
            soft_values: soft,
        };

        let mask_ratio = mask_ratio_loss(&sample);
        let prediction;
        match grad {
            None => prediction = self.predictor_loss(ex, &mask, prefixes, None),
            Some(g) => {
                let mut d_mask = vec![0.0; n];
                prediction = self.predictor_loss(ex, &mask, prefixes, Some((&mut *g, &mut d_mask)));
                let d_w: Vec<f64> = (0..n)
                    .map(|j| {
                        let s = sample.soft_values[j];
                        let wc = clamped[j];
                        if wc != cache.w[j] {
                            return 0.0;
                        }
                        let d_soft = d_mask[j] + alpha;
                        let d_logit = d_soft * s * (1.0 - s) / tau;
                        d_logit * (1.0 / wc + 1.0 / (1.0 - wc))
                    })
                    .collect();
                self.generator_backward(&ex.rationale, &cache, &d_w, g);
            }
        }
        Ok(LossParts {
            prediction,
            mask_ratio,
            total: total_weighting_loss(prediction, mask_ratio, alpha),
            sample,
        })
    }

    /// Answer loss of a question under a given sample's hard masks.
    pub fn answer_prediction_loss(
        &self,
        q: &Question,
        sample: &MaskSample,
        prefixes: &[usize],
    ) -> Result<f64> {
        let ex = self.encode(q)?;
        if sample.len() != ex.rationale.len() {
            return Err(Error::invalid(format!(
                "mask length {} does not match {} rationale tokens of `{}`",
                sample.len(),
                ex.rationale.len(),
                q.id
            )));
        }
        self.check_prefixes(ex.rationale.len(), prefixes)?;
        let mask: Vec<f64> = sample.hard_masks.iter().map(|&m| f64::from(m)).collect();
        Ok(self.predictor_loss(&ex, &mask, prefixes, None))
    }
}
