use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{rng, sigmoid};

/// Sampled mask: `hard` drives the forward pass, `soft` carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub hard_masks: Vec<u8>,
    pub soft_values: Vec<f64>,
}

impl MaskSample {
    pub fn len(&self) -> usize {
        self.hard_masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_masks.is_empty()
    }

    /// Fraction of tokens masked out.
    pub fn masked_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.hard_masks.iter().filter(|&&m| m == 0).count() as f64 / self.len() as f64
    }
}

/// Two standard Gumbel variates per token: `keep` for the unmasked outcome,
/// `drop` for the masked one.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    pub keep: Vec<f64>,
    pub drop: Vec<f64>,
}

fn standard_gumbel<R: Rng>(r: &mut R) -> f64 {
    loop {
        let u: f64 = r.random();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    }
}

impl GumbelNoise {
    pub fn draw<R: Rng>(n: usize, r: &mut R) -> Self {
        let mut keep = Vec::with_capacity(n);
        let mut drop = Vec::with_capacity(n);
        for _ in 0..n {
            keep.push(standard_gumbel(r));
            drop.push(standard_gumbel(r));
        }
        Self { keep, drop }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            keep: vec![0.0; n],
            drop: vec![0.0; n],
        }
    }
}

/// Relaxed keep-probability
/// `exp((ln w + g1)/tau) / (exp((ln w + g1)/tau) + exp((ln(1-w) + g0)/tau))`.
pub(crate) fn relaxed(w: f64, keep: f64, drop: f64, tau: f64) -> f64 {
    sigmoid(((w.ln() + keep) - ((1.0 - w).ln() + drop)) / tau)
}

pub fn gumbel_sample_with_noise(
    weights: &[f64],
    tau: f64,
    noise: &GumbelNoise,
) -> Result<MaskSample> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    if noise.keep.len() != weights.len() || noise.drop.len() != weights.len() {
        return Err(Error::invalid("noise length does not match weights"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
        return Err(Error::invalid(format!(
            "weight {w} outside (0, 1); clamp to [1e-6, 1 - 1e-6] first"
        )));
    }
    let soft_values: Vec<f64> = weights
        .iter()
        .zip(noise.keep.iter().zip(&noise.drop))
        .map(|(&w, (&g1, &g0))| relaxed(w, g1, g0, tau))
        .collect();
    let hard_masks = soft_values.iter().map(|&s| u8::from(s >= 0.5)).collect();
    Ok(MaskSample {
        hard_masks,
        soft_values,
    })
}

/// Seeded binary Gumbel-Softmax sample.
pub fn gumbel_sample(weights: &[f64], tau: f64, seed: u64) -> Result<MaskSample> {
    let noise = GumbelNoise::draw(weights.len(), &mut rng(seed));
    gumbel_sample_with_noise(weights, tau, &noise)
}
