//! Temperature, nucleus truncation, and seeded sampling.
//!
//! Randomness comes from ChaCha8 seeded with the 64-bit `seed`; one uniform
//! `f64` is drawn per sampled token, so a fixed seed fixes the transcript.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    /// 0 selects greedy decoding.
    pub temperature: f32,
    pub top_p: f32,
    pub seed: u64,
    pub stop: Option<u32>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 32,
            temperature: 0.0,
            top_p: 1.0,
            seed: 0,
            stop: Some(crate::pipeline::tokenizer::EOS),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// Index of the largest logit; the lowest id wins ties.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Smallest prefix of the probability-sorted order (ties by id) whose mass
/// reaches `top_p`, renormalized. Always keeps at least one token.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<(u32, f64)> {
    let mut order: Vec<u32> = (0..probs.len() as u32).collect();
    order.sort_by(|&a, &b| {
        probs[b as usize]
            .total_cmp(&probs[a as usize])
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for id in order {
        kept.push((id, probs[id as usize]));
        mass += probs[id as usize];
        if mass >= top_p {
            break;
        }
    }
    let total: f64 = kept.iter().map(|&(_, p)| p).sum();
    for (_, p) in &mut kept {
        *p /= total;
    }
    kept
}

/// Softmax of `logits / temperature` in f64.
pub fn tempered_probs(logits: &[f32], temperature: f32) -> Vec<f64> {
    let t = f64::from(temperature);
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let mut p: Vec<f64> = logits
        .iter()
        .map(|&v| ((f64::from(v) - max) / t).exp())
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

pub struct Sampler {
    rng: ChaCha8Rng,
    temperature: f32,
    top_p: f32,
}

impl Sampler {
    pub fn new(params: &GenerationParams) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            temperature: params.temperature,
            top_p: params.top_p,
        }
    }

    pub fn next(&mut self, logits: &[f32]) -> u32 {
        if self.temperature == 0.0 {
            return argmax(logits);
        }
        let kept = nucleus(
            &tempered_probs(logits, self.temperature),
            f64::from(self.top_p),
        );
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for &(id, p) in &kept {
            acc += p;
            if u < acc {
                return id;
            }
        }
        kept.last().map_or(0, |&(id, _)| id)
    }
}
