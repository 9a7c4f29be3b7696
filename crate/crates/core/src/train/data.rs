//! Training samples and their container encoding.
//!
//! A dataset container holds, for sample `i`, `data.{i}.image` (f32
//! `[3, H, W]`, already preprocessed), `data.{i}.tokens` (f32 `[L]` holding
//! integral token ids) and optionally `data.{i}.prompt_len` (f32 `[1]`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::container::{Container, Meta};
use crate::pipeline::image::{preprocess_image, RgbImage};
use crate::pipeline::tokenizer::{tokenize_prompt, EOS, IMAGE_MARKER};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
}

fn key(i: usize, leaf: &str) -> String {
    format!("data.{i}.{leaf}")
}

pub fn dataset_container(samples: &[Sample]) -> Result<Container> {
    let mut c = Container::new(Meta::default());
    for (i, s) in samples.iter().enumerate() {
        c.insert_f32(key(i, "image"), s.image.clone())?;
        let ids = s.tokens.iter().map(|&t| t as f32).collect();
        c.insert_f32(key(i, "tokens"), Tensor::new(vec![s.tokens.len()], ids)?)?;
        c.insert_f32(
            key(i, "prompt_len"),
            Tensor::new(vec![1], vec![s.prompt_len as f32])?,
        )?;
    }
    Ok(c)
}

pub fn load_dataset(c: &Container) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for i in 0.. {
        if c.get(&key(i, "image")).is_none() {
            break;
        }
        let image = c.f32(&key(i, "image"))?.clone();
        let tokens = c
            .f32(&key(i, "tokens"))?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
                    Ok(v as u32)
                } else {
                    Err(Error::Data(format!(
                        "sample {i}: token value {v} is not an id"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let prompt_len = match c.get(&key(i, "prompt_len")) {
            Some(_) => c.f32(&key(i, "prompt_len"))?.data()[0] as usize,
            None => 1,
        };
        out.push(Sample {
            image,
            tokens,
            prompt_len,
        });
    }
    if out.is_empty() {
        return Err(Error::Data("dataset container holds no samples".into()));
    }
    Ok(out)
}

const CAPTIONS: [&str; 8] = [
    "red square",
    "green disc",
    "blue stripes",
    "white dot",
    "dark cross",
    "yellow ring",
    "grey checks",
    "pink wave",
];

/// `n` seeded (image, caption) pairs at `size`²: a random two-colour
/// pattern per sample and the tokens `BOS IMG caption EOS`.
pub fn synthetic_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let fg: [u8; 3] = rng.random();
            let bg: [u8; 3] = rng.random();
            let period = rng.random_range(2..8usize);
            let mut pixels = Vec::with_capacity(size * size * 3);
            for y in 0..size {
                for x in 0..size {
                    let on = match i % 3 {
                        0 => (x / period) % 2 == 0,
                        1 => (y / period) % 2 == 0,
                        _ => ((x + y) / period) % 2 == 0,
                    };
                    pixels.extend_from_slice(if on { &fg } else { &bg });
                }
            }
            let img = RgbImage::new(size, size, pixels)?;
            let caption = if i < CAPTIONS.len() {
                CAPTIONS[i].to_string()
            } else {
                format!("{} {i}", CAPTIONS[i % CAPTIONS.len()])
            };
            let mut tokens = tokenize_prompt(&format!("{IMAGE_MARKER}{caption}"));
            tokens.push(EOS);
            Ok(Sample {
                image: preprocess_image(&img, size)?,
                tokens,
                prompt_len: 1,
            })
        })
        .collect()
}
