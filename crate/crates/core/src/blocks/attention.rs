//! Multi-head scaled dot-product attention, rotary position embedding and the
//! per-layer key/value cache used during decoding.
//!
//! Head tensors are `[t, heads, head_dim]`, row-major.

use crate::error::{Error, Result};
use crate::tensor::{dot, softmax_in_place, Tensor};

fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [t, h, d] => Ok((t, h, d)),
        _ => Err(Error::Shape(format!(
            "expected [t, heads, head_dim], got {:?}",
            x.shape()
        ))),
    }
}

/// Rotary frequencies `base^(-2i/head_dim)` for `i < head_dim/2`.
pub fn rope_frequencies(head_dim: usize, base: f32) -> Vec<f32> {
    (0..head_dim / 2)
        .map(|i| base.powf(-2.0 * i as f32 / head_dim as f32))
        .collect()
}

/// Rotates each `(x[i], x[i + head_dim/2])` pair by `position · freq_i`.
///
/// `positions[j]` is the absolute position of row `j`. `sign = -1` applies
/// the inverse rotation (used by the backward pass).
pub fn rope_rotate(x: &Tensor, positions: &[usize], base: f32, sign: f32) -> Result<Tensor> {
    let (t, h, d) = dims3(x)?;
    if d % 2 != 0 {
        return Err(Error::Config(format!(
            "rotary embedding needs an even head_dim, got {d}"
        )));
    }
    if positions.len() != t {
        return Err(Error::Shape(format!(
            "{} positions for {t} rows",
            positions.len()
        )));
    }
    let half = d / 2;
    let freqs = rope_frequencies(d, base);
    let mut out = x.data().to_vec();
    for (j, &pos) in positions.iter().enumerate() {
        for (i, f) in freqs.iter().enumerate() {
            let (sin, cos) = (pos as f32 * f).sin_cos();
            let sin = sign * sin;
            for head in 0..h {
                let base_idx = (j * h + head) * d;
                let a = out[base_idx + i];
                let b = out[base_idx + i + half];
                out[base_idx + i] = a * cos - b * sin;
                out[base_idx + i + half] = a * sin + b * cos;
            }
        }
    }
    Tensor::new(vec![t, h, d], out)
}

pub fn rope_apply(x: &Tensor, positions: &[usize], base: f32) -> Result<Tensor> {
    rope_rotate(x, positions, base, 1.0)
}

/// Appended keys and values of one decoder layer.
#[derive(Clone, Debug)]
pub struct LayerCache {
    heads: usize,
    head_dim: usize,
    capacity: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
}

impl LayerCache {
    pub fn new(heads: usize, head_dim: usize, capacity: usize) -> Self {
        Self {
            heads,
            head_dim,
            capacity,
            keys: Vec::with_capacity(capacity * heads * head_dim),
            values: Vec::with_capacity(capacity * heads * head_dim),
        }
    }

    /// Number of positions already processed.
    pub fn len(&self) -> usize {
        self.keys.len() / (self.heads * self.head_dim).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn reset(&mut self) {
        self.keys.clear();
        self.values.clear();
    }

    fn append(&mut self, k: &Tensor, v: &Tensor) -> Result<()> {
        let (t, h, d) = dims3(k)?;
        if (h, d) != (self.heads, self.head_dim) {
            return Err(Error::Shape(format!(
                "cache holds {}x{} heads, got {h}x{d}",
                self.heads, self.head_dim
            )));
        }
        if self.len() + t > self.capacity {
            return Err(Error::Capacity(format!(
                "context of {} positions exceeds the limit of {}",
                self.len() + t,
                self.capacity
            )));
        }
        self.keys.extend_from_slice(k.data());
        self.values.extend_from_slice(v.data());
        Ok(())
    }
}

/// One [`LayerCache`] per decoder layer.
#[derive(Clone, Debug)]
pub struct KvCache {
    pub layers: Vec<LayerCache>,
}

impl KvCache {
    pub fn new(layers: usize, heads: usize, head_dim: usize, capacity: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|_| LayerCache::new(heads, head_dim, capacity))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, LayerCache::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reset(&mut self) {
        self.layers.iter_mut().for_each(LayerCache::reset);
    }
}

/// Core attention over `n_keys` flattened key/value rows. Query row `i`
/// sits at absolute position `offset + i`; with `causal` it sees keys
/// `0..=offset+i`, otherwise all keys.
fn attend(
    q: &Tensor,
    keys: &[f32],
    values: &[f32],
    n_keys: usize,
    offset: usize,
    causal: bool,
) -> Result<Tensor> {
    let (t, h, d) = dims3(q)?;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = vec![0.0f32; t * h * d];
    let mut scores = vec![0.0f32; n_keys];
    for i in 0..t {
        let limit = if causal {
            (offset + i + 1).min(n_keys)
        } else {
            n_keys
        };
        for head in 0..h {
            let qv = &q.data()[(i * h + head) * d..(i * h + head + 1) * d];
            let s = &mut scores[..limit];
            for (j, sj) in s.iter_mut().enumerate() {
                let kv = &keys[(j * h + head) * d..(j * h + head + 1) * d];
                *sj = dot(qv, kv) * scale;
            }
            softmax_in_place(s);
            let o = &mut out[(i * h + head) * d..(i * h + head + 1) * d];
            for (j, &p) in s.iter().enumerate() {
                let vv = &values[(j * h + head) * d..(j * h + head + 1) * d];
                for (ov, &x) in o.iter_mut().zip(vv) {
                    *ov += p * x;
                }
            }
        }
    }
    Tensor::new(vec![t, h, d], out)
}

/// Causal attention of `t` new positions over `cache ∪ current`. With a
/// cache the new keys/values are appended to it first.
pub fn causal_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cache: Option<&mut LayerCache>,
) -> Result<Tensor> {
    let qs = dims3(q)?;
    if dims3(k)? != qs || dims3(v)? != qs {
        return Err(Error::Shape(format!(
            "q/k/v shapes differ: {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    match cache {
        Some(c) => {
            let offset = c.len();
            c.append(k, v)?;
            attend(q, &c.keys, &c.values, c.len(), offset, true)
        }
        None => attend(q, k.data(), v.data(), qs.0, 0, true),
    }
}

/// Unmasked attention (vision tower).
pub fn bidirectional_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let qs = dims3(q)?;
    if dims3(k)? != qs || dims3(v)? != qs {
        return Err(Error::Shape("q/k/v shapes differ".into()));
    }
    attend(q, k.data(), v.data(), qs.0, 0, false)
}
