use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::pmap::PrecisionMap;
use crate::pipeline::tokenizer::SPECIAL_TOKENS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisionConfig {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub patch: usize,
    pub image_size: usize,
    pub eps: f32,
}

impl VisionConfig {
    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch * self.patch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub vocab: usize,
    pub max_context: usize,
    pub rope_base: f32,
    pub eps: f32,
}

impl DecoderConfig {
    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Every architectural hyperparameter of the three-part model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vision: VisionConfig,
    pub projector: ProjectorConfig,
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub precision: PrecisionMap,
}

impl ModelConfig {
    /// Reference dimensions: ViT-L/14 tower (24 × 1024), 1024 → 2048 → 2048
    /// GELU projector, 16-layer 2048-wide ternary decoder.
    pub fn full() -> Self {
        Self {
            vision: VisionConfig {
                layers: 24,
                d: 1024,
                heads: 16,
                mlp_hidden: 4096,
                patch: 14,
                image_size: 224,
                eps: 1e-5,
            },
            projector: ProjectorConfig {
                d_in: 1024,
                hidden: 2048,
                d_out: 2048,
            },
            decoder: DecoderConfig {
                layers: 16,
                d: 2048,
                heads: 16,
                head_dim: 128,
                ffn_hidden: 8192,
                vocab: 50_304,
                max_context: 2048,
                rope_base: 10_000.0,
                eps: 1e-5,
            },
            precision: PrecisionMap::default(),
        }
    }

    /// Desk-scale model with the full-size image geometry (224², 14² patches).
    pub fn toy() -> Self {
        Self {
            vision: VisionConfig {
                layers: 2,
                d: 32,
                heads: 2,
                mlp_hidden: 64,
                patch: 14,
                image_size: 224,
                eps: 1e-5,
            },
            projector: ProjectorConfig {
                d_in: 32,
                hidden: 64,
                d_out: 64,
            },
            decoder: DecoderConfig {
                layers: 2,
                d: 64,
                heads: 4,
                head_dim: 16,
                ffn_hidden: 256,
                vocab: 260,
                max_context: 512,
                rope_base: 10_000.0,
                eps: 1e-5,
            },
            precision: PrecisionMap::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.vision;
        let p = &self.projector;
        let d = &self.decoder;
        let fail = |msg: String| Err(Error::Config(msg));
        if v.patch == 0 || !v.image_size.is_multiple_of(v.patch) {
            return fail(format!(
                "image size {} is not a multiple of patch size {}",
                v.image_size, v.patch
            ));
        }
        if v.heads == 0 || !v.d.is_multiple_of(v.heads) {
            return fail(format!(
                "vision width {} not divisible by {} heads",
                v.d, v.heads
            ));
        }
        if p.d_in != v.d {
            return fail(format!(
                "projector input {} != vision width {}",
                p.d_in, v.d
            ));
        }
        if p.d_out != d.d {
            return fail(format!(
                "projector output {} != decoder width {}",
                p.d_out, d.d
            ));
        }
        if d.heads == 0 || d.head_dim == 0 || !d.head_dim.is_multiple_of(2) {
            return fail(format!(
                "decoder needs >= 1 head and an even head_dim, got {}x{}",
                d.heads, d.head_dim
            ));
        }
        if d.vocab < SPECIAL_TOKENS {
            return fail(format!(
                "vocab {} is smaller than the {SPECIAL_TOKENS} byte and special ids",
                d.vocab
            ));
        }
        if d.max_context == 0 {
            return fail("max_context must be positive".into());
        }
        Ok(())
    }
}
