//! Closed-form parameter accounting (tied embeddings, no LM head).

use serde::Serialize;

use crate::pipeline::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub vision: usize,
    pub projector: usize,
    pub decoder: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.vision + self.projector + self.decoder
    }
}

pub fn param_count(config: &ModelConfig) -> ParamCounts {
    let v = &config.vision;
    let (d, m) = (v.d, v.mlp_hidden);
    let vision_block = 4 * d + 4 * (d * d + d) + (m * d + m) + (d * m + d);
    let vision = d * v.patch_dim() + d + v.num_patches() * d + v.layers * vision_block + 2 * d;

    let p = &config.projector;
    let projector = p.hidden * p.d_in + p.hidden + p.d_out * p.hidden + p.d_out;

    let dc = &config.decoder;
    let aw = dc.attn_width();
    let decoder_block = 2 * dc.d + 4 * aw * dc.d + 3 * dc.ffn_hidden * dc.d;
    let decoder = dc.vocab * dc.d + dc.layers * decoder_block + dc.d;

    ParamCounts {
        vision,
        projector,
        decoder,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_decoder_by_hand() {
        let mut c = ModelConfig::toy();
        c.decoder.d = 8;
        c.decoder.layers = 1;
        c.decoder.vocab = 260;
        c.decoder.heads = 2;
        c.decoder.head_dim = 4;
        c.decoder.ffn_hidden = 16;
        assert_eq!(param_count(&c).decoder, 2744);
        c.decoder.layers = 0;
        assert_eq!(param_count(&c).decoder, 260 * 8 + 8);
    }
}
