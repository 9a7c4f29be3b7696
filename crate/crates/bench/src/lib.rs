//! Deterministic fixtures shared by the benchmarks.

use ternmm::io::{init_checkpoint, load_model, quantize_checkpoint};
use ternmm::{Model, ModelConfig, PackedTernaryMatrix, PrecisionMap, Tensor};

/// Weight shapes of one reference decoder block: attention projections,
/// the FFN up/gate projection and the FFN down projection.
pub const DECODER_SHAPES: [(usize, usize); 3] = [(2048, 2048), (8192, 2048), (2048, 8192)];

pub fn ternary_weight(o: usize, k: usize, seed: u64) -> PackedTernaryMatrix {
    PackedTernaryMatrix::quantize(&Tensor::random_uniform(&[o, k], -1.0, 1.0, seed))
        .expect("non-empty weight")
}

pub fn activations(m: usize, k: usize, seed: u64) -> Tensor {
    Tensor::random_uniform(&[m, k], -1.0, 1.0, seed)
}

/// Seeded toy model, quantized with the default precision map.
pub fn toy_model() -> Model {
    let f32_ckpt = init_checkpoint(&ModelConfig::toy(), 0).expect("toy init");
    let (q, _) = quantize_checkpoint(&f32_ckpt, &PrecisionMap::default()).expect("quantize");
    load_model(&q).expect("load toy model")
}
