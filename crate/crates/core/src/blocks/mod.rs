//! Transformer building blocks: dense and ternary linears, attention with
//! rotary positions and a KV cache, patch embedding, and the encoder and
//! decoder blocks.

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod linear;
pub mod patch;

pub use attention::{causal_attention, rope_apply, KvCache, LayerCache};
pub use decoder::{decoder_block_forward, DecoderBlockWeights};
pub use encoder::{encoder_block_forward, EncoderBlockWeights};
pub use linear::LinearOp;
pub use patch::{extract_patches, patch_count, patch_embed};
