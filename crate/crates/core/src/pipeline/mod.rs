pub mod config;
pub mod image;
pub mod model;
pub mod sampling;
pub mod tokenizer;

pub use config::{DecoderConfig, ModelConfig, ProjectorConfig, VisionConfig};
pub use image::{decode_ppm, preprocess_image, read_ppm, RgbImage};
pub use model::{
    assemble_context, generate_recompute, shape_chain, Context, Decoder, Model, Projector, Session,
    ShapeChain, VisionTower, WeightSource,
};
pub use sampling::{GenerationParams, Sampler};
pub use tokenizer::{detokenize, tokenize, tokenize_prompt, BOS, EOS, IMG};
