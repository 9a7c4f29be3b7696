//! Checkpoint quantization and synthetic initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::container::{Container, TensorData};
use crate::io::layout::{model_tensors, Role};
use crate::io::pmap::{Precision, PrecisionMap};
use crate::io::Meta;
use crate::pipeline::ModelConfig;
use crate::quant::PackedTernaryMatrix;
use crate::tensor::Tensor;

/// Storage before and after quantization of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSummary {
    pub name: String,
    pub shape: Vec<usize>,
    pub precision: Precision,
    pub f32_bytes: usize,
    /// Payload bytes as stored, including the `.scale` companion for t2.
    pub stored_bytes: usize,
}

impl TensorSummary {
    pub fn ratio(&self) -> f64 {
        self.f32_bytes as f64 / self.stored_bytes as f64
    }
}

/// Ternarizes every tensor the map marks ternary; copies the rest.
pub fn quantize_checkpoint(
    input: &Container,
    pmap: &PrecisionMap,
) -> Result<(Container, Vec<TensorSummary>)> {
    let mut meta = input.meta.clone();
    if let Some(cfg) = &mut meta.config {
        cfg.precision = pmap.clone();
    }
    let mut out = Container::new(meta);
    let mut summary = Vec::new();
    for (name, data) in &input.tensors {
        let t = match data {
            TensorData::F32(t) => t,
            other => {
                return Err(Error::Format(format!(
                    "input tensor {name} is {}, quantization needs an all-f32 checkpoint",
                    other.dtype()
                )))
            }
        };
        let precision = pmap.classify(name);
        let stored = match precision {
            Precision::Ternary => {
                if t.shape().len() != 2 {
                    return Err(Error::Format(format!(
                        "tensor {name} matches a ternary pattern but has shape {:?}, not 2-D",
                        t.shape()
                    )));
                }
                let p = PackedTernaryMatrix::quantize(t)?;
                out.insert_ternary(name, &p)?;
                p.bytes().len() + 4
            }
            Precision::Dense => {
                out.insert_f32(name.clone(), t.clone())?;
                4 * t.len()
            }
        };
        summary.push(TensorSummary {
            name: name.clone(),
            shape: t.shape().to_vec(),
            precision,
            f32_bytes: 4 * t.len(),
            stored_bytes: stored,
        });
    }
    Ok((out, summary))
}

/// Seeded f32 checkpoint for `config`: linears `N(0, 1/in)`, embeddings
/// `N(0, 1/d)`, gains one, biases and shifts zero.
pub fn init_checkpoint(config: &ModelConfig, seed: u64) -> Result<Container> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Container::new(Meta {
        config: Some(config.clone()),
        ..Meta::default()
    });
    for spec in model_tensors(config) {
        let fan_in = *spec.shape.last().expect("tensors have at least one dim");
        let t = match spec.role {
            Role::Gain => Tensor::from_fn(&spec.shape, |_| 1.0),
            Role::Bias | Role::Shift => Tensor::zeros(&spec.shape),
            Role::Linear | Role::Embedding => {
                let std = (1.0 / fan_in as f32).sqrt();
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                Tensor::from_fn(&spec.shape, |_| dist.sample(&mut rng))
            }
        };
        c.insert_f32(spec.name, t)?;
    }
    Ok(c)
}
