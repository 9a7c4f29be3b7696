//! Model construction from containers and from latent parameters.

use std::collections::BTreeMap;

use crate::blocks::LinearOp;
use crate::error::{Error, Result};
use crate::io::container::{Container, TensorData};
use crate::io::layout::{model_tensors, scale_name};
use crate::io::pmap::{Precision, PrecisionMap};
use crate::kernels::MAX_REDUCTION;
use crate::pipeline::{Model, ModelConfig, WeightSource};
use crate::quant::PackedTernaryMatrix;
use crate::tensor::Tensor;

fn found_precision(d: &TensorData) -> &'static str {
    match d {
        TensorData::T2 { .. } => "ternary",
        TensorData::F32(_) => "dense",
        TensorData::I8 { .. } => "i8",
    }
}

/// Checks that every tensor `config` needs is present with the right shape
/// and precision, and that ternary reductions fit the i32 accumulator.
pub fn validate_structure(c: &Container, config: &ModelConfig) -> Result<()> {
    for spec in model_tensors(config) {
        let data = c
            .get(&spec.name)
            .ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
        let ok = matches!(
            (spec.precision, data),
            (Precision::Ternary, TensorData::T2 { .. }) | (Precision::Dense, TensorData::F32(_))
        );
        if !ok {
            return Err(Error::Precision {
                name: spec.name,
                expected: spec.precision.to_string(),
                found: found_precision(data).to_string(),
            });
        }
        if data.shape() != spec.shape {
            return Err(Error::TensorShape {
                name: spec.name,
                expected: spec.shape,
                found: data.shape(),
            });
        }
        if spec.precision == Precision::Ternary {
            if c.get(&scale_name(&spec.name)).is_none() {
                return Err(Error::MissingTensor(scale_name(&spec.name)));
            }
            if spec.shape[1] > MAX_REDUCTION {
                return Err(Error::Capacity(format!(
                    "tensor {} has reduction length {} above the i32 accumulation bound {MAX_REDUCTION}",
                    spec.name, spec.shape[1]
                )));
            }
        }
    }
    Ok(())
}

struct ContainerSource<'a>(&'a Container);

impl WeightSource for ContainerSource<'_> {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        self.0.f32(name).cloned()
    }

    fn linear(&self, weight: &str, bias: Option<&str>) -> Result<LinearOp> {
        match self.0.get(weight) {
            Some(TensorData::T2 { .. }) => Ok(LinearOp::Ternary(self.0.ternary(weight)?)),
            _ => LinearOp::dense(
                self.tensor(weight)?,
                bias.map(|b| self.tensor(b)).transpose()?,
            ),
        }
    }
}

/// Builds the model described by the container's embedded config.
pub fn load_model(c: &Container) -> Result<Model> {
    let config = c
        .meta
        .config
        .as_ref()
        .ok_or_else(|| Error::Format("container meta carries no model config".into()))?;
    config.validate()?;
    validate_structure(c, config)?;
    Model::build(config, &ContainerSource(c))
}

/// Full-precision parameters keyed by tensor name; ternary layers are
/// re-quantized from them on every build.
pub struct LatentSource<'a> {
    pub params: &'a BTreeMap<String, Tensor>,
    pub pmap: &'a PrecisionMap,
}

impl LatentSource<'_> {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }
}

impl WeightSource for LatentSource<'_> {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        self.get(name).cloned()
    }

    fn linear(&self, weight: &str, bias: Option<&str>) -> Result<LinearOp> {
        let w = self.get(weight)?;
        match self.pmap.classify(weight) {
            Precision::Ternary => Ok(LinearOp::Ternary(PackedTernaryMatrix::quantize(w)?)),
            Precision::Dense => {
                LinearOp::dense(w.clone(), bias.map(|b| self.tensor(b)).transpose()?)
            }
        }
    }
}

/// All-f32 tensors of a container, keyed by name.
pub fn f32_params(c: &Container) -> Result<BTreeMap<String, Tensor>> {
    c.tensors
        .iter()
        .map(|(k, v)| match v {
            TensorData::F32(t) => Ok((k.clone(), t.clone())),
            other => Err(Error::Format(format!(
                "tensor {k} is {}, latent parameters must be f32",
                other.dtype()
            ))),
        })
        .collect()
}

pub fn load_latent_model(config: &ModelConfig, params: &BTreeMap<String, Tensor>) -> Result<Model> {
    Model::build(
        config,
        &LatentSource {
            params,
            pmap: &config.precision,
        },
    )
}
