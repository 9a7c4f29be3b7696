use crate::error::{Error, Result};
use crate::kernels::{bitlinear_forward, KernelPlan};
use crate::quant::{dequantize_weights, PackedTernaryMatrix};
use crate::tensor::{matmul_t, Tensor};

/// A linear layer realized either densely (vision tower, projector) or as a
/// BitLinear over packed ternary weights (decoder).
#[derive(Clone, Debug)]
pub enum LinearOp {
    Dense {
        /// `[out, in]`
        weight: Tensor,
        bias: Option<Tensor>,
    },
    Ternary(PackedTernaryMatrix),
}

impl LinearOp {
    pub fn dense(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let (o, _) = weight.dims2()?;
        if let Some(b) = &bias {
            if b.len() != o {
                return Err(Error::Shape(format!(
                    "bias has {} entries for {o} outputs",
                    b.len()
                )));
            }
        }
        Ok(LinearOp::Dense { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        match self {
            LinearOp::Dense { weight, .. } => weight.shape()[1],
            LinearOp::Ternary(p) => p.cols(),
        }
    }

    pub fn out_features(&self) -> usize {
        match self {
            LinearOp::Dense { weight, .. } => weight.shape()[0],
            LinearOp::Ternary(p) => p.rows(),
        }
    }

    pub fn is_ternary(&self) -> bool {
        matches!(self, LinearOp::Ternary(_))
    }

    /// `x: [m, in] → [m, out]`.
    pub fn apply(&self, x: &Tensor, plan: &KernelPlan) -> Result<Tensor> {
        let (_, k) = x.dims2()?;
        if k != self.in_features() {
            return Err(Error::Shape(format!(
                "linear expects {} input features, got {k}",
                self.in_features()
            )));
        }
        match self {
            LinearOp::Dense { weight, bias } => {
                let mut y = matmul_t(x, weight)?;
                if let Some(b) = bias {
                    let o = b.len();
                    for row in y.data_mut().chunks_mut(o) {
                        for (v, bv) in row.iter_mut().zip(b.data()) {
                            *v += bv;
                        }
                    }
                }
                Ok(y)
            }
            LinearOp::Ternary(p) => bitlinear_forward(p, x, plan),
        }
    }

    /// The dense layer with weights `β·T`; identity for dense ops.
    pub fn dense_twin(&self) -> LinearOp {
        match self {
            LinearOp::Ternary(p) => LinearOp::Dense {
                weight: dequantize_weights(p),
                bias: None,
            },
            dense => dense.clone(),
        }
    }

    /// Element count of the parameters this op carries.
    pub fn param_count(&self) -> usize {
        match self {
            LinearOp::Dense { weight, bias } => weight.len() + bias.as_ref().map_or(0, Tensor::len),
            LinearOp::Ternary(p) => p.rows() * p.cols(),
        }
    }
}
