use crate::blocks::attention::bidirectional_attention;
use crate::blocks::LinearOp;
use crate::error::{Error, Result};
use crate::kernels::KernelPlan;
use crate::tensor::{activation, normalize, Activation, NormKind, Tensor};

/// One pre-norm vision transformer block (LayerNorm, dense linears,
/// quick-GELU MLP, no attention mask).
#[derive(Clone, Debug)]
pub struct EncoderBlockWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: LinearOp,
    pub wk: LinearOp,
    pub wv: LinearOp,
    pub wo: LinearOp,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub fc1: LinearOp,
    pub fc2: LinearOp,
    pub heads: usize,
    pub eps: f32,
}

impl EncoderBlockWeights {
    pub fn linears(&self) -> [&LinearOp; 6] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.fc1, &self.fc2]
    }
}

/// `x + Attn(LN(x))`, then `+ MLP(LN(·))`.
pub fn encoder_block_forward(x: &Tensor, w: &EncoderBlockWeights) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    if d % w.heads != 0 {
        return Err(Error::Config(format!(
            "encoder width {d} is not divisible by {} heads",
            w.heads
        )));
    }
    let plan = KernelPlan::default();
    let hd = d / w.heads;
    let a = normalize(x, NormKind::Layer, &w.ln1_gain, Some(&w.ln1_bias), w.eps)?;
    let q = w.wq.apply(&a, &plan)?.reshape(&[n, w.heads, hd])?;
    let k = w.wk.apply(&a, &plan)?.reshape(&[n, w.heads, hd])?;
    let v = w.wv.apply(&a, &plan)?.reshape(&[n, w.heads, hd])?;
    let attn = bidirectional_attention(&q, &k, &v)?.reshape(&[n, d])?;
    let mut h = x.add(&w.wo.apply(&attn, &plan)?)?;

    let b = normalize(&h, NormKind::Layer, &w.ln2_gain, Some(&w.ln2_bias), w.eps)?;
    let mid = activation(&w.fc1.apply(&b, &plan)?, Activation::QuickGelu);
    h.add_assign(&w.fc2.apply(&mid, &plan)?)?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(o: usize, k: usize, seed: usize, zero: bool) -> LinearOp {
        let w = Tensor::from_fn(&[o, k], |i| {
            if zero {
                0.0
            } else {
                (((i + seed) * 2_654_435_761) % 1000) as f32 / 5000.0 - 0.1
            }
        });
        LinearOp::dense(w, Some(Tensor::zeros(&[o]))).unwrap()
    }

    fn block(d: usize, zero_out: bool) -> EncoderBlockWeights {
        EncoderBlockWeights {
            ln1_gain: Tensor::from_fn(&[d], |_| 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: dense(d, d, 1, false),
            wk: dense(d, d, 2, false),
            wv: dense(d, d, 3, false),
            wo: dense(d, d, 4, zero_out),
            ln2_gain: Tensor::from_fn(&[d], |_| 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            fc1: dense(4 * d, d, 5, false),
            fc2: dense(d, 4 * d, 6, zero_out),
            heads: 2,
            eps: 1e-5,
        }
    }

    #[test]
    fn zero_output_projections_give_identity() {
        let w = block(8, true);
        let x = Tensor::from_fn(&[6, 8], |i| (i as f32 * 0.3).cos());
        assert_eq!(encoder_block_forward(&x, &w).unwrap(), x);
    }

    #[test]
    fn shape_preserved() {
        let w = block(8, false);
        for n in [1, 6, 256] {
            let x = Tensor::from_fn(&[n, 8], |i| (i as f32 * 0.01).sin());
            let y = encoder_block_forward(&x, &w).unwrap();
            assert_eq!(y.shape(), &[n, 8]);
            assert!(y.all_finite());
        }
    }
}
