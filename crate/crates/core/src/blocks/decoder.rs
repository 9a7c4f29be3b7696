use crate::blocks::attention::{causal_attention, rope_apply, LayerCache};
use crate::blocks::LinearOp;
use crate::error::{Error, Result};
use crate::kernels::KernelPlan;
use crate::tensor::{normalize, sigmoid, NormKind, Tensor};

/// One pre-norm decoder block: RMSNorm, ternary q/k/v/o with rotary
/// positions, then a ternary SwiGLU FFN.
#[derive(Clone, Debug)]
pub struct DecoderBlockWeights {
    pub attn_norm: Tensor,
    pub wq: LinearOp,
    pub wk: LinearOp,
    pub wv: LinearOp,
    pub wo: LinearOp,
    pub ffn_norm: Tensor,
    pub gate: LinearOp,
    pub up: LinearOp,
    pub down: LinearOp,
    pub heads: usize,
    pub head_dim: usize,
    pub eps: f32,
    pub rope_base: f32,
}

impl DecoderBlockWeights {
    pub fn linears(&self) -> [&LinearOp; 7] {
        [
            &self.wq, &self.wk, &self.wv, &self.wo, &self.gate, &self.up, &self.down,
        ]
    }

    /// The same block with every ternary op replaced by its `β·T` dense twin.
    pub fn dense_twin(&self) -> Self {
        Self {
            wq: self.wq.dense_twin(),
            wk: self.wk.dense_twin(),
            wv: self.wv.dense_twin(),
            wo: self.wo.dense_twin(),
            gate: self.gate.dense_twin(),
            up: self.up.dense_twin(),
            down: self.down.dense_twin(),
            ..self.clone()
        }
    }
}

/// Runs `t` new positions through the block. With a cache, positions start
/// at the cache length and the new keys/values are appended.
pub fn decoder_block_forward(
    x: &Tensor,
    w: &DecoderBlockWeights,
    cache: Option<&mut LayerCache>,
    plan: &KernelPlan,
) -> Result<Tensor> {
    let (t, d) = x.dims2()?;
    let (h, hd) = (w.heads, w.head_dim);
    if w.attn_norm.len() != d {
        return Err(Error::Shape(format!(
            "decoder block width {} does not match input width {d}",
            w.attn_norm.len()
        )));
    }
    let start = cache.as_ref().map_or(0, |c| c.len());
    let positions: Vec<usize> = (start..start + t).collect();

    let a = normalize(x, NormKind::Rms, &w.attn_norm, None, w.eps)?;
    let q = w.wq.apply(&a, plan)?.reshape(&[t, h, hd])?;
    let k = w.wk.apply(&a, plan)?.reshape(&[t, h, hd])?;
    let v = w.wv.apply(&a, plan)?.reshape(&[t, h, hd])?;
    let q = rope_apply(&q, &positions, w.rope_base)?;
    let k = rope_apply(&k, &positions, w.rope_base)?;
    let attn = causal_attention(&q, &k, &v, cache)?.reshape(&[t, h * hd])?;
    let mut out = x.add(&w.wo.apply(&attn, plan)?)?;

    let b = normalize(&out, NormKind::Rms, &w.ffn_norm, None, w.eps)?;
    let gate = w.gate.apply(&b, plan)?;
    let mut hidden = w.up.apply(&b, plan)?;
    for (u, &g) in hidden.data_mut().iter_mut().zip(gate.data()) {
        *u *= g * sigmoid(g);
    }
    out.add_assign(&w.down.apply(&hidden, plan)?)?;
    Ok(out)
}
