//! Tensor names and shapes of a model checkpoint.

use crate::io::pmap::Precision;
use crate::pipeline::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// `[out, in]` linear weight.
    Linear,
    Bias,
    /// Normalization gain (initialized to one).
    Gain,
    /// LayerNorm shift.
    Shift,
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    /// The precision the loader requires for this tensor.
    pub precision: Precision,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub const SCALE_SUFFIX: &str = ".scale";

pub fn scale_name(name: &str) -> String {
    format!("{name}{SCALE_SUFFIX}")
}

pub fn vision_block(i: usize, leaf: &str) -> String {
    format!("vision.blocks.{i}.{leaf}")
}

pub fn llm_block(i: usize, leaf: &str) -> String {
    format!("llm.blocks.{i}.{leaf}")
}

/// Every tensor a model with `config` consists of, in construction order.
pub fn model_tensors(config: &ModelConfig) -> Vec<TensorSpec> {
    let v = &config.vision;
    let p = &config.projector;
    let dc = &config.decoder;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, role: Role, precision: Precision| {
        out.push(TensorSpec {
            name,
            shape,
            role,
            precision,
        })
    };
    let dense = Precision::Dense;

    push(
        "vision.patch_embed.weight".into(),
        vec![v.d, v.patch_dim()],
        Role::Linear,
        dense,
    );
    push(
        "vision.patch_embed.bias".into(),
        vec![v.d],
        Role::Bias,
        dense,
    );
    push(
        "vision.pos_embed".into(),
        vec![v.num_patches(), v.d],
        Role::Embedding,
        dense,
    );
    for i in 0..v.layers {
        push(vision_block(i, "ln1.weight"), vec![v.d], Role::Gain, dense);
        push(vision_block(i, "ln1.bias"), vec![v.d], Role::Shift, dense);
        for w in ["wq", "wk", "wv", "wo"] {
            push(
                vision_block(i, &format!("attn.{w}.weight")),
                vec![v.d, v.d],
                Role::Linear,
                dense,
            );
            push(
                vision_block(i, &format!("attn.{w}.bias")),
                vec![v.d],
                Role::Bias,
                dense,
            );
        }
        push(vision_block(i, "ln2.weight"), vec![v.d], Role::Gain, dense);
        push(vision_block(i, "ln2.bias"), vec![v.d], Role::Shift, dense);
        push(
            vision_block(i, "mlp.fc1.weight"),
            vec![v.mlp_hidden, v.d],
            Role::Linear,
            dense,
        );
        push(
            vision_block(i, "mlp.fc1.bias"),
            vec![v.mlp_hidden],
            Role::Bias,
            dense,
        );
        push(
            vision_block(i, "mlp.fc2.weight"),
            vec![v.d, v.mlp_hidden],
            Role::Linear,
            dense,
        );
        push(
            vision_block(i, "mlp.fc2.bias"),
            vec![v.d],
            Role::Bias,
            dense,
        );
    }
    push(
        "vision.post_norm.weight".into(),
        vec![v.d],
        Role::Gain,
        dense,
    );
    push(
        "vision.post_norm.bias".into(),
        vec![v.d],
        Role::Shift,
        dense,
    );

    push(
        "projector.fc1.weight".into(),
        vec![p.hidden, p.d_in],
        Role::Linear,
        dense,
    );
    push(
        "projector.fc1.bias".into(),
        vec![p.hidden],
        Role::Bias,
        dense,
    );
    push(
        "projector.fc2.weight".into(),
        vec![p.d_out, p.hidden],
        Role::Linear,
        dense,
    );
    push(
        "projector.fc2.bias".into(),
        vec![p.d_out],
        Role::Bias,
        dense,
    );

    let t = Precision::Ternary;
    let aw = dc.attn_width();
    push(
        "llm.embed.weight".into(),
        vec![dc.vocab, dc.d],
        Role::Embedding,
        dense,
    );
    for i in 0..dc.layers {
        push(
            llm_block(i, "attn_norm.weight"),
            vec![dc.d],
            Role::Gain,
            dense,
        );
        push(
            llm_block(i, "attn.wq.weight"),
            vec![aw, dc.d],
            Role::Linear,
            t,
        );
        push(
            llm_block(i, "attn.wk.weight"),
            vec![aw, dc.d],
            Role::Linear,
            t,
        );
        push(
            llm_block(i, "attn.wv.weight"),
            vec![aw, dc.d],
            Role::Linear,
            t,
        );
        push(
            llm_block(i, "attn.wo.weight"),
            vec![dc.d, aw],
            Role::Linear,
            t,
        );
        push(
            llm_block(i, "ffn_norm.weight"),
            vec![dc.d],
            Role::Gain,
            dense,
        );
        push(
            llm_block(i, "ffn.gate.weight"),
            vec![dc.ffn_hidden, dc.d],
            Role::Linear,
            t,
        );
        push(
            llm_block(i, "ffn.up.weight"),
            vec![dc.ffn_hidden, dc.d],
            Role::Linear,
            t,
        );
        push(
            llm_block(i, "ffn.down.weight"),
            vec![dc.d, dc.ffn_hidden],
            Role::Linear,
            t,
        );
    }
    push(
        "llm.final_norm.weight".into(),
        vec![dc.d],
        Role::Gain,
        dense,
    );
    out
}

/// Parameter group a tensor belongs to, by name prefix.
pub fn group_of(name: &str) -> &'static str {
    if name.starts_with("vision.") {
        "vision"
    } else if name.starts_with("projector.") {
        "projector"
    } else {
        "llm"
    }
}
