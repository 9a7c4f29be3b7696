//! Training forward and explicit backward through projector and decoder.
//!
//! The vision tower is frozen in every phase, so training starts from its
//! cached `[N, d]` features. Gradients are accumulated only into the names
//! present in the gradient store; that is how frozen groups are skipped.

use std::collections::BTreeMap;

use crate::blocks::attention::rope_rotate;
use crate::error::{Error, Result};
use crate::io::layout::llm_block;
use crate::pipeline::model::assemble_context;
use crate::pipeline::ModelConfig;
use crate::tensor::{activation, matmul, matmul_t, normalize, Activation, NormKind, Tensor};
use crate::train::config::LossMask;
use crate::train::ops::{
    activation_backward, attention_backward, attention_forward, bitlinear_train_backward,
    bitlinear_train_forward, linear_backward, linear_forward, masked_cross_entropy, rms_backward,
    AttentionTape, BitLinearTape,
};

pub type ParamStore = BTreeMap<String, Tensor>;
pub type GradStore = BTreeMap<String, Tensor>;

/// How decoder linears run during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearMode {
    /// Ternarized weights and int8 activations forward, straight-through
    /// backward.
    Ste,
    /// The continuous latent path: dense latent weights, no quantization.
    /// Differentiable, so finite differences can check the backward.
    Surrogate,
}

/// One training example: cached vision features and its token ids.
pub struct Example<'a> {
    pub features: &'a Tensor,
    pub tokens: &'a [u32],
    /// Leading text tokens (BOS included, IMG excluded) that form the prompt.
    pub prompt_len: usize,
}

fn param<'a>(params: &'a ParamStore, name: &str) -> Result<&'a Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::MissingTensor(name.to_string()))
}

fn accumulate(grads: &mut GradStore, name: &str, g: &Tensor) -> Result<()> {
    if let Some(acc) = grads.get_mut(name) {
        acc.add_assign(g)?;
    }
    Ok(())
}

/// Targets for each context row: the next row's token when it is text and
/// passes the mask.
pub fn next_token_targets(
    rows: &[Option<u32>],
    prompt_len: usize,
    mask: LossMask,
) -> Vec<Option<u32>> {
    let mut text_index = Vec::with_capacity(rows.len());
    let mut seen = 0;
    for r in rows {
        text_index.push(seen);
        if r.is_some() {
            seen += 1;
        }
    }
    (0..rows.len())
        .map(|i| {
            let next = *rows.get(i + 1)?;
            let tok = next?;
            match mask {
                LossMask::AllText => Some(tok),
                LossMask::ResponseOnly => (text_index[i + 1] >= prompt_len).then_some(tok),
            }
        })
        .collect()
}

enum LinTape {
    Ste(BitLinearTape),
    Dense { x: Tensor, w: Tensor },
}

fn lin_forward(w: &Tensor, x: &Tensor, mode: LinearMode) -> Result<(Tensor, LinTape)> {
    match mode {
        LinearMode::Ste => {
            let (y, tape) = bitlinear_train_forward(w, x)?;
            Ok((y, LinTape::Ste(tape)))
        }
        LinearMode::Surrogate => Ok((
            linear_forward(x, w, None)?,
            LinTape::Dense {
                x: x.clone(),
                w: w.clone(),
            },
        )),
    }
}

fn lin_backward(tape: &LinTape, g: &Tensor, want_dw: bool) -> Result<(Option<Tensor>, Tensor)> {
    match tape {
        LinTape::Ste(t) if want_dw => {
            let (dw, dx) = bitlinear_train_backward(t, g)?;
            Ok((Some(dw), dx))
        }
        LinTape::Ste(t) => Ok((
            None,
            linear_backward(&t.x_tilde, &t.w_eff, g, false, false)?.dx,
        )),
        LinTape::Dense { x, w } => {
            let gr = linear_backward(x, w, g, want_dw, false)?;
            Ok((gr.dw, gr.dx))
        }
    }
}

struct BlockTape {
    x0: Tensor,
    tq: LinTape,
    tk: LinTape,
    tv: LinTape,
    qr: Tensor,
    kr: Tensor,
    v: Tensor,
    attn: AttentionTape,
    to: LinTape,
    x1: Tensor,
    tg: LinTape,
    tu: LinTape,
    gate: Tensor,
    up: Tensor,
    td: LinTape,
}

const BLOCK_LINEARS: [&str; 7] = [
    "attn.wq.weight",
    "attn.wk.weight",
    "attn.wv.weight",
    "attn.wo.weight",
    "ffn.gate.weight",
    "ffn.up.weight",
    "ffn.down.weight",
];

fn block_forward(
    params: &ParamStore,
    cfg: &ModelConfig,
    i: usize,
    x0: Tensor,
    positions: &[usize],
    mode: LinearMode,
) -> Result<(Tensor, BlockTape)> {
    let dc = &cfg.decoder;
    let (t, _) = x0.dims2()?;
    let (h, hd) = (dc.heads, dc.head_dim);
    let p = |leaf: &str| param(params, &llm_block(i, leaf));
    let n1 = normalize(&x0, NormKind::Rms, p("attn_norm.weight")?, None, dc.eps)?;
    let (q, tq) = lin_forward(p("attn.wq.weight")?, &n1, mode)?;
    let (k, tk) = lin_forward(p("attn.wk.weight")?, &n1, mode)?;
    let (v, tv) = lin_forward(p("attn.wv.weight")?, &n1, mode)?;
    let qr = rope_rotate(&q.reshape(&[t, h, hd])?, positions, dc.rope_base, 1.0)?;
    let kr = rope_rotate(&k.reshape(&[t, h, hd])?, positions, dc.rope_base, 1.0)?;
    let v = v.reshape(&[t, h, hd])?;
    let (a, attn) = attention_forward(&qr, &kr, &v)?;
    let (o, to) = lin_forward(p("attn.wo.weight")?, &a.reshape(&[t, h * hd])?, mode)?;
    let x1 = x0.add(&o)?;
    let n2 = normalize(&x1, NormKind::Rms, p("ffn_norm.weight")?, None, dc.eps)?;
    let (gate, tg) = lin_forward(p("ffn.gate.weight")?, &n2, mode)?;
    let (up, tu) = lin_forward(p("ffn.up.weight")?, &n2, mode)?;
    let mut hidden = activation(&gate, Activation::Silu);
    for (hv, u) in hidden.data_mut().iter_mut().zip(up.data()) {
        *hv *= u;
    }
    let (down, td) = lin_forward(p("ffn.down.weight")?, &hidden, mode)?;
    let x2 = x1.add(&down)?;
    Ok((
        x2,
        BlockTape {
            x0,
            tq,
            tk,
            tv,
            qr,
            kr,
            v,
            attn,
            to,
            x1,
            tg,
            tu,
            gate,
            up,
            td,
        },
    ))
}

fn block_backward(
    params: &ParamStore,
    cfg: &ModelConfig,
    i: usize,
    tape: &BlockTape,
    dx2: &Tensor,
    positions: &[usize],
    grads: &mut GradStore,
) -> Result<Tensor> {
    let dc = &cfg.decoder;
    let (t, _) = dx2.dims2()?;
    let name = |leaf: &str| llm_block(i, leaf);
    let want: Vec<bool> = BLOCK_LINEARS
        .iter()
        .map(|l| grads.contains_key(&name(l)))
        .collect();
    let put = |grads: &mut GradStore, leaf: &str, g: Option<Tensor>| -> Result<()> {
        match g {
            Some(g) => accumulate(grads, &name(leaf), &g),
            None => Ok(()),
        }
    };

    let (dw, dhidden) = lin_backward(&tape.td, dx2, want[6])?;
    put(grads, "ffn.down.weight", dw)?;
    let mut dgate = Tensor::zeros(tape.gate.shape());
    let mut dup = Tensor::zeros(tape.up.shape());
    for j in 0..dhidden.len() {
        let g = tape.gate.data()[j];
        let s = Activation::Silu.apply_scalar(g);
        let dh = dhidden.data()[j];
        dup.data_mut()[j] = dh * s;
        dgate.data_mut()[j] = dh * tape.up.data()[j] * Activation::Silu.derivative(g);
    }
    let (dw, mut dn2) = lin_backward(&tape.tg, &dgate, want[4])?;
    put(grads, "ffn.gate.weight", dw)?;
    let (dw, dn2u) = lin_backward(&tape.tu, &dup, want[5])?;
    put(grads, "ffn.up.weight", dw)?;
    dn2.add_assign(&dn2u)?;
    let (dx1n, dg2) = rms_backward(
        &tape.x1,
        param(params, &name("ffn_norm.weight"))?,
        &dn2,
        dc.eps,
    )?;
    accumulate(grads, &name("ffn_norm.weight"), &dg2)?;
    let mut dx1 = dx2.add(&dx1n)?;

    let (dw, da) = lin_backward(&tape.to, &dx1, want[3])?;
    put(grads, "attn.wo.weight", dw)?;
    let (h, hd) = (dc.heads, dc.head_dim);
    let da = da.reshape(&[t, h, hd])?;
    let (dqr, dkr, dv) = attention_backward(&tape.qr, &tape.kr, &tape.v, &tape.attn, &da)?;
    let dq = rope_rotate(&dqr, positions, dc.rope_base, -1.0)?.reshape(&[t, h * hd])?;
    let dk = rope_rotate(&dkr, positions, dc.rope_base, -1.0)?.reshape(&[t, h * hd])?;
    let dv = dv.reshape(&[t, h * hd])?;
    let (dw, mut dn1) = lin_backward(&tape.tq, &dq, want[0])?;
    put(grads, "attn.wq.weight", dw)?;
    let (dw, d) = lin_backward(&tape.tk, &dk, want[1])?;
    put(grads, "attn.wk.weight", dw)?;
    dn1.add_assign(&d)?;
    let (dw, d) = lin_backward(&tape.tv, &dv, want[2])?;
    put(grads, "attn.wv.weight", dw)?;
    dn1.add_assign(&d)?;
    let (dx0n, dg1) = rms_backward(
        &tape.x0,
        param(params, &name("attn_norm.weight"))?,
        &dn1,
        dc.eps,
    )?;
    accumulate(grads, &name("attn_norm.weight"), &dg1)?;
    dx1.add_assign(&dx0n)?;
    Ok(dx1)
}

/// Mean next-token cross-entropy of one example. When `grads` is given, the
/// gradient of `grad_scale · loss` is added into every tensor it holds.
pub fn example_loss(
    params: &ParamStore,
    cfg: &ModelConfig,
    ex: &Example<'_>,
    mask: LossMask,
    mode: LinearMode,
    grad_scale: f32,
    grads: Option<&mut GradStore>,
) -> Result<f64> {
    let dc = &cfg.decoder;
    let (w1, b1) = (
        param(params, "projector.fc1.weight")?,
        param(params, "projector.fc1.bias")?,
    );
    let (w2, b2) = (
        param(params, "projector.fc2.weight")?,
        param(params, "projector.fc2.bias")?,
    );
    let embed = param(params, "llm.embed.weight")?;
    let final_norm = param(params, "llm.final_norm.weight")?;

    let h1 = linear_forward(ex.features, w1, Some(b1))?;
    let a = activation(&h1, Activation::GeluTanh);
    let proj = linear_forward(&a, w2, Some(b2))?;
    let ctx = assemble_context(ex.tokens, Some(&proj), embed)?;
    let t = ctx.len();
    if t > dc.max_context {
        return Err(Error::Capacity(format!(
            "training context of {t} positions exceeds the limit of {}",
            dc.max_context
        )));
    }
    let targets = next_token_targets(&ctx.tokens, ex.prompt_len, mask);
    let positions: Vec<usize> = (0..t).collect();

    let mut x = ctx.embeddings.clone();
    let mut tapes = Vec::with_capacity(dc.layers);
    for i in 0..dc.layers {
        let (next, tape) = block_forward(params, cfg, i, x, &positions, mode)?;
        tapes.push(tape);
        x = next;
    }
    let hf = normalize(&x, NormKind::Rms, final_norm, None, dc.eps)?;
    let rows: Vec<usize> = (0..t).filter(|&i| targets[i].is_some()).collect();
    let row_targets: Vec<Option<u32>> = rows.iter().map(|&i| targets[i]).collect();
    let d = dc.d;
    let mut gathered = Vec::with_capacity(rows.len() * d);
    for &r in &rows {
        gathered.extend_from_slice(hf.row(r));
    }
    let hf_r = Tensor::new(vec![rows.len(), d], gathered)?;
    let logits = matmul_t(&hf_r, embed)?;
    let (loss, dlogits) = masked_cross_entropy(&logits, &row_targets, grad_scale)?;

    let Some(grads) = grads else {
        return Ok(loss);
    };

    if grads.contains_key("llm.embed.weight") {
        accumulate(
            grads,
            "llm.embed.weight",
            &matmul(&dlogits.transpose()?, &hf_r)?,
        )?;
    }
    let dhf_r = matmul(&dlogits, embed)?;
    let mut dhf = Tensor::zeros(&[t, d]);
    for (k, &r) in rows.iter().enumerate() {
        dhf.row_mut(r).copy_from_slice(dhf_r.row(k));
    }
    let (mut dx, dgf) = rms_backward(&x, final_norm, &dhf, dc.eps)?;
    accumulate(grads, "llm.final_norm.weight", &dgf)?;
    for i in (0..dc.layers).rev() {
        dx = block_backward(params, cfg, i, &tapes[i], &dx, &positions, grads)?;
    }

    let span = ctx.image_span.clone();
    if let Some(de) = grads.get_mut("llm.embed.weight") {
        for (r, tok) in ctx.tokens.iter().enumerate() {
            if let Some(tok) = tok {
                let src = dx.row(r);
                for (a, &b) in de.row_mut(*tok as usize).iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
    }
    let projector_wanted = ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]
        .iter()
        .any(|n| grads.contains_key(&format!("projector.{n}")));
    if projector_wanted {
        let dproj = dx.slice_rows(span.start, span.end)?;
        let g2 = linear_backward(&a, w2, &dproj, true, true)?;
        accumulate(
            grads,
            "projector.fc2.weight",
            g2.dw.as_ref().expect("requested"),
        )?;
        accumulate(
            grads,
            "projector.fc2.bias",
            g2.db.as_ref().expect("requested"),
        )?;
        let dh1 = activation_backward(&h1, &g2.dx, Activation::GeluTanh)?;
        let g1 = linear_backward(ex.features, w1, &dh1, true, true)?;
        accumulate(
            grads,
            "projector.fc1.weight",
            g1.dw.as_ref().expect("requested"),
        )?;
        accumulate(
            grads,
            "projector.fc1.bias",
            g1.db.as_ref().expect("requested"),
        )?;
    }
    Ok(loss)
}

/// Zeroed gradient slots for every parameter whose group is trainable.
pub fn grad_store(params: &ParamStore, trainable: &[&str]) -> GradStore {
    params
        .iter()
        .filter(|(k, _)| trainable.contains(&crate::io::layout::group_of(k)))
        .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
        .collect()
}
