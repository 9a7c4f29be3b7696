//! Forward/backward pairs for the differentiable pieces of training.

use crate::error::{Error, Result};
use crate::kernels::{ternary_matmul, KernelPlan};
use crate::quant::{dequantize_weights, quantize_activations_absmax, PackedTernaryMatrix};
use crate::tensor::{matmul, matmul_t, Activation, Tensor};

/// `x·Wᵀ + b` for `x: [m, K]`, `W: [O, K]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let mut y = matmul_t(x, w)?;
    if let Some(b) = b {
        let o = b.len();
        for row in y.data_mut().chunks_mut(o) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Ok(y)
}

pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

/// Gradients of [`linear_forward`] for upstream `g: [m, O]`.
pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    want_dw: bool,
    want_db: bool,
) -> Result<LinearGrads> {
    let (m, o) = g.dims2()?;
    let (xm, _) = x.dims2()?;
    if xm != m || w.shape()[0] != o {
        return Err(Error::Shape(format!(
            "linear backward: x {:?}, w {:?}, upstream {:?}",
            x.shape(),
            w.shape(),
            g.shape()
        )));
    }
    let dx = matmul(g, w)?;
    let dw = if want_dw {
        Some(matmul(&g.transpose()?, x)?)
    } else {
        None
    };
    let db = want_db.then(|| {
        let mut acc = vec![0.0f32; o];
        for row in g.data().chunks(o) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        Tensor::new(vec![o], acc).expect("length o")
    });
    Ok(LinearGrads { dx, dw, db })
}

/// What a BitLinear forward saves for its straight-through backward: the
/// dequantized activations `γ·q/127` and effective weights `β·T`.
pub struct BitLinearTape {
    pub x_tilde: Tensor,
    pub w_eff: Tensor,
}

/// Ternary forward through the integer kernel from latent weights.
pub fn bitlinear_train_forward(w_latent: &Tensor, x: &Tensor) -> Result<(Tensor, BitLinearTape)> {
    let p = PackedTernaryMatrix::quantize(w_latent)?;
    let q = quantize_activations_absmax(x)?;
    let y = ternary_matmul(&p, &q, &KernelPlan::default())?;
    Ok((
        y,
        BitLinearTape {
            x_tilde: q.dequantize(),
            w_eff: dequantize_weights(&p),
        },
    ))
}

/// Straight-through backward: both quantizers act as identity, so this is
/// the dense backward of a layer with weights `β·T` fed `x̃`.
pub fn bitlinear_train_backward(tape: &BitLinearTape, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let gr = linear_backward(&tape.x_tilde, &tape.w_eff, g, true, false)?;
    Ok((gr.dw.expect("requested"), gr.dx))
}

/// Forward plus straight-through gradients `(y, dL/dW_latent, dL/dx)`.
pub fn bitlinear_train_step(
    w_latent: &Tensor,
    x: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (y, tape) = bitlinear_train_forward(w_latent, x)?;
    let (dw, dx) = bitlinear_train_backward(&tape, upstream)?;
    Ok((y, dw, dx))
}

/// Elementwise activation gradient: `g · f'(pre)`.
pub fn activation_backward(pre: &Tensor, g: &Tensor, kind: Activation) -> Result<Tensor> {
    if pre.shape() != g.shape() {
        return Err(Error::Shape("activation backward shapes differ".into()));
    }
    let data = pre
        .data()
        .iter()
        .zip(g.data())
        .map(|(&x, &gv)| gv * kind.derivative(x))
        .collect();
    Tensor::new(pre.shape().to_vec(), data)
}

/// RMS-norm backward for `y = x·r·gain`, `r = (mean(x²) + eps)^-½`.
/// Returns `(dx, dgain)`.
pub fn rms_backward(x: &Tensor, gain: &Tensor, g: &Tensor, eps: f32) -> Result<(Tensor, Tensor)> {
    let (m, n) = x.dims2()?;
    if g.shape() != x.shape() || gain.len() != n {
        return Err(Error::Shape("rms backward shapes differ".into()));
    }
    let mut dx = vec![0.0f32; m * n];
    let mut dgain = vec![0.0f32; n];
    for i in 0..m {
        let xr = x.row(i);
        let gr = g.row(i);
        let ms = xr.iter().map(|v| v * v).sum::<f32>() / n as f32;
        let r = 1.0 / (ms + eps).sqrt();
        let mut dot = 0.0f32;
        for j in 0..n {
            let dn = gr[j] * gain.data()[j];
            dot += dn * xr[j];
            dgain[j] += gr[j] * xr[j] * r;
        }
        let c = r * r * dot / n as f32;
        for j in 0..n {
            let dn = gr[j] * gain.data()[j];
            dx[i * n + j] = r * (dn - xr[j] * c);
        }
    }
    Ok((Tensor::new(vec![m, n], dx)?, Tensor::new(vec![n], dgain)?))
}

/// Causal attention over `[t, h, hd]` that keeps its probabilities.
pub struct AttentionTape {
    pub probs: Vec<f32>,
}

fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Shape(format!(
            "expected 3-D tensor, got {:?}",
            x.shape()
        ))),
    }
}

pub fn attention_forward(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, AttentionTape)> {
    let (t, h, d) = dims3(q)?;
    let scale = 1.0 / (d as f32).sqrt();
    let mut probs = vec![0.0f32; h * t * t];
    let mut out = vec![0.0f32; t * h * d];
    let at = |_: &Tensor, i: usize, hh: usize| (i * h + hh) * d;
    for hh in 0..h {
        for i in 0..t {
            let qi = &q.data()[at(q, i, hh)..at(q, i, hh) + d];
            let p = &mut probs[(hh * t + i) * t..(hh * t + i) * t + i + 1];
            for (j, pj) in p.iter_mut().enumerate() {
                let kj = &k.data()[at(k, j, hh)..at(k, j, hh) + d];
                *pj = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            crate::tensor::softmax_in_place(p);
            let o = &mut out[at(q, i, hh)..at(q, i, hh) + d];
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v.data()[at(v, j, hh)..at(v, j, hh) + d];
                for (ov, &x) in o.iter_mut().zip(vj) {
                    *ov += pj * x;
                }
            }
        }
    }
    Ok((Tensor::new(vec![t, h, d], out)?, AttentionTape { probs }))
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    tape: &AttentionTape,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (t, h, d) = dims3(q)?;
    let scale = 1.0 / (d as f32).sqrt();
    let mut dq = vec![0.0f32; t * h * d];
    let mut dk = vec![0.0f32; t * h * d];
    let mut dv = vec![0.0f32; t * h * d];
    let off = |i: usize, hh: usize| (i * h + hh) * d;
    let mut dp = vec![0.0f32; t];
    for hh in 0..h {
        for i in 0..t {
            let p = &tape.probs[(hh * t + i) * t..(hh * t + i) * t + i + 1];
            let gi = &g.data()[off(i, hh)..off(i, hh) + d];
            let mut weighted = 0.0f32;
            for j in 0..=i {
                let vj = &v.data()[off(j, hh)..off(j, hh) + d];
                dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                weighted += p[j] * dp[j];
                let dvj = &mut dv[off(j, hh)..off(j, hh) + d];
                for (a, &b) in dvj.iter_mut().zip(gi) {
                    *a += p[j] * b;
                }
            }
            for j in 0..=i {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let (qo, ko) = (off(i, hh), off(j, hh));
                for c in 0..d {
                    dq[qo + c] += ds * k.data()[ko + c];
                    dk[ko + c] += ds * q.data()[qo + c];
                }
            }
        }
    }
    let shape = vec![t, h, d];
    Ok((
        Tensor::new(shape.clone(), dq)?,
        Tensor::new(shape.clone(), dk)?,
        Tensor::new(shape, dv)?,
    ))
}

/// Mean next-token cross-entropy over rows with a target, and its gradient
/// with respect to the logits scaled by `grad_scale`. Rows without a
/// target get zero gradient and never touch the loss.
pub fn masked_cross_entropy(
    logits: &Tensor,
    targets: &[Option<u32>],
    grad_scale: f32,
) -> Result<(f64, Tensor)> {
    let (m, v) = logits.dims2()?;
    if targets.len() != m {
        return Err(Error::Shape(format!(
            "{} targets for {m} logit rows",
            targets.len()
        )));
    }
    let count = targets.iter().flatten().count();
    if count == 0 {
        return Err(Error::Data("no target tokens to train on".into()));
    }
    let mut grad = vec![0.0f32; m * v];
    let mut total = 0.0f64;
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let t = t as usize;
        if t >= v {
            return Err(Error::Data(format!("target {t} outside vocab {v}")));
        }
        let row = logits.row(i);
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
        let sum: f64 = row.iter().map(|&z| (f64::from(z) - max).exp()).sum();
        total += max + sum.ln() - f64::from(row[t]);
        let scale = f64::from(grad_scale) / count as f64;
        for (j, &z) in row.iter().enumerate() {
            let p = (f64::from(z) - max).exp() / sum;
            let onehot = if j == t { 1.0 } else { 0.0 };
            grad[i * v + j] = ((p - onehot) * scale) as f32;
        }
    }
    Ok((total / count as f64, Tensor::new(vec![m, v], grad)?))
}
