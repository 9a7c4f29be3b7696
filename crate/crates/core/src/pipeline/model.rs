//! The three-part model: vision tower, projector, ternary decoder.

use std::ops::Range;

use crate::blocks::{
    decoder_block_forward, encoder_block_forward, patch_embed, DecoderBlockWeights,
    EncoderBlockWeights, KvCache, LinearOp,
};
use crate::error::{Error, Result};
use crate::io::layout::{llm_block, vision_block};
use crate::kernels::KernelPlan;
use crate::pipeline::config::ModelConfig;
use crate::pipeline::sampling::{GenerationParams, Sampler};
use crate::pipeline::tokenizer::{BOS, IMG};
use crate::tensor::{activation, matmul_t, normalize, Activation, NormKind, Tensor};

/// Where a model's weights come from. Implemented by loaded containers and
/// by the trainer's latent parameter store.
pub trait WeightSource {
    fn tensor(&self, name: &str) -> Result<Tensor>;
    /// A linear layer stored under `weight`, with an optional dense bias.
    fn linear(&self, weight: &str, bias: Option<&str>) -> Result<LinearOp>;
}

#[derive(Clone, Debug)]
pub struct VisionTower {
    pub patch_embed: LinearOp,
    pub pos_embed: Tensor,
    pub blocks: Vec<EncoderBlockWeights>,
    pub post_gain: Tensor,
    pub post_bias: Tensor,
    pub patch: usize,
    pub eps: f32,
}

impl VisionTower {
    /// `[3, H, W]` preprocessed image to `[N, d]` features.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut x = patch_embed(image, &self.patch_embed, &self.pos_embed, self.patch)?;
        for b in &self.blocks {
            x = encoder_block_forward(&x, b)?;
        }
        normalize(
            &x,
            NormKind::Layer,
            &self.post_gain,
            Some(&self.post_bias),
            self.eps,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Projector {
    pub fc1: LinearOp,
    pub fc2: LinearOp,
}

impl Projector {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, Some(Activation::GeluTanh))
    }

    /// `None` bypasses the nonlinearity (test hook).
    pub fn forward_with(&self, x: &Tensor, act: Option<Activation>) -> Result<Tensor> {
        let plan = KernelPlan::default();
        let mut h = self.fc1.apply(x, &plan)?;
        if let Some(a) = act {
            h = activation(&h, a);
        }
        self.fc2.apply(&h, &plan)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    /// `[vocab, d]`, also the output projection.
    pub embed: Tensor,
    pub blocks: Vec<DecoderBlockWeights>,
    pub final_norm: Tensor,
    pub heads: usize,
    pub head_dim: usize,
    pub max_context: usize,
    pub eps: f32,
}

impl Decoder {
    pub fn vocab(&self) -> usize {
        self.embed.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.embed.shape()[1]
    }

    pub fn embed_tokens(&self, ids: &[u32]) -> Result<Tensor> {
        let (v, d) = self.embed.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::Data(format!(
                    "token id {id} is outside the vocab of {v}"
                )));
            }
            out.extend_from_slice(self.embed.row(id as usize));
        }
        Tensor::new(vec![ids.len(), d], out)
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(
            self.blocks.len(),
            self.heads,
            self.head_dim,
            self.max_context,
        )
    }

    /// Final hidden states for `x: [t, d]`. Without a cache, `x` is the
    /// whole sequence starting at position 0.
    pub fn hidden(
        &self,
        x: &Tensor,
        cache: Option<&mut KvCache>,
        plan: &KernelPlan,
    ) -> Result<Tensor> {
        let (t, _) = x.dims2()?;
        let mut h = x.clone();
        match cache {
            Some(c) => {
                for (b, layer) in self.blocks.iter().zip(c.layers.iter_mut()) {
                    h = decoder_block_forward(&h, b, Some(layer), plan)?;
                }
            }
            None => {
                if t > self.max_context {
                    return Err(Error::Capacity(format!(
                        "context of {t} positions exceeds the limit of {}",
                        self.max_context
                    )));
                }
                for b in &self.blocks {
                    h = decoder_block_forward(&h, b, None, plan)?;
                }
            }
        }
        normalize(&h, NormKind::Rms, &self.final_norm, None, self.eps)
    }

    /// `[t, vocab]` logits through the tied embedding.
    pub fn logits(
        &self,
        x: &Tensor,
        cache: Option<&mut KvCache>,
        plan: &KernelPlan,
    ) -> Result<Tensor> {
        matmul_t(&self.hidden(x, cache, plan)?, &self.embed)
    }
}

/// Decoder input rows and the token each text row came from.
#[derive(Clone, Debug)]
pub struct Context {
    pub embeddings: Tensor,
    /// `None` for image rows.
    pub tokens: Vec<Option<u32>>,
    pub image_span: Range<usize>,
}

impl Context {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Embeds `ids` and splices the image rows in at the single `IMG`
/// placeholder, or directly after a leading `BOS` when there is none.
pub fn assemble_context(ids: &[u32], image: Option<&Tensor>, embed: &Tensor) -> Result<Context> {
    let (v, d) = embed.dims2()?;
    let placeholders = ids.iter().filter(|&&i| i == IMG).count();
    if placeholders > 1 {
        return Err(Error::Data(format!(
            "prompt has {placeholders} image placeholders, at most one is allowed"
        )));
    }
    let n = match image {
        Some(f) => {
            let (n, fd) = f.dims2()?;
            if fd != d {
                return Err(Error::Shape(format!(
                    "image features have width {fd}, decoder width is {d}"
                )));
            }
            n
        }
        None => 0,
    };
    let (split, skip) = match ids.iter().position(|&i| i == IMG) {
        Some(p) => (p, 1),
        None => (usize::from(ids.first() == Some(&BOS) && n > 0), 0),
    };
    let mut data = Vec::with_capacity((ids.len() + n) * d);
    let mut tokens = Vec::with_capacity(ids.len() + n);
    let push_ids =
        |range: &[u32], data: &mut Vec<f32>, tokens: &mut Vec<Option<u32>>| -> Result<()> {
            for &id in range {
                if id as usize >= v {
                    return Err(Error::Data(format!(
                        "token id {id} is outside the vocab of {v}"
                    )));
                }
                data.extend_from_slice(embed.row(id as usize));
                tokens.push(Some(id));
            }
            Ok(())
        };
    push_ids(&ids[..split], &mut data, &mut tokens)?;
    if let Some(f) = image {
        data.extend_from_slice(f.data());
        tokens.extend(std::iter::repeat_n(None, n));
    }
    push_ids(&ids[split + skip..], &mut data, &mut tokens)?;
    let rows = tokens.len();
    Ok(Context {
        embeddings: Tensor::new(vec![rows, d], data)?,
        tokens,
        image_span: split..split + n,
    })
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vision: VisionTower,
    pub projector: Projector,
    pub decoder: Decoder,
}

impl Model {
    pub fn build(config: &ModelConfig, src: &dyn WeightSource) -> Result<Self> {
        config.validate()?;
        let v = &config.vision;
        let vb = |i: usize, leaf: &str| vision_block(i, leaf);
        let mut blocks = Vec::with_capacity(v.layers);
        for i in 0..v.layers {
            let lin = |n: &str| {
                src.linear(
                    &vb(i, &format!("{n}.weight")),
                    Some(&vb(i, &format!("{n}.bias"))),
                )
            };
            blocks.push(EncoderBlockWeights {
                ln1_gain: src.tensor(&vb(i, "ln1.weight"))?,
                ln1_bias: src.tensor(&vb(i, "ln1.bias"))?,
                wq: lin("attn.wq")?,
                wk: lin("attn.wk")?,
                wv: lin("attn.wv")?,
                wo: lin("attn.wo")?,
                ln2_gain: src.tensor(&vb(i, "ln2.weight"))?,
                ln2_bias: src.tensor(&vb(i, "ln2.bias"))?,
                fc1: lin("mlp.fc1")?,
                fc2: lin("mlp.fc2")?,
                heads: v.heads,
                eps: v.eps,
            });
        }
        let vision = VisionTower {
            patch_embed: src
                .linear("vision.patch_embed.weight", Some("vision.patch_embed.bias"))?,
            pos_embed: src.tensor("vision.pos_embed")?,
            blocks,
            post_gain: src.tensor("vision.post_norm.weight")?,
            post_bias: src.tensor("vision.post_norm.bias")?,
            patch: v.patch,
            eps: v.eps,
        };
        let projector = Projector {
            fc1: src.linear("projector.fc1.weight", Some("projector.fc1.bias"))?,
            fc2: src.linear("projector.fc2.weight", Some("projector.fc2.bias"))?,
        };

        let dc = &config.decoder;
        let mut blocks = Vec::with_capacity(dc.layers);
        for i in 0..dc.layers {
            let lin = |n: &str| src.linear(&llm_block(i, &format!("{n}.weight")), None);
            blocks.push(DecoderBlockWeights {
                attn_norm: src.tensor(&llm_block(i, "attn_norm.weight"))?,
                wq: lin("attn.wq")?,
                wk: lin("attn.wk")?,
                wv: lin("attn.wv")?,
                wo: lin("attn.wo")?,
                ffn_norm: src.tensor(&llm_block(i, "ffn_norm.weight"))?,
                gate: lin("ffn.gate")?,
                up: lin("ffn.up")?,
                down: lin("ffn.down")?,
                heads: dc.heads,
                head_dim: dc.head_dim,
                eps: dc.eps,
                rope_base: dc.rope_base,
            });
        }
        let decoder = Decoder {
            embed: src.tensor("llm.embed.weight")?,
            blocks,
            final_norm: src.tensor("llm.final_norm.weight")?,
            heads: dc.heads,
            head_dim: dc.head_dim,
            max_context: dc.max_context,
            eps: dc.eps,
        };
        Ok(Self {
            config: config.clone(),
            vision,
            projector,
            decoder,
        })
    }

    /// Preprocessed image to projected `[N, d']` rows.
    pub fn image_features(&self, image: &Tensor) -> Result<Tensor> {
        self.projector.forward(&self.vision.forward(image)?)
    }

    pub fn context(&self, ids: &[u32], image: Option<&Tensor>) -> Result<Context> {
        let feats = image.map(|im| self.image_features(im)).transpose()?;
        assemble_context(ids, feats.as_ref(), &self.decoder.embed)
    }

    /// Element count over every instantiated weight.
    pub fn instantiated_elements(&self) -> usize {
        let v = &self.vision;
        let vision = v.patch_embed.param_count()
            + v.pos_embed.len()
            + v.post_gain.len()
            + v.post_bias.len()
            + v.blocks
                .iter()
                .map(|b| {
                    b.linears().iter().map(|l| l.param_count()).sum::<usize>()
                        + b.ln1_gain.len()
                        + b.ln1_bias.len()
                        + b.ln2_gain.len()
                        + b.ln2_bias.len()
                })
                .sum::<usize>();
        let proj = self.projector.fc1.param_count() + self.projector.fc2.param_count();
        vision + proj + self.decoder_elements()
    }

    pub fn decoder_elements(&self) -> usize {
        let d = &self.decoder;
        d.embed.len()
            + d.final_norm.len()
            + d.blocks
                .iter()
                .map(|b| {
                    b.linears().iter().map(|l| l.param_count()).sum::<usize>()
                        + b.attn_norm.len()
                        + b.ffn_norm.len()
                })
                .sum::<usize>()
    }
}

/// Tensor shapes along the image-to-logits path, derived from a config
/// alone so it can be checked at sizes too large to instantiate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeChain {
    pub image: [usize; 3],
    pub patches: [usize; 2],
    pub vision: [usize; 2],
    pub projected: [usize; 2],
    pub context: [usize; 2],
    pub logits: [usize; 2],
}

/// Shapes for a preprocessed image and `text_len` prompt ids that include
/// one image placeholder.
pub fn shape_chain(config: &ModelConfig, text_len: usize) -> Result<ShapeChain> {
    config.validate()?;
    let v = &config.vision;
    let s = v.image_size;
    let n = crate::blocks::patch_count(s, s, v.patch)?;
    if text_len == 0 {
        return Err(Error::Shape(
            "prompt must hold the image placeholder".into(),
        ));
    }
    let rows = text_len - 1 + n;
    let d = config.decoder.d;
    Ok(ShapeChain {
        image: [3, s, s],
        patches: [n, v.patch_dim()],
        vision: [n, v.d],
        projected: [n, config.projector.d_out],
        context: [rows, d],
        logits: [rows, config.decoder.vocab],
    })
}

/// One generation: the model, its KV cache, and the tokens produced so far.
/// Every generated token is fed back, so the cache always holds
/// `prompt + generated` positions.
pub struct Session<'m> {
    pub model: &'m Model,
    pub cache: KvCache,
    pub generated: Vec<u32>,
    pub plan: KernelPlan,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, plan: KernelPlan) -> Self {
        Self {
            model,
            cache: model.decoder.new_cache(),
            generated: Vec::new(),
            plan,
        }
    }

    /// Runs new rows through the decoder and returns the last row's logits.
    fn feed(&mut self, x: &Tensor) -> Result<Vec<f32>> {
        let logits = self
            .model
            .decoder
            .logits(x, Some(&mut self.cache), &self.plan)?;
        let (t, _) = logits.dims2()?;
        Ok(logits.row(t - 1).to_vec())
    }

    pub fn generate(&mut self, context: &Context, params: &GenerationParams) -> Result<Vec<u32>> {
        self.generate_with(context, params, |_, _| {})
    }

    /// As [`Session::generate`], calling `observe(step, logits)` with the
    /// logits each token is sampled from.
    pub fn generate_with(
        &mut self,
        context: &Context,
        params: &GenerationParams,
        mut observe: impl FnMut(usize, &[f32]),
    ) -> Result<Vec<u32>> {
        params.validate()?;
        if context.is_empty() {
            return Err(Error::Data("cannot generate from an empty context".into()));
        }
        self.cache.reset();
        self.generated.clear();
        let mut sampler = Sampler::new(params);
        let mut logits = self.feed(&context.embeddings)?;
        for step in 0..params.max_new_tokens {
            observe(step, &logits);
            let tok = sampler.next(&logits);
            self.generated.push(tok);
            let x = self.model.decoder.embed_tokens(&[tok])?;
            let next = self.feed(&x)?;
            if params.stop == Some(tok) {
                break;
            }
            logits = next;
        }
        Ok(self.generated.clone())
    }
}

/// Reference generation that recomputes the whole sequence at every step.
pub fn generate_recompute(
    model: &Model,
    context: &Context,
    params: &GenerationParams,
    mut observe: impl FnMut(usize, &[f32]),
) -> Result<Vec<u32>> {
    params.validate()?;
    let plan = KernelPlan::default();
    let mut sampler = Sampler::new(params);
    let mut out = Vec::new();
    let mut seq = context.embeddings.clone();
    for step in 0..params.max_new_tokens {
        let logits = model.decoder.logits(&seq, None, &plan)?;
        let (t, _) = logits.dims2()?;
        let last = logits.row(t - 1);
        observe(step, last);
        let tok = sampler.next(last);
        out.push(tok);
        if params.stop == Some(tok) {
            break;
        }
        seq = Tensor::concat_rows(&[&seq, &model.decoder.embed_tokens(&[tok])?])?;
    }
    Ok(out)
}
