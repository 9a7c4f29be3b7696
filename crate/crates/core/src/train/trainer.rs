use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::load_latent_model;
use crate::pipeline::ModelConfig;
use crate::tensor::Tensor;
use crate::train::adam::{adam_step, AdamParams, AdamState};
use crate::train::config::{cosine_warmup_lr, TrainConfig};
use crate::train::data::Sample;
use crate::train::graph::{example_loss, grad_store, Example, LinearMode, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<StepLog>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.history.first().map_or(f64::NAN, |s| s.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |s| s.loss)
    }
}

/// `step,lr,loss` rows, one per optimizer step.
pub fn history_csv(history: &[StepLog]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for s in history {
        out.push_str(&format!("{},{},{}\n", s.step, s.lr, s.loss));
    }
    out
}

/// Sample index for the `n`-th draw: a fresh seeded permutation per epoch.
struct Order {
    len: usize,
    seed: u64,
    epoch: usize,
    perm: Vec<usize>,
}

impl Order {
    fn new(len: usize, seed: u64) -> Self {
        Self {
            len,
            seed,
            epoch: usize::MAX,
            perm: Vec::new(),
        }
    }

    fn get(&mut self, n: usize) -> usize {
        let epoch = n / self.len;
        if epoch != self.epoch {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            self.perm = (0..self.len).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = epoch;
        }
        self.perm[n % self.len]
    }
}

fn clip_global_norm(grads: &mut crate::train::GradStore, max_norm: f32) {
    let norm: f64 = grads
        .values()
        .flat_map(|g| g.data())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm > f64::from(max_norm) {
        let s = (f64::from(max_norm) / norm) as f32;
        for g in grads.values_mut() {
            *g = g.scale(s);
        }
    }
}

/// Trains the unfrozen groups of `params` in place and returns the per-step
/// loss. Optimizer step `k` (1-based) runs at `lr(k)`, and each step sums
/// gradients over `accumulation × batch_size` samples, each weighted by the
/// reciprocal of that count.
pub fn train_toy(
    params: &mut ParamStore,
    config: &ModelConfig,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let groups = cfg.groups()?;
    let trainable: Vec<&str> = groups
        .iter()
        .filter(|g| !g.frozen)
        .map(|g| g.name.as_str())
        .collect();

    let vision = load_latent_model(config, params)?.vision;
    let features: Vec<Tensor> = data
        .iter()
        .map(|s| vision.forward(&s.image))
        .collect::<Result<_>>()?;

    let adam = AdamParams {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    };
    let template = grad_store(params, &trainable);
    let mut states: Vec<(String, AdamState)> = template
        .iter()
        .map(|(k, v)| (k.clone(), AdamState::new(v.len())))
        .collect();

    let warmup = cfg.warmup_steps();
    let per_step = cfg.effective_batch();
    let scale = 1.0 / per_step as f32;
    let mut order = Order::new(data.len(), cfg.seed);
    let mut drawn = 0;
    let mut history = Vec::with_capacity(cfg.total_steps);
    for step in 1..=cfg.total_steps {
        let mut grads = template.clone();
        let mut loss = 0.0;
        for _ in 0..per_step {
            let i = order.get(drawn);
            drawn += 1;
            let ex = Example {
                features: &features[i],
                tokens: &data[i].tokens,
                prompt_len: data[i].prompt_len,
            };
            loss += example_loss(
                params,
                config,
                &ex,
                cfg.loss_mask,
                LinearMode::Ste,
                scale,
                Some(&mut grads),
            )?;
        }
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        let lr = cosine_warmup_lr(step, warmup, cfg.total_steps, cfg.peak_lr);
        for (name, state) in &mut states {
            let p = params.get_mut(name).expect("grad names come from params");
            adam_step(p.data_mut(), grads[name.as_str()].data(), state, lr, &adam)?;
        }
        history.push(StepLog {
            step,
            lr,
            loss: loss / per_step as f64,
        });
    }
    Ok(TrainReport { history })
}
