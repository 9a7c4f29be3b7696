use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which text positions carry next-token targets. Image rows never do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    /// Every text position.
    AllText,
    /// Only positions after the prompt (instruction-style).
    ResponseOnly,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    /// Tensor-name prefix group: `vision`, `projector` or `llm`.
    pub name: String,
    pub frozen: bool,
}

pub const GROUPS: [&str; 3] = ["vision", "projector", "llm"];

/// Freeze schedule: phase 1 trains only the projector, phase 2 the
/// projector and the decoder. The vision tower is always frozen.
pub fn phase_groups(phase: u8) -> Result<Vec<ParamGroup>> {
    let trainable: &[&str] = match phase {
        1 => &["projector"],
        2 => &["projector", "llm"],
        p => return Err(Error::Phase(format!("phase must be 1 or 2, got {p}"))),
    };
    Ok(GROUPS
        .iter()
        .map(|g| ParamGroup {
            name: g.to_string(),
            frozen: !trainable.contains(g),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phase: u8,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub accumulation: usize,
    pub batch_size: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub weight_decay: f32,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f32>,
    pub loss_mask: LossMask,
    /// Seeds the per-epoch sample order.
    pub seed: u64,
    /// Optional explicit groups; must agree with the phase schedule.
    pub groups: Option<Vec<ParamGroup>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::phase1()
    }
}

impl TrainConfig {
    /// Projector pretraining at toy scale (batch 4).
    pub fn phase1() -> Self {
        Self {
            phase: 1,
            peak_lr: 1e-3,
            warmup_ratio: 0.03,
            total_steps: 100,
            accumulation: 4,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
            loss_mask: LossMask::AllText,
            seed: 0,
            groups: None,
        }
    }

    /// Projector + decoder fine-tuning at toy scale (batch 4).
    pub fn phase2() -> Self {
        Self {
            phase: 2,
            peak_lr: 2e-5,
            accumulation: 2,
            loss_mask: LossMask::ResponseOnly,
            ..Self::phase1()
        }
    }

    pub fn reference_phase1() -> Self {
        Self {
            batch_size: 32,
            ..Self::phase1()
        }
    }

    pub fn reference_phase2() -> Self {
        Self {
            batch_size: 8,
            ..Self::phase2()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "phase1" => Ok(Self::phase1()),
            "phase2" => Ok(Self::phase2()),
            "reference-phase1" => Ok(Self::reference_phase1()),
            "reference-phase2" => Ok(Self::reference_phase2()),
            other => Err(Error::Config(format!("unknown training preset {other:?}"))),
        }
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).round() as usize
    }

    /// Samples consumed per optimizer step.
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.accumulation
    }

    /// The parameter groups this run trains, checked against the phase.
    pub fn groups(&self) -> Result<Vec<ParamGroup>> {
        let expected = phase_groups(self.phase)?;
        if let Some(given) = &self.groups {
            for g in given {
                let want = expected
                    .iter()
                    .find(|e| e.name == g.name)
                    .ok_or_else(|| Error::Phase(format!("unknown parameter group {:?}", g.name)))?;
                if want.frozen != g.frozen {
                    return Err(Error::Phase(format!(
                        "phase {} requires group {} to be {}",
                        self.phase,
                        g.name,
                        if want.frozen { "frozen" } else { "trainable" }
                    )));
                }
            }
        }
        Ok(expected)
    }

    pub fn validate(&self) -> Result<()> {
        self.groups()?;
        if self.accumulation == 0 || self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::Config(
                "accumulation, batch_size and total_steps must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!(
                "warmup ratio {} outside [0, 1)",
                self.warmup_ratio
            )));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("invalid peak lr {}", self.peak_lr)));
        }
        Ok(())
    }
}

/// Linear warmup to `peak` over `warmup` steps, then cosine decay to zero
/// at `total`.
pub fn cosine_warmup_lr(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return 0.0;
    }
    let progress = (step.min(total) - warmup) as f64 / (total - warmup) as f64;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
