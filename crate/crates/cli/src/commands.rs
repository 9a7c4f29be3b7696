use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;
use ternmm::error::Category;
use ternmm::io::{
    f32_params, init_checkpoint, load_container, load_model, param_count, quantize_checkpoint,
    save_container, write_atomic, Container, Meta, Precision, TensorData,
};
use ternmm::kernels::{bench_bitlinear, bench_dense_reference, Throughput};
use ternmm::pipeline::{preprocess_image, read_ppm, tokenize_prompt, Session};
use ternmm::quant::dequantize_weights;
use ternmm::train::data::dataset_container;
use ternmm::train::{
    history_csv, load_dataset, synthetic_dataset, train_toy as run_training, TrainConfig,
};
use ternmm::{
    bitlinear_forward, dense_reference_forward, Error, GenerationParams, KernelPlan, ModelConfig,
    PackedTernaryMatrix, PrecisionMap, Tensor,
};

/// A failed command: its diagnostic category and one-line message.
pub struct Failure {
    category: Category,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            category: Category::Input,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        match self.category {
            Category::Input => 2,
            Category::PrecisionMap => 3,
            Category::Image => 4,
            Category::Capacity => 5,
            Category::Phase => 6,
        }
    }
}

fn prefix(category: Category) -> &'static str {
    match category {
        Category::Input => "input error",
        Category::PrecisionMap => "precision-map error",
        Category::Image => "image error",
        Category::Capacity => "capacity error",
        Category::Phase => "phase error",
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = prefix(self.category);
        let msg = self.message.replace('\n', " ");
        let msg = msg.strip_prefix(&format!("{prefix}: ")).unwrap_or(&msg);
        write!(f, "{prefix}: {msg}")
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn read_model_config(path: &Path) -> Result<ModelConfig, Failure> {
    let cfg: ModelConfig = serde_json::from_value(read_json(path)?)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn stdout_line(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{s}");
}

pub fn quantize(input: &Path, out: &Path, pmap: Option<&Path>) -> CmdResult {
    let pmap = match pmap {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure {
                category: Category::PrecisionMap,
                message: format!("{}: {e}", p.display()),
            })?;
            PrecisionMap::from_json(&text).map_err(|e| Failure {
                category: Category::PrecisionMap,
                message: format!("{}: {e}", p.display()),
            })?
        }
        None => PrecisionMap::default(),
    };
    let c = load_container(input)?;
    let (q, summary) = quantize_checkpoint(&c, &pmap)?;
    save_container(out, &q)?;

    let (mut f32_total, mut stored_total) = (0usize, 0usize);
    let (mut t_f32, mut t_stored) = (0usize, 0usize);
    for s in &summary {
        stdout_line(&format!(
            "{:<40} {:<7} {:<14} {:>10} -> {:>10} bytes ({:.2}x)",
            s.name,
            s.precision.to_string(),
            format!("{:?}", s.shape),
            s.f32_bytes,
            s.stored_bytes,
            s.ratio()
        ));
        f32_total += s.f32_bytes;
        stored_total += s.stored_bytes;
        if s.precision == Precision::Ternary {
            t_f32 += s.f32_bytes;
            t_stored += s.stored_bytes;
        }
    }
    if t_stored > 0 {
        stdout_line(&format!(
            "ternary tensors: {t_f32} -> {t_stored} bytes ({:.2}x)",
            t_f32 as f64 / t_stored as f64
        ));
    }
    stdout_line(&format!(
        "total: {f32_total} -> {stored_total} bytes ({:.2}x)",
        f32_total as f64 / stored_total.max(1) as f64
    ));
    Ok(())
}

pub struct GenerateArgs {
    pub model: PathBuf,
    pub prompt: String,
    pub image: Option<PathBuf>,
    pub max_tokens: usize,
    pub temperature: f32,
    pub top_p: f32,
    pub seed: u64,
    pub threads: usize,
    pub ids: bool,
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    let model = load_model(&load_container(&a.model)?)?;
    let image = match &a.image {
        Some(p) => Some(preprocess_image(
            &read_ppm(p)?,
            model.config.vision.image_size,
        )?),
        None => None,
    };
    let params = GenerationParams {
        max_new_tokens: a.max_tokens,
        temperature: a.temperature,
        top_p: a.top_p,
        seed: a.seed,
        stop: Some(ternmm::pipeline::EOS),
    };
    params.validate()?;
    let ctx = model.context(&tokenize_prompt(&a.prompt), image.as_ref())?;
    let plan = KernelPlan {
        threads: a.threads,
        ..KernelPlan::default()
    };
    let mut session = Session::new(&model, plan);
    let ids = session.generate(&ctx, &params)?;
    if a.ids {
        let s: Vec<String> = ids.iter().map(u32::to_string).collect();
        stdout_line(&s.join(" "));
    } else {
        let bytes = ternmm::pipeline::detokenize(&ids, model.decoder.vocab())?;
        stdout_line(&String::from_utf8_lossy(&bytes));
    }
    Ok(())
}

fn report(label: &str, t: &Throughput) {
    stdout_line(&format!(
        "{label:<8} {:.3e} elements/s  {:.3} GB/s effective  ({:.3} ms/iter)",
        t.elements_per_sec,
        t.bytes_per_sec / 1e9,
        t.seconds_per_iter * 1e3
    ));
}

fn bench_one(
    name: &str,
    w: &PackedTernaryMatrix,
    m: usize,
    iters: usize,
    plan: &KernelPlan,
) -> CmdResult {
    let x = Tensor::random_uniform(&[m, w.cols()], -1.0, 1.0, 0x5eed);
    let y = bitlinear_forward(w, &x, plan)?;
    let r = dense_reference_forward(w, &x)?;
    let diff = y.max_abs_diff(&r)?;
    let scale = r.data().iter().fold(1.0f32, |a, v| a.max(v.abs()));
    if diff > 1e-4 * scale {
        return Err(Failure::input(format!(
            "{name}: kernel and dense oracle disagree by {diff} (tolerance {})",
            1e-4 * scale
        )));
    }
    stdout_line(&format!(
        "{name}: O={} K={} m={m} iters={iters}; kernel matches oracle (max |diff| {diff:.3e})",
        w.rows(),
        w.cols()
    ));
    let t = bench_bitlinear(w, &x, iters, plan)?;
    let d = bench_dense_reference(w, &x, iters)?;
    report("ternary", &t);
    report("dense", &d);
    stdout_line(&format!(
        "ratio    {:.3} (ternary / dense elements per second)",
        t.elements_per_sec / d.elements_per_sec
    ));
    Ok(())
}

pub fn bench(
    model: Option<&Path>,
    synthetic: Option<&[usize]>,
    m: usize,
    iters: usize,
    threads: usize,
) -> CmdResult {
    if m == 0 || iters == 0 {
        return Err(Failure::input("--m and --iters must be positive"));
    }
    let plan = KernelPlan {
        threads,
        ..KernelPlan::default()
    };
    match (model, synthetic) {
        (_, Some(&[o, k])) => {
            if o == 0 || k == 0 {
                return Err(Failure::input(format!("invalid synthetic size {o}x{k}")));
            }
            let w = Tensor::random_uniform(&[o, k], -1.0, 1.0, 0);
            bench_one(
                "synthetic",
                &PackedTernaryMatrix::quantize(&w)?,
                m,
                iters,
                &plan,
            )
        }
        (Some(path), None) => {
            let c = load_container(path)?;
            let mut any = false;
            for (name, data) in &c.tensors {
                if let TensorData::T2 { .. } = data {
                    bench_one(name, &c.ternary(name)?, m, iters, &plan)?;
                    any = true;
                }
            }
            if !any {
                return Err(Failure::input(format!(
                    "{} has no ternary tensors",
                    path.display()
                )));
            }
            Ok(())
        }
        _ => Err(Failure::input(
            "pass either --model PATH or --synthetic O K",
        )),
    }
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub data: PathBuf,
    pub phase: u8,
    pub out: PathBuf,
    pub init: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub seed: u64,
}

/// Phase preset with the run file's `train` overrides applied on top.
fn train_config(run: &Value, phase: u8) -> Result<TrainConfig, Failure> {
    let base = match phase {
        1 => TrainConfig::phase1(),
        2 => TrainConfig::phase2(),
        p => {
            return Err(Failure {
                category: Category::Phase,
                message: format!("--phase must be 1 or 2, got {p}"),
            })
        }
    };
    let mut merged = serde_json::to_value(&base).expect("config serializes");
    if let Some(over) = run.get("train") {
        let Some(over) = over.as_object() else {
            return Err(Failure::input("\"train\" must be an object"));
        };
        if let Some(p) = over.get("phase") {
            if p.as_u64() != Some(u64::from(phase)) {
                return Err(Failure {
                    category: Category::Phase,
                    message: format!("run file declares phase {p} but --phase is {phase}"),
                });
            }
        }
        for (k, v) in over {
            merged[k] = v.clone();
        }
    }
    let cfg: TrainConfig =
        serde_json::from_value(merged).map_err(|e| Failure::input(format!("train config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_toy(a: TrainArgs) -> CmdResult {
    let run = read_json(&a.config)?;
    let cfg = train_config(&run, a.phase)?;
    let file_model: Option<ModelConfig> = match run.get("model") {
        Some(v) => Some(
            serde_json::from_value(v.clone())
                .map_err(|e| Failure::input(format!("model config: {e}")))?,
        ),
        None => None,
    };
    let start = match &a.init {
        Some(p) => load_container(p)?,
        None => init_checkpoint(&file_model.clone().unwrap_or_else(ModelConfig::toy), a.seed)?,
    };
    let model_cfg = start
        .meta
        .config
        .clone()
        .ok_or_else(|| Failure::input("starting checkpoint carries no model config"))?;
    if let Some(m) = &file_model {
        if *m != model_cfg {
            return Err(Failure::input(
                "run file model config differs from the starting checkpoint",
            ));
        }
    }
    let mut params = latent_params(&start)?;
    let data = load_dataset(&load_container(&a.data)?)?;
    let report = run_training(&mut params, &model_cfg, &data, &cfg)?;

    let mut out = Container::new(Meta {
        config: Some(model_cfg),
        ..Meta::default()
    });
    for (name, t) in params {
        out.insert_f32(name, t)?;
    }
    let csv_path = a.loss_csv.unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    save_container(&a.out, &out)?;
    write_atomic(&csv_path, history_csv(&report.history).as_bytes())?;
    stdout_line(&format!(
        "phase {}: {} steps, loss {:.4} -> {:.4}",
        cfg.phase,
        report.history.len(),
        report.initial_loss(),
        report.final_loss()
    ));
    Ok(())
}

/// Latent parameters of a checkpoint; ternary tensors start from `β·T`.
fn latent_params(c: &Container) -> Result<std::collections::BTreeMap<String, Tensor>, Failure> {
    if c.tensors.values().all(|d| matches!(d, TensorData::F32(_))) {
        return Ok(f32_params(c)?);
    }
    let is_scale = |name: &str| {
        name.strip_suffix(".scale")
            .is_some_and(|w| matches!(c.get(w), Some(TensorData::T2 { .. })))
    };
    let mut out = std::collections::BTreeMap::new();
    for (name, d) in &c.tensors {
        match d {
            TensorData::T2 { .. } => {
                out.insert(name.clone(), dequantize_weights(&c.ternary(name)?));
            }
            TensorData::F32(t) if !is_scale(name) => {
                out.insert(name.clone(), t.clone());
            }
            TensorData::F32(_) => {}
            TensorData::I8 { .. } => {
                return Err(Failure::input(format!(
                    "tensor {name}: i8 tensors cannot seed training"
                )))
            }
        }
    }
    Ok(out)
}

pub fn init(out: &Path, config: Option<&Path>, seed: u64) -> CmdResult {
    let cfg = match config {
        Some(p) => read_model_config(p)?,
        None => ModelConfig::toy(),
    };
    save_container(out, &init_checkpoint(&cfg, seed)?)?;
    Ok(())
}

pub fn synth_data(out: &Path, n: usize, size: usize, seed: u64) -> CmdResult {
    if n == 0 || size == 0 {
        return Err(Failure::input("--n and --size must be positive"));
    }
    save_container(out, &dataset_container(&synthetic_dataset(n, size, seed)?)?)?;
    Ok(())
}

pub fn params(config: Option<&Path>, toy: bool) -> CmdResult {
    let cfg = match (config, toy) {
        (Some(p), _) => read_model_config(p)?,
        (None, true) => ModelConfig::toy(),
        (None, false) => ModelConfig::full(),
    };
    let c = param_count(&cfg);
    stdout_line(&format!("vision     {}", c.vision));
    stdout_line(&format!("projector  {}", c.projector));
    stdout_line(&format!("decoder    {}", c.decoder));
    stdout_line(&format!("total      {}", c.total()));
    Ok(())
}
