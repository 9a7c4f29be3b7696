use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

use commands::Failure;

/// Quantize, run, benchmark and train ternary multimodal models.
#[derive(Parser)]
#[command(name = "ternmm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ternarize an f32 checkpoint according to a precision map.
    Quantize {
        /// Input f32 container.
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        /// Output container.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// JSON precision map (list of {"pattern", "precision"}); defaults to the built-in map.
        #[arg(long, value_name = "PATH")]
        pmap: Option<PathBuf>,
    },
    /// Generate text from a prompt and an optional image.
    Generate {
        /// Quantized model container.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Prompt text; "<image>" marks where the image goes.
        #[arg(long)]
        prompt: String,
        /// Binary PPM (P6) image.
        #[arg(long, value_name = "PATH.ppm")]
        image: Option<PathBuf>,
        /// Maximum number of generated tokens.
        #[arg(long, default_value_t = 32)]
        max_tokens: usize,
        /// Sampling temperature; 0 is greedy.
        #[arg(long, default_value_t = 0.0)]
        temperature: f32,
        /// Nucleus mass in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        top_p: f32,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Kernel threads: 0 for the shared pool, 1 for serial, n for n threads.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Print generated token ids instead of text.
        #[arg(long)]
        ids: bool,
    },
    /// Measure ternary kernel and dense oracle throughput.
    Bench {
        /// Benchmark the ternary layers of this model.
        #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
        model: Option<PathBuf>,
        /// Benchmark a random O×K weight instead of a model.
        #[arg(long, num_args = 2, value_names = ["O", "K"])]
        synthetic: Option<Vec<usize>>,
        /// Tokens per call.
        #[arg(long, default_value_t = 16)]
        m: usize,
        /// Timed iterations.
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Kernel threads: 0 for the shared pool, 1 for serial, n for n threads.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Run toy-scale two-phase training and write the trained checkpoint.
    TrainToy {
        /// JSON run file: {"model": ModelConfig?, "train": partial TrainConfig?}.
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Dataset container.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Training phase: 1 trains the projector, 2 the projector and decoder.
        #[arg(long)]
        phase: u8,
        /// Output f32 checkpoint.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Starting checkpoint; omitted means a fresh seeded init.
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
        /// Loss history CSV; defaults to OUT with ".loss.csv" appended.
        #[arg(long, value_name = "PATH")]
        loss_csv: Option<PathBuf>,
        /// Seed for a fresh init.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded f32 checkpoint.
    Init {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Model config JSON; defaults to the toy config.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic (image, caption) dataset container.
    SynthData {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Number of samples.
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Image side length.
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print parameter counts per component.
    Params {
        /// Model config JSON; defaults to the full reference config.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Use the toy config.
        #[arg(long, conflicts_with = "config")]
        toy: bool,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Quantize { input, out, pmap } => commands::quantize(&input, &out, pmap.as_deref()),
        Command::Generate {
            model,
            prompt,
            image,
            max_tokens,
            temperature,
            top_p,
            seed,
            threads,
            ids,
        } => commands::generate(commands::GenerateArgs {
            model,
            prompt,
            image,
            max_tokens,
            temperature,
            top_p,
            seed,
            threads,
            ids,
        }),
        Command::Bench {
            model,
            synthetic,
            m,
            iters,
            threads,
        } => commands::bench(model.as_deref(), synthetic.as_deref(), m, iters, threads),
        Command::TrainToy {
            config,
            data,
            phase,
            out,
            init,
            loss_csv,
            seed,
        } => commands::train_toy(commands::TrainArgs {
            config,
            data,
            phase,
            out,
            init,
            loss_csv,
            seed,
        }),
        Command::Init { out, config, seed } => commands::init(&out, config.as_deref(), seed),
        Command::SynthData { out, n, size, seed } => commands::synth_data(&out, n, size, seed),
        Command::Params { config, toy } => commands::params(config.as_deref(), toy),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
