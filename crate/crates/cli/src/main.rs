//! `spectral-codec`: synthetic scenes, projector design and fitting,
//! encoding, decoding, classification, evaluation and benchmarking.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spectral_codec::{Error, Result};

use config::PipelineConfig;
use run::Run;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage or configuration error (bad flags, bad config values, invalid arguments)
  3  i/o error (missing input, unwritable output)
  4  format error (malformed or mismatched input file)
  5  numerical error (divergence, singular or ill-conditioned system, fit failure)

Every command writes <out>/<command>.run.toml with the resolved config, its
SHA-256, and the SHA-256 of each output file.";

#[derive(Parser, Debug)]
#[command(name = "spectral-codec", version, about = "Spectral encoding pipeline", after_help = EXIT_CODES)]
struct Cli {
    /// Pipeline config (TOML); built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, env = "SPECTRAL_CODEC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Task {
    Reconstruction,
    Classification,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic train/validation scenes
    Synth,
    /// PCA projector bank from training cubes, plus its [0.02, 0.98] remap
    Design {
        /// Training cubes (default: <out>/scenes/train)
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Fit coupled-mode filter models to the remapped bank
    Fit {
        /// Target bank (default: <out>/bank_physical.toml)
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Encode cubes into barcodes through the configured bank and sensor
    Encode {
        /// Cubes (default: <out>/scenes/val)
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Reconstruct cubes from barcodes (linear by default)
    Decode {
        /// Barcodes (default: <out>/barcodes)
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Use the trained MLP decoder (default path <out>/decoder.mlp)
        #[arg(long)]
        mlp: bool,
        #[arg(long)]
        decoder: Option<PathBuf>,
    },
    /// Train an MLP decoder or pixel classifier on encoded training scenes
    TrainDecoder {
        #[arg(long, value_enum, default_value = "reconstruction")]
        task: Task,
        /// Training cubes; masks are read from the same stem (default: <out>/scenes/train)
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Per-pixel classification of barcodes
    Classify {
        /// Barcodes (default: <out>/barcodes)
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Classifier checkpoint; classes.txt is read next to it
        #[arg(long)]
        net: Option<PathBuf>,
    },
    /// RMSE and segmentation statistics of predictions against ground truth
    Eval {
        /// Predicted cube/mask file or directory (default: <out>/decoded and <out>/masks)
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Ground-truth file or directory (default: <out>/scenes/val)
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Encode/decode throughput on a random cube
    Bench {
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Design { .. } => "design",
            Command::Fit { .. } => "fit",
            Command::Encode { .. } => "encode",
            Command::Decode { .. } => "decode",
            Command::TrainDecoder { .. } => "train-decoder",
            Command::Classify { .. } => "classify",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" | "argument" => 2,
        "io" => 3,
        "format" => 4,
        _ => 5,
    }
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Command::Bench { height, width, k, repetitions } = &cli.command {
        let b = &mut cfg.bench;
        b.height = height.unwrap_or(b.height);
        b.width = width.unwrap_or(b.width);
        b.k = k.unwrap_or(b.k);
        b.repetitions = repetitions.unwrap_or(b.repetitions);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if cfg.threads > 0 {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let run = Run::new(cli.out.clone(), cfg, cli.command.name())?;
    let run = match &cli.command {
        Command::Synth => commands::synth(run)?,
        Command::Design { inputs } => commands::design(run, inputs)?,
        Command::Fit { bank } => commands::fit(run, bank.as_deref())?,
        Command::Encode { inputs, bank } => commands::encode_cmd(run, inputs, bank.as_deref())?,
        Command::Decode { inputs, bank, mlp, decoder } => {
            commands::decode(run, inputs, bank.as_deref(), decoder.as_deref(), *mlp)?
        }
        Command::TrainDecoder { task, inputs, bank } => {
            commands::train_decoder(run, matches!(task, Task::Classification), inputs, bank.as_deref())?
        }
        Command::Classify { inputs, net } => commands::classify(run, inputs, net.as_deref())?,
        Command::Eval { pred, truth } => commands::eval(run, pred.as_deref(), truth.as_deref())?,
        Command::Bench { .. } => commands::bench(run)?,
    };
    run.finish()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
