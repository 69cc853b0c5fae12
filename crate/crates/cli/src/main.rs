mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Root seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for per-image work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic road dataset.
    GenerateData {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train one model variant.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        label_rate: Option<f64>,
    },
    /// Train all four variants under one budget and compare them.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Comma-separated label rates, one set of runs each.
        #[arg(long)]
        label_rates: Option<String>,
    },
    /// Predict score and mask images, tiling large inputs.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// An image, a folder of images, or a dataset root.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Pixel, tolerance-band and relaxed centreline metrics.
    Evaluate {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Path tracing quality against reference path length.
    Trace {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Parameter and multiply-accumulate counts per block.
    Params {
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Report every variant.
        #[arg(long)]
        all_variants: bool,
    },
}

/// Road segmentation with a dual sparse attention U-Net.
#[derive(Parser, Debug)]
#[command(name = "uroadnet", version, about)]
struct Invocation {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn run(inv: Invocation) -> uroadnet::Result<()> {
    let c = &inv.common;
    let mut flags: Vec<(&str, Option<String>)> =
        vec![("seed", s(&c.seed)), ("paths.out", p(&c.out)), ("jobs", s(&c.jobs))];
    let name = match &inv.command {
        Command::GenerateData { count, size } => {
            flags.extend([("data.count", s(count)), ("data.size", s(size))]);
            "generate-data"
        }
        Command::Train {
            data,
            val,
            variant,
            epochs,
            max_steps,
            lr,
            label_rate,
        } => {
            flags.extend([
                ("paths.data", p(data)),
                ("paths.val", p(val)),
                ("model.variant", variant.clone()),
                ("train.epochs", s(epochs)),
                ("train.max_steps", s(max_steps)),
                ("train.lr", s(lr)),
                ("train.label_rate", s(label_rate)),
            ]);
            "train"
        }
        Command::Ablate {
            data,
            val,
            test,
            epochs,
            max_steps,
            lr,
            label_rates,
        } => {
            flags.extend([
                ("paths.data", p(data)),
                ("paths.val", p(val)),
                ("paths.test", p(test)),
                ("train.epochs", s(epochs)),
                ("train.max_steps", s(max_steps)),
                ("train.lr", s(lr)),
                ("train.label_rates", label_rates.clone()),
            ]);
            "ablate"
        }
        Command::Infer {
            checkpoint,
            input,
            tile,
            overlap,
        } => {
            flags.extend([
                ("paths.checkpoint", p(checkpoint)),
                ("paths.input", p(input)),
                ("infer.tile", s(tile)),
                ("infer.overlap", s(overlap)),
            ]);
            "infer"
        }
        Command::Evaluate { pred, gt, rho, sigma } => {
            flags.extend([
                ("paths.pred", p(pred)),
                ("paths.gt", p(gt)),
                ("eval.rho", s(rho)),
                ("eval.sigma", s(sigma)),
            ]);
            "evaluate"
        }
        Command::Trace {
            pred,
            gt,
            pairs,
            tolerance,
        } => {
            flags.extend([
                ("paths.pred", p(pred)),
                ("paths.gt", p(gt)),
                ("trace.pairs", s(pairs)),
                ("trace.tolerance", s(tolerance)),
            ]);
            "trace"
        }
        Command::Params {
            variant, height, width, ..
        } => {
            flags.extend([
                ("model.variant", variant.clone()),
                ("params.height", s(height)),
                ("params.width", s(width)),
            ]);
            "params"
        }
    };
    let cfg = RunConfig::resolve(name, c.config.as_deref(), &flags, &c.set)?;
    let force = c.force;
    match inv.command {
        Command::GenerateData { .. } => commands::generate_data(&cfg, force),
        Command::Train { .. } => commands::train(&cfg, force),
        Command::Ablate { .. } => commands::ablate(&cfg, force),
        Command::Infer { .. } => commands::infer(&cfg, force),
        Command::Evaluate { .. } => commands::evaluate(&cfg, force),
        Command::Trace { .. } => commands::trace(&cfg, force),
        Command::Params { all_variants, .. } => commands::params(&cfg, force, all_variants),
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    let inv = match Invocation::try_parse() {
        Ok(inv) => inv,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            error_line("argument", first);
            return ExitCode::from(2);
        }
    };
    match run(inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
