//! Command line front end: inference, normalization folding and its
//! verification, evaluation, scoring, loss reports, augmentation preview,
//! toy fitting and micro-benchmarks.
//!
//! Every subcommand echoes its fully resolved configuration to stderr,
//! writes machine-readable JSON reports to stdout (or `--output`), and
//! reserves stderr for diagnostics. Exit code 0 means success.

mod colormap;
mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "litedepth", version, about = "Lightweight depth estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a randomly initialized model and write it as .ldw.
    Create {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        width_mult: f32,
        /// Decoder widths at strides 16,8,4,2, comma separated.
        #[arg(long, default_value = "64,32,32,24", value_parser = commands::parse_channels)]
        decoder_channels: commands::Channels,
        /// Skip the normalization record (model consumes raw pixels).
        #[arg(long)]
        no_normalization: bool,
    },
    /// Run inference on RGB images, writing 16-bit depth PNGs.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Input RGB PNGs.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Output directory for depth PNGs.
        #[arg(long)]
        output: PathBuf,
        /// Also write false-color previews.
        #[arg(long)]
        preview: bool,
    },
    /// Fold the normalization record into the first convolution.
    Fold {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run random images through two models and compare outputs.
    VerifyFold {
        model_a: PathBuf,
        model_b: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate predicted depth PNGs against ground truth.
    Eval {
        /// Directory of predicted depth PNGs.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth depth PNGs with matching names.
        #[arg(long)]
        gt: PathBuf,
        /// Report file (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Challenge score from si-RMSE and runtime.
    Score {
        #[arg(long)]
        si_rmse: f64,
        #[arg(long)]
        runtime_ms: f64,
        #[arg(long = "C", default_value_t = 0.01)]
        c: f64,
    },
    /// Full loss report for a prediction/ground-truth depth pair.
    Losses {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Static weights w1,w2,w3,w4.
        #[arg(long, default_value = "1,0.25,2.5,0.6", value_parser = commands::parse_weights)]
        weights: commands::Weights,
        /// Dynamic re-weighting (uncertainty form) instead of static weights.
        #[arg(long)]
        dynamic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Embed full per-pixel gradient maps in the report.
        #[arg(long)]
        full_grads: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write augmented copies of an RGB/depth pair plus a transform log.
    Augment {
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Crop sizes as HxW pairs, comma separated.
        #[arg(long, default_value = "240x384,384x512,480x640", value_parser = commands::parse_sizes)]
        sizes: commands::Sizes,
        #[arg(long, default_value_t = 2.5)]
        rotation: f32,
        #[arg(long, default_value_t = 0.5)]
        flip_prob: f64,
        #[arg(long, default_value_t = 0.1)]
        jitter: f32,
    },
    /// Gradient-descend a free prediction map on a synthetic scene.
    FitToy {
        #[arg(long, default_value = "slanted")]
        scene: String,
        /// Scene size HxW.
        #[arg(long, default_value = "16x16", value_parser = commands::parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long)]
        dynamic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Amplitude of the noise added to ground truth for the init map.
        #[arg(long, default_value_t = 0.5)]
        init_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        invalid_fraction: f32,
        /// Static weights w1,w2,w3,w4.
        #[arg(long, default_value = "1,0.25,2.5,0.6", value_parser = commands::parse_weights)]
        weights: commands::Weights,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Wall-clock micro-benchmark of model inference on the host CPU.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    if let Ok(threads) = std::env::var("LITEDEPTH_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool configured before first use");
            }
            _ => {
                eprintln!("error: LITEDEPTH_THREADS must be a positive integer, got `{threads}`");
                std::process::exit(1);
            }
        }
    }

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Create { output, seed, width_mult, decoder_channels, no_normalization } => {
            commands::create(&output, seed, width_mult, decoder_channels, no_normalization)
        }
        Command::Infer { model, input, output, preview } => {
            commands::infer(&model, &input, &output, preview)
        }
        Command::Fold { model, output } => commands::fold(&model, &output),
        Command::VerifyFold { model_a, model_b, trials, tolerance, seed } => {
            commands::verify_fold(&model_a, &model_b, trials, tolerance, seed)
        }
        Command::Eval { pred, gt, output } => commands::eval(&pred, &gt, output.as_deref()),
        Command::Score { si_rmse, runtime_ms, c } => commands::score(si_rmse, runtime_ms, c),
        Command::Losses { pred, gt, weights, dynamic, seed, full_grads, output } => {
            commands::losses(&pred, &gt, weights, dynamic, seed, full_grads, output.as_deref())
        }
        Command::Augment { rgb, depth, output, count, seed, sizes, rotation, flip_prob, jitter } => {
            commands::augment(&rgb, &depth, &output, count, seed, sizes, rotation, flip_prob, jitter)
        }
        Command::FitToy {
            scene,
            size,
            steps,
            lr,
            dynamic,
            seed,
            init_noise,
            invalid_fraction,
            weights,
            output,
        } => commands::fit_toy(
            &scene,
            size,
            steps,
            lr,
            dynamic,
            seed,
            init_noise,
            invalid_fraction,
            weights,
            output.as_deref(),
        ),
        Command::Bench { model, trials, seed } => commands::bench(&model, trials, seed),
    };

    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
