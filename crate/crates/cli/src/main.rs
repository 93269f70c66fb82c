use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gtic_cli::commands::{self, write_text};
use gtic_cli::dataset::Dataset;
use gtic_cli::train::{train, TrainOptions};
use gtic_cli::{Checkpoint, CliError, TrainConfig};
use gtic_core::tunability::parse_grid;

#[derive(Parser)]
#[command(name = "gtic", version, about = "Content-weighted tunable image codec")]
struct Cli {
    /// Overrides the configured training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation commands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of images.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// key = value file; omitted keys take the reference profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an existing checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save a checkpoint every this many epochs.
        #[arg(long, default_value_t = 1)]
        checkpoint_every: usize,
    },
    /// Compress one image into a .gtc file.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        n: f64,
        /// Use the fixed unary table instead of a per-image Huffman table.
        #[arg(long)]
        fixed_code: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Reconstruct an image from a .gtc file.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-image bpp, PSNR and MS-SSIM at one shift.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        n: f64,
        #[arg(long)]
        fixed_code: bool,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Dataset-average rate and quality over a grid of shifts.
    RdCurve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// lo:hi:step
        #[arg(long, allow_hyphen_values = true)]
        n_grid: String,
        #[arg(long)]
        fixed_code: bool,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Fit the bpp-versus-shift curve of an rd-curve CSV.
    FitTunability {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the shift that hits a target bpp on a fitted curve.
    TargetBpp {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        bpp: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train {
            data,
            config,
            out,
            resume,
            checkpoint_every,
        } => {
            let ck = match resume {
                Some(path) => Checkpoint::load(&path)?,
                None => {
                    let mut cfg = match config {
                        Some(p) => {
                            let text =
                                std::fs::read_to_string(&p).map_err(|source| CliError::Io { path: p, source })?;
                            TrainConfig::parse(&text)?
                        }
                        None => TrainConfig::reference(),
                    };
                    if let Some(s) = cli.seed {
                        cfg.seed = s;
                    }
                    Checkpoint::fresh(&cfg)?
                }
            };
            let dataset = Dataset::load_dir(&data)?;
            let opts = TrainOptions {
                checkpoint_path: Some(out.clone()),
                checkpoint_every,
            };
            let (ck, report) = train(&dataset, ck, &opts, |_| {})?;
            if let Some(last) = report.epochs.last() {
                println!(
                    "trained to epoch {} ({} steps); last epoch mse {:.6}",
                    ck.epoch, ck.step, last.mean_mse
                );
            }
        }
        Command::Compress {
            input,
            model,
            n,
            fixed_code,
            output,
        } => {
            let bs = commands::compress_file(&input, &model, n, fixed_code, &output)?;
            println!("{} bytes, {:.4} bpp", bs.byte_len(), gtic_core::bitstream::bpp(&bs));
        }
        Command::Decompress { input, model, output } => {
            let img = commands::decompress_file(&input, &model, &output)?;
            println!("{}x{}", img.dims()[1], img.dims()[0]);
        }
        Command::Eval {
            data,
            model,
            n,
            fixed_code,
            csv,
        } => {
            let ck = Checkpoint::load(&model)?;
            let images = commands::load_images(&data)?;
            let rows = commands::evaluate(&ck, &images, n, fixed_code)?;
            write_text(&csv, &commands::eval_csv(&rows))?;
        }
        Command::RdCurve {
            data,
            model,
            n_grid,
            fixed_code,
            csv,
        } => {
            let ck = Checkpoint::load(&model)?;
            let images = commands::load_images(&data)?;
            let grid = parse_grid(&n_grid)?;
            let points = commands::rd_curve(&ck, &images, &grid, fixed_code)?;
            write_text(&csv, &commands::curve_csv(&points))?;
        }
        Command::FitTunability { csv, out } => {
            let fit = commands::fit_tunability(&csv, &out)?;
            println!(
                "r2 {:.6} rmse {:.3e} over n in [{}, {}]",
                fit.r2, fit.rmse, fit.n_min, fit.n_max
            );
        }
        Command::TargetBpp { fit, bpp } => {
            println!("{}", commands::target_bpp(&fit, bpp)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
