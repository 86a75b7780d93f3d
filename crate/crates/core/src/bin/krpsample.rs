use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use krpsample::als::{Preprocess, Solver};
use krpsample::bench::{
    cmd_decompose, cmd_dist_check, cmd_lstsq_bench, cmd_runtime_bench, error_json, DecomposeConfig,
    DistCheckConfig, LstsqBenchConfig, RunRecord, RuntimeBenchConfig, SamplerKind, TensorSource,
};
use krpsample::Result;

#[derive(Parser)]
#[command(name = "krpsample", version, about = "Khatri-Rao leverage sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Where to write the run record (stdout if absent).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Compare a sampled histogram against the exact leverage distribution.
    DistCheck {
        #[arg(long, default_value_t = 3)]
        modes: usize,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        /// Fraction of factor entries multiplied by 10.
        #[arg(long, default_value_t = 0.01)]
        spike: f64,
    },
    /// Time sampler construction and sampling over a parameter grid.
    RuntimeBench {
        #[arg(long, value_delimiter = ',', default_value = "3")]
        modes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        rank: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1024,16384,262144")]
        rows: Vec<usize>,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Distortion and residual error of sketched least squares.
    LstsqBench {
        #[arg(long, default_value_t = 4)]
        modes: usize,
        #[arg(long, default_value_t = 16)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value = "exact")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 0.01)]
        spike: f64,
    },
    /// CP decomposition of a .tns file or a synthetic tensor.
    Decompose {
        /// Input .tns file; a synthetic tensor is generated when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Tensor dimensions: overrides the file's, or shapes the synthetic tensor.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Rank of the synthetic ground truth.
        #[arg(long, default_value_t = 4)]
        true_rank: usize,
        /// Relative noise added to the synthetic tensor.
        #[arg(long, default_value_t = 1e-3)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value = "sts-cp")]
        solver: Solver,
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        max_rounds: usize,
        #[arg(long, default_value_t = 5)]
        epoch_length: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value = "none")]
        preprocess: Preprocess,
        /// Also solve each subproblem exactly and report residual inflation.
        #[arg(long)]
        epsilon_oracle: bool,
        /// Where to write the fitted model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<RunRecord> {
    let seed = cli.seed;
    match cli.command {
        Command::DistCheck { modes, rows, rank, samples, spike } => cmd_dist_check(&DistCheckConfig {
            modes,
            rows,
            rank,
            samples,
            spike_fraction: spike,
            seed,
        }),
        Command::RuntimeBench { modes, rank, rows, samples, trials } => cmd_runtime_bench(&RuntimeBenchConfig {
            modes,
            ranks: rank,
            rows,
            samples,
            trials,
            seed,
        }),
        Command::LstsqBench { modes, rows, rank, samples, trials, sampler, spike } => {
            cmd_lstsq_bench(&LstsqBenchConfig {
                modes,
                rows,
                rank,
                samples,
                trials,
                sampler,
                spike_fraction: spike,
                seed,
            })
        }
        Command::Decompose {
            input,
            dims,
            true_rank,
            noise,
            rank,
            solver,
            samples,
            max_rounds,
            epoch_length,
            tolerance,
            preprocess,
            epsilon_oracle,
            model,
        } => {
            let source = match input {
                Some(path) => TensorSource::File { path, dims },
                None => TensorSource::Synthetic {
                    dims: dims.unwrap_or_else(|| vec![16, 16, 16]),
                    rank: true_rank,
                    noise,
                },
            };
            cmd_decompose(&DecomposeConfig {
                source,
                rank,
                solver,
                samples,
                max_rounds,
                epoch_length,
                stop_tolerance: tolerance,
                preprocess,
                epsilon_oracle,
                seed,
                model_output: model,
            })
        }
    }
}

fn emit(mut rec: RunRecord, format: Format, output: Option<PathBuf>) -> Result<()> {
    let mut out: Box<dyn Write> = match output {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        Format::Json => writeln!(out, "{}", rec.to_json()?)?,
        Format::Csv => {
            rec.format = "csv".into();
            rec.write_csv(&mut out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (format, output) = (cli.format, cli.output.clone());
    match run(cli).and_then(|rec| emit(rec, format, output)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
