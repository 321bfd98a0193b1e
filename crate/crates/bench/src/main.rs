use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use intattention::pipeline::Measurement;
use intattention::tensor::load_any_tensor;
use intattention::{compare, save_tensor, Matrix, PFormat, Pipeline};
use intattention_bench::{
    run_breakdown, run_fidelity, run_sweep, write_rows, BenchError, BenchSpec, OutputFormat,
    Report, DEFAULT_B_GRID, DEFAULT_C_GRID, DEFAULT_DIM, DEFAULT_LENGTHS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Latency and fidelity harness for integer attention.
///
/// Inputs are standard normal Q, K, V from ChaCha8 seeded per run. Throughput
/// (gflops_two_gemms) counts only the QKᵀ and PV GEMMs: 4·L²·d operations.
#[derive(Parser, Debug)]
#[command(name = "intattn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-stage latency breakdown of each pipeline.
    Breakdown(RunArgs),
    /// Fidelity of each pipeline against the exact reference, plus the P-format ablation.
    Fidelity(RunArgs),
    /// Mean fidelity of the integer pipeline over a (b, c) grid.
    Sweep(RunArgs),
    /// Write a random standard normal tensor file.
    GenTensor(GenArgs),
    /// Compare two tensor files; the second is the reference.
    CompareFiles(CompareArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Sequence lengths, comma separated.
    #[arg(long = "len", value_delimiter = ',', default_values_t = DEFAULT_LENGTHS)]
    lengths: Vec<usize>,
    /// Head dimension.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    /// Input seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, env = "INTATTN_THREADS", default_value_t = 1)]
    threads: usize,
    /// LUT bits (a list for sweep; default 5, or 2..=6 for sweep).
    #[arg(long = "b", value_delimiter = ',')]
    b: Option<Vec<u32>>,
    /// Clip bound (a list for sweep; default 6.6, or 4.4..=8.8 for sweep).
    #[arg(long = "c", value_delimiter = ',')]
    c: Option<Vec<f32>>,
    /// Probability storage: uint8x255 or int8x127.
    #[arg(long, default_value = "uint8x255", value_parser = parse_p_format)]
    p_format: PFormat,
    /// Pipelines: int, quant_only, reference, fp16.
    #[arg(long, value_delimiter = ',', default_value = "int,quant_only,reference", value_parser = parse_pipeline)]
    pipelines: Vec<Pipeline>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: OutputFormat,
    #[arg(long, default_value_t = Measurement::default().warmup)]
    warmup: usize,
    #[arg(long, default_value_t = Measurement::default().iters)]
    iters: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    candidate: PathBuf,
    reference: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: OutputFormat,
}

#[derive(Serialize)]
struct CompareRow {
    candidate: String,
    reference: String,
    rows: usize,
    cols: usize,
    cos_sim_row_mean: f64,
    rel_l1: f64,
    rmse: f64,
}

fn parse_p_format(s: &str) -> Result<PFormat, String> {
    [PFormat::Uint8x255, PFormat::Int8x127]
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| format!("unknown probability format '{s}' (uint8x255, int8x127)"))
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    s.parse().map_err(|e: intattention::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse().map_err(|e: BenchError| e.to_string())
}

impl RunArgs {
    fn spec(&self, sweep: bool) -> BenchSpec {
        let defaults = BenchSpec::default();
        BenchSpec {
            pipelines: self.pipelines.clone(),
            lengths: self.lengths.clone(),
            dim: self.dim,
            seeds: self.seeds.clone(),
            threads: self.threads,
            b_grid: self.b.clone().unwrap_or_else(|| {
                if sweep {
                    DEFAULT_B_GRID.to_vec()
                } else {
                    defaults.b_grid
                }
            }),
            c_grid: self.c.clone().unwrap_or_else(|| {
                if sweep {
                    DEFAULT_C_GRID.to_vec()
                } else {
                    defaults.c_grid
                }
            }),
            p_format: self.p_format,
            measurement: Measurement {
                warmup: self.warmup,
                iters: self.iters,
            },
        }
    }
}

fn emit<R: Serialize>(
    rows: &[R],
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<(), BenchError> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_rows(rows, format, &mut w)?;
            w.flush()?;
        }
        None => write_rows(rows, format, io::stdout().lock())?,
    }
    Ok(())
}

fn finish<R: Serialize>(report: Report<R>, args: &RunArgs) -> Result<ExitCode, BenchError> {
    emit(&report.rows, args.format, args.out.as_deref())?;
    if report.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{} configuration(s) failed:", report.failures.len());
    for f in &report.failures {
        eprintln!("  {f}");
    }
    Ok(ExitCode::FAILURE)
}

fn run(cli: Cli) -> Result<ExitCode, BenchError> {
    match cli.command {
        Command::Breakdown(args) => finish(run_breakdown(&args.spec(false))?, &args),
        Command::Fidelity(args) => finish(run_fidelity(&args.spec(false))?, &args),
        Command::Sweep(args) => finish(run_sweep(&args.spec(true))?, &args),
        Command::GenTensor(args) => {
            if args.rows == 0 || args.cols == 0 {
                return Err(BenchError::Usage(
                    "--rows and --cols must be at least 1".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let m: Matrix<f32> =
                intattention::inputs::gaussian_matrix(args.rows, args.cols, &mut rng)?;
            save_tensor(&m, &args.out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::CompareFiles(args) => {
            let a = load_any_tensor(&args.candidate)?.to_real();
            let b = load_any_tensor(&args.reference)?.to_real();
            let r = compare(&a, &b)?;
            let row = CompareRow {
                candidate: args.candidate.display().to_string(),
                reference: args.reference.display().to_string(),
                rows: b.rows(),
                cols: b.cols(),
                cos_sim_row_mean: r.cos_sim,
                rel_l1: r.rel_l1,
                rmse: r.rmse,
            };
            emit(&[row], args.format, args.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e @ BenchError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
