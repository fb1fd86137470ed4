//! Producer/consumer timing harness.
//!
//! ```text
//! tshm-bench --synth 64x64x64 --rank 3 --density 0.01 --parts 1,4,16
//! tshm-bench --tensor nell-2.tns --parts 4 --csv out.csv
//! tshm-bench --synth 8x6x7 --density 0.1 --plan --parts 8
//! ```

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tshm::bench::{self, BenchConfig, TensorSource};
use tshm::{CpOptions, PartitionPlan};

#[derive(Parser, Debug)]
#[command(version, about = "Shared-memory tensor handoff benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Option<Cmd>,

    /// Read the tensor from a .tns file.
    #[arg(long, conflicts_with = "synth")]
    tensor: Option<PathBuf>,
    /// Generate a synthetic tensor with these dims, e.g. 64x64x64.
    #[arg(long, value_parser = parse_dims)]
    synth: Option<Dims>,
    /// Rank of the synthetic ground truth.
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 0.01)]
    density: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Partition counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    parts: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    cp_rank: usize,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write per-run rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Leave a failed session's regions and metadata in place.
    #[arg(long)]
    keep: bool,
    /// Also time a .tns write and re-read.
    #[arg(long)]
    file_baseline: bool,
    /// Print the partition plan for each P and exit.
    #[arg(long)]
    plan: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Consumer side of one session (spawned by the harness).
    #[command(hide = true)]
    Consume {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long, default_value_t = 16)]
        cp_rank: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60_000)]
        timeout_ms: u64,
    },
}

#[derive(Clone, Debug)]
struct Dims(Vec<usize>);

fn parse_dims(s: &str) -> Result<Dims, String> {
    s.split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Dims)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    if let Some(Cmd::Consume {
        metadata,
        cp_rank,
        iters,
        seed,
        timeout_ms,
    }) = cli.command
    {
        let opts = CpOptions {
            rank: cp_rank,
            iterations: iters,
            seed,
        };
        let stats = bench::consume(&metadata, &opts, Duration::from_millis(timeout_ms))?;
        println!("{}", stats.to_line());
        return Ok(());
    }

    let source = match (cli.tensor, cli.synth) {
        (Some(path), None) => TensorSource::File(path),
        (None, Some(Dims(dims))) => TensorSource::Synthetic {
            dims,
            rank: cli.rank,
            density: cli.density,
            noise: cli.noise,
        },
        _ => return Err("give exactly one of --tensor or --synth".into()),
    };

    if cli.plan {
        let t = source.load(cli.seed)?;
        for &p in &cli.parts {
            println!("{}", PartitionPlan::build(&t, p)?);
        }
        return Ok(());
    }

    let mut config = BenchConfig::new(source, std::env::current_exe()?);
    config.parts = cli.parts;
    config.cp = CpOptions {
        rank: cli.cp_rank,
        iterations: cli.iters,
        seed: cli.seed,
    };
    config.repeats = cli.repeats;
    config.keep = cli.keep;
    config.file_baseline = cli.file_baseline;

    let report = bench::run_bench(&config)?;
    print!("{report}");
    if let Some(path) = cli.csv {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tshm-bench: {e}");
            ExitCode::FAILURE
        }
    }
}
