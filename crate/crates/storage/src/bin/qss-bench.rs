//! Timing and key consumption over a grid of sizes and field exponents.

use std::process::ExitCode;

use clap::Parser;
use qss_storage::bench::{run_bench, BenchConfig, CSV_HEADER, EXPONENTS, SIZES};
use qss_storage::deploy::TransportKind;

#[derive(Parser)]
#[command(name = "qss-bench", about = "Print per-phase medians as CSV")]
struct Args {
    /// Comma-separated data sizes in bytes.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<u64>,
    /// Comma-separated Mersenne exponents.
    #[arg(long, value_delimiter = ',')]
    m: Vec<u32>,
    #[arg(long, default_value_t = 4)]
    n: u32,
    #[arg(long, default_value_t = 1)]
    t: u32,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Use local TCP sockets instead of in-process loopback.
    #[arg(long)]
    tcp: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::init();
    let a = Args::parse();
    let cfg = BenchConfig {
        sizes: if a.sizes.is_empty() { SIZES.to_vec() } else { a.sizes },
        exponents: if a.m.is_empty() { EXPONENTS.to_vec() } else { a.m },
        n: a.n,
        t: a.t,
        repetitions: a.reps.max(1),
        transport: if a.tcp { TransportKind::Tcp } else { TransportKind::Loopback },
        seed: a.seed,
    };
    println!("{CSV_HEADER}");
    match run_bench(&cfg, |row| println!("{}", row.to_csv())) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qss-bench: {e}");
            ExitCode::FAILURE
        }
    }
}
