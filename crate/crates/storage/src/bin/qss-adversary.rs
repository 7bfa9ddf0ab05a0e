//! Statistical attack battery against the scheme over small fields.

use std::process::ExitCode;

use clap::Parser;
use qss_core::adversary::{standard_report, BatterySize};

#[derive(Parser)]
#[command(name = "qss-adversary", about = "Run the attack battery; exit nonzero if any bound fails")]
struct Args {
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 1_000)]
    scenarios: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let a = Args::parse();
    let size = BatterySize {
        monte_carlo_trials: a.trials,
        determinant_scenarios: a.scenarios,
    };
    match standard_report(size, a.seed) {
        Ok(report) => {
            print!("{report}");
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("qss-adversary: {e}");
            ExitCode::from(2)
        }
    }
}
