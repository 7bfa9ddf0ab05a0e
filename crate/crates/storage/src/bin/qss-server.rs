//! One storage server process.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qss_storage::cluster::ClusterConfig;
use qss_storage::config::Config;

#[derive(Parser)]
#[command(name = "qss-server", about = "Serve one share of every registered bundle")]
struct Args {
    #[arg(long, default_value = "qss.conf")]
    config: PathBuf,
    /// Server index j, listening on `server.<j>`.
    #[arg(long)]
    index: u32,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let cluster = match Config::load(&args.config).and_then(|c| ClusterConfig::from_config(&c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("qss-server: {e}");
            return ExitCode::from(4);
        }
    };
    match cluster.start_server(args.index) {
        Ok((server, handle)) => {
            log::info!("server {} holding {} bundles", args.index, server.store().len());
            let _ = handle.join();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qss-server: {e}");
            ExitCode::from(3)
        }
    }
}
