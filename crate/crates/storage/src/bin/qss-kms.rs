//! Key supply process: the simulated key network and its supply agents.

use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use qss_storage::cluster::ClusterConfig;
use qss_storage::config::Config;
use qss_storage::net::serve_tcp;

#[derive(Parser)]
#[command(name = "qss-kms", about = "Deliver QKD key to the configured applications")]
struct Args {
    #[arg(long, default_value = "qss.conf")]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let cluster = match Config::load(&args.config).and_then(|c| ClusterConfig::from_config(&c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("qss-kms: {e}");
            return ExitCode::from(4);
        }
    };
    let started = cluster
        .build_kms()
        .and_then(|(keys, hub)| Ok((keys, hub, TcpListener::bind(cluster.kms)?)));
    match started {
        Ok((_keys, hub, listener)) => {
            log::info!("key supply listening on {}", cluster.kms);
            let _ = serve_tcp(listener, Arc::new(hub)).join();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qss-kms: {e}");
            ExitCode::from(3)
        }
    }
}
