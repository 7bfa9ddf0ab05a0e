//! Owner command line: register and reconstruct data, report key usage.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qss_core::{DataId, Quorum};
use qss_storage::cluster::{catalog_add, catalog_bytes, catalog_path, exit_code, ClusterConfig, EXIT_TRANSPORT, EXIT_USAGE};
use qss_storage::config::Config;
use qss_storage::keystats::KeyStats;
use qss_transport::keysupply::AuditLog;

#[derive(Parser)]
#[command(name = "qss", about = "Store and recover password-protected data on share servers")]
struct Cli {
    #[arg(long, default_value = "qss.conf")]
    config: PathBuf,
    /// Comma-separated host:port of servers 1..n, overriding the file.
    #[arg(long)]
    servers: Option<String>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    t: Option<u32>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Share a file (or stdin) and print its data id.
    Register {
        #[arg(default_value = "-")]
        input: PathBuf,
    },
    /// Recover data by id.
    Reconstruct {
        #[arg(long)]
        data_id: DataId,
        /// Comma-separated server indices.
        #[arg(long)]
        quorum: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Key octets consumed per phase and per registered byte.
    Keystats,
}

fn passphrase() -> std::io::Result<String> {
    match std::env::var("PASS_STORE_PW") {
        Ok(pw) => Ok(pw),
        Err(_) => rpassword::prompt_password("passphrase: "),
    }
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("qss: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE as u8) } else { ExitCode::SUCCESS };
        }
    };
    let mut conf = if cli.config.exists() {
        match Config::load(&cli.config) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_USAGE, e),
        }
    } else {
        Config::default()
    };
    if let Some(list) = &cli.servers {
        for (i, addr) in list.split(',').enumerate() {
            conf.set(&format!("server.{}", i + 1), addr.trim());
        }
    }
    for (key, v) in [("m", cli.m), ("n", cli.n), ("t", cli.t)] {
        if let Some(v) = v {
            conf.set(key, v.to_string());
        }
    }
    let cluster = match ClusterConfig::from_config(&conf) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let catalog = catalog_path(&cluster.state_dir, cluster.owner);

    if let Cmd::Keystats = cli.cmd {
        let records = match AuditLog::read_file(&cluster.state_dir.join("kms").join("audit.log")) {
            Ok(r) => r,
            Err(_) => Vec::new(),
        };
        let bytes = match catalog_bytes(&catalog) {
            Ok(b) => b,
            Err(e) => return fail(EXIT_USAGE, e),
        };
        println!("{}", KeyStats::from_records(&records, bytes));
        return ExitCode::SUCCESS;
    }

    let client = match cluster.owner_client() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_TRANSPORT, e),
    };
    let pw = match passphrase() {
        Ok(pw) => pw,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    match cli.cmd {
        Cmd::Register { input } => {
            let mut data = Vec::new();
            let read = if input.as_os_str() == "-" {
                std::io::stdin().read_to_end(&mut data).map(|_| ())
            } else {
                std::fs::read(&input).map(|d| data = d)
            };
            if let Err(e) = read {
                return fail(EXIT_USAGE, format!("{}: {e}", input.display()));
            }
            match client.register(&data, pw.as_bytes()) {
                Ok(id) => {
                    if let Err(e) = catalog_add(&catalog, id, data.len() as u64) {
                        eprintln!("qss: catalog not updated: {e}");
                    }
                    println!("{id}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(exit_code(&e), e),
            }
        }
        Cmd::Reconstruct { data_id, quorum, out } => {
            let quorum = match quorum {
                None => None,
                Some(list) => {
                    let members: Result<Vec<u32>, _> = list.split(',').map(|s| s.trim().parse()).collect();
                    match members.map_err(|e| e.to_string()).and_then(|m| {
                        Quorum::new(m, cluster.params.n()).map_err(|e| e.to_string())
                    }) {
                        Ok(q) => Some(q),
                        Err(e) => return fail(EXIT_USAGE, format!("quorum: {e}")),
                    }
                }
            };
            match client.reconstruct(data_id, pw.as_bytes(), quorum.as_ref()) {
                Ok(r) => {
                    let written = match out {
                        Some(path) => std::fs::write(&path, &r.data),
                        None => std::io::stdout().write_all(&r.data),
                    };
                    match written {
                        Ok(()) => ExitCode::SUCCESS,
                        Err(e) => fail(EXIT_USAGE, e),
                    }
                }
                Err(e) => fail(exit_code(&e), e),
            }
        }
        Cmd::Keystats => unreachable!(),
    }
}
