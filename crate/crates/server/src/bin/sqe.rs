use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use sqe_core::engine::{Engine, EngineConfig, EngineError};
use sqe_movies::ingest::ingest_csv;
use sqe_server::client::HttpSink;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA_DIR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "sqe", version, about = "Structured query engine server")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address, host:port.
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Delay between the last write and the flush to disk.
    #[arg(long)]
    debounce_ms: Option<u64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP server (the default).
    Serve,
    /// Load a movie CSV into a running server.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "http://127.0.0.1:9200")]
        url: String,
        #[arg(long, default_value_t = 1)]
        shards: u32,
    },
}

fn load_config(cli: &Cli) -> Result<EngineConfig, EngineError> {
    let mut config = match &cli.config {
        Some(path) => EngineConfig::from_file(path)?,
        None => EngineConfig::default(),
    };
    if let Some(bind) = &cli.bind {
        config.bind_address = bind.clone();
    }
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    if let Some(ms) = cli.debounce_ms {
        config.debounce_ms = ms;
    }
    config.validate()?;
    Ok(config)
}

fn serve(config: EngineConfig) -> ExitCode {
    let engine = match Engine::bootstrap(config.clone()) {
        Ok(e) => Arc::new(e),
        Err(e @ EngineError::DataDir { .. }) => {
            eprintln!("sqe: {e}");
            return ExitCode::from(EXIT_DATA_DIR);
        }
        Err(e) => {
            eprintln!("sqe: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    for (path, reason) in engine.load_failures() {
        log::warn!("index at {} not loaded: {reason}", path.display());
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("failed to start async runtime");
    let served = runtime.block_on(async {
        let listener = match tokio::net::TcpListener::bind(&config.bind_address).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("sqe: cannot bind {}: {e}", config.bind_address);
                return Err(ExitCode::from(EXIT_CONFIG));
            }
        };
        log::info!("listening on {}", config.bind_address);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        sqe_server::http::serve(listener, engine.clone(), shutdown)
            .await
            .map_err(|e| {
                eprintln!("sqe: server error: {e}");
                ExitCode::from(EXIT_CONFIG)
            })
    });
    if let Err(code) = served {
        return code;
    }
    if let Err(e) = engine.flush_all() {
        eprintln!("sqe: final flush failed: {e}");
        return ExitCode::from(EXIT_DATA_DIR);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match &cli.command {
        Some(Command::Ingest { csv, url, shards }) => match ingest_csv(csv, &mut HttpSink::new(url, *shards)) {
            Ok(summary) => {
                println!("indexed {} movies, skipped {} rows", summary.indexed, summary.skipped);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("sqe: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Some(Command::Serve) | None => match load_config(&cli) {
            Ok(config) => serve(config),
            Err(e) => {
                eprintln!("sqe: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}
