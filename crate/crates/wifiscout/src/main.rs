use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use wifiscout::api::{self, AppState};
use wifiscout::config::ServiceConfig;
use wifiscout_core::crowdsim::{self, Scenario};
use wifiscout_core::ingest::{self, IngestError};
use wifiscout_core::store::SyncPolicy;
use wifiscout_core::AdvisoryStore;

#[derive(Debug, Parser)]
#[command(name = "wifiscout", version, about = "Crowdsourced WiFi quality advisories")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Load an external hotspot CSV into the event log.
    Import {
        csv: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Run a seeded crowd simulation and print its report as JSON.
    Simulate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        users: u32,
        #[arg(long, default_value_t = 50)]
        aps: u32,
        #[arg(long, default_value_t = 14)]
        days: u32,
        /// Mean reviews per user per day.
        #[arg(long)]
        rate: Option<f64>,
        /// Replace the random crowd with a fixed scenario.
        #[arg(long, value_enum)]
        script: Option<Script>,
        /// Also write the resulting event log to this (new) file.
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Script {
    /// Two users contest one AP until the second takes it over.
    Overtaking,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "wifiscout=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut config = ServiceConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { port, data_dir } => {
            if let Some(p) = port {
                config.port = p;
            }
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            serve(config)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Import { csv, data_dir } => {
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            import(&config, &csv)
        }
        Command::Simulate {
            seed,
            users,
            aps,
            days,
            rate,
            script,
            events_out,
        } => {
            let events = match script {
                Some(Script::Overtaking) => crowdsim::overtaking_script(seed),
                None => {
                    let mut scenario = Scenario::new(seed, users, aps, days);
                    if let Some(r) = rate {
                        scenario.reviews_per_user_per_day = r;
                    }
                    crowdsim::generate_events(&scenario)?
                }
            };
            let mut store = match &events_out {
                Some(path) => {
                    if path.exists() {
                        bail!("{} already exists", path.display());
                    }
                    AdvisoryStore::open(path, config.reward_config(), SyncPolicy::Manual)?
                }
                None => AdvisoryStore::in_memory(config.reward_config()),
            };
            let report = crowdsim::run_events(&mut store, &events);
            store.sync()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn open_store(config: &ServiceConfig, policy: SyncPolicy) -> anyhow::Result<AdvisoryStore> {
    fs::create_dir_all(&config.data_dir)
        .with_context(|| format!("cannot create data directory {}", config.data_dir.display()))?;
    let path = config.log_path();
    AdvisoryStore::open(&path, config.reward_config(), policy)
        .with_context(|| format!("cannot open event log {}", path.display()))
}

fn import(config: &ServiceConfig, csv: &Path) -> anyhow::Result<ExitCode> {
    let bytes = fs::read(csv).with_context(|| format!("cannot read {}", csv.display()))?;
    let mut store = open_store(config, SyncPolicy::PerAppend)?;
    let now = (api::system_clock())();
    match ingest::import_external_csv(&mut store, &bytes, now) {
        Ok(report) => {
            for e in &report.errors {
                eprintln!("line {}: {}", e.line, e.reason);
            }
            println!("imported={} errors={}", report.imported, report.errors.len());
            Ok(ExitCode::SUCCESS)
        }
        Err(IngestError::MalformedHeader(h)) => {
            eprintln!("error: malformed header {h:?}");
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let store = open_store(&config, SyncPolicy::PerAppend)?;
    tracing::info!(events = store.events().len(), path = %config.log_path().display(), "event log replayed");
    let app = api::router(AppState::new(store, api::system_clock(), config.cluster_radius_m));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })
}
