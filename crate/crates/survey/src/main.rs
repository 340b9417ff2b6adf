use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use streetpulse_survey::http::{serve, AppState};
use streetpulse_survey::service::{Service, DEFAULT_SNAPSHOT_EVERY};
use streetpulse_survey::store::FileStore;

/// Pairwise street-view survey server.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Port to listen on; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    port: u16,

    #[arg(long, default_value = "127.0.0.1")]
    host: String,

    /// Directory of `<image_id>.jpg|png|webp` files.
    #[arg(long)]
    images_dir: Option<PathBuf>,

    /// Where the event log and snapshots live.
    #[arg(long)]
    store_dir: PathBuf,

    /// TOML file with alpha, repeat_rate, seed, repeated_pairs, survey_set.
    #[arg(long)]
    scheduler_config: Option<PathBuf>,

    /// Write votes.csv and sessions.csv into this directory and exit.
    #[arg(long)]
    export: Option<PathBuf>,

    #[arg(long, default_value_t = DEFAULT_SNAPSHOT_EVERY)]
    snapshot_every: u64,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let scheduler = streetpulse_survey::load_scheduler(args.scheduler_config.as_deref(), args.images_dir.as_deref())
        .context("loading the survey set")?;
    let store = FileStore::open(&args.store_dir).with_context(|| format!("opening {}", args.store_dir.display()))?;
    let service = Service::open(scheduler, Box::new(store), args.snapshot_every).context("recovering the store")?;

    if let Some(dir) = &args.export {
        std::fs::create_dir_all(dir)?;
        service.export_votes(BufWriter::new(File::create(dir.join("votes.csv"))?))?;
        service.export_sessions(BufWriter::new(File::create(dir.join("sessions.csv"))?))?;
        return Ok(());
    }

    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("bad --host/--port")?;
    let state = AppState::new(service, args.images_dir);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        serve(listener, state).await?;
        anyhow::Ok(())
    })
}
