use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use concealer_expserver::{router, AppState, Experiment, ServerConfig, SystemClock};

/// Serves the Best-Worst Scaling listening experiment.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "EXPSERVER_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "EXPSERVER_HOST", default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Stimulus manifest written by genstimuli.
    #[arg(long, env = "EXPSERVER_MANIFEST")]
    manifest: PathBuf,
    /// Results files and session logs go here.
    #[arg(long, env = "EXPSERVER_OUTPUT_DIR")]
    output_dir: PathBuf,
    /// Directory holding `<positive_id>.wav` for the verbalization task.
    #[arg(long, env = "EXPSERVER_AUDIO_DIR")]
    audio_dir: Option<PathBuf>,
    #[arg(long, env = "EXPSERVER_SEED", default_value_t = 0)]
    seed: u64,
}

#[tokio::main]
async fn main() {
    let args = Args::parse();
    if let Err(e) = run(args).await {
        eprintln!("expserver: {e}");
        std::process::exit(1);
    }
}

async fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let experiment = Experiment::load(&args.manifest, args.audio_dir.as_deref())?;
    let mut config = ServerConfig::new(&args.output_dir);
    config.seed = args.seed;
    let state = AppState::open(experiment, config, Arc::new(SystemClock))?;
    let resumed = state.session_ids().len();
    let addr = SocketAddr::new(args.host, args.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("expserver: listening on http://{addr} ({resumed} sessions resumed)");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
