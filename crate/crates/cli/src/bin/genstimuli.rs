use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::Parser;
use concealer_core::gengrid::{generate_all, GridConfig};
use concealer_core::synth::{POSITIVE_IDS, SOURCE_IDS};

/// Levels and writes every stimulus of a factor grid, plus `manifest.csv`.
///
/// Re-running with unchanged inputs rewrites nothing.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Grid JSON. Defaults to the 2 × 5 × 2 × 7 grid over the surrogate corpus ids.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Holds `<id>.wav` for every source and positive id.
    #[arg(long)]
    audio_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> Result<ExitCode> {
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => GridConfig::load(path)?,
        None => GridConfig::experiment(&SOURCE_IDS, &POSITIVE_IDS),
    };
    let start = Instant::now();
    let report = generate_all(&config, &args.audio_dir, &args.out_dir)?;
    eprintln!(
        "{} cells: {} written, {} unchanged, {} failed in {:.1} s -> {}",
        report.manifest.len(),
        report.written,
        report.unchanged,
        report.failed,
        start.elapsed().as_secs_f64(),
        report.manifest_path.display()
    );
    for row in report.manifest.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!("  {}: {}", row.id, row.error);
    }
    Ok(if report.failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
