use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use concealer_core::synth::{write_surrogate_corpus, POSITIVE_IDS, SOURCE_IDS};

/// Writes the surrogate corpus: two ventilation noises and five water sounds.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[arg(long, default_value_t = 44_100)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    let args = Args::parse();
    write_surrogate_corpus(&args.out_dir, args.seconds, args.sample_rate, args.seed)?;
    for id in SOURCE_IDS.iter().chain(&POSITIVE_IDS) {
        println!("{}", args.out_dir.join(format!("{id}.wav")).display());
    }
    Ok(())
}
