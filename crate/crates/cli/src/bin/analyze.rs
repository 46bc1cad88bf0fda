use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args as ClapArgs, Parser, Subcommand};
use concealer_cli::{create_file, load_judgments, read_score_rows};
use concealer_core::analysis::{
    aggregate, spectral_features, trends, welch_t_test, write_aggregates_csv, write_features_csv, write_trends_csv,
    Factor,
};
use concealer_core::audio::load_wav;
use concealer_core::bws::scoring::{inter_compliance, intra_compliance, score_all, Algorithm, ScoringConfig};
use concealer_core::concealer::Approach;
use concealer_core::gengrid::Manifest;
use concealer_core::tf::StftParams;

/// Scores, group statistics and spectral features from experiment output.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fits scores from results files and writes the score table.
    Scores {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group means, ΔL trends and the masker/concealer Welch test from a score table.
    Trends {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Spectral features of WAV files, one row per file.
    Features {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
    },
    /// Per-participant intra- and inter-compliance.
    Compliance {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ClapArgs)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `results<id>.csv` files or directories holding them.
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    /// value_learning, elo or rescorla_wagner.
    #[arg(long, default_value = "value_learning")]
    algorithm: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitArgs {
    fn config(&self) -> Result<ScoringConfig> {
        let algorithm = Algorithm::from_name(&self.algorithm).ok_or_else(|| anyhow!("unknown algorithm '{}'", self.algorithm))?;
        Ok(ScoringConfig {
            algorithm,
            epochs: self.epochs,
            seed: self.seed,
        })
    }

    fn stimuli(&self) -> Result<Vec<String>> {
        let manifest = Manifest::read(&self.manifest)?;
        Ok(manifest.ok_rows().map(|r| r.id.clone()).collect())
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Scores { fit, out } => {
            let table = score_all(&fit.stimuli()?, &load_judgments(&fit.results)?, &fit.config()?)?;
            table.write_csv(create_file(&out)?)?;
            eprintln!("{} scores -> {}", table.scores.len(), out.display());
        }
        Command::Trends { scores, out_dir } => write_trends(&scores, &out_dir)?,
        Command::Features { out, wavs } => {
            let mut rows = Vec::new();
            for path in &wavs {
                let buf = load_wav(path)?;
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
                rows.push((id, spectral_features(&buf, StftParams::default())?));
            }
            write_features_csv(&rows, create_file(&out)?)?;
        }
        Command::Compliance { fit, out } => {
            let stimuli = fit.stimuli()?;
            let config = fit.config()?;
            let js = load_judgments(&fit.results)?;
            let inter = inter_compliance(&stimuli, &js, &config)?;
            let mut w = csv::Writer::from_writer(create_file(&out)?);
            w.write_record(["participant_id", "intra_compliance", "inter_compliance"])?;
            for (pid, inter) in inter {
                let own: Vec<_> = js.iter().filter(|j| j.participant_id == pid).cloned().collect();
                let intra = intra_compliance(&stimuli, &own, &config)?;
                w.write_record([pid.to_string(), intra.to_string(), inter.to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn write_trends(scores: &Path, out_dir: &Path) -> Result<()> {
    let rows = read_score_rows(scores)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let groupings: [(&str, &[Factor]); 4] = [
        ("by_approach.csv", &[Factor::Approach]),
        ("by_approach_delta_laeq.csv", &[Factor::Approach, Factor::DeltaLaeq]),
        ("by_approach_positive.csv", &[Factor::Approach, Factor::Positive]),
        ("by_approach_source.csv", &[Factor::Approach, Factor::Source]),
    ];
    for (name, by) in groupings {
        let stats = aggregate(&rows, by)?;
        write_aggregates_csv(by, &stats, create_file(&out_dir.join(name))?)?;
    }
    write_trends_csv(&trends(&rows)?, create_file(&out_dir.join("trends.csv"))?)?;

    let (masker, concealer): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.approach == Approach::Masker);
    let a: Vec<f64> = masker.iter().map(|r| r.score).collect();
    let b: Vec<f64> = concealer.iter().map(|r| r.score).collect();
    let mut w = csv::Writer::from_writer(create_file(&out_dir.join("welch.csv"))?);
    w.write_record(["group_a", "group_b", "n_a", "n_b", "t", "df", "p"])?;
    match welch_t_test(&a, &b) {
        Ok(r) => {
            println!("masker vs concealer: t = {:.4}, df = {:.2}, p = {:.4}", r.t, r.df, r.p);
            w.write_record([
                "masker".to_string(),
                "concealer".to_string(),
                a.len().to_string(),
                b.len().to_string(),
                r.t.to_string(),
                r.df.to_string(),
                r.p.to_string(),
            ])?;
        }
        Err(e) => eprintln!("masker vs concealer: {e}"),
    }
    w.flush()?;
    Ok(())
}
