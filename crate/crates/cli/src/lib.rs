//! Shared plumbing for the `genstimuli`, `analyze` and `synthcorpus` tools.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use concealer_core::analysis::ScoreRow;
use concealer_core::bws::results::{judgments, read_results};
use concealer_core::bws::Judgment;

/// Expands directories into the `results*.csv` files they hold, sorted.
pub fn results_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.starts_with("results") && name.ends_with(".csv")
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no results files found");
    }
    Ok(out)
}

pub fn load_judgments(paths: &[PathBuf]) -> Result<Vec<Judgment>> {
    let mut all = Vec::new();
    for path in results_files(paths)? {
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let rows = read_results(file).with_context(|| format!("reading {}", path.display()))?;
        all.extend(judgments(&rows).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(all)
}

/// Reads a score table CSV as written by `analyze scores`.
pub fn read_score_rows(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .with_context(|| format!("reading {}", path.display()))?;
    if rows.is_empty() {
        bail!("{} holds no scores", path.display());
    }
    Ok(rows)
}

pub fn create_file(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}
