//! Factor-grid expansion and batch stimulus generation.
//!
//! Each grid cell is leveled, mixed, and written as a 32-bit float WAV. A
//! CSV manifest records factors, resolved gain, achieved level and content
//! hashes; re-running with unchanged inputs and config rewrites nothing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{self, AudioBuffer, AudioError, Calibration, LevelDBA, WavEncoding};
use crate::concealer::Approach;
use crate::leveling::{self, GainGrid, LevelTarget, LevelingConfig, LevelingError, MixtureProbe};

pub const MANIFEST_VERSION: &str = "concealer-manifest v1";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum GridError {
    #[error("factor list '{0}' is empty")]
    EmptyFactor(&'static str),
    #[error("duplicate value '{value}' in factor '{factor}'")]
    DuplicateFactor { factor: &'static str, value: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Leveling(#[from] LevelingError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> GridError + '_ {
    move |source| GridError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGrid {
    pub sources: Vec<String>,
    pub positives: Vec<String>,
    pub approaches: Vec<Approach>,
    pub delta_laeqs: Vec<f64>,
}

impl FactorGrid {
    pub fn cardinality(&self) -> usize {
        self.sources.len() * self.positives.len() * self.approaches.len() * self.delta_laeqs.len()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        fn unique<T: ToString>(factor: &'static str, values: &[T]) -> Result<(), GridError> {
            if values.is_empty() {
                return Err(GridError::EmptyFactor(factor));
            }
            let mut seen = std::collections::HashSet::new();
            for v in values {
                let key = v.to_string();
                if !seen.insert(key.clone()) {
                    return Err(GridError::DuplicateFactor { factor, value: key });
                }
            }
            Ok(())
        }
        unique("sources", &self.sources)?;
        unique("positives", &self.positives)?;
        unique("approaches", &self.approaches)?;
        unique("delta_laeqs", &self.delta_laeqs)?;
        for id in self.sources.iter().chain(&self.positives) {
            if id.is_empty() || id.contains(['/', '\\', '+', '=']) {
                return Err(GridError::Config(format!("invalid sound id '{id}'")));
            }
        }
        if let Some(id) = self.sources.iter().find(|s| s.contains('_')) {
            return Err(GridError::Config(format!("source id '{id}' must not contain '_'")));
        }
        if let Some(d) = self.delta_laeqs.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(LevelingError::NegativeDelta(*d).into());
        }
        Ok(())
    }
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub id: String,
    pub source_id: String,
    pub positive_id: String,
    pub approach: Approach,
    pub delta_laeq: f64,
}

impl StimulusSpec {
    pub fn new(source_id: &str, positive_id: &str, approach: Approach, delta_laeq: f64) -> Self {
        Self {
            id: stimulus_id(source_id, positive_id, approach, delta_laeq),
            source_id: source_id.to_string(),
            positive_id: positive_id.to_string(),
            approach,
            delta_laeq,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}_stimulus.wav", self.id)
    }
}

pub fn stimulus_id(source_id: &str, positive_id: &str, approach: Approach, delta_laeq: f64) -> String {
    format!("approach={approach}+delta_laeq={delta_laeq}+source={source_id}_{positive_id}")
}

/// Inverse of [`stimulus_id`].
pub fn parse_stimulus_id(id: &str) -> Option<StimulusSpec> {
    let rest = id.strip_prefix("approach=")?;
    let (approach, rest) = rest.split_once("+delta_laeq=")?;
    let (delta, rest) = rest.split_once("+source=")?;
    let (source, positive) = rest.split_once('_')?;
    let spec = StimulusSpec::new(source, positive, approach.parse().ok()?, delta.parse().ok()?);
    (spec.id == id).then_some(spec)
}

/// Cartesian product, sources-major then positives, approaches, levels.
pub fn expand(grid: &FactorGrid) -> Result<Vec<StimulusSpec>, GridError> {
    grid.validate()?;
    let mut specs = Vec::with_capacity(grid.cardinality());
    for s in &grid.sources {
        for p in &grid.positives {
            for &a in &grid.approaches {
                for &d in &grid.delta_laeqs {
                    specs.push(StimulusSpec::new(s, p, a, d));
                }
            }
        }
    }
    Ok(specs)
}

fn default_source_level() -> f64 {
    65.0
}

fn default_tolerance() -> f64 {
    0.1
}

/// `genstimuli` configuration: the factor grid plus leveling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(flatten)]
    pub grid: FactorGrid,
    /// Sources are normalized to this level before leveling, dB(A).
    #[serde(default = "default_source_level")]
    pub source_level_dba: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance_db: f64,
    #[serde(default)]
    pub gain_grid: GainGrid,
    #[serde(default)]
    pub leveling: LevelingConfig,
}

impl GridConfig {
    pub fn new(grid: FactorGrid) -> Self {
        Self {
            grid,
            source_level_dba: default_source_level(),
            tolerance_db: default_tolerance(),
            gain_grid: GainGrid::default(),
            leveling: LevelingConfig::default(),
        }
    }

    /// The 2 × 5 × 2 × 7 grid of the main experiment.
    pub fn experiment(sources: &[&str], positives: &[&str]) -> Self {
        Self::new(FactorGrid {
            sources: sources.iter().map(|s| s.to_string()).collect(),
            positives: positives.iter().map(|s| s.to_string()).collect(),
            approaches: vec![Approach::Masker, Approach::Concealer3],
            delta_laeqs: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        })
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let config: GridConfig = serde_json::from_str(text).map_err(|e| GridError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        self.grid.validate()?;
        self.gain_grid.validate()?;
        self.leveling
            .stft
            .validate()
            .map_err(|e| GridError::Config(e.to_string()))?;
        LevelTarget::new(LevelDBA(self.source_level_dba), 0.0, self.tolerance_db)?;
        Ok(())
    }

    pub fn calibration(&self) -> Calibration {
        self.leveling.calibration
    }

    /// Parameters that change generated audio, serialized for hashing.
    fn fingerprint(&self) -> String {
        serde_json::json!({
            "version": MANIFEST_VERSION,
            "source_level_dba": self.source_level_dba,
            "tolerance_db": self.tolerance_db,
            "gain_grid": self.gain_grid,
            "leveling": self.leveling,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub file: String,
    pub source_id: String,
    pub positive_id: String,
    pub approach: Approach,
    pub delta_laeq: f64,
    pub target_level_dba: f64,
    pub resolved_gain: Option<f64>,
    pub gain_db: Option<f64>,
    pub achieved_level_dba: Option<f64>,
    pub within_tolerance: bool,
    pub status: Status,
    pub error: String,
    pub input_hash: String,
    pub content_hash: String,
}

impl ManifestRow {
    pub fn spec(&self) -> StimulusSpec {
        StimulusSpec {
            id: self.id.clone(),
            source_id: self.source_id.clone(),
            positive_id: self.positive_id.clone(),
            approach: self.approach,
            delta_laeq: self.delta_laeq,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn ok_rows(&self) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(|r| r.is_ok())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, GridError> {
        let mut out = format!("# {MANIFEST_VERSION}\n").into_bytes();
        {
            let mut writer = csv::Writer::from_writer(&mut out);
            for row in &self.rows {
                writer.serialize(row)?;
            }
            if self.rows.is_empty() {
                writer.write_record(MANIFEST_COLUMNS)?;
            }
            writer.flush().map_err(|e| GridError::Manifest(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, GridError> {
        let text = std::str::from_utf8(bytes).map_err(|e| GridError::Manifest(e.to_string()))?;
        let first = text.lines().next().unwrap_or_default();
        if first.trim() != format!("# {MANIFEST_VERSION}") {
            return Err(GridError::Manifest(format!("unsupported manifest header '{first}'")));
        }
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        let rows = reader.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        write_atomic(path.as_ref(), &self.to_csv()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        Self::from_csv(&fs::read(path).map_err(io_err(path))?)
    }
}

pub const MANIFEST_COLUMNS: [&str; 15] = [
    "id",
    "file",
    "source_id",
    "positive_id",
    "approach",
    "delta_laeq",
    "target_level_dba",
    "resolved_gain",
    "gain_db",
    "achieved_level_dba",
    "within_tolerance",
    "status",
    "error",
    "input_hash",
    "content_hash",
];

/// Writes via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GridError> {
    let name = path
        .file_name()
        .ok_or_else(|| GridError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationReport {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub written: usize,
    pub unchanged: usize,
    pub failed: usize,
}

struct Input {
    buffer: AudioBuffer,
    hash: String,
}

fn load_input(audio_dir: &Path, id: &str) -> Result<Input, String> {
    let path = audio_dir.join(format!("{id}.wav"));
    let bytes = fs::read(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let buffer = audio::decode_wav(&bytes, id).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Input {
        buffer,
        hash: sha256_hex(&bytes),
    })
}

enum Outcome {
    Written(ManifestRow),
    Unchanged(ManifestRow),
    Failed(ManifestRow),
}

/// Levels, mixes and writes every grid cell, then the manifest.
///
/// Per-cell failures (missing or corrupt inputs, unsatisfiable leveling) are
/// recorded in the manifest and do not stop the run.
pub fn generate_all(config: &GridConfig, audio_dir: &Path, out_dir: &Path) -> Result<GenerationReport, GridError> {
    config.validate()?;
    let specs = expand(&config.grid)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let previous: HashMap<String, ManifestRow> = match Manifest::read(&manifest_path) {
        Ok(m) => m.rows.into_iter().map(|r| (r.id.clone(), r)).collect(),
        Err(_) => HashMap::new(),
    };

    let ids: Vec<&String> = config.grid.sources.iter().chain(&config.grid.positives).collect();
    let mut inputs: BTreeMap<&str, Result<Input, String>> =
        ids.par_iter().map(|id| (id.as_str(), load_input(audio_dir, id))).collect();

    let source_level = LevelDBA(config.source_level_dba);
    for id in &config.grid.sources {
        if let Some(Ok(input)) = inputs.get_mut(id.as_str()) {
            match audio::normalize_to_level(&input.buffer, source_level, config.calibration()) {
                Ok(b) => input.buffer = b,
                Err(e) => {
                    inputs.insert(id.as_str(), Err(format!("{id}: {e}")));
                }
            }
        }
    }

    let fingerprint = config.fingerprint();
    let outcomes: Vec<Outcome> = specs
        .par_iter()
        .map(|spec| {
            generate_one(
                spec,
                config,
                &fingerprint,
                inputs.get(spec.source_id.as_str()).expect("every source was loaded"),
                inputs.get(spec.positive_id.as_str()).expect("every positive was loaded"),
                out_dir,
                previous.get(&spec.id),
            )
        })
        .collect::<Result<_, GridError>>()?;

    let mut report = GenerationReport {
        manifest_path: manifest_path.clone(),
        ..Default::default()
    };
    for outcome in outcomes {
        let row = match outcome {
            Outcome::Written(r) => {
                report.written += 1;
                r
            }
            Outcome::Unchanged(r) => {
                report.unchanged += 1;
                r
            }
            Outcome::Failed(r) => {
                report.failed += 1;
                r
            }
        };
        report.manifest.rows.push(row);
    }
    let bytes = report.manifest.to_csv()?;
    let same = fs::read(&manifest_path).map(|old| old == bytes).unwrap_or(false);
    if !same {
        write_atomic(&manifest_path, &bytes)?;
    }
    Ok(report)
}

fn generate_one(
    spec: &StimulusSpec,
    config: &GridConfig,
    fingerprint: &str,
    source: &Result<Input, String>,
    positive: &Result<Input, String>,
    out_dir: &Path,
    previous: Option<&ManifestRow>,
) -> Result<Outcome, GridError> {
    let target = LevelTarget::new(LevelDBA(config.source_level_dba), spec.delta_laeq, config.tolerance_db)?;
    let mut row = ManifestRow {
        id: spec.id.clone(),
        file: spec.file_name(),
        source_id: spec.source_id.clone(),
        positive_id: spec.positive_id.clone(),
        approach: spec.approach,
        delta_laeq: spec.delta_laeq,
        target_level_dba: target.level().0,
        resolved_gain: None,
        gain_db: None,
        achieved_level_dba: None,
        within_tolerance: false,
        status: Status::Failed,
        error: String::new(),
        input_hash: String::new(),
        content_hash: String::new(),
    };
    let (source, positive) = match (source, positive) {
        (Ok(s), Ok(p)) => (s, p),
        (Err(e), _) | (_, Err(e)) => {
            row.error = e.clone();
            return Ok(Outcome::Failed(row));
        }
    };
    let mut hasher = Sha256::new();
    for part in [fingerprint, &spec.id, &source.hash, &positive.hash] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    row.input_hash = hex::encode(hasher.finalize());

    let path = out_dir.join(&row.file);
    if let Some(prev) = previous {
        if prev.is_ok() && prev.input_hash == row.input_hash && prev.file == row.file {
            if let Ok(bytes) = fs::read(&path) {
                if sha256_hex(&bytes) == prev.content_hash {
                    return Ok(Outcome::Unchanged(prev.clone()));
                }
            }
        }
    }

    let (s, p) = (&source.buffer, &positive.buffer);
    if s.sample_rate() != p.sample_rate() || s.len() != p.len() {
        row.error = format!(
            "inputs differ: {} has {} samples at {} Hz, {} has {} samples at {} Hz",
            spec.source_id,
            s.len(),
            s.sample_rate(),
            spec.positive_id,
            p.len(),
            p.sample_rate()
        );
        return Ok(Outcome::Failed(row));
    }

    let built = (|| -> Result<(AudioBuffer, leveling::GainSolution), LevelingError> {
        let probe = MixtureProbe::new(s, p, spec.approach, &config.leveling)?;
        let solution = leveling::solve_with_probe(&probe, &target, &config.gain_grid, config.leveling.strategy)?;
        let maquilleur = probe.maquilleur(p, solution.gain)?;
        let mixture = audio::mix(s, &maquilleur)?.quantized_f32().with_label(spec.id.clone());
        Ok((mixture, solution))
    })();
    let (mixture, solution) = match built {
        Ok(v) => v,
        Err(e) => {
            if let LevelingError::Unsatisfiable { best_gain, best_gain_db, best_level, .. } = &e {
                row.resolved_gain = Some(*best_gain);
                row.gain_db = Some(*best_gain_db);
                row.achieved_level_dba = Some(best_level.0);
            }
            row.error = e.to_string();
            return Ok(Outcome::Failed(row));
        }
    };

    let achieved = audio::leq_dba(&mixture, config.calibration())?;
    row.resolved_gain = Some(solution.gain);
    row.gain_db = Some(solution.gain_db);
    row.achieved_level_dba = Some(achieved.0);
    row.within_tolerance = target.accepts(achieved);
    row.status = Status::Ok;
    if !row.within_tolerance {
        row.error = format!("exported mixture measures {achieved}, outside {} ± {}", target.level(), target.tolerance);
    }
    let bytes = audio::encode_wav(&mixture, WavEncoding::Float32)?;
    row.content_hash = sha256_hex(&bytes);
    let unchanged = fs::read(&path).map(|old| sha256_hex(&old) == row.content_hash).unwrap_or(false);
    if unchanged {
        return Ok(Outcome::Unchanged(row));
    }
    write_atomic(&path, &bytes)?;
    Ok(Outcome::Written(row))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(s: usize, p: usize, a: usize, d: usize) -> FactorGrid {
        FactorGrid {
            sources: (0..s).map(|i| format!("src{i}")).collect(),
            positives: (0..p).map(|i| format!("pos{i}")).collect(),
            approaches: Approach::ALL[..a].to_vec(),
            delta_laeqs: (0..d).map(|i| i as f64 * 0.5).collect(),
        }
    }

    #[test]
    fn cardinalities() {
        assert_eq!(expand(&grid(2, 5, 2, 7)).unwrap().len(), 140);
        assert_eq!(expand(&grid(1, 1, 1, 1)).unwrap().len(), 1);
        assert_eq!(expand(&grid(1, 5, 4, 2)).unwrap().len(), 40);
    }

    #[test]
    fn order_is_sources_major() {
        let specs = expand(&grid(2, 2, 2, 2)).unwrap();
        assert_eq!(specs[0].source_id, "src0");
        assert_eq!(specs[7].source_id, "src0");
        assert_eq!(specs[8].source_id, "src1");
        assert_eq!((specs[1].delta_laeq, specs[2].approach), (0.5, Approach::Concealer1));
    }

    #[test]
    fn empty_or_duplicate_factors_are_rejected() {
        let mut g = grid(1, 1, 1, 1);
        g.positives.clear();
        assert!(matches!(expand(&g), Err(GridError::EmptyFactor("positives"))));
        let mut g = grid(2, 1, 1, 1);
        g.sources[1] = g.sources[0].clone();
        assert!(matches!(expand(&g), Err(GridError::DuplicateFactor { .. })));
        let mut g = grid(1, 1, 1, 1);
        g.delta_laeqs = vec![-0.5];
        assert!(expand(&g).is_err());
    }

    #[test]
    fn ids_follow_naming_and_parse_back() {
        let spec = StimulusSpec::new("ventil1", "rain", Approach::Concealer3, 1.5);
        assert_eq!(spec.id, "approach=concealer-3+delta_laeq=1.5+source=ventil1_rain");
        assert_eq!(spec.file_name(), "approach=concealer-3+delta_laeq=1.5+source=ventil1_rain_stimulus.wav");
        assert_eq!(StimulusSpec::new("a", "b", Approach::Masker, 0.0).id, "approach=masker+delta_laeq=0+source=a_b");
        assert_eq!(parse_stimulus_id(&spec.id), Some(spec));
        assert_eq!(parse_stimulus_id("approach=x+delta_laeq=0+source=a_b"), None);
    }

    #[test]
    fn config_json_mirrors_the_grid() {
        let json = r#"{"sources":["ventil1"],"positives":["rain","waves"],
            "approaches":["masker","concealer-3"],"delta_laeqs":[0,1.5]}"#;
        let config = GridConfig::from_json(json).unwrap();
        assert_eq!(config.grid.cardinality(), 8);
        assert_eq!(config.source_level_dba, 65.0);
        assert_eq!(config.tolerance_db, 0.1);
        assert_eq!(config.gain_grid, GainGrid::default());
        let back = GridConfig::from_json(&serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(back, config);
        assert!(GridConfig::from_json(r#"{"sources":[]}"#).is_err());
    }

    #[test]
    fn manifest_csv_round_trip() {
        let mut manifest = Manifest::default();
        for spec in expand(&grid(1, 1, 2, 2)).unwrap() {
            manifest.rows.push(ManifestRow {
                file: spec.file_name(),
                id: spec.id,
                source_id: spec.source_id,
                positive_id: spec.positive_id,
                approach: spec.approach,
                delta_laeq: spec.delta_laeq,
                target_level_dba: 65.0 + spec.delta_laeq,
                resolved_gain: Some(0.25),
                gain_db: Some(-3.5),
                achieved_level_dba: Some(65.02),
                within_tolerance: true,
                status: Status::Ok,
                error: String::new(),
                input_hash: "ab".into(),
                content_hash: "cd".into(),
            });
        }
        manifest.rows[1].status = Status::Failed;
        manifest.rows[1].resolved_gain = None;
        manifest.rows[1].error = "no lattice gain, \"quoted\"".into();
        let bytes = manifest.to_csv().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("# concealer-manifest v1\nid,file,source_id,"));
        assert_eq!(Manifest::from_csv(&bytes).unwrap(), manifest);
        assert!(Manifest::from_csv(b"id,file\n").is_err());
    }
}
