//! Positive-sound gain search for a target mixture level, and MSNR.
//!
//! The search walks a fixed lattice of positive gains (in dB relative to the
//! gain that brings the positive to the source level) and returns the lowest
//! lattice gain whose mixture lands within tolerance of the target. Every
//! candidate mixture is built and measured; nothing is predicted.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, db_to_gain, AudioBuffer, AudioError, Calibration, LevelDBA};
use crate::concealer::{Approach, ConcealerBuilder, ConcealerError};
use crate::tf::StftParams;
use crate::weighting::AWeighting;

#[derive(Debug, Error)]
pub enum LevelingError {
    #[error("delta L_Aeq must be >= 0, got {0}")]
    NegativeDelta(f64),
    #[error("tolerance must be > 0, got {0}")]
    BadTolerance(f64),
    #[error("gain grid needs min < max and step > 0 (got {min}..{max} step {step})")]
    BadGrid { min: f64, max: f64, step: f64 },
    #[error(
        "no lattice gain reaches {target} ± {tolerance} dB; closest was {best_gain_db:+.2} dB giving {best_level} (residual {residual:+.3} dB)"
    )]
    Unsatisfiable {
        target: LevelDBA,
        tolerance: f64,
        best_gain_db: f64,
        best_gain: f64,
        best_level: LevelDBA,
        residual: f64,
    },
    #[error("{0} has a different length than the source")]
    LengthMismatch(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Concealer(#[from] ConcealerError),
    #[error("CSV export failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Target mixture level: `source_level + delta_laeq ± tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelTarget {
    pub source_level: LevelDBA,
    pub delta_laeq: f64,
    pub tolerance: f64,
}

impl LevelTarget {
    pub fn new(source_level: LevelDBA, delta_laeq: f64, tolerance: f64) -> Result<Self, LevelingError> {
        if !(delta_laeq >= 0.0) {
            return Err(LevelingError::NegativeDelta(delta_laeq));
        }
        if !(tolerance > 0.0) {
            return Err(LevelingError::BadTolerance(tolerance));
        }
        Ok(Self {
            source_level,
            delta_laeq,
            tolerance,
        })
    }

    pub fn level(&self) -> LevelDBA {
        self.source_level.plus(self.delta_laeq)
    }

    pub fn accepts(&self, level: LevelDBA) -> bool {
        (level.0 - self.level().0).abs() <= self.tolerance
    }
}

/// Search lattice over positive gain, in dB relative to the source-matching gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainGrid {
    pub min_gain_db: f64,
    pub max_gain_db: f64,
    pub step_db: f64,
}

impl Default for GainGrid {
    fn default() -> Self {
        Self {
            min_gain_db: -60.0,
            max_gain_db: 10.0,
            step_db: 0.05,
        }
    }
}

impl GainGrid {
    pub fn validate(&self) -> Result<(), LevelingError> {
        if !(self.min_gain_db < self.max_gain_db) || !(self.step_db > 0.0) {
            return Err(LevelingError::BadGrid {
                min: self.min_gain_db,
                max: self.max_gain_db,
                step: self.step_db,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.max_gain_db - self.min_gain_db) / self.step_db + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lattice point `i`, ascending.
    pub fn gain_db(&self, i: usize) -> f64 {
        self.min_gain_db + i as f64 * self.step_db
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.gain_db(i))
    }
}

/// Order in which lattice points are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SearchStrategy {
    /// Every lattice point in ascending order.
    Exhaustive,
    /// Visits every `stride`-th point until the mixture reaches the lower
    /// edge of the window, then scans the skipped points ascending. Returns
    /// the exhaustive answer whenever the level curve is non-decreasing.
    Strided { stride: usize },
}

impl Default for SearchStrategy {
    fn default() -> Self {
        SearchStrategy::Strided { stride: 20 }
    }
}

impl SearchStrategy {
    fn stride(self) -> usize {
        match self {
            SearchStrategy::Exhaustive => 1,
            SearchStrategy::Strided { stride } => stride.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LevelingConfig {
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default)]
    pub stft: StftParams,
    #[serde(default)]
    pub strategy: SearchStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainSolution {
    /// Linear gain applied to the positive sound as loaded.
    pub gain: f64,
    /// Lattice coordinate: dB relative to the source-matching gain.
    pub gain_db: f64,
    pub positive_level: LevelDBA,
    pub mixture_level: LevelDBA,
    /// `mixture_level − target`.
    pub residual: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub gain_db: f64,
    pub positive_level: LevelDBA,
    pub mixture_level: LevelDBA,
}

/// Measures mixture levels for one (source, positive, approach) triple.
pub struct MixtureProbe {
    approach: Approach,
    calibration: Calibration,
    weighting: AWeighting,
    source_weighted: Vec<f64>,
    positive_weighted: Vec<f64>,
    positive_level: LevelDBA,
    reference_gain: f64,
    concealer: Option<ConcealerBuilder>,
}

impl MixtureProbe {
    pub fn new(
        source: &AudioBuffer,
        positive: &AudioBuffer,
        approach: Approach,
        config: &LevelingConfig,
    ) -> Result<Self, LevelingError> {
        if source.sample_rate() != positive.sample_rate() {
            return Err(AudioError::RateMismatch(source.sample_rate(), positive.sample_rate()).into());
        }
        let len = source.len().min(positive.len());
        let (source, positive) = (source.truncated(len), positive.truncated(len));
        let weighting = AWeighting::new(source.sample_rate(), len)?;
        let source_weighted = weighting.apply(source.samples());
        let positive_weighted = weighting.apply(positive.samples());
        let level_of = |weighted: &[f64], label: &str| {
            config
                .calibration
                .level_from_mean_square(audio::mean_square(weighted))
                .ok_or_else(|| AudioError::Silent(label.to_string()))
        };
        let source_level = level_of(&source_weighted, source.label())?;
        let positive_level = level_of(&positive_weighted, positive.label())?;
        let concealer = match approach.method() {
            Some(method) => Some(ConcealerBuilder::new(&source, &positive, method, config.stft)?),
            None => None,
        };
        Ok(Self {
            approach,
            calibration: config.calibration,
            weighting,
            source_weighted,
            positive_weighted,
            positive_level,
            reference_gain: db_to_gain(source_level.0 - positive_level.0),
            concealer,
        })
    }

    /// Linear gain that brings the positive to the source level.
    pub fn reference_gain(&self) -> f64 {
        self.reference_gain
    }

    pub fn positive_level_at(&self, gain: f64) -> LevelDBA {
        self.positive_level.plus(audio::gain_to_db(gain))
    }

    /// Builds the mixture for positive gain `gain` and returns its level.
    pub fn mixture_level(&self, gain: f64) -> Result<LevelDBA, LevelingError> {
        let ms = match &self.concealer {
            None => {
                let n = self.source_weighted.len();
                self.source_weighted
                    .iter()
                    .zip(&self.positive_weighted)
                    .map(|(s, p)| {
                        let m = s + gain * p;
                        m * m
                    })
                    .sum::<f64>()
                    / n as f64
            }
            Some(builder) => {
                let c = builder.build(gain)?;
                let cw = self.weighting.apply(c.samples());
                let n = self.source_weighted.len();
                self.source_weighted
                    .iter()
                    .zip(&cw)
                    .map(|(s, c)| {
                        let m = s + c;
                        m * m
                    })
                    .sum::<f64>()
                    / n as f64
            }
        };
        self.calibration
            .level_from_mean_square(ms)
            .ok_or_else(|| AudioError::Silent("mixture".into()).into())
    }

    /// The maquilleur for `gain`: the scaled positive or the concealer.
    pub fn maquilleur(&self, positive: &AudioBuffer, gain: f64) -> Result<AudioBuffer, LevelingError> {
        let len = self.source_weighted.len();
        match &self.concealer {
            None => Ok(positive.truncated(len).scaled(gain)),
            Some(builder) => Ok(builder.build(gain)?),
        }
    }

    pub fn approach(&self) -> Approach {
        self.approach
    }
}

/// Lowest lattice gain whose mixture meets `target`.
///
/// `source` must already sit at `target.source_level`.
pub fn solve_positive_gain(
    source: &AudioBuffer,
    positive: &AudioBuffer,
    approach: Approach,
    target: &LevelTarget,
    grid: &GainGrid,
    config: &LevelingConfig,
) -> Result<GainSolution, LevelingError> {
    grid.validate()?;
    let probe = MixtureProbe::new(source, positive, approach, config)?;
    solve_with_probe(&probe, target, grid, config.strategy)
}

pub fn solve_with_probe(
    probe: &MixtureProbe,
    target: &LevelTarget,
    grid: &GainGrid,
    strategy: SearchStrategy,
) -> Result<GainSolution, LevelingError> {
    grid.validate()?;
    let n = grid.len();
    let stride = strategy.stride();
    let goal = target.level();
    let lower = goal.0 - target.tolerance;
    let mut evaluations = 0usize;
    let mut best: Option<(usize, LevelDBA)> = None;

    let mut evaluate = |i: usize| -> Result<LevelDBA, LevelingError> {
        let gain = probe.reference_gain() * db_to_gain(grid.gain_db(i));
        let level = probe.mixture_level(gain)?;
        evaluations += 1;
        let closer = best.is_none_or(|(_, b)| (level.0 - goal.0).abs() < (b.0 - goal.0).abs());
        if closer {
            best = Some((i, level));
        }
        Ok(level)
    };

    let mut coarse: Vec<usize> = (0..n).step_by(stride).collect();
    if coarse.last() != Some(&(n - 1)) {
        coarse.push(n - 1);
    }
    let mut previous: Option<usize> = None;
    let mut hit: Option<(usize, LevelDBA)> = None;
    'scan: for &i in &coarse {
        let level = evaluate(i)?;
        if level.0 >= lower {
            let start = previous.map_or(0, |p| p + 1);
            for j in start..i {
                let fine = evaluate(j)?;
                if target.accepts(fine) {
                    hit = Some((j, fine));
                    break 'scan;
                }
            }
            if target.accepts(level) {
                hit = Some((i, level));
                break 'scan;
            }
        }
        previous = Some(i);
    }

    match hit {
        Some((i, level)) => {
            let gain_db = grid.gain_db(i);
            let gain = probe.reference_gain() * db_to_gain(gain_db);
            Ok(GainSolution {
                gain,
                gain_db,
                positive_level: probe.positive_level_at(gain),
                mixture_level: level,
                residual: level.0 - goal.0,
                evaluations,
            })
        }
        None => {
            let (i, level) = best.expect("lattice is never empty");
            let best_gain_db = grid.gain_db(i);
            Err(LevelingError::Unsatisfiable {
                target: goal,
                tolerance: target.tolerance,
                best_gain_db,
                best_gain: probe.reference_gain() * db_to_gain(best_gain_db),
                best_level: level,
                residual: level.0 - goal.0,
            })
        }
    }
}

/// Masking-sound-to-noise ratio: `L(positive) − L(source)`, positive when
/// the maquilleur is louder.
pub fn msnr(positive_at_gain: &AudioBuffer, source: &AudioBuffer, calibration: Calibration) -> Result<f64, LevelingError> {
    let p = audio::leq_dba(positive_at_gain, calibration)?;
    let s = audio::leq_dba(source, calibration)?;
    Ok(p.0 - s.0)
}

/// Mixture level at every lattice point.
pub fn level_curve(
    source: &AudioBuffer,
    positive: &AudioBuffer,
    approach: Approach,
    grid: &GainGrid,
    config: &LevelingConfig,
) -> Result<Vec<CurvePoint>, LevelingError> {
    grid.validate()?;
    let probe = MixtureProbe::new(source, positive, approach, config)?;
    grid.points()
        .map(|gain_db| {
            let gain = probe.reference_gain() * db_to_gain(gain_db);
            Ok(CurvePoint {
                gain_db,
                positive_level: probe.positive_level_at(gain),
                mixture_level: probe.mixture_level(gain)?,
            })
        })
        .collect()
}

/// Writes `positive_level_db,mixture_level_db` rows.
pub fn write_level_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<(), LevelingError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["positive_level_db", "mixture_level_db"])?;
    for p in points {
        writer.write_record([
            format!("{:.4}", p.positive_level.0),
            format!("{:.4}", p.mixture_level.0),
        ])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}
