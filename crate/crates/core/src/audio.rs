//! Mono PCM buffers, WAV I/O, A-weighted equivalent levels, gain and mixing.
//!
//! Levels are measured digitally (dBFS(A)) and mapped to acoustic dB(A) by a
//! single [`Calibration`] offset. All ΔL arithmetic is offset-independent.

use std::fmt;
use std::io::{Cursor, Read, Seek, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weighting::AWeighting;

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// Peak ceiling enforced when exporting 16-bit PCM.
pub const INT16_PEAK_CEILING_DBFS: f64 = -1.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("WAV encoding failed: {0}")]
    Encode(#[source] hound::Error),
    #[error("unsupported WAV format: {0}")]
    Unsupported(String),
    #[error("'{0}' contains no samples")]
    Empty(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("sample rate {0} Hz is too low for A-weighting (need at least 8000 Hz)")]
    RateTooLow(u32),
    #[error("'{0}' is silent; its level is -inf")]
    Silent(String),
    #[error("gain must be finite and positive, got {0}")]
    InvalidGain(f64),
    #[error("peak {peak_dbfs:.2} dBFS exceeds the {ceiling_dbfs} dBFS ceiling for 16-bit export")]
    PeakTooHigh { peak_dbfs: f64, ceiling_dbfs: f64 },
}

/// Mono signal with samples in linear full-scale units (±1.0).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
    label: String,
}

impl AudioBuffer {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        label: impl Into<String>,
    ) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
            label: label.into(),
        })
    }

    pub fn zeros(len: usize, sample_rate: u32, label: impl Into<String>) -> Result<Self, AudioError> {
        Self::new(vec![0.0; len], sample_rate, label)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&x| x == 0.0)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn mean_square(&self) -> f64 {
        mean_square(&self.samples)
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
            label: self.label.clone(),
        }
    }

    /// Truncated copy holding at most `len` samples.
    pub fn truncated(&self, len: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
            label: self.label.clone(),
        }
    }

    /// Rounds every sample through `f32`, i.e. what a float WAV stores.
    pub fn quantized_f32(&self) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|&x| x as f32 as f64).collect(),
            sample_rate: self.sample_rate,
            label: self.label.clone(),
        }
    }
}

pub(crate) fn mean_square(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64
}

/// Offset mapping digital dBFS(A) to acoustic dB(A): `acoustic = dbfs + offset_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub offset_db: f64,
}

impl Calibration {
    /// Reports raw dBFS(A).
    pub const DIGITAL: Calibration = Calibration { offset_db: 0.0 };

    /// Calibration under which `dbfs_a` digital reads as `acoustic_dba`.
    pub fn from_anchor(acoustic_dba: f64, dbfs_a: f64) -> Self {
        Self {
            offset_db: acoustic_dba - dbfs_a,
        }
    }

    pub fn level_from_mean_square(&self, mean_square: f64) -> Option<LevelDBA> {
        if mean_square > 0.0 {
            Some(LevelDBA(10.0 * mean_square.log10() + self.offset_db))
        } else {
            None
        }
    }

    /// Mean square (of the A-weighted signal) that reads as `level`.
    pub fn mean_square_for(&self, level: LevelDBA) -> f64 {
        10f64.powf((level.0 - self.offset_db) / 10.0)
    }
}

impl Default for Calibration {
    /// 65 dB(A) ≡ −25 dBFS(A).
    fn default() -> Self {
        Self::from_anchor(65.0, -25.0)
    }
}

/// A-weighted equivalent level in dB(A) under some [`Calibration`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelDBA(pub f64);

impl LevelDBA {
    pub fn db(self) -> f64 {
        self.0
    }

    pub fn plus(self, db: f64) -> LevelDBA {
        LevelDBA(self.0 + db)
    }
}

impl fmt::Display for LevelDBA {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} dB(A)", self.0)
    }
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn gain_to_db(gain: f64) -> f64 {
    20.0 * gain.log10()
}

/// Reads a PCM WAV (1 or 2 channels; 16/24-bit int or 32-bit float),
/// downmixing stereo by channel mean.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| AudioError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode(reader, label).map_err(|e| match e {
        DecodeError::Hound(source) => AudioError::Read {
            path: path.to_path_buf(),
            source,
        },
        DecodeError::Audio(e) => e,
    })
}

/// Same as [`load_wav`] for an in-memory WAV image.
pub fn decode_wav(bytes: &[u8], label: impl Into<String>) -> Result<AudioBuffer, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(AudioError::Encode)?;
    decode(reader, label.into()).map_err(|e| match e {
        DecodeError::Hound(source) => AudioError::Encode(source),
        DecodeError::Audio(e) => e,
    })
}

enum DecodeError {
    Hound(hound::Error),
    Audio(AudioError),
}

impl From<hound::Error> for DecodeError {
    fn from(e: hound::Error) -> Self {
        DecodeError::Hound(e)
    }
}

fn decode<R: Read>(mut reader: hound::WavReader<R>, label: String) -> Result<AudioBuffer, DecodeError> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(DecodeError::Audio(AudioError::Unsupported(format!(
            "{channels} channels"
        ))));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Int, 24) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (format, bits) => {
            return Err(DecodeError::Audio(AudioError::Unsupported(format!(
                "{bits}-bit {format:?}"
            ))))
        }
    };
    if interleaved.len() < channels {
        return Err(DecodeError::Audio(AudioError::Empty(label)));
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) / 2.0)
            .collect()
    };
    AudioBuffer::new(samples, spec.sample_rate, label).map_err(DecodeError::Audio)
}

/// Sample encoding used on export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    /// 32-bit IEEE float; lossless for `f32`-representable samples.
    #[default]
    Float32,
    /// 16-bit PCM; refuses peaks above [`INT16_PEAK_CEILING_DBFS`].
    Int16,
}

pub fn save_wav(buf: &AudioBuffer, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<(), AudioError> {
    let path = path.as_ref();
    let bytes = encode_wav(buf, encoding)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| AudioError::Write {
            path: path.to_path_buf(),
            source: hound::Error::IoError(e),
        })
}

/// Encodes a mono WAV image in memory.
pub fn encode_wav(buf: &AudioBuffer, encoding: WavEncoding) -> Result<Vec<u8>, AudioError> {
    let mut cursor = Cursor::new(Vec::with_capacity(44 + buf.len() * 4));
    write_wav(buf, &mut cursor, encoding)?;
    Ok(cursor.into_inner())
}

fn write_wav<W: Write + Seek>(buf: &AudioBuffer, out: W, encoding: WavEncoding) -> Result<(), AudioError> {
    let (bits, format) = match encoding {
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
        WavEncoding::Int16 => {
            let peak = buf.peak();
            if peak > 0.0 && gain_to_db(peak) > INT16_PEAK_CEILING_DBFS {
                return Err(AudioError::PeakTooHigh {
                    peak_dbfs: gain_to_db(peak),
                    ceiling_dbfs: INT16_PEAK_CEILING_DBFS,
                });
            }
            (16, hound::SampleFormat::Int)
        }
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::new(out, spec).map_err(AudioError::Encode)?;
    match encoding {
        WavEncoding::Float32 => {
            for &x in &buf.samples {
                writer.write_sample(x as f32).map_err(AudioError::Encode)?;
            }
        }
        WavEncoding::Int16 => {
            for &x in &buf.samples {
                let v = (x * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
                writer.write_sample(v).map_err(AudioError::Encode)?;
            }
        }
    }
    writer.finalize().map_err(AudioError::Encode)
}

/// Filters `buf` by the IEC 61672 A-weighting curve.
pub fn a_weight(buf: &AudioBuffer) -> Result<AudioBuffer, AudioError> {
    let weighting = AWeighting::new(buf.sample_rate, buf.len())?;
    AudioBuffer::new(weighting.apply(&buf.samples), buf.sample_rate, buf.label.clone())
}

/// A-weighted equivalent level. A silent buffer yields [`AudioError::Silent`].
pub fn leq_dba(buf: &AudioBuffer, calibration: Calibration) -> Result<LevelDBA, AudioError> {
    if buf.is_empty() {
        return Err(AudioError::Empty(buf.label.clone()));
    }
    let weighting = AWeighting::new(buf.sample_rate, buf.len())?;
    let ms = weighting.mean_square(&buf.samples);
    calibration
        .level_from_mean_square(ms)
        .ok_or_else(|| AudioError::Silent(buf.label.clone()))
}

/// Scales `buf` so that its A-weighted level equals `target`.
pub fn normalize_to_level(
    buf: &AudioBuffer,
    target: LevelDBA,
    calibration: Calibration,
) -> Result<AudioBuffer, AudioError> {
    let current = leq_dba(buf, calibration)?;
    Ok(buf.scaled(db_to_gain(target.0 - current.0)))
}

/// Sample-wise sum, truncated to the shorter input. No clipping.
pub fn mix(a: &AudioBuffer, b: &AudioBuffer) -> Result<AudioBuffer, AudioError> {
    if a.sample_rate != b.sample_rate {
        return Err(AudioError::RateMismatch(a.sample_rate, b.sample_rate));
    }
    let samples = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| x + y)
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate: a.sample_rate,
        label: format!("{}+{}", a.label, b.label),
    })
}
