//! Masker and concealer construction.
//!
//! A masker is the positive sound itself. A concealer takes the STFT phase of
//! the positive and a magnitude derived from the positive and source
//! magnitudes, so that `source + concealer` approaches the positive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioBuffer, AudioError};
use crate::tf::{Plane, Spectrogram, SpectrogramLayout, Stft, StftParams, TfError};

#[derive(Debug, Error)]
pub enum ConcealerError {
    #[error("magnitude planes differ in shape: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("the masker approach has no concealer signal")]
    NotAConcealer,
    #[error("positive sound '{0}' is silent")]
    SilentPositive(String),
    #[error("unknown approach '{0}'")]
    UnknownApproach(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Tf(#[from] TfError),
}

/// How the concealer magnitude is derived from `m_P` and `m_S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConcealerMethod {
    /// `m_P − m_S`, sign kept (negative entries flip the phase).
    Signed,
    /// `|m_P − m_S|`.
    Absolute,
    /// `max(m_P − m_S, 0)`.
    Rectified,
}

impl ConcealerMethod {
    #[inline]
    pub fn apply(self, source: f64, positive: f64) -> f64 {
        match self {
            ConcealerMethod::Signed if positive >= source => fill(source, positive),
            ConcealerMethod::Signed => -fill(positive, source),
            ConcealerMethod::Absolute if positive >= source => fill(source, positive),
            ConcealerMethod::Absolute => fill(positive, source),
            ConcealerMethod::Rectified if positive >= source => fill(source, positive),
            ConcealerMethod::Rectified => 0.0,
        }
    }
}

/// `hi − lo` for `hi ≥ lo`, nudged by at most an ulp so that `lo + result`
/// rounds back to exactly `hi`. When no double does (the exact sum falls on a
/// rounding tie), the largest result with `lo + result < hi` is returned.
#[inline]
fn fill(lo: f64, hi: f64) -> f64 {
    let mut d = hi - lo;
    while lo + d > hi {
        d = d.next_down();
    }
    while lo + d < hi {
        d = d.next_up();
    }
    if lo + d > hi {
        d = d.next_down();
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Approach {
    #[serde(rename = "masker")]
    Masker,
    #[serde(rename = "concealer-1")]
    Concealer1,
    #[serde(rename = "concealer-2")]
    Concealer2,
    #[default]
    #[serde(rename = "concealer-3")]
    Concealer3,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::Masker,
        Approach::Concealer1,
        Approach::Concealer2,
        Approach::Concealer3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Masker => "masker",
            Approach::Concealer1 => "concealer-1",
            Approach::Concealer2 => "concealer-2",
            Approach::Concealer3 => "concealer-3",
        }
    }

    pub fn method(self) -> Option<ConcealerMethod> {
        match self {
            Approach::Masker => None,
            Approach::Concealer1 => Some(ConcealerMethod::Signed),
            Approach::Concealer2 => Some(ConcealerMethod::Absolute),
            Approach::Concealer3 => Some(ConcealerMethod::Rectified),
        }
    }

    pub fn is_concealer(self) -> bool {
        self.method().is_some()
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = ConcealerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ConcealerError::UnknownApproach(s.to_string()))
    }
}

/// Concealer magnitude plane from source and positive magnitude planes.
pub fn concealer_magnitude(
    method: ConcealerMethod,
    source_mag: &Plane,
    positive_mag: &Plane,
) -> Result<Plane, ConcealerError> {
    source_mag
        .zip_with(positive_mag, |s, p| method.apply(s, p))
        .ok_or(ConcealerError::ShapeMismatch(source_mag.shape(), positive_mag.shape()))
}

/// Builds `c = istft(m_C · e^{i·a_P})`.
pub fn build_concealer(
    source: &AudioBuffer,
    positive: &AudioBuffer,
    method: ConcealerMethod,
    params: StftParams,
) -> Result<AudioBuffer, ConcealerError> {
    ConcealerBuilder::new(source, positive, method, params)?.build(1.0)
}

/// Time-domain sum of the source and a maquilleur (masker or concealer).
pub fn build_mixture(source: &AudioBuffer, maquilleur: &AudioBuffer) -> Result<AudioBuffer, ConcealerError> {
    Ok(audio::mix(source, maquilleur)?)
}

/// Caches the source and positive spectra so the concealer can be rebuilt
/// for many positive gains. Because `|STFT(g·p)| = g·|STFT(p)|` and the
/// phase is unchanged for `g > 0`, only the magnitude rule and the inverse
/// transform run per gain.
pub struct ConcealerBuilder {
    stft: Stft,
    method: ConcealerMethod,
    layout: SpectrogramLayout,
    source_mag: Plane,
    positive_mag: Plane,
    positive_phase: Plane,
}

impl ConcealerBuilder {
    /// Both inputs are truncated to the shorter length.
    pub fn new(
        source: &AudioBuffer,
        positive: &AudioBuffer,
        method: ConcealerMethod,
        params: StftParams,
    ) -> Result<Self, ConcealerError> {
        if source.sample_rate() != positive.sample_rate() {
            return Err(AudioError::RateMismatch(source.sample_rate(), positive.sample_rate()).into());
        }
        if positive.is_silent() {
            return Err(ConcealerError::SilentPositive(positive.label().to_string()));
        }
        let len = source.len().min(positive.len());
        let stft = Stft::new(params)?;
        let s = stft.analyze(&source.truncated(len))?;
        let p = stft.analyze(&positive.truncated(len))?;
        Ok(Self {
            method,
            layout: p.layout(),
            source_mag: s.magnitude(),
            positive_mag: p.magnitude(),
            positive_phase: p.phase(),
            stft,
        })
    }

    pub fn layout(&self) -> SpectrogramLayout {
        self.layout
    }

    pub fn method(&self) -> ConcealerMethod {
        self.method
    }

    /// Concealer magnitude for the positive scaled by `gain`.
    pub fn magnitude(&self, gain: f64) -> Plane {
        self.source_mag
            .zip_with(&self.positive_mag, |s, p| self.method.apply(s, gain * p))
            .expect("planes share one layout")
    }

    pub fn spectrogram(&self, gain: f64) -> Result<Spectrogram, ConcealerError> {
        let mag = self.magnitude(gain);
        let spec = match self.method {
            ConcealerMethod::Signed => Spectrogram::from_signed_polar(&mag, &self.positive_phase, self.layout)?,
            _ => Spectrogram::from_polar(&mag, &self.positive_phase, self.layout)?,
        };
        Ok(spec)
    }

    /// Concealer signal for the positive scaled by `gain`.
    pub fn build(&self, gain: f64) -> Result<AudioBuffer, ConcealerError> {
        let spec = self.spectrogram(gain)?;
        Ok(self.stft.synthesize(&spec)?.with_label("concealer"))
    }
}
