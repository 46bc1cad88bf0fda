//! Short-time Fourier analysis/synthesis with exact-length reconstruction.
//!
//! Frames are centered: the signal is zero-padded by half a window on both
//! sides, so frame `k` is centered on sample `k * hop`. Synthesis is a
//! weighted overlap-add normalized by the accumulated squared window.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};

#[derive(Debug, Error)]
pub enum TfError {
    #[error("window length must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("hop {hop} must be in 1..={window_length}")]
    BadHop { hop: usize, window_length: usize },
    #[error("{window} window with hop {hop} violates constant overlap-add (ripple {ripple:.3e})")]
    NotCola { window: Window, hop: usize, ripple: f64 },
    #[error("signal of {len} samples is shorter than one window ({window_length})")]
    TooShort { len: usize, window_length: usize },
    #[error("plane shape {got:?} does not match spectrogram shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("negative magnitude {value} at bin {bin}, frame {frame}")]
    NegativeMagnitude { bin: usize, frame: usize, value: f64 },
    #[error("unknown window '{0}'")]
    UnknownWindow(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl Window {
    /// Periodic (DFT-even) coefficients.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Hamming => "hamming",
            Window::Rectangular => "rectangular",
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Window {
    type Err = TfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hann" | "hanning" => Ok(Window::Hann),
            "hamming" => Ok(Window::Hamming),
            "rectangular" | "boxcar" | "rect" => Ok(Window::Rectangular),
            _ => Err(TfError::UnknownWindow(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StftParams {
    pub window_length: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_length: 2048,
            hop: 512,
            window: Window::Hann,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Number of centered frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Steady-state sum of the squared window over overlapping frames.
    pub fn overlap_gain(&self) -> f64 {
        let w = self.window.coefficients(self.window_length);
        w.iter().map(|x| x * x).sum::<f64>() / self.hop as f64
    }

    /// Checks the hop range and that the squared window overlap-adds to a
    /// constant.
    pub fn validate(&self) -> Result<(), TfError> {
        if self.window_length < 2 {
            return Err(TfError::WindowTooShort(self.window_length));
        }
        if self.hop == 0 || self.hop > self.window_length {
            return Err(TfError::BadHop {
                hop: self.hop,
                window_length: self.window_length,
            });
        }
        let w = self.window.coefficients(self.window_length);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| {
                w.iter()
                    .skip(n)
                    .step_by(self.hop)
                    .map(|x| x * x)
                    .sum::<f64>()
            })
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        let ripple = if max > 0.0 { (max - min) / max } else { f64::INFINITY };
        if ripple > 1e-9 {
            return Err(TfError::NotCola {
                window: self.window,
                hop: self.hop,
                ripple,
            });
        }
        Ok(())
    }
}

/// Real matrix over `[bins × frames]`, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    bins: usize,
    frames: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(bins: usize, frames: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), bins * frames, "plane data does not match its shape");
        Self { bins, frames, data }
    }

    pub fn filled(bins: usize, frames: usize, value: f64) -> Self {
        Self::new(bins, frames, vec![value; bins * frames])
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: f64) {
        self.data[frame * self.bins + bin] = value;
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::new(self.bins, self.frames, self.data.iter().map(|&x| f(x)).collect())
    }

    /// Elementwise combination; `None` on shape mismatch.
    pub fn zip_with(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Option<Plane> {
        (self.shape() == other.shape()).then(|| {
            Plane::new(
                self.bins,
                self.frames,
                self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            )
        })
    }
}

/// Shape-independent description needed to rebuild a spectrogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramLayout {
    pub params: StftParams,
    pub sample_rate: u32,
    pub source_length: usize,
}

impl SpectrogramLayout {
    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    pub fn frames(&self) -> usize {
        self.params.frame_count(self.source_length)
    }
}

/// Complex `[bins × frames]` matrix plus its analysis parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    layout: SpectrogramLayout,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn layout(&self) -> SpectrogramLayout {
        self.layout
    }

    pub fn params(&self) -> StftParams {
        self.layout.params
    }

    pub fn sample_rate(&self) -> u32 {
        self.layout.sample_rate
    }

    pub fn source_length(&self) -> usize {
        self.layout.source_length
    }

    pub fn bins(&self) -> usize {
        self.layout.bins()
    }

    pub fn frames(&self) -> usize {
        self.layout.frames()
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * self.bins() + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        let bins = self.bins();
        &self.data[frame * bins..(frame + 1) * bins]
    }

    pub fn frame_mut(&mut self, frame: usize) -> &mut [Complex64] {
        let bins = self.bins();
        &mut self.data[frame * bins..(frame + 1) * bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.layout.sample_rate as f64 / self.layout.params.window_length as f64
    }

    pub fn magnitude(&self) -> Plane {
        Plane::new(self.bins(), self.frames(), self.data.iter().map(|c| c.norm()).collect())
    }

    pub fn phase(&self) -> Plane {
        Plane::new(self.bins(), self.frames(), self.data.iter().map(|c| c.arg()).collect())
    }

    /// Rebuilds `mag · e^{i·phase}`; magnitudes must be non-negative.
    pub fn from_polar(mag: &Plane, phase: &Plane, layout: SpectrogramLayout) -> Result<Self, TfError> {
        check_shape(mag, layout)?;
        if let Some(i) = mag.data.iter().position(|&m| m < 0.0 || m.is_nan()) {
            return Err(TfError::NegativeMagnitude {
                bin: i % mag.bins,
                frame: i / mag.bins,
                value: mag.data[i],
            });
        }
        Self::from_signed_polar(mag, phase, layout)
    }

    /// Like [`Spectrogram::from_polar`] but accepts signed magnitudes; a
    /// negative entry is the same bin with its phase shifted by π. Not a
    /// physical magnitude; only the signed concealer method uses it.
    pub fn from_signed_polar(mag: &Plane, phase: &Plane, layout: SpectrogramLayout) -> Result<Self, TfError> {
        check_shape(mag, layout)?;
        check_shape(phase, layout)?;
        let data = mag
            .data
            .iter()
            .zip(&phase.data)
            .map(|(&m, &a)| Complex64::new(m * a.cos(), m * a.sin()))
            .collect();
        Ok(Self { layout, data })
    }

    /// Builds a spectrogram from raw frame-major bins.
    pub fn from_bins(data: Vec<Complex64>, layout: SpectrogramLayout) -> Result<Self, TfError> {
        let expected = (layout.bins(), layout.frames());
        if data.len() != expected.0 * expected.1 {
            return Err(TfError::ShapeMismatch {
                expected,
                got: (layout.bins(), data.len() / layout.bins().max(1)),
            });
        }
        Ok(Self { layout, data })
    }

    /// Two-sided spectral energy per frame summed over frames, divided by
    /// the FFT length; equals `overlap_gain · Σx²` away from the edges.
    pub fn energy(&self) -> f64 {
        let n = self.layout.params.window_length;
        let bins = self.bins();
        let mut total = 0.0;
        for frame in self.data.chunks_exact(bins) {
            for (k, c) in frame.iter().enumerate() {
                let mirrored = k != 0 && !(n % 2 == 0 && k == bins - 1);
                total += c.norm_sqr() * if mirrored { 2.0 } else { 1.0 };
            }
        }
        total / n as f64
    }
}

fn check_shape(plane: &Plane, layout: SpectrogramLayout) -> Result<(), TfError> {
    let expected = (layout.bins(), layout.frames());
    if plane.shape() != expected {
        return Err(TfError::ShapeMismatch {
            expected,
            got: plane.shape(),
        });
    }
    Ok(())
}

/// Planned STFT engine; reuse it when transforming many signals.
pub struct Stft {
    params: StftParams,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl Stft {
    pub fn new(params: StftParams) -> Result<Self, TfError> {
        params.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            params,
            window: params.window.coefficients(params.window_length),
            forward: planner.plan_fft_forward(params.window_length),
            inverse: planner.plan_fft_inverse(params.window_length),
        })
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    pub fn analyze(&self, buf: &AudioBuffer) -> Result<Spectrogram, TfError> {
        let n = self.params.window_length;
        let len = buf.len();
        if len < n {
            return Err(TfError::TooShort { len, window_length: n });
        }
        let layout = SpectrogramLayout {
            params: self.params,
            sample_rate: buf.sample_rate(),
            source_length: len,
        };
        let pad = n / 2;
        let mut padded = vec![0.0; len + n];
        padded[pad..pad + len].copy_from_slice(buf.samples());

        let bins = layout.bins();
        let frames = layout.frames();
        let mut data = Vec::with_capacity(bins * frames);
        let mut input = self.forward.make_input_vec();
        let mut output = self.forward.make_output_vec();
        for k in 0..frames {
            let start = k * self.params.hop;
            for (i, slot) in input.iter_mut().enumerate() {
                *slot = padded[start + i] * self.window[i];
            }
            self.forward
                .process(&mut input, &mut output)
                .expect("buffer sizes come from the plan");
            data.extend_from_slice(&output);
        }
        Ok(Spectrogram { layout, data })
    }

    pub fn synthesize(&self, spec: &Spectrogram) -> Result<AudioBuffer, TfError> {
        if spec.params() != self.params {
            spec.params().validate()?;
            return Stft::new(spec.params())?.synthesize(spec);
        }
        let n = self.params.window_length;
        let len = spec.source_length();
        let pad = n / 2;
        let mut acc = vec![0.0; len + n];
        let mut norm = vec![0.0; len + n];
        let mut bins = self.inverse.make_input_vec();
        let mut frame_out = self.inverse.make_output_vec();
        let scale = 1.0 / n as f64;
        for k in 0..spec.frames() {
            bins.copy_from_slice(spec.frame(k));
            bins[0].im = 0.0;
            if n % 2 == 0 {
                let last = bins.len() - 1;
                bins[last].im = 0.0;
            }
            self.inverse
                .process(&mut bins, &mut frame_out)
                .expect("buffer sizes come from the plan");
            let start = k * self.params.hop;
            for i in 0..n {
                let w = self.window[i];
                acc[start + i] += frame_out[i] * scale * w;
                norm[start + i] += w * w;
            }
        }
        let floor = 1e-10 * self.params.overlap_gain();
        let samples = (0..len)
            .map(|i| {
                let d = norm[pad + i];
                if d > floor {
                    acc[pad + i] / d
                } else {
                    0.0
                }
            })
            .collect();
        Ok(AudioBuffer::new(samples, spec.sample_rate(), "istft")?)
    }
}

pub fn stft(buf: &AudioBuffer, params: StftParams) -> Result<Spectrogram, TfError> {
    Stft::new(params)?.analyze(buf)
}

pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer, TfError> {
    Stft::new(spec.params())?.synthesize(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        AudioBuffer::new(samples, 44_100, "noise").unwrap()
    }

    fn rel_rms_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn validates_cola() {
        assert!(StftParams::default().validate().is_ok());
        let half_hann = StftParams { hop: 1024, ..Default::default() };
        assert!(matches!(half_hann.validate(), Err(TfError::NotCola { .. })));
        let rect = StftParams { window_length: 256, hop: 256, window: Window::Rectangular };
        assert!(rect.validate().is_ok());
        let hamming = StftParams { window: Window::Hamming, ..Default::default() };
        assert!(hamming.validate().is_ok());
        assert!(matches!(
            StftParams { hop: 0, ..Default::default() }.validate(),
            Err(TfError::BadHop { .. })
        ));
    }

    #[test]
    fn rejects_short_signal() {
        let x = noise(100, 1);
        assert!(matches!(
            stft(&x, StftParams::default()),
            Err(TfError::TooShort { len: 100, .. })
        ));
    }

    #[test]
    fn zeros_map_to_zeros() {
        let z = AudioBuffer::zeros(5000, 44_100, "z").unwrap();
        let spec = stft(&z, StftParams::default()).unwrap();
        assert!(spec.data().iter().all(|c| c.norm() == 0.0));
        assert_eq!(spec.bins(), 1025);
        assert!(istft(&spec).unwrap().is_silent());
    }

    #[test]
    fn impulse_at_frame_center_gives_window_value_everywhere() {
        let params = StftParams::default();
        let mut x = vec![0.0; 8192];
        let k = 4;
        x[k * params.hop] = 1.0;
        let spec = stft(&AudioBuffer::new(x, 44_100, "imp").unwrap(), params).unwrap();
        let w_center = params.window.coefficients(params.window_length)[params.window_length / 2];
        for c in spec.frame(k) {
            assert!((c.norm() - w_center).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let n = 44_100;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 44_100.0).sin())
            .collect();
        let spec = stft(&AudioBuffer::new(x, 44_100, "sine").unwrap(), StftParams::default()).unwrap();
        let mag = spec.magnitude();
        let frame = mag.frame(spec.frames() / 2);
        let peak = (0..frame.len())
            .max_by(|&a, &b| frame[a].total_cmp(&frame[b]))
            .unwrap();
        assert_eq!(peak, 46);
    }

    #[test]
    fn round_trip_reconstructs_odd_lengths() {
        for (len, seed) in [(2048, 1), (2049, 2), (10_007, 3), (44_100, 4)] {
            let x = noise(len, seed);
            let y = istft(&stft(&x, StftParams::default()).unwrap()).unwrap();
            assert_eq!(y.len(), len);
            assert!(rel_rms_err(y.samples(), x.samples()) < 1e-6);
        }
    }

    #[test]
    fn halved_magnitudes_halve_the_signal() {
        let x = noise(20_000, 9);
        let spec = stft(&x, StftParams::default()).unwrap();
        let half = Spectrogram::from_polar(&spec.magnitude().map(|m| m / 2.0), &spec.phase(), spec.layout()).unwrap();
        let y = istft(&half).unwrap();
        assert!(rel_rms_err(y.samples(), x.scaled(0.5).samples()) < 1e-3);
    }

    #[test]
    fn polar_identities() {
        let x = noise(4096, 5);
        let spec = stft(&x, StftParams::default()).unwrap();
        let back = Spectrogram::from_polar(&spec.magnitude(), &spec.phase(), spec.layout()).unwrap();
        for (a, b) in back.data().iter().zip(spec.data()) {
            assert!((a - b).norm() <= 1e-12);
        }

        let layout = spec.layout();
        let (bins, frames) = (layout.bins(), layout.frames());
        let mut phase = Plane::filled(bins, frames, 0.0);
        phase.set(3, 1, PI);
        let one = Spectrogram::from_polar(&Plane::filled(bins, frames, 1.0), &phase, layout).unwrap();
        assert!((one.get(3, 1) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(one.get(2, 1), Complex64::new(1.0, 0.0));

        let positive_real = Spectrogram::from_bins(vec![Complex64::new(2.5, 0.0); bins * frames], layout).unwrap();
        assert!(positive_real.phase().data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn from_polar_rejects_negative_but_signed_variant_folds_phase() {
        let x = noise(4096, 6);
        let layout = stft(&x, StftParams::default()).unwrap().layout();
        let (bins, frames) = (layout.bins(), layout.frames());
        let mut mag = Plane::filled(bins, frames, 1.0);
        mag.set(10, 2, -2.0);
        let phase = Plane::filled(bins, frames, 0.3);
        assert!(matches!(
            Spectrogram::from_polar(&mag, &phase, layout),
            Err(TfError::NegativeMagnitude { bin: 10, frame: 2, .. })
        ));
        let signed = Spectrogram::from_signed_polar(&mag, &phase, layout).unwrap();
        let expected = Complex64::from_polar(2.0, 0.3 + PI);
        assert!((signed.get(10, 2) - expected).norm() < 1e-12);
    }

    #[test]
    fn parseval_with_overlap_gain() {
        let params = StftParams::default();
        let n = params.window_length;
        // keep energy away from the edges, where fewer frames overlap
        let mut samples = vec![0.0; n];
        samples.extend(noise(30_000, 8).into_samples());
        samples.extend(vec![0.0; n]);
        let x = AudioBuffer::new(samples, 44_100, "x").unwrap();
        let energy: f64 = x.samples().iter().map(|v| v * v).sum();
        let spec = stft(&x, params).unwrap();
        let ratio = spec.energy() / (params.overlap_gain() * energy);
        assert!((ratio - 1.0).abs() < 1e-6, "ratio {ratio}");
    }
}
