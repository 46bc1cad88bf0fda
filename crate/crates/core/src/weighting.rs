//! IEC 61672 A-weighting applied as a zero-phase frequency-domain filter.
//!
//! The analytic magnitude response is sampled on the bins of one long real
//! FFT covering the whole signal plus a zero guard band, so the weighting is
//! exact at every bin up to Nyquist and strictly linear in its input.

use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::audio::AudioError;

/// Pole frequencies of the analog A-weighting prototype, in Hz.
const F1: f64 = 20.598_997;
const F2: f64 = 107.652_65;
const F3: f64 = 737.862_23;
const F4: f64 = 12_194.217;

pub const MIN_SAMPLE_RATE: u32 = 8_000;

/// Guard band, in seconds, absorbing the non-causal filter tails.
const GUARD_SECS: f64 = 0.2;

fn unnormalized(f: f64) -> f64 {
    let f2 = f * f;
    (F4 * F4 * f2 * f2)
        / ((f2 + F1 * F1) * ((f2 + F2 * F2) * (f2 + F3 * F3)).sqrt() * (f2 + F4 * F4))
}

/// Linear A-weighting magnitude at `freq_hz`, exactly 1 at 1 kHz.
pub fn a_weighting_gain(freq_hz: f64) -> f64 {
    let f = freq_hz.abs();
    if f == 0.0 {
        return 0.0;
    }
    unnormalized(f) / unnormalized(1000.0)
}

pub fn a_weighting_db(freq_hz: f64) -> f64 {
    20.0 * a_weighting_gain(freq_hz).log10()
}

/// Smallest integer ≥ `n` whose prime factors are all in {2, 3, 5, 7}.
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Reusable A-weighting filter for signals of one fixed length.
pub struct AWeighting {
    signal_len: usize,
    fft_len: usize,
    response: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl AWeighting {
    pub fn new(sample_rate: u32, signal_len: usize) -> Result<Self, AudioError> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(AudioError::RateTooLow(sample_rate));
        }
        let guard = (GUARD_SECS * sample_rate as f64).ceil() as usize;
        let fft_len = next_fast_len(signal_len + guard);
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let bin_hz = sample_rate as f64 / fft_len as f64;
        let response = (0..fft_len / 2 + 1)
            .map(|k| a_weighting_gain(k as f64 * bin_hz) / fft_len as f64)
            .collect();
        Ok(Self {
            signal_len,
            fft_len,
            response,
            forward,
            inverse,
        })
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    /// Weights `samples` (at most `signal_len` long); output has the same length.
    pub fn apply(&self, samples: &[f64]) -> Vec<f64> {
        assert!(
            samples.len() <= self.signal_len,
            "A-weighting planned for {} samples, got {}",
            self.signal_len,
            samples.len()
        );
        let mut time = self.forward.make_input_vec();
        time[..samples.len()].copy_from_slice(samples);
        let mut spectrum = self.forward.make_output_vec();
        self.forward
            .process(&mut time, &mut spectrum)
            .expect("buffer sizes come from the plan");
        for (bin, gain) in spectrum.iter_mut().zip(&self.response) {
            *bin *= *gain;
        }
        // DC is zeroed by the curve; Nyquist must be purely real for c2r
        spectrum[0] = Complex64::new(0.0, 0.0);
        if self.fft_len % 2 == 0 {
            let last = spectrum.len() - 1;
            spectrum[last].im = 0.0;
        }
        let mut out = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spectrum, &mut out)
            .expect("buffer sizes come from the plan");
        out.truncate(samples.len());
        out
    }

    /// Mean square of the weighted signal.
    pub fn mean_square(&self, samples: &[f64]) -> f64 {
        crate::audio::mean_square(&self.apply(samples))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn analytic_curve_anchor_points() {
        assert!((a_weighting_db(1000.0)).abs() < 1e-12);
        assert!((a_weighting_db(100.0) + 19.14).abs() < 0.01);
        // IEC 61672 table values
        assert!((a_weighting_db(50.0) + 30.2).abs() < 0.1);
        assert!((a_weighting_db(10_000.0) + 2.5).abs() < 0.1);
        assert_eq!(a_weighting_gain(0.0), 0.0);
    }

    #[test]
    fn fast_len_is_smooth() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(11), 12);
        assert_eq!(next_fast_len(441_000), 441_000);
        assert_eq!(next_fast_len(1021), 1024);
    }

    #[test]
    fn digital_response_tracks_analytic_curve_50hz_to_16khz() {
        let fs = 44_100.0;
        let n = 44_100;
        let weighting = AWeighting::new(44_100, n).unwrap();
        for f in [50.0, 63.0, 100.0, 250.0, 1000.0, 4000.0, 8000.0, 12_500.0, 16_000.0] {
            let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
            let y = weighting.apply(&x);
            let mid = 8820..(n - 8820);
            let ratio = crate::audio::mean_square(&y[mid.clone()]) / crate::audio::mean_square(&x[mid]);
            let measured = 10.0 * ratio.log10();
            let expected = a_weighting_db(f);
            assert!(
                (measured - expected).abs() < 0.5,
                "{f} Hz: measured {measured:.3} dB, analytic {expected:.3} dB"
            );
        }
    }

    #[test]
    fn weighting_is_linear() {
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let w = AWeighting::new(44_100, n).unwrap();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let lhs = w.apply(&sum);
        let (wx, wy) = (w.apply(&x), w.apply(&y));
        for i in 0..n {
            assert!((lhs[i] - wx[i] - wy[i]).abs() < 1e-9);
        }
    }
}
