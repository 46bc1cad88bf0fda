//! Seeded surrogate sounds: filtered-noise "ventilation" sources and shaped
//! "water" positives, for exercising the pipeline without a recorded corpus.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::RealFftPlanner;

use crate::audio::{save_wav, AudioBuffer, AudioError, WavEncoding};

pub const SOURCE_IDS: [&str; 2] = ["ventil1", "ventil2"];
pub const POSITIVE_IDS: [&str; 5] = ["fountain", "rain", "stream", "waterfall", "waves"];

fn gaussian(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn buffer(samples: Vec<f64>, sample_rate: u32, label: &str) -> AudioBuffer {
    AudioBuffer::new(samples, sample_rate, label).expect("synthesized samples are finite")
}

/// Gaussian white noise with standard deviation `amp`.
pub fn white_noise(len: usize, sample_rate: u32, seed: u64, amp: f64) -> AudioBuffer {
    let samples = gaussian(len, seed).into_iter().map(|x| x * amp).collect();
    buffer(samples, sample_rate, "white")
}

pub fn sine(freq_hz: f64, amp: f64, len: usize, sample_rate: u32) -> AudioBuffer {
    let samples = (0..len)
        .map(|i| amp * (2.0 * PI * freq_hz * i as f64 / sample_rate as f64).sin())
        .collect();
    buffer(samples, sample_rate, "sine")
}

/// White Gaussian noise whose spectrum is multiplied by `shape(f)`, then
/// scaled to unit RMS.
pub fn shaped_noise(len: usize, sample_rate: u32, seed: u64, shape: impl Fn(f64) -> f64) -> AudioBuffer {
    let mut time = gaussian(len, seed);
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    let mut spectrum = forward.make_output_vec();
    forward.process(&mut time, &mut spectrum).expect("planned sizes");
    let bin_hz = sample_rate as f64 / len as f64;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        *bin *= shape(k as f64 * bin_hz);
    }
    spectrum[0].im = 0.0;
    if len % 2 == 0 {
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
    }
    let mut out = inverse.make_output_vec();
    inverse.process(&mut spectrum, &mut out).expect("planned sizes");
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
    buffer(out.into_iter().map(|x| x * scale).collect(), sample_rate, "shaped")
}

/// 1/f-power noise, unit RMS.
pub fn pink_noise(len: usize, sample_rate: u32, seed: u64) -> AudioBuffer {
    shaped_noise(len, sample_rate, seed, |f| if f < 10.0 { 0.0 } else { 1.0 / f.sqrt() })
        .with_label("pink")
}

fn highpass(f: f64, corner: f64, order: i32) -> f64 {
    let r = (f / corner).powi(order);
    r / (1.0 + r * r).sqrt()
}

fn lowpass(f: f64, corner: f64, order: i32) -> f64 {
    1.0 / (1.0 + (f / corner).powi(2 * order)).sqrt()
}

/// Stationary ventilation-like noise: energy flat up to `corner_hz`, falling
/// above it, with a subsonic cut. Scaled to 0.05 RMS.
pub fn ventilation(len: usize, sample_rate: u32, seed: u64, corner_hz: f64) -> AudioBuffer {
    shaped_noise(len, sample_rate, seed, |f| highpass(f, 25.0, 2) * lowpass(f, corner_hz, 1))
        .scaled(0.05)
        .with_label("ventilation")
}

fn modulate(buf: AudioBuffer, envelope: impl Fn(f64) -> f64) -> AudioBuffer {
    let rate = buf.sample_rate() as f64;
    let label = buf.label().to_string();
    let samples = buf
        .into_samples()
        .into_iter()
        .enumerate()
        .map(|(i, x)| x * envelope(i as f64 / rate))
        .collect();
    buffer(samples, rate as u32, &label)
}

/// One of the five surrogate water sounds in [`POSITIVE_IDS`], 0.05 RMS.
pub fn water(kind: &str, len: usize, sample_rate: u32, seed: u64) -> Option<AudioBuffer> {
    let sound = match kind {
        "fountain" => {
            let base = shaped_noise(len, sample_rate, seed, |f| highpass(f, 800.0, 2) * lowpass(f, 7000.0, 2));
            modulate(base, |t| 1.0 + 0.3 * (2.0 * PI * 6.0 * t).sin())
        }
        "rain" => {
            let hiss = shaped_noise(len, sample_rate, seed, |f| highpass(f, 1500.0, 2) * lowpass(f, 12_000.0, 1));
            let mut samples = hiss.into_samples();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let drops = (len as f64 / sample_rate as f64 * 40.0) as usize;
            for _ in 0..drops {
                let at = rng.random_range(0..len);
                let amp = rng.random_range(1.0..4.0);
                let freq = rng.random_range(2000.0..6000.0);
                for (j, s) in samples[at..].iter_mut().take(400).enumerate() {
                    let t = j as f64 / sample_rate as f64;
                    *s += amp * (-t * 900.0).exp() * (2.0 * PI * freq * t).sin();
                }
            }
            buffer(samples, sample_rate, "rain")
        }
        "stream" => {
            let base = shaped_noise(len, sample_rate, seed, |f| highpass(f, 300.0, 1) * lowpass(f, 5000.0, 2));
            modulate(base, |t| 1.0 + 0.2 * (2.0 * PI * 0.7 * t).sin())
        }
        "waterfall" => shaped_noise(len, sample_rate, seed, |f| highpass(f, 30.0, 2) * lowpass(f, 4000.0, 1)),
        "waves" => {
            let base = shaped_noise(len, sample_rate, seed, |f| highpass(f, 30.0, 2) * lowpass(f, 600.0, 1));
            modulate(base, |t| 0.6 + 0.4 * (2.0 * PI * 0.1 * t).sin())
        }
        _ => return None,
    };
    let rms = sound.mean_square().sqrt();
    Some(sound.scaled(0.05 / rms).with_label(kind))
}

/// Writes `<id>.wav` (32-bit float) for the two surrogate sources and five
/// positives into `dir`.
pub fn write_surrogate_corpus(dir: &Path, seconds: f64, sample_rate: u32, seed: u64) -> Result<(), AudioError> {
    std::fs::create_dir_all(dir).map_err(|e| AudioError::Write {
        path: dir.to_path_buf(),
        source: hound::Error::IoError(e),
    })?;
    let len = (seconds * sample_rate as f64).round() as usize;
    let corners = [150.0, 260.0];
    for (i, id) in SOURCE_IDS.iter().enumerate() {
        let mut v = ventilation(len, sample_rate, seed + i as u64, corners[i]);
        if i == 1 {
            let hum = sine(100.0, 0.01, len, sample_rate);
            v = crate::audio::mix(&v, &hum)?;
        }
        save_wav(&v, dir.join(format!("{id}.wav")), WavEncoding::Float32)?;
    }
    for (i, id) in POSITIVE_IDS.iter().enumerate() {
        let w = water(id, len, sample_rate, seed + 100 + i as u64).expect("known kind");
        save_wav(&w, dir.join(format!("{id}.wav")), WavEncoding::Float32)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_scaled() {
        let a = ventilation(10_000, 44_100, 3, 200.0);
        let b = ventilation(10_000, 44_100, 3, 200.0);
        assert_eq!(a, b);
        assert!((a.mean_square().sqrt() - 0.05).abs() < 1e-9);
        for kind in POSITIVE_IDS {
            let w = water(kind, 20_000, 44_100, 1).unwrap();
            assert!((w.mean_square().sqrt() - 0.05).abs() < 1e-9, "{kind}");
        }
        assert!(water("lake", 100, 44_100, 1).is_none());
    }
}
