//! Audio to log-magnitude spectrograms.
//!
//! Frames are Hann-windowed and magnitude-FFT'd on a linear frequency axis;
//! bins above the configured cutoff are discarded and values are compressed
//! as `ln(magnitude + log_floor)`. All operations are pure functions of
//! their inputs.

pub mod wav;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{CoreError, Result};

/// Mono audio, amplitudes in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::data("audio clip has no samples"));
        }
        if sample_rate == 0 {
            return Err(CoreError::config("sample rate must be positive"));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(CoreError::data("audio clip contains non-finite samples"));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Spectrogram extraction settings.
///
/// The 64 ms / 32 ms frame geometry is fixed by the training recipe; the
/// cutoff frequency is either 4 kHz or 8 kHz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrogramConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub f_max_hz: f64,
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            window_ms: 64.0,
            shift_ms: 32.0,
            f_max_hz: 4000.0,
            log_floor: 1e-6,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > 0.0 && self.shift_ms > 0.0) {
            return Err(CoreError::config("window and shift must be positive"));
        }
        if self.shift_ms > self.window_ms {
            return Err(CoreError::config(format!(
                "shift ({} ms) must not exceed window ({} ms)",
                self.shift_ms, self.window_ms
            )));
        }
        if self.f_max_hz != 4000.0 && self.f_max_hz != 8000.0 {
            return Err(CoreError::config(format!(
                "f_max must be 4000 or 8000 Hz, got {}",
                self.f_max_hz
            )));
        }
        if !self.log_floor.is_finite() || self.log_floor <= 0.0 {
            return Err(CoreError::config("log floor must be a small positive value"));
        }
        Ok(())
    }

    /// Resolves the frame geometry for a concrete sample rate.
    ///
    /// Window and shift round to the nearest sample; the FFT size is the
    /// window length rounded up to the next power of two; the bin count
    /// keeps every FFT bin at or below `f_max_hz`.
    pub fn geometry(&self, sample_rate: u32) -> Result<FrameGeometry> {
        self.validate()?;
        let nyquist = sample_rate as f64 / 2.0;
        if self.f_max_hz > nyquist {
            return Err(CoreError::config(format!(
                "f_max {} Hz exceeds Nyquist {} Hz at {} Hz sample rate",
                self.f_max_hz, nyquist, sample_rate
            )));
        }
        let window = (self.window_ms * sample_rate as f64 / 1000.0).round() as usize;
        let shift = (self.shift_ms * sample_rate as f64 / 1000.0).round() as usize;
        if window == 0 || shift == 0 {
            return Err(CoreError::config("window/shift round to zero samples"));
        }
        let fft_size = window.next_power_of_two();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let n_freq_bins = (self.f_max_hz / bin_hz).floor() as usize + 1;
        Ok(FrameGeometry {
            window,
            shift,
            fft_size,
            n_freq_bins,
            bin_hz,
        })
    }
}

/// Frame geometry resolved against a sample rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameGeometry {
    pub window: usize,
    pub shift: usize,
    pub fft_size: usize,
    pub n_freq_bins: usize,
    pub bin_hz: f64,
}

/// Geometry and provenance carried alongside spectrogram values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrogramMeta {
    pub sample_rate: u32,
    pub window: usize,
    pub shift: usize,
    pub fft_size: usize,
    pub f_max_hz: f64,
    pub log_floor: f64,
    pub frames: usize,
    pub bins: usize,
}

impl SpectrogramMeta {
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_size as f64
    }
}

/// Time × frequency matrix of log-magnitudes, row-major over time.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub meta: SpectrogramMeta,
    values: Vec<f64>,
}

impl Spectrogram {
    pub fn from_values(meta: SpectrogramMeta, values: Vec<f64>) -> Result<Self> {
        if meta.frames == 0 || meta.bins == 0 {
            return Err(CoreError::data("spectrogram must have at least one frame and bin"));
        }
        if values.len() != meta.frames * meta.bins {
            return Err(CoreError::data(format!(
                "spectrogram wants {}x{} = {} values, got {}",
                meta.frames,
                meta.bins,
                meta.frames * meta.bins,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(CoreError::data("spectrogram contains non-finite values"));
        }
        Ok(Spectrogram { meta, values })
    }

    pub fn frames(&self) -> usize {
        self.meta.frames
    }

    pub fn bins(&self) -> usize {
        self.meta.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.meta.bins..(t + 1) * self.meta.bins]
    }

    pub fn at(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.meta.bins + f]
    }

    /// Applies `f` to every value, yielding a new spectrogram with the same
    /// geometry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Spectrogram {
        Spectrogram {
            meta: self.meta,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Number of complete analysis frames for a clip length, in samples.
pub fn frame_count(num_samples: usize, window: usize, shift: usize) -> Result<usize> {
    if num_samples < window {
        return Err(CoreError::data(format!(
            "clip too short: {num_samples} samples < one window of {window}"
        )));
    }
    Ok((num_samples - window) / shift + 1)
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Computes the log-magnitude spectrogram of a clip.
pub fn stft_log_magnitude(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Spectrogram> {
    let geo = config.geometry(clip.sample_rate)?;
    let frames = frame_count(clip.samples.len(), geo.window, geo.shift)?;

    let window_fn = hann(geo.window);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(geo.fft_size);

    let mut values = Vec::with_capacity(frames * geo.n_freq_bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); geo.fft_size];
    for t in 0..frames {
        let start = t * geo.shift;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = if i < geo.window {
                clip.samples[start + i] * window_fn[i]
            } else {
                0.0
            };
            *b = Complex64::new(s, 0.0);
        }
        fft.process(&mut buf);
        for bin in buf.iter().take(geo.n_freq_bins) {
            values.push((bin.norm() + config.log_floor).ln());
        }
    }

    Spectrogram::from_values(
        SpectrogramMeta {
            sample_rate: clip.sample_rate,
            window: geo.window,
            shift: geo.shift,
            fft_size: geo.fft_size,
            f_max_hz: config.f_max_hz,
            log_floor: config.log_floor,
            frames,
            bins: geo.n_freq_bins,
        },
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>, sr: u32) -> AudioClip {
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn frame_count_single_window() {
        assert_eq!(frame_count(1024, 1024, 512).unwrap(), 1);
    }

    #[test]
    fn frame_count_at_speech_geometry() {
        // 0.704 s at 16 kHz = 11264 samples, window 1024, shift 512.
        assert_eq!(frame_count(11264, 1024, 512).unwrap(), 21);
    }

    #[test]
    fn frame_count_rejects_short_clip() {
        let err = frame_count(1023, 1024, 512).unwrap_err();
        assert!(err.to_string().contains("clip too short"));
    }

    #[test]
    fn zero_clip_yields_log_floor_everywhere() {
        let c = clip(vec![0.0; 2048], 16000);
        let cfg = SpectrogramConfig::default();
        let spec = stft_log_magnitude(&c, &cfg).unwrap();
        assert_eq!(spec.frames(), frame_count(2048, 1024, 512).unwrap());
        let expect = cfg.log_floor.ln();
        for &v in spec.values() {
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn short_clip_is_rejected() {
        let c = clip(vec![0.1; 512], 16000);
        let err = stft_log_magnitude(&c, &SpectrogramConfig::default()).unwrap_err();
        assert!(err.to_string().contains("clip too short"));
    }

    #[test]
    fn f_max_above_nyquist_is_a_config_error() {
        let c = clip(vec![0.1; 2048], 6000);
        let err = stft_log_magnitude(&c, &SpectrogramConfig::default()).unwrap_err();
        assert!(err.to_string().contains("Nyquist"));
    }

    /// Independent oracle: direct DFT magnitude of one Hann-windowed frame.
    fn dft_frame_magnitudes(frame: &[f64], fft_size: usize, n_bins: usize) -> Vec<f64> {
        let w = hann(frame.len());
        (0..n_bins)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (i, &s) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64
                        / fft_size as f64;
                    re += s * w[i] * ang.cos();
                    im += s * w[i] * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn sinusoid_peaks_at_matching_bin_and_matches_dft_oracle() {
        let sr = 16000u32;
        let freq = 1000.0;
        let n = 4096;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() * 0.5)
            .collect();
        let c = clip(samples.clone(), sr);
        let cfg = SpectrogramConfig::default();
        let spec = stft_log_magnitude(&c, &cfg).unwrap();

        // Mean over time, argmax over frequency must land on the bin
        // nearest 1 kHz.
        let bins = spec.bins();
        let mut mean = vec![0.0; bins];
        for t in 0..spec.frames() {
            for (m, &v) in mean.iter_mut().zip(spec.row(t)) {
                *m += v;
            }
        }
        let argmax = mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let bin_hz = spec.meta.bin_hz();
        let nearest = (freq / bin_hz).round() as usize;
        assert_eq!(argmax, nearest);

        // First frame must agree with the direct DFT oracle. Compare raw
        // magnitudes; near the log floor ln would amplify the oracle's own
        // roundoff.
        let oracle = dft_frame_magnitudes(&samples[..1024], 1024, bins);
        for (f, &mag) in oracle.iter().enumerate() {
            let got = spec.at(0, f).exp() - cfg.log_floor;
            assert!(
                (got - mag).abs() < 1e-9,
                "bin {f}: fft magnitude {got} vs dft {mag}"
            );
        }
    }

    #[test]
    fn time_shift_covariance() {
        let sr = 16000u32;
        let samples: Vec<f64> = (0..4000)
            .map(|i| ((i as f64 * 0.13).sin() + 0.3 * (i as f64 * 0.031).cos()) * 0.4)
            .collect();
        let cfg = SpectrogramConfig::default();
        let base = stft_log_magnitude(&clip(samples.clone(), sr), &cfg).unwrap();

        let mut padded = vec![0.0; base.meta.shift];
        padded.extend_from_slice(&samples);
        let shifted = stft_log_magnitude(&clip(padded, sr), &cfg).unwrap();

        assert_eq!(shifted.frames(), base.frames() + 1);
        for t in 0..base.frames() {
            for f in 0..base.bins() {
                assert!(
                    (shifted.at(t + 1, f) - base.at(t, f)).abs() < 1e-9,
                    "frame {t} bin {f}"
                );
            }
        }
    }

    #[test]
    fn spectral_energy_monotone_in_amplitude() {
        let sr = 16000u32;
        let samples: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.07).sin() * 0.2).collect();
        let cfg = SpectrogramConfig::default();
        let energy = |scale: f64| -> f64 {
            let scaled: Vec<f64> = samples.iter().map(|s| s * scale).collect();
            let spec = stft_log_magnitude(&clip(scaled, sr), &cfg).unwrap();
            // Pre-log magnitudes recovered from the stored values.
            spec.values()
                .iter()
                .map(|v| {
                    let m = v.exp() - cfg.log_floor;
                    m * m
                })
                .sum()
        };
        let mut last = energy(0.25);
        for scale in [0.5, 1.0, 2.0] {
            let e = energy(scale);
            assert!(e >= last, "energy not monotone at scale {scale}");
            last = e;
        }
    }

    #[test]
    fn stft_is_deterministic() {
        let sr = 16000u32;
        let samples: Vec<f64> = (0..3000).map(|i| (i as f64 * 0.21).sin() * 0.3).collect();
        let cfg = SpectrogramConfig::default();
        let a = stft_log_magnitude(&clip(samples.clone(), sr), &cfg).unwrap();
        let b = stft_log_magnitude(&clip(samples, sr), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn geometry_bin_count_covers_f_max() {
        let cfg = SpectrogramConfig::default();
        let geo = cfg.geometry(16000).unwrap();
        assert_eq!(geo.window, 1024);
        assert_eq!(geo.shift, 512);
        assert_eq!(geo.fft_size, 1024);
        // 4000 Hz / 15.625 Hz per bin = bin 256 exactly.
        assert_eq!(geo.n_freq_bins, 257);
        let geo8k = cfg.geometry(8000).unwrap();
        assert_eq!(geo8k.window, 512);
        assert_eq!(geo8k.fft_size, 512);
        assert_eq!(geo8k.n_freq_bins, 257);
    }
}
