//! Vocal tract length perturbation: piecewise-linear warping of the
//! spectrogram frequency axis.
//!
//! The warp rescales frequencies below a knee `f0` by a factor `alpha` and
//! compresses or stretches the remaining band so the overall range is
//! preserved:
//!
//! ```text
//! G(f) = alpha * f                                        for 0 <= f <= f0
//! G(f) = alpha*f0 + (f_max - alpha*f0) * (f-f0)/(f_max-f0) for f0 <= f <= f_max
//! ```
//!
//! `G` is continuous at `f0` and fixes both endpoints exactly.

use rand::Rng;

use crate::dsp::Spectrogram;
use crate::error::{CoreError, Result};

pub const ALPHA_MIN: f64 = 0.9;
pub const ALPHA_MAX: f64 = 1.1;

/// Knee position as a fraction of the cutoff; chosen above the highest
/// significant formants.
pub const F0_RATIO: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpParams {
    pub alpha: f64,
    pub f0_ratio: f64,
    pub f_max_hz: f64,
}

impl WarpParams {
    /// A warp with `alpha` validated against [`ALPHA_MIN`]..[`ALPHA_MAX`].
    pub fn new(alpha: f64, f_max_hz: f64) -> Result<Self> {
        if !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
            return Err(CoreError::config(format!(
                "alpha {alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]"
            )));
        }
        Self::unchecked(alpha, f_max_hz)
    }

    /// A warp without the alpha range check. The `augment` command uses this
    /// as a research escape hatch; training and evaluation always validate.
    pub fn unchecked(alpha: f64, f_max_hz: f64) -> Result<Self> {
        if !f_max_hz.is_finite() || f_max_hz <= 0.0 {
            return Err(CoreError::config("f_max must be positive"));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(CoreError::config(format!("alpha {alpha} is not usable")));
        }
        Ok(WarpParams {
            alpha,
            f0_ratio: F0_RATIO,
            f_max_hz,
        })
    }

    pub fn f0(&self) -> f64 {
        self.f0_ratio * self.f_max_hz
    }
}

/// The warp map `G` itself.
///
/// The upper branch is evaluated as `a + (f_max - a) * r` with `a = alpha*f0`
/// and `r = (f - f0)/(f_max - f0)`, which lands exactly on `a` at `f0` and
/// exactly on `f_max` at `f_max`.
pub fn warp_frequency(f: f64, params: &WarpParams) -> Result<f64> {
    if !(0.0..=params.f_max_hz).contains(&f) {
        return Err(CoreError::data(format!(
            "frequency {f} outside [0, {}]",
            params.f_max_hz
        )));
    }
    let f0 = params.f0();
    if f <= f0 {
        Ok(params.alpha * f)
    } else {
        let a = params.alpha * f0;
        let r = (f - f0) / (params.f_max_hz - f0);
        Ok(a + (params.f_max_hz - a) * r)
    }
}

/// Inverse of [`warp_frequency`]: the source position that maps onto `g`.
/// Works in arbitrary linear units (Hz or bins) as long as `f0` and `f_max`
/// use the same unit.
fn warp_inverse(g: f64, alpha: f64, f0: f64, f_max: f64) -> f64 {
    let a = alpha * f0;
    if g <= a {
        g / alpha
    } else {
        f0 + (g - a) * (f_max - f0) / (f_max - a)
    }
}

/// Warps a spectrogram along the frequency axis.
///
/// Each output bin samples the input at the inverse-mapped position via
/// linear interpolation; positions beyond the last input bin clamp to the
/// edge. Shape and the time axis are untouched.
pub fn warp_spectrogram(spec: &Spectrogram, params: &WarpParams) -> Result<Spectrogram> {
    let bins = spec.bins();
    let bin_hz = spec.meta.bin_hz();
    // Work in bin units; the map is homogeneous so this is the same warp.
    let f0_b = params.f0() / bin_hz;
    let f_max_b = params.f_max_hz / bin_hz;

    // Source position and interpolation weights per output bin.
    let mut lo = Vec::with_capacity(bins);
    let mut frac = Vec::with_capacity(bins);
    for j in 0..bins {
        let src = warp_inverse(j as f64, params.alpha, f0_b, f_max_b).clamp(0.0, (bins - 1) as f64);
        let i = src.floor() as usize;
        lo.push(i.min(bins - 1));
        frac.push(src - i as f64);
    }

    let mut values = Vec::with_capacity(spec.frames() * bins);
    for t in 0..spec.frames() {
        let row = spec.row(t);
        for j in 0..bins {
            let i = lo[j];
            let hi = (i + 1).min(bins - 1);
            values.push(row[i] * (1.0 - frac[j]) + row[hi] * frac[j]);
        }
    }
    Spectrogram::from_values(spec.meta, values)
}

/// How training-time augmentation draws its warp factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentMode {
    /// One alpha per epoch, shared by every training sample; the validation
    /// set is left unwarped.
    PerEpochGlobal,
    /// A fresh alpha per sample, for training and validation alike.
    PerSample,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentStrategy {
    pub mode: AugmentMode,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl AugmentStrategy {
    pub fn new(mode: AugmentMode, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        if !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha_min)
            || !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha_max)
            || alpha_min > alpha_max
        {
            return Err(CoreError::config(format!(
                "alpha range ({alpha_min}, {alpha_max}) must lie within [{ALPHA_MIN}, {ALPHA_MAX}]"
            )));
        }
        Ok(AugmentStrategy {
            mode,
            alpha_min,
            alpha_max,
        })
    }

    pub fn per_sample() -> Self {
        AugmentStrategy {
            mode: AugmentMode::PerSample,
            alpha_min: ALPHA_MIN,
            alpha_max: ALPHA_MAX,
        }
    }

    pub fn per_epoch() -> Self {
        AugmentStrategy {
            mode: AugmentMode::PerEpochGlobal,
            alpha_min: ALPHA_MIN,
            alpha_max: ALPHA_MAX,
        }
    }
}

/// Draws one warp factor uniformly from the strategy's range.
///
/// Callers own the generator state: per-epoch reuse vs. per-sample draws is
/// decided by how often this is called.
pub fn sample_alpha(strategy: &AugmentStrategy, rng: &mut impl Rng) -> f64 {
    if strategy.alpha_min == strategy.alpha_max {
        strategy.alpha_min
    } else {
        rng.random_range(strategy.alpha_min..strategy.alpha_max)
    }
}

/// The fixed test-time augmentation grid: 0.90, 0.92, ..., 1.10.
pub fn tta_alphas() -> [f64; 11] {
    std::array::from_fn(|i| (90 + 2 * i) as f64 / 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SpectrogramMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(alpha: f64) -> WarpParams {
        WarpParams::new(alpha, 4000.0).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        for alpha in [0.9, 0.95, 1.0, 1.07, 1.1] {
            assert_eq!(warp_frequency(0.0, &params(alpha)).unwrap(), 0.0);
        }
    }

    #[test]
    fn lower_branch_scales_linearly() {
        // f0 = 3600, so 2000 sits on the lower branch.
        let g = warp_frequency(2000.0, &params(1.1)).unwrap();
        assert_eq!(g, 2200.0);
    }

    #[test]
    fn upper_branch_hand_example() {
        // alpha=1.1, f_max=4000, f0=3600, f=3800:
        // 3960 + (4000-3960) * 200/400 = 3980.
        let g = warp_frequency(3800.0, &params(1.1)).unwrap();
        assert!((g - 3980.0).abs() < 1e-9, "got {g}");
    }

    #[test]
    fn f_max_is_a_fixed_point() {
        for alpha in [0.9, 0.93, 1.0, 1.02, 1.1] {
            let g = warp_frequency(4000.0, &params(alpha)).unwrap();
            assert_eq!(g, 4000.0, "alpha {alpha}");
        }
    }

    #[test]
    fn continuous_at_knee() {
        for alpha in [0.9, 0.97, 1.1] {
            let p = params(alpha);
            let f0 = p.f0();
            let lower = alpha * f0;
            // Evaluate the upper branch formula right at f0.
            let a = alpha * f0;
            let upper = a + (p.f_max_hz - a) * ((f0 - f0) / (p.f_max_hz - f0));
            assert_eq!(lower, upper);
            assert_eq!(warp_frequency(f0, &p).unwrap(), lower);
        }
    }

    #[test]
    fn rejects_out_of_band_frequency() {
        assert!(warp_frequency(4001.0, &params(1.0)).is_err());
        assert!(warp_frequency(-1.0, &params(1.0)).is_err());
    }

    #[test]
    fn monotone_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let alpha = rng.random_range(0.9..=1.1);
            let p = params(alpha);
            let f1 = rng.random_range(0.0..4000.0);
            let f2 = rng.random_range(0.0..4000.0);
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            if hi - lo < 1e-6 {
                continue;
            }
            let g_lo = warp_frequency(lo, &p).unwrap();
            let g_hi = warp_frequency(hi, &p).unwrap();
            assert!(g_lo < g_hi, "alpha {alpha}: G({lo})={g_lo} !< G({hi})={g_hi}");
        }
    }

    /// A smooth broadband log-magnitude spectrogram: gentle spectral tilt
    /// and slow ripples, varying slowly relative to the warp displacement.
    fn smooth_spec(frames: usize, bins: usize) -> Spectrogram {
        let meta = SpectrogramMeta {
            sample_rate: 8000,
            window: 512,
            shift: 256,
            fft_size: 512,
            f_max_hz: 4000.0,
            log_floor: 1e-6,
            frames,
            bins,
        };
        let n = bins as f64;
        let mut values = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            for f in 0..bins {
                let x = f as f64;
                let v = -6.0
                    + 1.5 * (std::f64::consts::TAU * x / n + 0.3 * t as f64).sin()
                    + 0.8 * (std::f64::consts::PI * x / (n / 2.0) - 0.2 * t as f64).cos();
                values.push(v);
            }
        }
        Spectrogram::from_values(meta, values).unwrap()
    }

    #[test]
    fn identity_warp_is_identity() {
        let spec = smooth_spec(3, 257);
        let out = warp_spectrogram(&spec, &params(1.0)).unwrap();
        for (a, b) in spec.values().iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn warp_preserves_shape() {
        let spec = smooth_spec(4, 257);
        for alpha in [0.9, 0.96, 1.04, 1.1] {
            let out = warp_spectrogram(&spec, &params(alpha)).unwrap();
            assert_eq!(out.frames(), spec.frames());
            assert_eq!(out.bins(), spec.bins());
        }
    }

    /// Independent oracle: direct interpolation of a single-frame
    /// spectrogram at the inverse-mapped frequency of each bin.
    fn warp_row_oracle(row: &[f64], alpha: f64, bin_hz: f64, f_max: f64) -> Vec<f64> {
        let f0 = F0_RATIO * f_max;
        (0..row.len())
            .map(|j| {
                let f_out = j as f64 * bin_hz;
                let a = alpha * f0;
                let src_hz = if f_out <= a {
                    f_out / alpha
                } else {
                    f0 + (f_out - a) * (f_max - f0) / (f_max - a)
                };
                let pos = (src_hz / bin_hz).clamp(0.0, (row.len() - 1) as f64);
                let i = pos.floor() as usize;
                let hi = (i + 1).min(row.len() - 1);
                let frac = pos - i as f64;
                row[i] * (1.0 - frac) + row[hi] * frac
            })
            .collect()
    }

    #[test]
    fn peak_relocates_to_scaled_frequency() {
        let bins = 257;
        let meta = SpectrogramMeta {
            sample_rate: 8000,
            window: 512,
            shift: 256,
            fft_size: 512,
            f_max_hz: 4000.0,
            log_floor: 1e-6,
            frames: 1,
            bins,
        };
        let bin_hz = meta.bin_hz();
        let peak_bin = 128; // 2000 Hz, well below f0 = 3600.
        let mut values = vec![0.0; bins];
        values[peak_bin] = 1.0;
        let spec = Spectrogram::from_values(meta, values.clone()).unwrap();

        let alpha = 0.95;
        let out = warp_spectrogram(&spec, &params(alpha)).unwrap();
        let argmax = out
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let expect = (alpha * peak_bin as f64 * bin_hz / bin_hz).round() as usize;
        assert!(
            (argmax as i64 - expect as i64).abs() <= 1,
            "peak at {argmax}, expected near {expect}"
        );

        let oracle = warp_row_oracle(&values, alpha, bin_hz, 4000.0);
        for (got, want) in out.values().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_warp_recovers_low_band() {
        let spec = smooth_spec(2, 257);
        let alpha = 0.95;
        let once = warp_spectrogram(&spec, &params(alpha)).unwrap();
        let back = warp_spectrogram(&once, &WarpParams::new(1.0 / alpha, 4000.0).unwrap()).unwrap();
        let f0_bin = (F0_RATIO * 4000.0 / spec.meta.bin_hz()) as usize;
        // Low band only: both warps keep these bins on the linear segment.
        let low = (f0_bin as f64 * 0.85) as usize;
        for t in 0..spec.frames() {
            for f in 1..low {
                let orig = spec.at(t, f);
                let rec = back.at(t, f);
                assert!(
                    (rec - orig).abs() <= 1e-2 * orig.abs().max(0.1),
                    "t={t} f={f}: {orig} vs {rec}"
                );
            }
        }
    }

    #[test]
    fn warp_approximately_conserves_energy() {
        let spec = smooth_spec(3, 257);
        let total: f64 = spec.values().iter().sum();
        for alpha in [0.9, 0.95, 1.05, 1.1] {
            let out = warp_spectrogram(&spec, &params(alpha)).unwrap();
            let warped: f64 = out.values().iter().sum();
            assert!(
                (warped - total).abs() / total.abs() < 0.05,
                "alpha {alpha}: {total} -> {warped}"
            );
        }
    }

    #[test]
    fn degenerate_alpha_range_is_constant() {
        let strat = AugmentStrategy::new(AugmentMode::PerSample, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_alpha(&strat, &mut rng), 1.0);
        }
    }

    #[test]
    fn alpha_draws_are_uniform_on_the_range() {
        let strat = AugmentStrategy::per_sample();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_alpha(&strat, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn alpha_sequence_is_deterministic() {
        let strat = AugmentStrategy::per_sample();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(sample_alpha(&strat, &mut a), sample_alpha(&strat, &mut b));
        }
    }

    #[test]
    fn tta_grid_is_the_eleven_point_ladder() {
        let alphas = tta_alphas();
        assert_eq!(alphas.len(), 11);
        assert_eq!(alphas[0], 0.90);
        assert_eq!(alphas[5], 1.0);
        assert_eq!(alphas[10], 1.10);
        for w in alphas.windows(2) {
            assert!((w[1] - w[0] - 0.02).abs() < 1e-12);
            assert!(w[1] > w[0]);
        }
    }
}
