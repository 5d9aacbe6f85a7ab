//! Global normalization statistics, normalization, and zero-padded batching.

use crate::corpus::Emotion;
use crate::dsp::Spectrogram;
use crate::error::{CoreError, Result};

/// Variance floor used when normalizing.
pub const STATS_EPSILON: f64 = 1e-8;

/// Scalar mean and standard deviation over every pixel of a spectrogram set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub mean: f64,
    pub std: f64,
    pub epsilon: f64,
}

/// Computes scalar statistics over all pixels of the given spectrograms.
///
/// Fed with a fold's training partition only, never test data; spectrograms
/// here are unpadded so padding never contributes.
pub fn compute_stats<'a, I>(spectrograms: I) -> Result<DatasetStats>
where
    I: IntoIterator<Item = &'a Spectrogram> + Clone,
{
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for spec in spectrograms.clone() {
        for &v in spec.values() {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(CoreError::data("cannot compute statistics of an empty set"));
    }
    let mean = sum / count as f64;
    let mut sq = 0.0f64;
    for spec in spectrograms {
        for &v in spec.values() {
            let d = v - mean;
            sq += d * d;
        }
    }
    let std = (sq / count as f64).sqrt();
    Ok(DatasetStats {
        mean,
        std,
        epsilon: STATS_EPSILON,
    })
}

/// Elementwise `(x - mean) / sqrt(std^2 + epsilon)`.
pub fn normalize(spec: &Spectrogram, stats: &DatasetStats) -> Spectrogram {
    let denom = (stats.std * stats.std + stats.epsilon).sqrt();
    let mean = stats.mean;
    spec.map(|v| (v - mean) / denom)
}

/// A zero-padded batch: values laid out `[batch][t_max][bins]` with the true
/// frame count of every sample recorded.
#[derive(Clone, Debug)]
pub struct PaddedBatch {
    pub values: Vec<f64>,
    pub batch: usize,
    pub t_max: usize,
    pub bins: usize,
    pub lengths: Vec<usize>,
    pub labels: Vec<Emotion>,
}

impl PaddedBatch {
    pub fn sample(&self, i: usize) -> &[f64] {
        let stride = self.t_max * self.bins;
        &self.values[i * stride..(i + 1) * stride]
    }

    /// The valid (unpadded) region of sample `i`.
    pub fn valid(&self, i: usize) -> &[f64] {
        &self.sample(i)[..self.lengths[i] * self.bins]
    }
}

/// Zero-pads samples along the time axis to the longest sample.
pub fn pad_batch(samples: &[(&Spectrogram, Emotion)]) -> Result<PaddedBatch> {
    if samples.is_empty() {
        return Err(CoreError::data("cannot pad an empty batch"));
    }
    let bins = samples[0].0.bins();
    for (spec, _) in samples {
        if spec.bins() != bins {
            return Err(CoreError::data(format!(
                "mixed bin counts in batch: {} vs {}",
                bins,
                spec.bins()
            )));
        }
    }
    let t_max = samples.iter().map(|(s, _)| s.frames()).max().unwrap();
    let mut values = vec![0.0; samples.len() * t_max * bins];
    let mut lengths = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for (i, (spec, label)) in samples.iter().enumerate() {
        let dst = &mut values[i * t_max * bins..];
        dst[..spec.frames() * bins].copy_from_slice(spec.values());
        lengths.push(spec.frames());
        labels.push(*label);
    }
    Ok(PaddedBatch {
        values,
        batch: samples.len(),
        t_max,
        bins,
        lengths,
        labels,
    })
}
