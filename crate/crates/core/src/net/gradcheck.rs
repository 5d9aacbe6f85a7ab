//! Finite-difference verification of the analytic backward pass.
//!
//! Central differences in 64-bit arithmetic over every parameter element,
//! against a train-mode forward (so the check exercises the masked
//! recurrence and the batch-norm statistics too).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Emotion, PaddedBatch};
use crate::error::Result;
use crate::net::model::{backward, cross_entropy, forward, Mode};
use crate::net::params::{init_params, NetworkParams};
use crate::net::{Activation, ConvLayerConfig, NetworkConfig};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;

/// Per-tensor worst relative error.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel <= MAX_REL_ERROR
    }
}

/// The miniature verification setup: 2 conv layers, 1 Bi-LSTM with
/// sequence batch norm, hidden size 8, batch of 3 with mixed lengths.
pub fn default_setup(seed: u64) -> Result<(NetworkParams, PaddedBatch, Vec<Emotion>)> {
    let config = NetworkConfig {
        conv_layers: vec![
            ConvLayerConfig {
                out_channels: 4,
                kernel: (3, 3),
                stride: (1, 2),
            },
            ConvLayerConfig {
                out_channels: 6,
                kernel: (3, 3),
                stride: (2, 2),
            },
        ],
        bilstm_layers: 1,
        hidden_size: 8,
        use_seq_batchnorm: true,
        activation: Activation::LeakyRelu,
        num_classes: 4,
    };
    setup_for_config(&config, 12, &[13, 9, 17], seed)
}

/// Builds parameters and a random padded batch for an arbitrary
/// architecture; used by the CLI to check user configurations at reduced
/// scale.
pub fn setup_for_config(
    config: &NetworkConfig,
    input_bins: usize,
    lengths: &[usize],
    seed: u64,
) -> Result<(NetworkParams, PaddedBatch, Vec<Emotion>)> {
    let params = init_params(config, input_bins, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let t_max = *lengths.iter().max().expect("at least one sample");
    let b = lengths.len();
    let mut values = vec![0.0; b * t_max * input_bins];
    for (i, &len) in lengths.iter().enumerate() {
        for t in 0..len {
            for f in 0..input_bins {
                values[(i * t_max + t) * input_bins + f] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let labels: Vec<Emotion> = (0..b)
        .map(|i| Emotion::from_index(i % Emotion::COUNT).unwrap())
        .collect();
    let batch = PaddedBatch {
        values,
        batch: b,
        t_max,
        bins: input_bins,
        lengths: lengths.to_vec(),
        labels: labels.clone(),
    };
    Ok((params, batch, labels))
}

fn loss_of(params: &NetworkParams, batch: &PaddedBatch, labels: &[Emotion]) -> Result<f64> {
    let out = forward(params, batch, Mode::Train)?;
    Ok(cross_entropy(&out.probs, out.classes, labels))
}

/// Central-difference gradients for every parameter element.
pub fn numeric_gradients(
    params: &NetworkParams,
    batch: &PaddedBatch,
    labels: &[Emotion],
    step: f64,
) -> Result<NetworkParams> {
    let mut numeric = params.zeros_like();
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].1.len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].1.data_mut()[k] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].1.data_mut()[k] -= step;
            let grad = (loss_of(&plus, batch, labels)? - loss_of(&minus, batch, labels)?)
                / (2.0 * step);
            numeric.tensors_mut()[ti].1.data_mut()[k] = grad;
        }
    }
    Ok(numeric)
}

/// Worst relative error per tensor between two gradient sets.
///
/// The denominator is floored to keep finite-difference noise on genuinely
/// tiny gradients from dominating the ratio.
pub fn relative_errors(analytic: &NetworkParams, numeric: &NetworkParams) -> Vec<(String, f64)> {
    let num = numeric.tensors();
    analytic
        .tensors()
        .into_iter()
        .zip(num)
        .map(|((name, a), (_, n))| {
            let worst = a
                .data()
                .iter()
                .zip(n.data())
                .map(|(&ga, &gn)| (ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-6))
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// Runs the full check: analytic backward vs. central differences.
pub fn grad_check(
    params: &NetworkParams,
    batch: &PaddedBatch,
    labels: &[Emotion],
    step: f64,
) -> Result<GradCheckReport> {
    let out = forward(params, batch, Mode::Train)?;
    let cache = out.cache.expect("train mode returns a cache");
    let analytic = backward(params, &cache, labels)?;
    let numeric = numeric_gradients(params, batch, labels, step)?;
    let per_tensor = relative_errors(&analytic, &numeric);
    let max_rel = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_rel,
    })
}
