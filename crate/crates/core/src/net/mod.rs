//! The CNN + masked Bi-LSTM + dense-softmax classifier.
//!
//! Spectrograms run through a stack of strided valid convolutions, are
//! flattened per time step, optionally sequence-batch-normalized on the
//! recurrent input contribution, aggregated by a bidirectional LSTM over
//! valid steps only, and classified by a dense softmax layer. The backward
//! pass is analytic, including gradients through the masked recurrence and
//! the batch normalization statistics.

mod batchnorm;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod lstm;
mod model;
mod params;

pub use batchnorm::{seq_batchnorm_apply, seq_batchnorm_stats};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    backward, cross_entropy, forward, update_running_stats, ForwardCache, ForwardOutput, Mode,
};
pub use params::{
    init_params, BnSiteParams, ConvLayerParams, DenseParams, LstmDirParams, LstmLayerParams,
    NetworkParams, BN_EPSILON,
};

use crate::error::{CoreError, Result};

/// One convolutional layer: output channels, kernel and stride as
/// (time, frequency) pairs. Convolutions are valid (no padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerConfig {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

/// Nonlinearity of the convolutional stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Leaky rectifier, slope 0.01 on the negative side.
    LeakyRelu,
    Relu,
    Tanh,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if y > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "leaky_relu" => Some(Activation::LeakyRelu),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub conv_layers: Vec<ConvLayerConfig>,
    pub bilstm_layers: usize,
    pub hidden_size: usize,
    pub use_seq_batchnorm: bool,
    pub activation: Activation,
    pub num_classes: usize,
}

impl NetworkConfig {
    /// The best-scoring architecture: 4 convolutional layers and 1 Bi-LSTM.
    ///
    /// Progressive strided downsampling stands in for pooling, which was
    /// discarded early in the experiments.
    pub fn default_preset() -> Self {
        NetworkConfig {
            conv_layers: vec![
                ConvLayerConfig {
                    out_channels: 16,
                    kernel: (5, 5),
                    stride: (1, 2),
                },
                ConvLayerConfig {
                    out_channels: 32,
                    kernel: (3, 3),
                    stride: (2, 2),
                },
                ConvLayerConfig {
                    out_channels: 64,
                    kernel: (3, 3),
                    stride: (2, 2),
                },
                ConvLayerConfig {
                    out_channels: 64,
                    kernel: (3, 3),
                    stride: (2, 2),
                },
            ],
            bilstm_layers: 1,
            hidden_size: 128,
            use_seq_batchnorm: false,
            activation: Activation::LeakyRelu,
            num_classes: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.conv_layers.len()) {
            return Err(CoreError::config(format!(
                "conv layer count {} outside 1..=6",
                self.conv_layers.len()
            )));
        }
        if !(1..=4).contains(&self.bilstm_layers) {
            return Err(CoreError::config(format!(
                "Bi-LSTM layer count {} outside 1..=4",
                self.bilstm_layers
            )));
        }
        if self.hidden_size == 0 {
            return Err(CoreError::config("hidden size must be positive"));
        }
        if self.num_classes < 2 {
            return Err(CoreError::config("need at least two classes"));
        }
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.out_channels == 0
                || layer.kernel.0 == 0
                || layer.kernel.1 == 0
                || layer.stride.0 == 0
                || layer.stride.1 == 0
            {
                return Err(CoreError::config(format!(
                    "conv layer {i} has a zero dimension"
                )));
            }
        }
        Ok(())
    }

    /// Frequency bins surviving the conv stack for a given input bin count.
    pub fn freq_bins_after(&self, bins: usize) -> Result<usize> {
        let mut f = bins;
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if f < layer.kernel.1 {
                return Err(CoreError::config(format!(
                    "conv layer {i}: {f} frequency bins < kernel {}",
                    layer.kernel.1
                )));
            }
            f = (f - layer.kernel.1) / layer.stride.1 + 1;
        }
        Ok(f)
    }

    /// Smallest input frame count the conv stack accepts.
    pub fn min_frames(&self) -> usize {
        let mut need = 1usize;
        for layer in self.conv_layers.iter().rev() {
            need = (need - 1) * layer.stride.0 + layer.kernel.0;
        }
        need
    }
}

/// Applies the conv stack's valid-convolution arithmetic to a sample's
/// frame count: `floor((len - kernel) / stride) + 1` per layer.
///
/// This is the mask every Bi-LSTM consumes; padded frames never make it
/// past here.
pub fn mask_propagate(length: usize, conv_layers: &[ConvLayerConfig]) -> Result<usize> {
    let mut len = length;
    for (i, layer) in conv_layers.iter().enumerate() {
        if len < layer.kernel.0 {
            return Err(CoreError::data(format!(
                "sample too short for architecture: {len} frames reach conv layer {i} with kernel {}",
                layer.kernel.0
            )));
        }
        len = (len - layer.kernel.0) / layer.stride.0 + 1;
    }
    Ok(len)
}
