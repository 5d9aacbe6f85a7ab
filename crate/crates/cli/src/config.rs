//! Run configuration: a TOML document covering spectrogram extraction, the
//! network architecture, optimizer groups, augmentation, and training
//! options. Unknown keys are rejected; all values are validated against the
//! core invariants at load time.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use emorec_core::corpus::Emotion;
use emorec_core::dsp::SpectrogramConfig;
use emorec_core::net::{Activation, ConvLayerConfig, NetworkConfig};
use emorec_core::optim::{LayerGroup, OptimConfig};
use emorec_core::vtlp::{AugmentMode, AugmentStrategy};
use emorec_core::eval::TrainOptions;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: RawPaths,
    #[serde(default)]
    pub spectrogram: RawSpectrogram,
    #[serde(default)]
    pub network: Option<RawNetwork>,
    #[serde(default)]
    pub optim: RawOptim,
    #[serde(default)]
    pub train: RawTrain,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPaths {
    pub manifest: PathBuf,
    pub features: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawSpectrogram {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub f_max_hz: f64,
    pub log_floor: f64,
}

impl Default for RawSpectrogram {
    fn default() -> Self {
        let d = SpectrogramConfig::default();
        RawSpectrogram {
            window_ms: d.window_ms,
            shift_ms: d.shift_ms,
            f_max_hz: d.f_max_hz,
            log_floor: d.log_floor,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNetwork {
    #[serde(default)]
    pub conv: Vec<RawConvLayer>,
    #[serde(default = "default_bilstm_layers")]
    pub bilstm_layers: usize,
    #[serde(default = "default_hidden_size")]
    pub hidden_size: usize,
    #[serde(default)]
    pub seq_batchnorm: bool,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_bilstm_layers() -> usize {
    1
}

fn default_hidden_size() -> usize {
    128
}

fn default_activation() -> String {
    "leaky_relu".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConvLayer {
    pub channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawOptim {
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub lambda: f64,
    pub group: Vec<RawGroup>,
}

impl Default for RawOptim {
    fn default() -> Self {
        let d = OptimConfig::default();
        RawOptim {
            eta: d.eta,
            gamma: d.gamma,
            beta: d.beta,
            lambda: d.lambda,
            group: Vec::new(),
        }
    }
}

/// One optimizer group; unset fields inherit the `[optim]` table.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGroup {
    pub pattern: String,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawTrain {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// "none", "per_epoch", or "per_sample".
    pub augment: String,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub oversample: Vec<String>,
    pub oversample_factor: usize,
    pub bn_momentum: f64,
}

impl Default for RawTrain {
    fn default() -> Self {
        RawTrain {
            batch_size: 16,
            max_epochs: 300,
            patience: 20,
            augment: "none".to_string(),
            alpha_min: 0.9,
            alpha_max: 1.1,
            oversample: vec!["happiness".to_string(), "anger".to_string()],
            oversample_factor: 1,
            bn_momentum: 0.9,
        }
    }
}

/// Fully validated run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub spectrogram: SpectrogramConfig,
    pub network: NetworkConfig,
    pub optim: OptimConfig,
    pub groups: Vec<LayerGroup>,
    pub train: TrainOptions,
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let raw: RawConfig = toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    validate(raw, path)
}

fn validate(raw: RawConfig, path: &Path) -> Result<RunConfig, CliError> {
    let bad = |msg: String| CliError::Validation(format!("{}: {msg}", path.display()));

    let spectrogram = SpectrogramConfig {
        window_ms: raw.spectrogram.window_ms,
        shift_ms: raw.spectrogram.shift_ms,
        f_max_hz: raw.spectrogram.f_max_hz,
        log_floor: raw.spectrogram.log_floor,
    };
    spectrogram.validate().map_err(|e| bad(e.to_string()))?;

    let network = match raw.network {
        None => NetworkConfig::default_preset(),
        Some(n) => {
            let activation = Activation::parse(&n.activation)
                .ok_or_else(|| bad(format!("unknown activation \"{}\"", n.activation)))?;
            let conv_layers = if n.conv.is_empty() {
                NetworkConfig::default_preset().conv_layers
            } else {
                n.conv
                    .iter()
                    .map(|c| ConvLayerConfig {
                        out_channels: c.channels,
                        kernel: (c.kernel[0], c.kernel[1]),
                        stride: (c.stride[0], c.stride[1]),
                    })
                    .collect()
            };
            NetworkConfig {
                conv_layers,
                bilstm_layers: n.bilstm_layers,
                hidden_size: n.hidden_size,
                use_seq_batchnorm: n.seq_batchnorm,
                activation,
                num_classes: 4,
            }
        }
    };
    network.validate().map_err(|e| bad(e.to_string()))?;

    let optim = OptimConfig {
        eta: raw.optim.eta,
        gamma: raw.optim.gamma,
        beta: raw.optim.beta,
        lambda: raw.optim.lambda,
    };
    optim.validate().map_err(|e| bad(e.to_string()))?;
    let groups: Vec<LayerGroup> = raw
        .optim
        .group
        .iter()
        .map(|g| {
            let config = OptimConfig {
                eta: g.eta.unwrap_or(optim.eta),
                gamma: g.gamma.unwrap_or(optim.gamma),
                beta: g.beta.unwrap_or(optim.beta),
                lambda: g.lambda.unwrap_or(optim.lambda),
            };
            config.validate().map_err(|e| bad(e.to_string()))?;
            Ok(LayerGroup {
                pattern: Some(g.pattern.clone()),
                config,
            })
        })
        .collect::<Result<_, CliError>>()?;

    let augment = match raw.train.augment.as_str() {
        "none" => None,
        "per_epoch" => Some(
            AugmentStrategy::new(
                AugmentMode::PerEpochGlobal,
                raw.train.alpha_min,
                raw.train.alpha_max,
            )
            .map_err(|e| bad(e.to_string()))?,
        ),
        "per_sample" => Some(
            AugmentStrategy::new(
                AugmentMode::PerSample,
                raw.train.alpha_min,
                raw.train.alpha_max,
            )
            .map_err(|e| bad(e.to_string()))?,
        ),
        other => return Err(bad(format!("unknown augment mode \"{other}\""))),
    };
    let oversample_classes: Vec<Emotion> = raw
        .train
        .oversample
        .iter()
        .map(|s| Emotion::parse(s).ok_or_else(|| bad(format!("unknown emotion \"{s}\""))))
        .collect::<Result<_, CliError>>()?;
    if raw.train.batch_size == 0 {
        return Err(bad("batch_size must be positive".into()));
    }
    if raw.train.max_epochs == 0 {
        return Err(bad("max_epochs must be positive".into()));
    }
    if raw.train.oversample_factor == 0 {
        return Err(bad("oversample_factor must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&raw.train.bn_momentum) {
        return Err(bad("bn_momentum must lie in [0, 1)".into()));
    }

    let train = TrainOptions {
        batch_size: raw.train.batch_size,
        max_epochs: raw.train.max_epochs,
        patience: raw.train.patience,
        augment,
        oversample_classes,
        oversample_factor: raw.train.oversample_factor,
        seed: raw.seed,
        bn_momentum: raw.train.bn_momentum,
        track_train_accuracy: false,
    };

    Ok(RunConfig {
        manifest: raw.paths.manifest,
        features: raw.paths.features,
        spectrogram,
        network,
        optim,
        groups,
        train,
    })
}
