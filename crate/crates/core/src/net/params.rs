//! Parameter containers, initialization, and named-tensor traversal.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::net::NetworkConfig;
use crate::tensor::Tensor;

/// Default variance floor inside the sequence batch norm.
pub const BN_EPSILON: f64 = 1e-5;

/// Scale/shift plus running statistics of one batch-norm site (the input
/// contribution of one LSTM direction). Statistics are scalars: the
/// normalization averages over batch, time, and features jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct BnSiteParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: f64,
    pub running_var: f64,
    pub epsilon: f64,
}

impl BnSiteParams {
    fn fresh() -> Self {
        BnSiteParams {
            gamma: Tensor::scalar(1.0),
            beta: Tensor::scalar(0.0),
            running_mean: 0.0,
            running_var: 1.0,
            epsilon: BN_EPSILON,
        }
    }
}

/// One LSTM direction: gate-stacked input weights `[4H][D]`, recurrent
/// weights `[4H][H]`, bias `[4H]` (gate order i, f, g, o), and the optional
/// batch-norm site on the input contribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmDirParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
    pub bn: Option<BnSiteParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

/// Conv kernel laid out `[k_t][k_f][c_in][c_out]`, matching the
/// channels-last activation layout `[t][f][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    /// `[num_classes][2H]`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Every tensor of the classifier, plus the architecture and the input bin
/// count the shapes were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub input_bins: usize,
    pub conv: Vec<ConvLayerParams>,
    pub lstm: Vec<LstmLayerParams>,
    pub dense: DenseParams,
}

impl NetworkParams {
    /// Feature width of the sequence fed to the first LSTM layer.
    pub fn lstm_input_size(&self) -> Result<usize> {
        let f = self.config.freq_bins_after(self.input_bins)?;
        let c = self.config.conv_layers.last().map(|l| l.out_channels).unwrap_or(1);
        Ok(f * c)
    }

    /// Every learnable tensor with its name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.conv.iter().enumerate() {
            out.push((format!("conv.{i}.kernel"), &layer.kernel));
            out.push((format!("conv.{i}.bias"), &layer.bias));
        }
        for (i, layer) in self.lstm.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                out.push((format!("bilstm.{i}.{dir}.w_x"), &p.w_x));
                out.push((format!("bilstm.{i}.{dir}.w_h"), &p.w_h));
                out.push((format!("bilstm.{i}.{dir}.bias"), &p.bias));
                if let Some(bn) = &p.bn {
                    out.push((format!("bilstm.{i}.{dir}.bn_gamma"), &bn.gamma));
                    out.push((format!("bilstm.{i}.{dir}.bn_beta"), &bn.beta));
                }
            }
        }
        out.push(("dense.weight".to_string(), &self.dense.weight));
        out.push(("dense.bias".to_string(), &self.dense.bias));
        out
    }

    /// Mutable variant of [`tensors`](Self::tensors); same order, same names.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.conv.iter_mut().enumerate() {
            let ConvLayerParams { kernel, bias } = layer;
            out.push((format!("conv.{i}.kernel"), kernel));
            out.push((format!("conv.{i}.bias"), bias));
        }
        for (i, layer) in self.lstm.iter_mut().enumerate() {
            for (dir, p) in [("fwd", &mut layer.fwd), ("bwd", &mut layer.bwd)] {
                let LstmDirParams { w_x, w_h, bias, bn } = p;
                out.push((format!("bilstm.{i}.{dir}.w_x"), w_x));
                out.push((format!("bilstm.{i}.{dir}.w_h"), w_h));
                out.push((format!("bilstm.{i}.{dir}.bias"), bias));
                if let Some(bn) = bn {
                    out.push((format!("bilstm.{i}.{dir}.bn_gamma"), &mut bn.gamma));
                    out.push((format!("bilstm.{i}.{dir}.bn_beta"), &mut bn.beta));
                }
            }
        }
        out.push(("dense.weight".to_string(), &mut self.dense.weight));
        out.push(("dense.bias".to_string(), &mut self.dense.bias));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    /// A same-shaped container with every tensor zeroed; the gradient
    /// accumulator for one backward pass.
    pub fn zeros_like(&self) -> NetworkParams {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        // Gradient containers carry no meaningful running statistics.
        for layer in &mut out.lstm {
            for p in [&mut layer.fwd, &mut layer.bwd] {
                if let Some(bn) = &mut p.bn {
                    bn.running_mean = 0.0;
                    bn.running_var = 0.0;
                }
            }
        }
        out
    }

    /// Adds `other`'s tensors into `self` elementwise.
    pub fn accumulate(&mut self, other: &NetworkParams) {
        let src = other.tensors();
        for ((_, dst), (_, t)) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, dims: &[usize], bound: f64) -> Tensor {
    let len: usize = dims.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(dims, data).expect("shape matches generated length")
}

/// Standard normal via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Orthonormalizes an `n x n` Gaussian matrix with modified Gram-Schmidt.
fn orthogonal_block(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n * n).map(|_| gaussian(rng)).collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
            for k in 0..n {
                m[i * n + k] -= dot * m[j * n + k];
            }
        }
        let norm: f64 = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
        // A degenerate row after projection is vanishingly unlikely; fall
        // back to a unit basis vector if it happens.
        if norm > 1e-12 {
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        } else {
            for k in 0..n {
                m[i * n + k] = if k == i { 1.0 } else { 0.0 };
            }
        }
    }
    m
}

/// Initializes all parameters for the given architecture.
///
/// Conv, dense, and LSTM input weights use fan-in-scaled uniform draws;
/// recurrent weights get one orthonormal block per gate; the forget-gate
/// bias starts at 1; batch-norm scale/shift start at 1/0. Deterministic in
/// the seed.
pub fn init_params(config: &NetworkConfig, input_bins: usize, seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let _ = config.freq_bins_after(input_bins)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut conv = Vec::with_capacity(config.conv_layers.len());
    let mut c_in = 1usize;
    for layer in &config.conv_layers {
        let (kt, kf) = layer.kernel;
        let fan_in = (kt * kf * c_in) as f64;
        let bound = (3.0 / fan_in).sqrt();
        conv.push(ConvLayerParams {
            kernel: uniform_tensor(&mut rng, &[kt, kf, c_in, layer.out_channels], bound),
            bias: Tensor::zeros(&[layer.out_channels]),
        });
        c_in = layer.out_channels;
    }

    let h = config.hidden_size;
    let f_out = config.freq_bins_after(input_bins)?;
    let mut d = f_out * c_in;
    let mut lstm = Vec::with_capacity(config.bilstm_layers);
    for _ in 0..config.bilstm_layers {
        let mut dir = || -> LstmDirParams {
            let bound = (3.0 / d as f64).sqrt();
            let w_x = uniform_tensor(&mut rng, &[4 * h, d], bound);
            let mut w_h_data = Vec::with_capacity(4 * h * h);
            for _ in 0..4 {
                w_h_data.extend(orthogonal_block(&mut rng, h));
            }
            let w_h = Tensor::from_vec(&[4 * h, h], w_h_data).expect("gate blocks fill 4H x H");
            let mut bias = Tensor::zeros(&[4 * h]);
            // Forget gate opens at the start of training.
            for b in &mut bias.data_mut()[h..2 * h] {
                *b = 1.0;
            }
            LstmDirParams {
                w_x,
                w_h,
                bias,
                bn: config.use_seq_batchnorm.then(BnSiteParams::fresh),
            }
        };
        let fwd = dir();
        let bwd = dir();
        lstm.push(LstmLayerParams { fwd, bwd });
        d = 2 * h;
    }

    let bound = (3.0 / (2 * h) as f64).sqrt();
    let dense = DenseParams {
        weight: uniform_tensor(&mut rng, &[config.num_classes, 2 * h], bound),
        bias: Tensor::zeros(&[config.num_classes]),
    };

    Ok(NetworkParams {
        config: config.clone(),
        input_bins,
        conv,
        lstm,
        dense,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, ConvLayerConfig};

    fn tiny_config(bn: bool) -> NetworkConfig {
        NetworkConfig {
            conv_layers: vec![
                ConvLayerConfig {
                    out_channels: 3,
                    kernel: (3, 3),
                    stride: (1, 2),
                },
                ConvLayerConfig {
                    out_channels: 4,
                    kernel: (3, 3),
                    stride: (2, 2),
                },
            ],
            bilstm_layers: 1,
            hidden_size: 8,
            use_seq_batchnorm: bn,
            activation: Activation::LeakyRelu,
            num_classes: 4,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_config(true);
        let a = init_params(&cfg, 16, 42).unwrap();
        let b = init_params(&cfg, 16, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 16, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bn_initialized_to_identity_affine() {
        let params = init_params(&tiny_config(true), 16, 0).unwrap();
        for layer in &params.lstm {
            for dir in [&layer.fwd, &layer.bwd] {
                let bn = dir.bn.as_ref().unwrap();
                assert_eq!(bn.gamma.data(), &[1.0]);
                assert_eq!(bn.beta.data(), &[0.0]);
                assert_eq!(bn.running_mean, 0.0);
                assert_eq!(bn.running_var, 1.0);
            }
        }
    }

    #[test]
    fn shapes_match_config_arithmetic() {
        let cfg = tiny_config(false);
        let params = init_params(&cfg, 16, 0).unwrap();
        assert_eq!(params.conv[0].kernel.dims(), &[3, 3, 1, 3]);
        assert_eq!(params.conv[1].kernel.dims(), &[3, 3, 3, 4]);
        // 16 bins -> (16-3)/2+1 = 7 -> (7-3)/2+1 = 3 bins, 4 channels.
        let d = params.lstm_input_size().unwrap();
        assert_eq!(d, 12);
        assert_eq!(params.lstm[0].fwd.w_x.dims(), &[32, 12]);
        assert_eq!(params.lstm[0].fwd.w_h.dims(), &[32, 8]);
        assert_eq!(params.lstm[0].fwd.bias.dims(), &[32]);
        assert_eq!(params.dense.weight.dims(), &[4, 16]);
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let params = init_params(&tiny_config(false), 16, 0).unwrap();
        let bias = params.lstm[0].fwd.bias.data();
        let h = 8;
        assert!(bias[..h].iter().all(|&b| b == 0.0));
        assert!(bias[h..2 * h].iter().all(|&b| b == 1.0));
        assert!(bias[2 * h..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn recurrent_blocks_are_orthonormal() {
        let params = init_params(&tiny_config(false), 16, 5).unwrap();
        let w_h = params.lstm[0].fwd.w_h.data();
        let h = 8;
        for gate in 0..4 {
            let block = &w_h[gate * h * h..(gate + 1) * h * h];
            for i in 0..h {
                for j in 0..h {
                    let dot: f64 = (0..h).map(|k| block[i * h + k] * block[j * h + k]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10, "gate {gate} ({i},{j}): {dot}");
                }
            }
        }
    }

    #[test]
    fn visit_order_is_stable_and_complete() {
        let params = init_params(&tiny_config(true), 16, 0).unwrap();
        let names = params.tensor_names();
        assert_eq!(
            names,
            vec![
                "conv.0.kernel",
                "conv.0.bias",
                "conv.1.kernel",
                "conv.1.bias",
                "bilstm.0.fwd.w_x",
                "bilstm.0.fwd.w_h",
                "bilstm.0.fwd.bias",
                "bilstm.0.fwd.bn_gamma",
                "bilstm.0.fwd.bn_beta",
                "bilstm.0.bwd.w_x",
                "bilstm.0.bwd.w_h",
                "bilstm.0.bwd.bias",
                "bilstm.0.bwd.bn_gamma",
                "bilstm.0.bwd.bn_beta",
                "dense.weight",
                "dense.bias",
            ]
        );
    }
}
