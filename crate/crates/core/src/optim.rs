//! Momentum SGD with a decoupled update scale.
//!
//! The velocity accumulates as in classical momentum,
//! `v <- gamma * v + eta * g`, but the weight step is scaled by a separate
//! coefficient: `w <- w - beta * v`. `beta` does not accumulate inside the
//! velocity, so it controls the momentum term's magnitude independently of
//! the learning rate. With `beta = 1` the rule reduces exactly to classical
//! momentum SGD.
//!
//! Hyperparameters resolve per layer group, so convolutional and recurrent
//! modules can train with different settings.

use std::collections::HashMap;

use regex::Regex;

use crate::error::{CoreError, Result};
use crate::net::NetworkParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    /// Learning rate eta.
    pub eta: f64,
    /// Momentum gamma.
    pub gamma: f64,
    /// Update scale beta.
    pub beta: f64,
    /// L2 regularization coefficient lambda, applied as a gradient term
    /// `lambda * w` inside the velocity.
    pub lambda: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            eta: 0.01,
            gamma: 0.9,
            beta: 1.0,
            lambda: 1e-4,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(CoreError::config(format!("eta {} must be > 0", self.eta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::config(format!(
                "gamma {} outside [0, 1)",
                self.gamma
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(CoreError::config(format!("beta {} must be > 0", self.beta)));
        }
        if self.lambda < 0.0 {
            return Err(CoreError::config(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One parameter group: a name pattern plus the hyperparameters for the
/// tensors it matches. A group without a pattern is the default group and
/// matches everything.
#[derive(Clone, Debug)]
pub struct LayerGroup {
    pub pattern: Option<String>,
    pub config: OptimConfig,
}

impl LayerGroup {
    pub fn default_group(config: OptimConfig) -> Self {
        LayerGroup {
            pattern: None,
            config,
        }
    }
}

/// Maps every parameter name to its group's hyperparameters.
///
/// First match wins over the ordered group list; patterns are anchored
/// regexes (`conv.*` matches `conv.3.kernel`). Every name must land in
/// some group, so a trailing default group is mandatory unless the
/// explicit patterns cover everything.
pub fn resolve_groups(
    param_names: &[String],
    groups: &[LayerGroup],
) -> Result<HashMap<String, OptimConfig>> {
    let mut compiled = Vec::with_capacity(groups.len());
    for group in groups {
        group.config.validate()?;
        let regex = match &group.pattern {
            Some(p) => Some(
                Regex::new(&format!("^(?:{p})$"))
                    .map_err(|e| CoreError::config(format!("bad group pattern \"{p}\": {e}")))?,
            ),
            None => None,
        };
        compiled.push((regex, group.config));
    }
    let mut map = HashMap::new();
    for name in param_names {
        let config = compiled
            .iter()
            .find(|(regex, _)| regex.as_ref().is_none_or(|r| r.is_match(name)))
            .map(|(_, c)| *c)
            .ok_or_else(|| {
                CoreError::config(format!(
                    "parameter {name} matched by no group and no default group is present"
                ))
            })?;
        map.insert(name.clone(), config);
    }
    Ok(map)
}

/// Per-parameter velocity tensors plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState {
    velocity: HashMap<String, Vec<f64>>,
    pub step_count: u64,
}

impl OptimState {
    pub fn new(params: &NetworkParams) -> Self {
        let velocity = params
            .tensors()
            .into_iter()
            .map(|(name, t)| (name, vec![0.0; t.len()]))
            .collect();
        OptimState {
            velocity,
            step_count: 0,
        }
    }

    pub fn velocity_of(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(|v| v.as_slice())
    }
}

/// One update step over every parameter tensor.
///
/// Per group: `g = grad + lambda * w`, `v = gamma * v + eta * g`,
/// `w = w - beta * v`.
pub fn step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut OptimState,
    groups: &HashMap<String, OptimConfig>,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    for ((name, param), (grad_name, grad)) in params.tensors_mut().into_iter().zip(grad_tensors) {
        debug_assert_eq!(name, grad_name);
        if !grad.is_finite() {
            return Err(CoreError::data(format!(
                "non-finite gradient in tensor {name}"
            )));
        }
        let cfg = groups
            .get(&name)
            .ok_or_else(|| CoreError::config(format!("no resolved group for tensor {name}")))?;
        let velocity = state
            .velocity
            .get_mut(&name)
            .ok_or_else(|| CoreError::config(format!("no velocity state for tensor {name}")))?;
        for ((w, &g), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(velocity.iter_mut())
        {
            let g = g + cfg.lambda * *w;
            *v = cfg.gamma * *v + cfg.eta * g;
            *w -= cfg.beta * *v;
        }
    }
    state.step_count += 1;
    Ok(())
}

/// One gradient-norm telemetry record.
#[derive(Clone, Debug, PartialEq)]
pub struct GradLogRecord {
    pub step: u64,
    pub layer: String,
    pub grad_norm: f64,
    pub param_norm: f64,
}

/// L2 norms of every gradient and parameter tensor at one step; the data
/// behind per-layer gradient-evolution plots.
pub fn log_grad_norms(params: &NetworkParams, grads: &NetworkParams, step: u64) -> Vec<GradLogRecord> {
    params
        .tensors()
        .into_iter()
        .zip(grads.tensors())
        .map(|((name, p), (_, g))| GradLogRecord {
            step,
            layer: name,
            grad_norm: g.l2_norm(),
            param_norm: p.l2_norm(),
        })
        .collect()
}

/// Buffered CSV writer for gradient-norm records, flushed once per epoch to
/// bound memory.
pub struct GradLogWriter<W: std::io::Write> {
    out: W,
}

impl<W: std::io::Write> GradLogWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "step,layer,grad_norm,param_norm")?;
        Ok(GradLogWriter { out })
    }

    pub fn append(&mut self, records: &[GradLogRecord]) -> Result<()> {
        for r in records {
            writeln!(
                self.out,
                "{},{},{:.9e},{:.9e}",
                r.step, r.layer, r.grad_norm, r.param_norm
            )?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Activation, ConvLayerConfig, NetworkConfig};

    fn scalar_params() -> NetworkParams {
        // The smallest legal network; tests drive individual tensors
        // directly with synthetic gradients.
        let config = NetworkConfig {
            conv_layers: vec![ConvLayerConfig {
                out_channels: 1,
                kernel: (1, 1),
                stride: (1, 1),
            }],
            bilstm_layers: 1,
            hidden_size: 1,
            use_seq_batchnorm: false,
            activation: Activation::LeakyRelu,
            num_classes: 2,
        };
        init_params(&config, 1, 0).unwrap()
    }

    fn default_groups(params: &NetworkParams, config: OptimConfig) -> HashMap<String, OptimConfig> {
        resolve_groups(&params.tensor_names(), &[LayerGroup::default_group(config)]).unwrap()
    }

    #[test]
    fn hand_iterated_scalar_trajectory() {
        // w0 = 1, g = 1 constant, eta = 0.1, gamma = 0.5, beta = 2,
        // lambda = 0: v = {0.1, 0.15}, w = 1 - 0.2 - 0.3 = 0.5.
        let mut params = scalar_params();
        params.conv[0].kernel.data_mut()[0] = 1.0;
        let mut grads = params.zeros_like();
        grads.conv[0].kernel.data_mut()[0] = 1.0;
        let cfg = OptimConfig {
            eta: 0.1,
            gamma: 0.5,
            beta: 2.0,
            lambda: 0.0,
        };
        let groups = default_groups(&params, cfg);
        let mut state = OptimState::new(&params);

        step(&mut params, &grads, &mut state, &groups).unwrap();
        assert_eq!(state.velocity_of("conv.0.kernel").unwrap()[0], 0.1);
        step(&mut params, &grads, &mut state, &groups).unwrap();
        assert!((state.velocity_of("conv.0.kernel").unwrap()[0] - 0.15).abs() < 1e-15);
        assert!((params.conv[0].kernel.data()[0] - 0.5).abs() < 1e-15);
        assert_eq!(state.step_count, 2);
    }

    #[test]
    fn gamma_zero_beta_one_is_plain_sgd() {
        let mut params = scalar_params();
        params.conv[0].kernel.data_mut()[0] = 2.0;
        let mut grads = params.zeros_like();
        grads.conv[0].kernel.data_mut()[0] = 0.5;
        let cfg = OptimConfig {
            eta: 0.1,
            gamma: 0.0,
            beta: 1.0,
            lambda: 0.0,
        };
        let groups = default_groups(&params, cfg);
        let mut state = OptimState::new(&params);
        step(&mut params, &grads, &mut state, &groups).unwrap();
        assert_eq!(params.conv[0].kernel.data()[0], 2.0 - 0.1 * 0.5);
    }

    #[test]
    fn beta_one_reduces_to_classical_momentum_bitwise() {
        // Independent classical-momentum oracle over a synthetic gradient
        // stream, compared bit for bit.
        let cfg = OptimConfig {
            eta: 0.05,
            gamma: 0.9,
            beta: 1.0,
            lambda: 0.0,
        };
        let mut params = scalar_params();
        let groups = default_groups(&params, cfg);
        let mut state = OptimState::new(&params);

        let n = params.conv[0].kernel.len();
        let mut oracle_w: Vec<f64> = params.conv[0].kernel.data().to_vec();
        let mut oracle_v = vec![0.0; n];

        for t in 0..100u64 {
            let mut grads = params.zeros_like();
            for (k, g) in grads.conv[0].kernel.data_mut().iter_mut().enumerate() {
                *g = ((t as f64) * 0.37 + k as f64).sin();
            }
            // Classical momentum: v = gamma v + eta g; w -= v.
            for ((v, w), &g) in oracle_v
                .iter_mut()
                .zip(&mut oracle_w)
                .zip(grads.conv[0].kernel.data())
            {
                *v = cfg.gamma * *v + cfg.eta * g;
                *w -= *v;
            }
            step(&mut params, &grads, &mut state, &groups).unwrap();
            for (k, (got, want)) in params.conv[0]
                .kernel
                .data()
                .iter()
                .zip(&oracle_w)
                .enumerate()
            {
                assert_eq!(got.to_bits(), want.to_bits(), "step {t}, element {k}");
            }
        }
    }

    #[test]
    fn eta_beta_rescaling_preserves_trajectory() {
        for c in [0.5, 2.0, 10.0] {
            let base = OptimConfig {
                eta: 0.02,
                gamma: 0.9,
                beta: 1.5,
                lambda: 0.0,
            };
            let scaled = OptimConfig {
                eta: c * base.eta,
                beta: base.beta / c,
                ..base
            };
            let mut p1 = scalar_params();
            let mut p2 = p1.clone();
            let g1 = default_groups(&p1, base);
            let g2 = default_groups(&p2, scaled);
            let mut s1 = OptimState::new(&p1);
            let mut s2 = OptimState::new(&p2);
            for t in 0..100u64 {
                let mut grads = p1.zeros_like();
                for (_, tensor) in grads.tensors_mut() {
                    for (k, g) in tensor.data_mut().iter_mut().enumerate() {
                        *g = ((t * 31 + k as u64) as f64 * 0.11).cos();
                    }
                }
                step(&mut p1, &grads, &mut s1, &g1).unwrap();
                step(&mut p2, &grads, &mut s2, &g2).unwrap();
            }
            let t2 = p2.tensors();
            for ((name, a), (_, b)) in p1.tensors().into_iter().zip(t2) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!(
                        (x - y).abs() <= 1e-12 * x.abs().max(1.0),
                        "c={c}, tensor {name}: {x} vs {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_gradient_with_zero_momentum_is_a_fixed_point() {
        let cfg = OptimConfig {
            eta: 0.1,
            gamma: 0.0,
            beta: 1.0,
            lambda: 0.0,
        };
        let mut params = scalar_params();
        let before = params.clone();
        let groups = default_groups(&params, cfg);
        let mut state = OptimState::new(&params);
        let grads = params.zeros_like();
        step(&mut params, &grads, &mut state, &groups).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn velocities_do_not_alias_across_groups() {
        let mut params = scalar_params();
        let groups = resolve_groups(
            &params.tensor_names(),
            &[
                LayerGroup {
                    pattern: Some("conv.*".into()),
                    config: OptimConfig {
                        eta: 0.5,
                        gamma: 0.9,
                        beta: 1.0,
                        lambda: 0.0,
                    },
                },
                LayerGroup::default_group(OptimConfig {
                    eta: 0.0001,
                    gamma: 0.0,
                    beta: 1.0,
                    lambda: 0.0,
                }),
            ],
        )
        .unwrap();
        let mut state = OptimState::new(&params);
        let mut grads = params.zeros_like();
        grads.conv[0].kernel.data_mut()[0] = 1.0;
        step(&mut params, &grads, &mut state, &groups).unwrap();
        assert_eq!(state.velocity_of("conv.0.kernel").unwrap()[0], 0.5);
        // Everything else saw zero gradient: velocity untouched.
        assert_eq!(state.velocity_of("dense.weight").unwrap()[0], 0.0);
        assert_eq!(state.velocity_of("bilstm.0.fwd.w_x").unwrap()[0], 0.0);
    }

    #[test]
    fn group_resolution_is_first_match_wins() {
        let names = vec![
            "conv.3.kernel".to_string(),
            "bilstm.0.fwd.w_x".to_string(),
        ];
        let eta_a = OptimConfig {
            eta: 0.01,
            ..OptimConfig::default()
        };
        let eta_b = OptimConfig {
            eta: 0.1,
            ..OptimConfig::default()
        };
        let map = resolve_groups(
            &names,
            &[
                LayerGroup {
                    pattern: Some("conv.*".into()),
                    config: eta_a,
                },
                LayerGroup::default_group(eta_b),
            ],
        )
        .unwrap();
        assert_eq!(map["conv.3.kernel"].eta, 0.01);
        assert_eq!(map["bilstm.0.fwd.w_x"].eta, 0.1);

        // Two overlapping patterns: the earlier one wins.
        let map = resolve_groups(
            &names,
            &[
                LayerGroup {
                    pattern: Some("conv.*".into()),
                    config: eta_a,
                },
                LayerGroup {
                    pattern: Some("conv.3.*".into()),
                    config: eta_b,
                },
                LayerGroup::default_group(OptimConfig::default()),
            ],
        )
        .unwrap();
        assert_eq!(map["conv.3.kernel"].eta, 0.01);
    }

    #[test]
    fn single_default_group_covers_everything() {
        let params = scalar_params();
        let map = default_groups(&params, OptimConfig::default());
        assert_eq!(map.len(), params.tensors().len());
        assert!(map.values().all(|c| c.eta == 0.01));
    }

    #[test]
    fn unmatched_parameter_without_default_is_an_error() {
        let names = vec!["dense.weight".to_string()];
        let err = resolve_groups(
            &names,
            &[LayerGroup {
                pattern: Some("conv.*".into()),
                config: OptimConfig::default(),
            }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("dense.weight"));
    }

    #[test]
    fn non_finite_gradient_is_rejected_naming_the_tensor() {
        let mut params = scalar_params();
        let mut grads = params.zeros_like();
        grads.dense.weight.data_mut()[0] = f64::NAN;
        let groups = default_groups(&params, OptimConfig::default());
        let mut state = OptimState::new(&params);
        let err = step(&mut params, &grads, &mut state, &groups).unwrap_err();
        assert!(err.to_string().contains("dense.weight"));
    }

    #[test]
    fn grad_norm_records_cover_every_tensor() {
        let params = scalar_params();
        let mut grads = params.zeros_like();
        // A unit vector scaled by 3.
        grads.dense.weight.data_mut()[0] = 3.0;
        let records = log_grad_norms(&params, &grads, 7);
        assert_eq!(records.len(), params.tensors().len());
        let dense = records.iter().find(|r| r.layer == "dense.weight").unwrap();
        assert_eq!(dense.grad_norm, 3.0);
        assert_eq!(dense.step, 7);
        let conv = records.iter().find(|r| r.layer == "conv.0.bias").unwrap();
        assert_eq!(conv.grad_norm, 0.0);
    }

    #[test]
    fn grad_log_csv_format() {
        let mut buf = Vec::new();
        {
            let mut w = GradLogWriter::new(&mut buf).unwrap();
            w.append(&[GradLogRecord {
                step: 1,
                layer: "conv.0.kernel".into(),
                grad_norm: 0.5,
                param_norm: 2.0,
            }])
            .unwrap();
            w.flush().unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,layer,grad_norm,param_norm");
        assert!(lines.next().unwrap().starts_with("1,conv.0.kernel,"));
    }
}
