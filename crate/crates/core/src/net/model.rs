//! Whole-network forward and backward passes.
//!
//! Per-sample work (convolutions, recurrences) fans out in parallel; batch
//! couplings (batch-norm statistics, gradient reductions) run in fixed or
//! order-free summation order so results are bit-identical across thread
//! counts and sample permutations.

use crate::corpus::{Emotion, PaddedBatch};
use crate::error::{CoreError, Result};
use crate::net::batchnorm::{masked_scalar_stats, seq_batchnorm_apply, seq_batchnorm_backward};
use crate::net::conv::{conv_backward, conv_forward};
use crate::net::lstm::{
    backward_recurrence, input_backward, input_contrib, run_recurrence, LstmDirCache,
};
use crate::net::params::NetworkParams;
use crate::net::{mask_propagate, NetworkConfig};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Constants of one batch-norm application: statistics plus affine.
#[derive(Clone, Copy)]
struct BnApply {
    mean: f64,
    var: f64,
    gamma: f64,
    beta: f64,
    eps: f64,
}

/// Conv-stack activations of one sample. `acts[0]` is the valid input
/// region; `acts[l + 1]` the activated output of conv layer `l`.
#[derive(Clone, Debug)]
pub(crate) struct SampleConvCache {
    pub acts: Vec<Vec<f64>>,
    pub t_dims: Vec<usize>,
    pub f_dims: Vec<usize>,
}

/// Everything one Bi-LSTM layer needs for its backward pass.
#[derive(Clone, Debug)]
pub(crate) struct LstmLayerCache {
    /// Per-sample input sequences `[T'][d_in]`, absolute time order.
    pub inputs: Vec<Vec<f64>>,
    pub d_in: usize,
    pub fwd: Vec<LstmDirCache>,
    pub bwd: Vec<LstmDirCache>,
    /// Batch statistics per direction when trained with batch norm.
    pub bn_stats: [Option<(f64, f64)>; 2],
}

/// Intermediate state of a training-mode forward pass.
pub struct ForwardCache {
    pub(crate) conv: Vec<SampleConvCache>,
    pub(crate) lstm: Vec<LstmLayerCache>,
    /// `[B][2H]` summary vectors fed to the dense layer.
    pub(crate) summaries: Vec<f64>,
    /// `[B][classes]` softmax outputs.
    pub(crate) probs: Vec<f64>,
    /// Valid sequence lengths after the conv stack.
    pub(crate) conv_lens: Vec<usize>,
}

pub struct ForwardOutput {
    /// `[B][classes]`, rows summing to one.
    pub probs: Vec<f64>,
    pub classes: usize,
    pub cache: Option<ForwardCache>,
}

fn conv_stack_forward(
    params: &NetworkParams,
    input: &[f64],
    t0: usize,
    f0: usize,
) -> Result<SampleConvCache> {
    let cfg = &params.config;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(cfg.conv_layers.len() + 1);
    acts.push(input.to_vec());
    let mut t_dims = vec![t0];
    let mut f_dims = vec![f0];
    let mut c_in = 1usize;
    for (l, (layer_cfg, layer)) in cfg.conv_layers.iter().zip(&params.conv).enumerate() {
        let mut out = Vec::new();
        let dims = conv_forward(
            &acts[l],
            t_dims[l],
            f_dims[l],
            c_in,
            layer.kernel.data(),
            layer.bias.data(),
            layer_cfg,
            cfg.activation,
            &mut out,
        );
        if !out.iter().all(|v| v.is_finite()) {
            return Err(CoreError::data(format!(
                "non-finite activation in conv.{l}"
            )));
        }
        t_dims.push(dims.t_out);
        f_dims.push(dims.f_out);
        c_in = layer_cfg.out_channels;
        acts.push(out);
    }
    Ok(SampleConvCache {
        acts,
        t_dims,
        f_dims,
    })
}

fn check_batch(params: &NetworkParams, batch: &PaddedBatch) -> Result<()> {
    params.config.validate()?;
    if batch.batch == 0 {
        return Err(CoreError::data("empty batch"));
    }
    if batch.bins != params.input_bins {
        return Err(CoreError::data(format!(
            "batch has {} bins but the network was built for {}",
            batch.bins, params.input_bins
        )));
    }
    Ok(())
}

/// Runs the classifier over a padded batch.
///
/// Padded frames never enter any computation: convolutions consume only
/// each sample's valid region and the recurrence stops at the propagated
/// mask length. Returns per-sample class probabilities, plus the cache for
/// [`backward`] in train mode.
pub fn forward(params: &NetworkParams, batch: &PaddedBatch, mode: Mode) -> Result<ForwardOutput> {
    check_batch(params, batch)?;
    let cfg = &params.config;
    let b = batch.batch;
    let h = cfg.hidden_size;
    let classes = cfg.num_classes;

    let conv_lens: Vec<usize> = batch
        .lengths
        .iter()
        .map(|&len| mask_propagate(len, &cfg.conv_layers))
        .collect::<Result<_>>()?;

    let conv: Vec<SampleConvCache> = parallel::map_indexed(b, |i| {
        conv_stack_forward(params, batch.valid(i), batch.lengths[i], batch.bins)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    for (i, sc) in conv.iter().enumerate() {
        debug_assert_eq!(*sc.t_dims.last().unwrap(), conv_lens[i]);
    }

    let mut d_in = params.lstm_input_size()?;
    let mut layer_inputs: Vec<Vec<f64>> =
        conv.iter().map(|sc| sc.acts.last().unwrap().clone()).collect();
    let mut lstm_caches: Vec<LstmLayerCache> = Vec::with_capacity(cfg.bilstm_layers);

    for l in 0..cfg.bilstm_layers {
        let layer = &params.lstm[l];
        // Phase 1: raw input contributions for both directions.
        let pis: Vec<(Vec<f64>, Vec<f64>)> = parallel::map_indexed(b, |i| {
            let mut pf = Vec::new();
            let mut pb = Vec::new();
            input_contrib(
                &layer_inputs[i],
                conv_lens[i],
                d_in,
                layer.fwd.w_x.data(),
                h,
                false,
                &mut pf,
            );
            input_contrib(
                &layer_inputs[i],
                conv_lens[i],
                d_in,
                layer.bwd.w_x.data(),
                h,
                true,
                &mut pb,
            );
            (pf, pb)
        });

        // Batch-norm statistics per direction (train) or running stats (eval).
        let mut bn_stats: [Option<(f64, f64)>; 2] = [None, None];
        let mut norm: [Option<BnApply>; 2] = [None, None];
        for (dir_idx, dir) in [&layer.fwd, &layer.bwd].into_iter().enumerate() {
            if let Some(bn) = &dir.bn {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let blocks = pis.iter().map(|(pf, pb)| {
                            if dir_idx == 0 {
                                pf.as_slice()
                            } else {
                                pb.as_slice()
                            }
                        });
                        let (mean, var, _) = masked_scalar_stats(blocks)?;
                        bn_stats[dir_idx] = Some((mean, var));
                        (mean, var)
                    }
                    Mode::Eval => (bn.running_mean, bn.running_var),
                };
                norm[dir_idx] = Some(BnApply {
                    mean,
                    var,
                    gamma: bn.gamma.data()[0],
                    beta: bn.beta.data()[0],
                    eps: bn.epsilon,
                });
            }
        }

        // Phase 2: normalize and run the recurrence.
        let dirs: Vec<(LstmDirCache, LstmDirCache)> = parallel::map_indexed(b, |i| {
            let (pf, pb) = &pis[i];
            let mut out = (LstmDirCache::default(), LstmDirCache::default());
            for (dir_idx, (pi, cache, dir)) in [
                (pf, &mut out.0, &layer.fwd),
                (pb, &mut out.1, &layer.bwd),
            ]
            .into_iter()
            .enumerate()
            {
                cache.steps = conv_lens[i];
                cache.pi = pi.clone();
                cache.pi_bn = match &norm[dir_idx] {
                    Some(bn) => pi
                        .iter()
                        .map(|&z| seq_batchnorm_apply(z, bn.mean, bn.var, bn.gamma, bn.beta, bn.eps))
                        .collect(),
                    None => pi.clone(),
                };
                run_recurrence(cache, dir.w_h.data(), dir.bias.data(), h);
            }
            out
        });
        let (fwd, bwd): (Vec<_>, Vec<_>) = dirs.into_iter().unzip();
        for (i, cache) in fwd.iter().chain(bwd.iter()).enumerate() {
            if !cache.h.iter().all(|v| v.is_finite()) {
                let dir = if i < b { "fwd" } else { "bwd" };
                return Err(CoreError::data(format!(
                    "non-finite activation in bilstm.{l}.{dir}"
                )));
            }
        }

        let next_inputs: Vec<Vec<f64>> = if l + 1 < cfg.bilstm_layers {
            (0..b)
                .map(|i| {
                    let t_len = conv_lens[i];
                    let mut seq = vec![0.0; t_len * 2 * h];
                    for t in 0..t_len {
                        seq[t * 2 * h..t * 2 * h + h]
                            .copy_from_slice(&fwd[i].h[t * h..(t + 1) * h]);
                        let p = t_len - 1 - t;
                        seq[t * 2 * h + h..(t + 1) * 2 * h]
                            .copy_from_slice(&bwd[i].h[p * h..(p + 1) * h]);
                    }
                    seq
                })
                .collect()
        } else {
            Vec::new()
        };

        lstm_caches.push(LstmLayerCache {
            inputs: std::mem::take(&mut layer_inputs),
            d_in,
            fwd,
            bwd,
            bn_stats,
        });
        layer_inputs = next_inputs;
        d_in = 2 * h;
    }

    // Summaries: each direction's final hidden state.
    let top = lstm_caches.last().unwrap();
    let mut summaries = vec![0.0; b * 2 * h];
    for i in 0..b {
        let t_len = conv_lens[i];
        summaries[i * 2 * h..i * 2 * h + h]
            .copy_from_slice(&top.fwd[i].h[(t_len - 1) * h..t_len * h]);
        summaries[i * 2 * h + h..(i + 1) * 2 * h]
            .copy_from_slice(&top.bwd[i].h[(t_len - 1) * h..t_len * h]);
    }

    // Dense + softmax.
    let w = params.dense.weight.data();
    let bias = params.dense.bias.data();
    let mut probs = vec![0.0; b * classes];
    for i in 0..b {
        let summary = &summaries[i * 2 * h..(i + 1) * 2 * h];
        let mut logits = vec![0.0; classes];
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &w[c * 2 * h..(c + 1) * 2 * h];
            *logit = bias[c] + row.iter().zip(summary).map(|(a, b)| a * b).sum::<f64>();
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(CoreError::data("non-finite activation in dense"));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (c, e) in exps.iter().enumerate() {
            probs[i * classes + c] = e / sum;
        }
    }

    let cache = ForwardCache {
        conv,
        lstm: lstm_caches,
        summaries,
        probs: probs.clone(),
        conv_lens,
    };
    Ok(ForwardOutput {
        probs,
        classes,
        cache: (mode == Mode::Train).then_some(cache),
    })
}

/// Mean cross-entropy of a batch given forward probabilities.
pub fn cross_entropy(probs: &[f64], classes: usize, labels: &[Emotion]) -> f64 {
    let b = labels.len();
    let mut loss = 0.0;
    for (i, label) in labels.iter().enumerate() {
        loss -= probs[i * classes + label.index()].ln();
    }
    loss / b as f64
}

/// Exact gradients of the mean cross-entropy loss w.r.t. every parameter.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    labels: &[Emotion],
) -> Result<NetworkParams> {
    let cfg: &NetworkConfig = &params.config;
    let b = labels.len();
    if b != cache.conv.len() {
        return Err(CoreError::data(format!(
            "label count {b} does not match cached batch {}",
            cache.conv.len()
        )));
    }
    let h = cfg.hidden_size;
    let classes = cfg.num_classes;
    let mut grads = params.zeros_like();

    // Dense layer; d_logit = (softmax - onehot) / B.
    let mut d_summaries = vec![0.0; b * 2 * h];
    {
        let w = params.dense.weight.data();
        let dw = grads.dense.weight.data_mut();
        let db = grads.dense.bias.data_mut();
        for i in 0..b {
            let summary = &cache.summaries[i * 2 * h..(i + 1) * 2 * h];
            for c in 0..classes {
                let onehot = if labels[i].index() == c { 1.0 } else { 0.0 };
                let dl = (cache.probs[i * classes + c] - onehot) / b as f64;
                db[c] += dl;
                for (g, &x) in dw[c * 2 * h..(c + 1) * 2 * h].iter_mut().zip(summary) {
                    *g += dl * x;
                }
                for (ds, &wv) in d_summaries[i * 2 * h..(i + 1) * 2 * h]
                    .iter_mut()
                    .zip(&w[c * 2 * h..(c + 1) * 2 * h])
                {
                    *ds += wv * dl;
                }
            }
        }
    }

    // External hidden-state gradients per direction, processing order.
    let mut dh_ext_f: Vec<Vec<f64>> = (0..b)
        .map(|i| vec![0.0; cache.conv_lens[i] * h])
        .collect();
    let mut dh_ext_b: Vec<Vec<f64>> = dh_ext_f.clone();
    for i in 0..b {
        let t_len = cache.conv_lens[i];
        dh_ext_f[i][(t_len - 1) * h..t_len * h]
            .copy_from_slice(&d_summaries[i * 2 * h..i * 2 * h + h]);
        dh_ext_b[i][(t_len - 1) * h..t_len * h]
            .copy_from_slice(&d_summaries[i * 2 * h + h..(i + 1) * 2 * h]);
    }

    let mut conv_d_top: Vec<Vec<f64>> = Vec::new();
    for l in (0..cfg.bilstm_layers).rev() {
        let lc = &cache.lstm[l];
        let layer = &params.lstm[l];
        let gl = &mut grads.lstm[l];

        // BPTT per direction. Sequential over samples; the recurrent weight
        // gradients accumulate in place.
        let mut d_pi_bn_f: Vec<Vec<f64>> = Vec::with_capacity(b);
        let mut d_pi_bn_b: Vec<Vec<f64>> = Vec::with_capacity(b);
        for i in 0..b {
            d_pi_bn_f.push(backward_recurrence(
                &lc.fwd[i],
                layer.fwd.w_h.data(),
                h,
                &dh_ext_f[i],
                gl.fwd.w_h.data_mut(),
                gl.fwd.bias.data_mut(),
            ));
            d_pi_bn_b.push(backward_recurrence(
                &lc.bwd[i],
                layer.bwd.w_h.data(),
                h,
                &dh_ext_b[i],
                gl.bwd.w_h.data_mut(),
                gl.bwd.bias.data_mut(),
            ));
        }

        // Through the batch norm (or straight through without it).
        let mut d_pi: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for (dir_idx, d_pi_bn) in [&d_pi_bn_f, &d_pi_bn_b].into_iter().enumerate() {
            let dir_params = if dir_idx == 0 { &layer.fwd } else { &layer.bwd };
            let dir_caches = if dir_idx == 0 { &lc.fwd } else { &lc.bwd };
            if let Some(bn) = &dir_params.bn {
                let (mean, var) = lc.bn_stats[dir_idx].ok_or_else(|| {
                    CoreError::data("cache carries no batch statistics; forward ran in eval mode")
                })?;
                let raw: Vec<&[f64]> = dir_caches.iter().map(|c| c.pi.as_slice()).collect();
                let upstream: Vec<&[f64]> = d_pi_bn.iter().map(|v| v.as_slice()).collect();
                let mut out: Vec<Vec<f64>> = vec![Vec::new(); b];
                let (d_gamma, d_beta) = seq_batchnorm_backward(
                    &raw,
                    &upstream,
                    mean,
                    var,
                    bn.gamma.data()[0],
                    bn.epsilon,
                    &mut out,
                )?;
                let g_bn = if dir_idx == 0 { &mut grads.lstm[l].fwd } else { &mut grads.lstm[l].bwd };
                let g_bn = g_bn.bn.as_mut().expect("gradient mirrors parameter layout");
                g_bn.gamma.data_mut()[0] += d_gamma;
                g_bn.beta.data_mut()[0] += d_beta;
                d_pi[dir_idx] = out;
            } else {
                d_pi[dir_idx] = d_pi_bn.clone();
            }
        }
        let [d_pi_f, d_pi_b] = d_pi;

        // Input weights and the gradient flowing into this layer's inputs.
        let gl = &mut grads.lstm[l];
        let mut d_seq: Vec<Vec<f64>> = (0..b)
            .map(|i| vec![0.0; cache.conv_lens[i] * lc.d_in])
            .collect();
        for i in 0..b {
            input_backward(
                &lc.inputs[i],
                cache.conv_lens[i],
                lc.d_in,
                layer.fwd.w_x.data(),
                h,
                false,
                &d_pi_f[i],
                gl.fwd.w_x.data_mut(),
                &mut d_seq[i],
            );
            input_backward(
                &lc.inputs[i],
                cache.conv_lens[i],
                lc.d_in,
                layer.bwd.w_x.data(),
                h,
                true,
                &d_pi_b[i],
                gl.bwd.w_x.data_mut(),
                &mut d_seq[i],
            );
        }

        if l > 0 {
            // Split the concatenated gradient back into per-direction
            // hidden-state gradients of the layer below.
            for i in 0..b {
                let t_len = cache.conv_lens[i];
                dh_ext_f[i].fill(0.0);
                dh_ext_b[i].fill(0.0);
                for t in 0..t_len {
                    let row = &d_seq[i][t * 2 * h..(t + 1) * 2 * h];
                    dh_ext_f[i][t * h..(t + 1) * h].copy_from_slice(&row[..h]);
                    let p = t_len - 1 - t;
                    dh_ext_b[i][p * h..(p + 1) * h].copy_from_slice(&row[h..]);
                }
            }
        } else {
            conv_d_top = d_seq;
        }
    }

    // Conv stack, parallel per sample with a sequential reduce in index
    // order.
    let conv_shapes: Vec<(usize, usize)> = {
        let mut c_in = 1usize;
        cfg.conv_layers
            .iter()
            .map(|l| {
                let pair = (c_in, l.out_channels);
                c_in = l.out_channels;
                pair
            })
            .collect()
    };
    let partials: Vec<Vec<(Vec<f64>, Vec<f64>)>> = parallel::map_indexed(b, |i| {
        conv_stack_backward(params, &cache.conv[i], &conv_d_top[i], &conv_shapes)
    });
    for partial in partials {
        for (l, (dk, db)) in partial.into_iter().enumerate() {
            for (g, v) in grads.conv[l].kernel.data_mut().iter_mut().zip(dk) {
                *g += v;
            }
            for (g, v) in grads.conv[l].bias.data_mut().iter_mut().zip(db) {
                *g += v;
            }
        }
    }

    Ok(grads)
}

fn conv_stack_backward(
    params: &NetworkParams,
    sc: &SampleConvCache,
    d_top: &[f64],
    shapes: &[(usize, usize)],
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let cfg = &params.config;
    let layers = cfg.conv_layers.len();
    let mut partials: Vec<(Vec<f64>, Vec<f64>)> = shapes
        .iter()
        .enumerate()
        .map(|(l, &(c_in, c_out))| {
            let (kt, kf) = cfg.conv_layers[l].kernel;
            (vec![0.0; kt * kf * c_in * c_out], vec![0.0; c_out])
        })
        .collect();

    let mut d_act = d_top.to_vec();
    for l in (0..layers).rev() {
        let (c_in, _) = shapes[l];
        let mut d_input = Vec::new();
        let (d_kernel, d_bias) = &mut partials[l];
        conv_backward(
            &sc.acts[l],
            sc.t_dims[l],
            sc.f_dims[l],
            c_in,
            params.conv[l].kernel.data(),
            &sc.acts[l + 1],
            &d_act,
            &cfg.conv_layers[l],
            cfg.activation,
            d_kernel,
            d_bias,
            &mut d_input,
        );
        d_act = d_input;
    }
    partials
}

/// Folds the batch statistics of a training forward pass into the running
/// averages used at evaluation time.
pub fn update_running_stats(params: &mut NetworkParams, cache: &ForwardCache, momentum: f64) {
    for (l, lc) in cache.lstm.iter().enumerate() {
        let layer = &mut params.lstm[l];
        for (dir_idx, dir) in [&mut layer.fwd, &mut layer.bwd].into_iter().enumerate() {
            if let (Some(bn), Some((mean, var))) = (dir.bn.as_mut(), lc.bn_stats[dir_idx]) {
                bn.running_mean = momentum * bn.running_mean + (1.0 - momentum) * mean;
                bn.running_var = momentum * bn.running_var + (1.0 - momentum) * var;
            }
        }
    }
}
