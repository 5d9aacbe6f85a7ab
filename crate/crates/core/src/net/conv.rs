//! Strided valid 2D convolution over (time, frequency) with channels-last
//! layout: activations are `[t][f][c]`, kernels `[k_t][k_f][c_in][c_out]`.
//! The inner accumulation runs along the contiguous channel axis.

use crate::net::{Activation, ConvLayerConfig};

pub(crate) struct ConvDims {
    pub t_out: usize,
    pub f_out: usize,
}

pub(crate) fn conv_output_dims(
    t_in: usize,
    f_in: usize,
    cfg: &ConvLayerConfig,
) -> Option<ConvDims> {
    if t_in < cfg.kernel.0 || f_in < cfg.kernel.1 {
        return None;
    }
    Some(ConvDims {
        t_out: (t_in - cfg.kernel.0) / cfg.stride.0 + 1,
        f_out: (f_in - cfg.kernel.1) / cfg.stride.1 + 1,
    })
}

/// Forward pass of one layer; writes activated output (`[t_out][f_out][c_out]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward(
    input: &[f64],
    t_in: usize,
    f_in: usize,
    c_in: usize,
    kernel: &[f64],
    bias: &[f64],
    cfg: &ConvLayerConfig,
    activation: Activation,
    out: &mut Vec<f64>,
) -> ConvDims {
    let dims = conv_output_dims(t_in, f_in, cfg).expect("caller checked input extent");
    let (k_t, k_f) = cfg.kernel;
    let (s_t, s_f) = cfg.stride;
    let c_out = bias.len();
    debug_assert_eq!(input.len(), t_in * f_in * c_in);
    debug_assert_eq!(kernel.len(), k_t * k_f * c_in * c_out);

    out.clear();
    out.resize(dims.t_out * dims.f_out * c_out, 0.0);
    // Bias first, then accumulate taps.
    for px in out.chunks_exact_mut(c_out) {
        px.copy_from_slice(bias);
    }
    for to in 0..dims.t_out {
        for kt in 0..k_t {
            let ti = to * s_t + kt;
            for fo in 0..dims.f_out {
                let out_px =
                    &mut out[(to * dims.f_out + fo) * c_out..(to * dims.f_out + fo + 1) * c_out];
                for kf in 0..k_f {
                    let fi = fo * s_f + kf;
                    let in_px = &input[(ti * f_in + fi) * c_in..(ti * f_in + fi + 1) * c_in];
                    let w_base = (kt * k_f + kf) * c_in * c_out;
                    for (ci, &x) in in_px.iter().enumerate() {
                        let w_row = &kernel[w_base + ci * c_out..w_base + (ci + 1) * c_out];
                        for (o, &w) in out_px.iter_mut().zip(w_row) {
                            *o += x * w;
                        }
                    }
                }
            }
        }
    }
    for v in out.iter_mut() {
        *v = activation.apply(*v);
    }
    dims
}

/// Backward pass of one layer.
///
/// `act` is this layer's activated output, `d_act` the upstream gradient.
/// Accumulates into `d_kernel`/`d_bias` and writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    input: &[f64],
    t_in: usize,
    f_in: usize,
    c_in: usize,
    kernel: &[f64],
    act: &[f64],
    d_act: &[f64],
    cfg: &ConvLayerConfig,
    activation: Activation,
    d_kernel: &mut [f64],
    d_bias: &mut [f64],
    d_input: &mut Vec<f64>,
) {
    let dims = conv_output_dims(t_in, f_in, cfg).expect("shapes validated in forward");
    let (k_t, k_f) = cfg.kernel;
    let (s_t, s_f) = cfg.stride;
    let c_out = d_bias.len();

    // Gradient at the pre-activation.
    let mut d_pre = vec![0.0; d_act.len()];
    for ((dp, &da), &y) in d_pre.iter_mut().zip(d_act).zip(act) {
        *dp = da * activation.grad_from_output(y);
    }

    for px in d_pre.chunks_exact(c_out) {
        for (b, &dp) in d_bias.iter_mut().zip(px) {
            *b += dp;
        }
    }

    d_input.clear();
    d_input.resize(t_in * f_in * c_in, 0.0);
    for to in 0..dims.t_out {
        for kt in 0..k_t {
            let ti = to * s_t + kt;
            for fo in 0..dims.f_out {
                let dp_px = &d_pre[(to * dims.f_out + fo) * c_out..(to * dims.f_out + fo + 1) * c_out];
                for kf in 0..k_f {
                    let fi = fo * s_f + kf;
                    let in_base = (ti * f_in + fi) * c_in;
                    let w_base = (kt * k_f + kf) * c_in * c_out;
                    for ci in 0..c_in {
                        let x = input[in_base + ci];
                        let w_row = &kernel[w_base + ci * c_out..w_base + (ci + 1) * c_out];
                        let dw_row = &mut d_kernel[w_base + ci * c_out..w_base + (ci + 1) * c_out];
                        let mut dx = 0.0;
                        for ((dw, &w), &dp) in dw_row.iter_mut().zip(w_row).zip(dp_px) {
                            *dw += x * dp;
                            dx += w * dp;
                        }
                        d_input[in_base + ci] += dx;
                    }
                }
            }
        }
    }
}
