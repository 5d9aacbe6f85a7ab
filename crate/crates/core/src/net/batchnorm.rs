//! Sequence-wise batch normalization.
//!
//! The most conservative normalizing strategy: one scalar mean and variance
//! over batch, valid time steps, and features jointly. The divisor is
//! `b_tf = (sum of sample time lengths) * feature_count`; padded steps are
//! excluded. Applied only to the recurrent input contribution `W_x x_t`.

use crate::error::{CoreError, Result};

/// Sums per-sample partials in value order, making the total independent of
/// sample order within the batch (exact permutation invariance).
fn sum_order_free(mut partials: Vec<f64>) -> f64 {
    partials.sort_by(f64::total_cmp);
    partials.iter().sum()
}

/// Scalar masked statistics over per-sample valid regions.
///
/// Each item is one sample's contiguous valid block (length * features).
/// Two-pass mean/variance; per-sample partial sums are combined in value
/// order so permuting the batch cannot change a bit of the result.
pub(crate) fn masked_scalar_stats<'a, I>(samples: I) -> Result<(f64, f64, usize)>
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    let mut count = 0usize;
    let mut partials = Vec::new();
    for block in samples.clone() {
        count += block.len();
        partials.push(block.iter().sum::<f64>());
    }
    if count == 0 {
        return Err(CoreError::data(
            "batch statistics over zero valid elements (b_tf = 0)",
        ));
    }
    let mean = sum_order_free(partials) / count as f64;
    let sq: Vec<f64> = samples
        .map(|block| block.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>())
        .collect();
    let var = sum_order_free(sq) / count as f64;
    Ok((mean, var, count))
}

/// Masked scalar statistics of a padded `[batch][t_max][features]` tensor.
///
/// Returns `(mean, variance)` over the valid elements only; the divisor is
/// exactly `b_tf = (sum of lengths) * features`.
pub fn seq_batchnorm_stats(
    values: &[f64],
    batch: usize,
    t_max: usize,
    features: usize,
    lengths: &[usize],
) -> Result<(f64, f64)> {
    if lengths.len() != batch {
        return Err(CoreError::data(format!(
            "lengths ({}) must match batch ({batch})",
            lengths.len()
        )));
    }
    if values.len() != batch * t_max * features {
        return Err(CoreError::data("value buffer does not match stated shape"));
    }
    for (i, &len) in lengths.iter().enumerate() {
        if len > t_max {
            return Err(CoreError::data(format!(
                "sample {i}: length {len} exceeds t_max {t_max}"
            )));
        }
    }
    let stride = t_max * features;
    let blocks = (0..batch).map(|i| &values[i * stride..i * stride + lengths[i] * features]);
    let (mean, var, _) = masked_scalar_stats(blocks)?;
    Ok((mean, var))
}

/// The normalization itself: `gamma * (z - mean) / sqrt(var + eps) + beta`.
///
/// In training `mean`/`var` come from [`seq_batchnorm_stats`] over the
/// current batch; in evaluation they are the running averages.
pub fn seq_batchnorm_apply(z: f64, mean: f64, var: f64, gamma: f64, beta: f64, eps: f64) -> f64 {
    gamma * (z - mean) / (var + eps).sqrt() + beta
}

/// Batch-coupled backward pass through the scalar-statistic normalization.
///
/// Inputs are per-sample pairs of (raw pre-BN block, upstream gradient
/// block); `d_pi` receives the gradient w.r.t. the raw values, laid out
/// like the inputs. Returns `(d_gamma, d_beta)`.
pub(crate) fn seq_batchnorm_backward(
    raw: &[&[f64]],
    upstream: &[&[f64]],
    mean: f64,
    var: f64,
    gamma: f64,
    eps: f64,
    d_pi: &mut [Vec<f64>],
) -> Result<(f64, f64)> {
    let count: usize = raw.iter().map(|b| b.len()).sum();
    if count == 0 {
        return Err(CoreError::data("batch-norm backward over zero elements"));
    }
    let inv_std = 1.0 / (var + eps).sqrt();
    let n = count as f64;

    // Order-free batch sums of g = gamma * dy and g * x_hat.
    let mut sum_g_parts = Vec::with_capacity(raw.len());
    let mut sum_gx_parts = Vec::with_capacity(raw.len());
    for (block, up) in raw.iter().zip(upstream) {
        let mut sg = 0.0;
        let mut sgx = 0.0;
        for (&x, &dy) in block.iter().zip(*up) {
            let g = gamma * dy;
            sg += g;
            sgx += g * (x - mean) * inv_std;
        }
        sum_g_parts.push(sg);
        sum_gx_parts.push(sgx);
    }
    let mean_g = sum_order_free(sum_g_parts) / n;
    let mean_gx = sum_order_free(sum_gx_parts) / n;

    let mut d_gamma_parts = Vec::with_capacity(raw.len());
    let mut d_beta_parts = Vec::with_capacity(raw.len());
    for ((block, up), out) in raw.iter().zip(upstream).zip(d_pi.iter_mut()) {
        out.clear();
        out.reserve(block.len());
        let mut dg = 0.0;
        let mut db = 0.0;
        for (&x, &dy) in block.iter().zip(*up) {
            let x_hat = (x - mean) * inv_std;
            let g = gamma * dy;
            out.push(inv_std * (g - mean_g - x_hat * mean_gx));
            dg += dy * x_hat;
            db += dy;
        }
        d_gamma_parts.push(dg);
        d_beta_parts.push(db);
    }
    Ok((
        sum_order_free(d_gamma_parts),
        sum_order_free(d_beta_parts),
    ))
}
