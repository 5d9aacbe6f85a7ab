//! Per-fold training: oversampling, augmentation, epoch loop with
//! validation-UA model selection and early stopping, then test metrics via
//! majority-vote test-time augmentation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    compute_stats, normalize, oversample_by, pad_batch, DatasetStats, Emotion,
};
use crate::dsp::Spectrogram;
use crate::error::{CoreError, Result};
use crate::eval::{argmax, tta_predict, ConfusionMatrix, FoldResult, Metrics};
use crate::net::{
    backward, forward, init_params, update_running_stats, Mode, NetworkConfig, NetworkParams,
};
use crate::optim::{
    log_grad_norms, resolve_groups, step, GradLogWriter, LayerGroup, OptimConfig, OptimState,
};
use crate::parallel;
use crate::rng::substream;
use crate::vtlp::{sample_alpha, warp_spectrogram, AugmentMode, AugmentStrategy, WarpParams};

/// One prepared sample: an unnormalized log-magnitude spectrogram plus its
/// label.
#[derive(Clone, Debug)]
pub struct FoldSample {
    pub id: String,
    pub spec: Spectrogram,
    pub label: Emotion,
}

/// Materialized data of one fold.
#[derive(Clone, Debug)]
pub struct FoldData {
    pub train: Vec<FoldSample>,
    pub val: Vec<FoldSample>,
    pub test: Vec<FoldSample>,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-UA improvement before stopping.
    pub patience: usize,
    pub augment: Option<AugmentStrategy>,
    pub oversample_classes: Vec<Emotion>,
    pub oversample_factor: usize,
    pub seed: u64,
    /// Momentum of the running batch-norm statistics.
    pub bn_momentum: f64,
    /// Record eval-mode train accuracy per epoch (extra forward pass).
    pub track_train_accuracy: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 16,
            max_epochs: 300,
            patience: 20,
            augment: None,
            oversample_classes: vec![Emotion::Happiness, Emotion::Anger],
            oversample_factor: 1,
            seed: 0,
            bn_momentum: 0.9,
            track_train_accuracy: false,
        }
    }
}

/// What the trainer evaluated, in order; lets callers audit that model
/// selection used validation UA only and that the test set was touched
/// exactly once, at the end.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalEvent {
    Validation { epoch: usize, ua: f64 },
    Test,
}

#[derive(Clone, Debug, Default)]
pub struct TrainTrace {
    pub events: Vec<EvalEvent>,
    pub val_ua: Vec<f64>,
    pub train_accuracy: Vec<f64>,
}

// Substream tags for independent random streams.
const STREAM_INIT: u64 = 1;
const STREAM_EPOCH: u64 = 2;

fn check_data(data: &FoldData, config: &NetworkConfig) -> Result<(usize, f64)> {
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(CoreError::config(
            "fold needs nonempty train, validation, and test partitions",
        ));
    }
    let bins = data.train[0].spec.bins();
    let f_max = data.train[0].spec.meta.f_max_hz;
    let min_frames = config.min_frames();
    for sample in data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
    {
        if sample.spec.bins() != bins {
            return Err(CoreError::data(format!(
                "utterance {}: {} bins, expected {bins}",
                sample.id,
                sample.spec.bins()
            )));
        }
        if sample.spec.frames() < min_frames {
            return Err(CoreError::data(format!(
                "utterance {}: {} frames < architecture minimum {min_frames}",
                sample.id,
                sample.spec.frames()
            )));
        }
    }
    Ok((bins, f_max))
}

/// Applies the strategy's warp (if any) and normalizes.
fn prepare_spec(
    sample: &FoldSample,
    alpha: Option<f64>,
    f_max: f64,
    stats: &DatasetStats,
) -> Result<Spectrogram> {
    let spec = match alpha {
        Some(alpha) => warp_spectrogram(&sample.spec, &WarpParams::new(alpha, f_max)?)?,
        None => sample.spec.clone(),
    };
    Ok(normalize(&spec, stats))
}

/// Eval-mode class predictions over a sample list, in batches.
fn predict(
    params: &NetworkParams,
    specs: &[Spectrogram],
    batch_size: usize,
) -> Result<Vec<Emotion>> {
    let mut preds = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(batch_size) {
        let refs: Vec<(&Spectrogram, Emotion)> =
            chunk.iter().map(|s| (s, Emotion::Neutral)).collect();
        let batch = pad_batch(&refs)?;
        let out = forward(params, &batch, Mode::Eval)?;
        for i in 0..chunk.len() {
            let row = &out.probs[i * out.classes..(i + 1) * out.classes];
            preds.push(
                Emotion::from_index(argmax(row))
                    .ok_or_else(|| CoreError::data("class index out of range"))?,
            );
        }
    }
    Ok(preds)
}

fn accuracy_against(preds: &[Emotion], samples: &[FoldSample]) -> f64 {
    let hit = preds
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    hit as f64 / samples.len() as f64
}

/// A completed fold run: metrics, the evaluation trace, and the selected
/// parameters (for checkpointing).
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub result: FoldResult,
    pub trace: TrainTrace,
    pub best_params: NetworkParams,
}

/// Trains one fold and reports test metrics at the best validation epoch.
///
/// Training applies oversampling and the chosen augmentation strategy; the
/// best epoch is selected by validation UA only (ties keep the earliest);
/// test metrics come from [`tta_predict`] with the selected parameters.
#[allow(clippy::too_many_arguments)]
pub fn run_fold<W: std::io::Write>(
    fold_id: u8,
    data: &FoldData,
    net_config: &NetworkConfig,
    optim_config: &OptimConfig,
    extra_groups: &[LayerGroup],
    opts: &TrainOptions,
    mut grad_log: Option<&mut GradLogWriter<W>>,
) -> Result<FoldRun> {
    net_config.validate()?;
    optim_config.validate()?;
    if opts.batch_size == 0 || opts.max_epochs == 0 {
        return Err(CoreError::config("batch size and epoch cap must be positive"));
    }
    if opts.oversample_factor == 0 {
        return Err(CoreError::config("oversampling factor must be at least 1"));
    }
    if let Some(strategy) = &opts.augment {
        AugmentStrategy::new(strategy.mode, strategy.alpha_min, strategy.alpha_max)?;
    }
    let (bins, f_max) = check_data(data, net_config)?;

    // Normalization statistics from the raw training partition only,
    // before oversampling and augmentation.
    let stats = compute_stats(data.train.iter().map(|s| &s.spec))?;

    // Oversampled index list: originals first, duplicates after, so the
    // duplicates are extra draws of the same utterance that still receive
    // independent per-sample warps.
    let base_idx: Vec<usize> = (0..data.train.len()).collect();
    let train_idx = oversample_by(
        &base_idx,
        |&i| opts.oversample_classes.contains(&data.train[i].label),
        opts.oversample_factor,
    );

    let mut params = init_params(
        net_config,
        bins,
        substream(opts.seed, &[fold_id as u64, STREAM_INIT]),
    )?;
    let mut groups = extra_groups.to_vec();
    groups.push(LayerGroup::default_group(*optim_config));
    let group_map = resolve_groups(&params.tensor_names(), &groups)?;
    let mut state = OptimState::new(&params);

    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, NetworkParams, usize)> = None;
    let mut epochs_trained = 0;

    for epoch in 1..=opts.max_epochs {
        epochs_trained = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(substream(
            opts.seed,
            &[fold_id as u64, STREAM_EPOCH, epoch as u64],
        ));
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let epoch_alpha = match &opts.augment {
            Some(s) if s.mode == AugmentMode::PerEpochGlobal => Some(sample_alpha(s, &mut rng)),
            _ => None,
        };

        for chunk in order.chunks(opts.batch_size) {
            // Alpha draws happen sequentially in chunk order so the stream
            // is independent of how the warps execute.
            let alphas: Vec<Option<f64>> = chunk
                .iter()
                .map(|_| match &opts.augment {
                    None => None,
                    Some(s) => match s.mode {
                        AugmentMode::PerEpochGlobal => epoch_alpha,
                        AugmentMode::PerSample => Some(sample_alpha(s, &mut rng)),
                    },
                })
                .collect();
            let prepared: Vec<Spectrogram> = parallel::map_indexed(chunk.len(), |k| {
                prepare_spec(&data.train[chunk[k]], alphas[k], f_max, &stats)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let with_labels: Vec<(&Spectrogram, Emotion)> = prepared
                .iter()
                .zip(chunk)
                .map(|(s, &i)| (s, data.train[i].label))
                .collect();
            let batch = pad_batch(&with_labels)?;

            let out = forward(&params, &batch, Mode::Train)?;
            let cache = out.cache.expect("train mode returns a cache");
            let grads = backward(&params, &cache, &batch.labels)?;
            if let Some(w) = grad_log.as_deref_mut() {
                w.append(&log_grad_norms(&params, &grads, state.step_count + 1))?;
            }
            step(&mut params, &grads, &mut state, &group_map)?;
            update_running_stats(&mut params, &cache, opts.bn_momentum);
        }
        if let Some(w) = grad_log.as_deref_mut() {
            w.flush()?;
        }

        // Validation pass. The per-sample strategy warps validation samples
        // with fresh alphas; the per-epoch strategy leaves them unwarped.
        let val_alphas: Vec<Option<f64>> = data
            .val
            .iter()
            .map(|_| match &opts.augment {
                Some(s) if s.mode == AugmentMode::PerSample => Some(sample_alpha(s, &mut rng)),
                _ => None,
            })
            .collect();
        let val_specs: Vec<Spectrogram> = parallel::map_indexed(data.val.len(), |k| {
            prepare_spec(&data.val[k], val_alphas[k], f_max, &stats)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let val_preds = predict(&params, &val_specs, opts.batch_size)?;
        let confusion = ConfusionMatrix::from_pairs(
            data.val
                .iter()
                .zip(&val_preds)
                .map(|(s, &p)| (s.label, p)),
        );
        let val_ua = crate::eval::unweighted_accuracy(&confusion)?;
        trace.events.push(EvalEvent::Validation { epoch, ua: val_ua });
        trace.val_ua.push(val_ua);

        if opts.track_train_accuracy {
            let train_specs: Vec<Spectrogram> = parallel::map_indexed(data.train.len(), |k| {
                Ok(normalize(&data.train[k].spec, &stats))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let preds = predict(&params, &train_specs, opts.batch_size)?;
            trace.train_accuracy.push(accuracy_against(&preds, &data.train));
        }

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_ua > *b);
        if improved {
            best = Some((val_ua, params.clone(), epoch));
        } else if epoch - best.as_ref().unwrap().2 >= opts.patience {
            break;
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    trace.events.push(EvalEvent::Test);

    let preds: Vec<Emotion> = parallel::map_indexed(data.test.len(), |k| {
        tta_predict(&best_params, &data.test[k].spec, &stats)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let confusion = ConfusionMatrix::from_pairs(
        data.test.iter().zip(&preds).map(|(s, &p)| (s.label, p)),
    );
    let metrics = Metrics::from_confusion(confusion)?;

    Ok(FoldRun {
        result: FoldResult {
            fold_id,
            metrics,
            epochs_trained,
            best_epoch,
        },
        trace,
        best_params,
    })
}
