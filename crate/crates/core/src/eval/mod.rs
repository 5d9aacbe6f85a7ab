//! Metrics, test-time augmentation, fold training, and aggregation.

mod fold;

pub use fold::{run_fold, EvalEvent, FoldData, FoldRun, FoldSample, TrainOptions, TrainTrace};

use crate::corpus::{pad_batch, DatasetStats, Emotion};
use crate::dsp::Spectrogram;
use crate::error::{CoreError, Result};
use crate::net::{forward, Mode, NetworkParams};
use crate::vtlp::{tta_alphas, warp_spectrogram, WarpParams};

/// 4x4 confusion counts, rows = true class, columns = predicted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; Emotion::COUNT]; Emotion::COUNT],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, truth: Emotion, predicted: Emotion) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Emotion, Emotion)>) -> Self {
        let mut m = Self::new();
        for (truth, predicted) in pairs {
            m.record(truth, predicted);
        }
        m
    }

    pub fn count(&self, truth: Emotion, predicted: Emotion) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..Emotion::COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: Emotion) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(other_row) {
                *a += b;
            }
        }
    }

    /// CSV with a header row and one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for e in Emotion::ALL {
            out.push(',');
            out.push_str(e.name());
        }
        out.push('\n');
        for truth in Emotion::ALL {
            out.push_str(truth.name());
            for pred in Emotion::ALL {
                out.push_str(&format!(",{}", self.count(truth, pred)));
            }
            out.push('\n');
        }
        out
    }
}

/// Standard accuracy over the whole test set: trace / total.
pub fn weighted_accuracy(confusion: &ConfusionMatrix) -> Result<f64> {
    let total = confusion.total();
    if total == 0 {
        return Err(CoreError::data("weighted accuracy of an empty matrix"));
    }
    Ok(confusion.trace() as f64 / total as f64)
}

/// Mean of per-class recalls over classes with nonzero support.
pub fn unweighted_accuracy(confusion: &ConfusionMatrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut supported = 0usize;
    for class in Emotion::ALL {
        let support = confusion.row_sum(class);
        if support > 0 {
            sum += confusion.count(class, class) as f64 / support as f64;
            supported += 1;
        }
    }
    if supported == 0 {
        return Err(CoreError::data("unweighted accuracy with no supported class"));
    }
    Ok(sum / supported as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub wa: f64,
    pub ua: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Metrics> {
        Ok(Metrics {
            wa: weighted_accuracy(&confusion)?,
            ua: unweighted_accuracy(&confusion)?,
            confusion,
        })
    }
}

/// Outcome of one cross-validation fold.
#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold_id: u8,
    pub metrics: Metrics,
    pub epochs_trained: usize,
    pub best_epoch: usize,
}

/// First index of the maximal value; ties break toward the lower index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Majority-vote prediction over the eleven-point warp grid.
///
/// The raw spectrogram is warped at each grid alpha, normalized, and run in
/// eval mode; the plurality class wins. Ties break by the class's summed
/// softmax probability across the copies, then by the lowest class index.
pub fn tta_predict(
    params: &NetworkParams,
    spec: &Spectrogram,
    stats: &DatasetStats,
) -> Result<Emotion> {
    let alphas = tta_alphas();
    let copies: Vec<Spectrogram> = alphas
        .iter()
        .map(|&alpha| {
            let warp = WarpParams::new(alpha, spec.meta.f_max_hz)?;
            Ok(crate::corpus::normalize(&warp_spectrogram(spec, &warp)?, stats))
        })
        .collect::<Result<_>>()?;
    let with_labels: Vec<(&Spectrogram, Emotion)> =
        copies.iter().map(|s| (s, Emotion::Neutral)).collect();
    let batch = pad_batch(&with_labels)?;
    let out = forward(params, &batch, Mode::Eval)?;

    let winner = majority_vote(&out.probs, out.classes);
    Emotion::from_index(winner).ok_or_else(|| CoreError::data("class index out of range"))
}

/// Plurality vote over per-copy probability rows.
///
/// Each row votes for its argmax; vote ties break by the class's summed
/// probability across copies, remaining ties by the lowest class index.
pub(crate) fn majority_vote(probs: &[f64], classes: usize) -> usize {
    let mut votes = vec![0usize; classes];
    let mut prob_sum = vec![0.0f64; classes];
    for row in probs.chunks_exact(classes) {
        votes[argmax(row)] += 1;
        for (acc, &p) in prob_sum.iter_mut().zip(row) {
            *acc += p;
        }
    }
    let top_votes = *votes.iter().max().unwrap();
    let mut winner = None;
    for c in 0..classes {
        if votes[c] == top_votes {
            let better = match winner {
                None => true,
                Some(w) => prob_sum[c] > prob_sum[w],
            };
            if better {
                winner = Some(c);
            }
        }
    }
    winner.expect("at least one class")
}

/// Cross-validation aggregate: unweighted means over folds, plus the means
/// of the five folds ranked best by UA (when at least five exist).
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub n_folds: usize,
    pub mean_wa: f64,
    pub mean_ua: f64,
    pub best5_wa: Option<f64>,
    pub best5_ua: Option<f64>,
}

pub fn aggregate(results: &[FoldResult]) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(CoreError::data("aggregate of zero folds"));
    }
    let n = results.len() as f64;
    let mean_wa = results.iter().map(|r| r.metrics.wa).sum::<f64>() / n;
    let mean_ua = results.iter().map(|r| r.metrics.ua).sum::<f64>() / n;

    let (best5_wa, best5_ua) = if results.len() >= 5 {
        let mut ranked: Vec<&FoldResult> = results.iter().collect();
        ranked.sort_by(|a, b| {
            b.metrics
                .ua
                .total_cmp(&a.metrics.ua)
                .then(a.fold_id.cmp(&b.fold_id))
        });
        let top = &ranked[..5];
        (
            Some(top.iter().map(|r| r.metrics.wa).sum::<f64>() / 5.0),
            Some(top.iter().map(|r| r.metrics.ua).sum::<f64>() / 5.0),
        )
    } else {
        (None, None)
    };

    Ok(Aggregate {
        n_folds: results.len(),
        mean_wa,
        mean_ua,
        best5_wa,
        best5_ua,
    })
}

/// Rounds half up at the given number of decimals.
///
/// A 1e-9 guard absorbs the binary representation error of decimal inputs,
/// so a mean like 61.65 (stored as 61.64999...) still reports as 61.7.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    if x < 0.0 {
        return -round_half_up(-x, decimals);
    }
    let scale = 10f64.powi(decimals as i32);
    (x * scale + 0.5 + 1e-9).floor() / scale
}
