//! Speaker-disjoint 10-fold cross-validation splits.
//!
//! Each fold tests on one speaker, validates on the opposite-gender speaker
//! of the same session, and trains on the four remaining sessions. Folds
//! are ordered (session 1, F), (session 1, M), ..., (session 5, M).

use crate::corpus::{Gender, Manifest, Speaker};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_id: u8,
    pub test: Speaker,
    pub val: Speaker,
}

impl FoldSplit {
    pub fn train_sessions(&self) -> impl Iterator<Item = u8> + '_ {
        (1..=5).filter(move |&s| s != self.test.0)
    }

    pub fn is_train_speaker(&self, speaker: Speaker) -> bool {
        speaker.0 != self.test.0
    }
}

/// Builds the ten speaker-disjoint folds.
///
/// Errors if any of the ten (session, gender) speakers has no utterances.
pub fn make_folds(manifest: &Manifest) -> Result<[FoldSplit; 10]> {
    let speakers = manifest.speakers();
    let mut missing = Vec::new();
    for session in 1..=5u8 {
        for gender in [Gender::F, Gender::M] {
            if !speakers.contains(&(session, gender)) {
                missing.push(format!("(session {session}, {})", gender.letter()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CoreError::data(format!(
            "manifest is missing speakers: {}",
            missing.join(", ")
        )));
    }

    let mut folds = Vec::with_capacity(10);
    for session in 1..=5u8 {
        for gender in [Gender::F, Gender::M] {
            folds.push(FoldSplit {
                fold_id: folds.len() as u8 + 1,
                test: (session, gender),
                val: (session, gender.opposite()),
            });
        }
    }
    Ok(folds.try_into().expect("exactly ten folds"))
}

/// Manifest indices of the train/val/test partitions of one fold.
#[derive(Clone, Debug, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(manifest: &Manifest, fold: &FoldSplit) -> SplitIndices {
    let mut split = SplitIndices::default();
    for (i, u) in manifest.utterances.iter().enumerate() {
        let speaker = u.speaker();
        if speaker == fold.test {
            split.test.push(i);
        } else if speaker == fold.val {
            split.val.push(i);
        } else {
            debug_assert!(fold.is_train_speaker(speaker));
            split.train.push(i);
        }
    }
    split
}
