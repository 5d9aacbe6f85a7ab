//! Dataset modeling: manifests, speaker-disjoint folds, oversampling,
//! global normalization, padding, spectrogram caching, and a synthetic
//! corpus generator for desk-scale verification.

mod batch;
mod cache;
mod folds;
mod manifest;
mod synth;

pub use batch::{compute_stats, normalize, pad_batch, DatasetStats, PaddedBatch, STATS_EPSILON};
pub use cache::{read_spectrogram, write_spectrogram, SPEC_MAGIC, SPEC_VERSION};
pub use folds::{make_folds, split_indices, FoldSplit, SplitIndices};
pub use manifest::{load_manifest, save_manifest};
pub use synth::{synth_corpus, synth_with_counts, SynthCorpus, SynthOptions};

use std::path::PathBuf;

use crate::error::{CoreError, Result};

/// The four emotion classes, with fixed ordinal indices 0..3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Neutral = 0,
    Sadness = 1,
    Anger = 2,
    Happiness = 3,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [
        Emotion::Neutral,
        Emotion::Sadness,
        Emotion::Anger,
        Emotion::Happiness,
    ];

    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Emotion::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Sadness => "sadness",
            Emotion::Anger => "anger",
            Emotion::Happiness => "happiness",
        }
    }

    pub fn parse(s: &str) -> Option<Emotion> {
        match s {
            "neutral" => Some(Emotion::Neutral),
            "sadness" => Some(Emotion::Sadness),
            "anger" => Some(Emotion::Anger),
            "happiness" => Some(Emotion::Happiness),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn opposite(self) -> Gender {
        match self {
            Gender::F => Gender::M,
            Gender::M => Gender::F,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "F" | "f" => Some(Gender::F),
            "M" | "m" => Some(Gender::M),
            _ => None,
        }
    }
}

/// A speaker is identified by a (session, gender) pair.
pub type Speaker = (u8, Gender);

/// One labeled sample of the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub path: PathBuf,
    pub label: Emotion,
    pub session: u8,
    pub gender: Gender,
}

impl Utterance {
    pub fn speaker(&self) -> Speaker {
        (self.session, self.gender)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    pub provenance: String,
}

impl Manifest {
    pub fn new(utterances: Vec<Utterance>, provenance: impl Into<String>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(CoreError::data("manifest is empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for u in &utterances {
            if !(1..=5).contains(&u.session) {
                return Err(CoreError::data(format!(
                    "utterance {}: session {} outside 1..=5",
                    u.id, u.session
                )));
            }
            if !seen.insert(u.id.clone()) {
                return Err(CoreError::data(format!("duplicate utterance id {}", u.id)));
            }
        }
        Ok(Manifest {
            utterances,
            provenance: provenance.into(),
        })
    }

    pub fn speakers(&self) -> std::collections::BTreeSet<Speaker> {
        self.utterances.iter().map(|u| u.speaker()).collect()
    }

    /// Per-class utterance counts, indexed by emotion ordinal.
    pub fn class_histogram(&self) -> [usize; Emotion::COUNT] {
        let mut h = [0usize; Emotion::COUNT];
        for u in &self.utterances {
            h[u.label.index()] += 1;
        }
        h
    }
}

/// Duplicates the utterances of the named classes to `factor` copies.
///
/// Output order is deterministic: all originals first, then each extra round
/// of duplicates in original order. Contents are never modified, so the
/// duplicates still receive independent per-sample augmentation downstream.
pub fn oversample(train: &[Utterance], classes: &[Emotion], factor: usize) -> Vec<Utterance> {
    assert!(factor >= 1, "oversampling factor must be at least 1");
    oversample_by(train, |u| classes.contains(&u.label), factor)
}

/// Generic oversampling used by both manifest- and sample-level callers.
pub(crate) fn oversample_by<T: Clone>(
    items: &[T],
    is_target: impl Fn(&T) -> bool,
    factor: usize,
) -> Vec<T> {
    let mut out = items.to_vec();
    for _ in 1..factor {
        out.extend(items.iter().filter(|x| is_target(x)).cloned());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, label: Emotion) -> Utterance {
        Utterance {
            id: id.into(),
            path: PathBuf::from(format!("{id}.wav")),
            label,
            session: 1,
            gender: Gender::F,
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let items = vec![utt("a", Emotion::Happiness), utt("b", Emotion::Neutral)];
        assert_eq!(oversample(&items, &[Emotion::Happiness], 1), items);
    }

    #[test]
    fn factor_two_doubles_target_class_only() {
        let mut items = Vec::new();
        for i in 0..10 {
            items.push(utt(&format!("h{i}"), Emotion::Happiness));
        }
        for i in 0..20 {
            items.push(utt(&format!("n{i}"), Emotion::Neutral));
        }
        let out = oversample(&items, &[Emotion::Happiness], 2);
        let hap = out.iter().filter(|u| u.label == Emotion::Happiness).count();
        let neu = out.iter().filter(|u| u.label == Emotion::Neutral).count();
        assert_eq!(hap, 20);
        assert_eq!(neu, 20);
        // Originals first, then duplicates in original order.
        assert_eq!(out[..30], items[..]);
        let dup_ids: Vec<&str> = out[30..].iter().map(|u| u.id.as_str()).collect();
        let expect: Vec<String> = (0..10).map(|i| format!("h{i}")).collect();
        assert_eq!(dup_ids, expect.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn two_classes_scale_together() {
        let mut items = Vec::new();
        let counts = [(Emotion::Happiness, 3), (Emotion::Anger, 4), (Emotion::Neutral, 5), (Emotion::Sadness, 6)];
        for (label, n) in counts {
            for i in 0..n {
                items.push(utt(&format!("{}{i}", label.name()), label));
            }
        }
        let out = oversample(&items, &[Emotion::Happiness, Emotion::Anger], 2);
        let count = |l: Emotion| out.iter().filter(|u| u.label == l).count();
        assert_eq!(count(Emotion::Happiness), 6);
        assert_eq!(count(Emotion::Anger), 8);
        assert_eq!(count(Emotion::Neutral), 5);
        assert_eq!(count(Emotion::Sadness), 6);
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let items = vec![utt("a", Emotion::Neutral), utt("a", Emotion::Anger)];
        let err = Manifest::new(items, "test").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
