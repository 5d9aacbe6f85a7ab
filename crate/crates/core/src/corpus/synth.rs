//! Synthetic corpus generator.
//!
//! Produces labeled clips whose class is encoded by a formant-like band
//! center, with a per-speaker multiplicative frequency offset so that
//! speaker-held-out evaluation is a real generalization test. Deterministic
//! in the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Emotion, Gender, Manifest, Utterance};
use crate::dsp::AudioClip;
use crate::error::Result;
use crate::rng::substream;

/// Class band centers in Hz; separated well beyond the speaker spread.
const CLASS_CENTER_HZ: [f64; Emotion::COUNT] = [600.0, 900.0, 1350.0, 2000.0];

/// Per-speaker multiplicative frequency offsets, spanning 0.90..1.10 over
/// the ten speakers: the same factor range the warp-based augmentation
/// models, so held-out speakers sit at genuinely unseen offsets.
fn speaker_multiplier(session: u8, gender: Gender) -> f64 {
    let idx = ((session - 1) * 2 + if gender == Gender::M { 1 } else { 0 }) as f64;
    0.90 + (0.20 / 9.0) * idx
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub seed: u64,
    /// Utterances per class (largest class when `imbalanced` is set).
    pub n_per_class: usize,
    pub n_sessions: u8,
    pub sample_rate: u32,
    pub duration_range: (f64, f64),
    /// Skews class counts toward neutral-heavy speech corpora.
    pub imbalanced: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            seed: 0,
            n_per_class: 4,
            n_sessions: 5,
            sample_rate: 8000,
            duration_range: (0.7, 1.3),
            imbalanced: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    /// Clips aligned with `manifest.utterances`.
    pub clips: Vec<AudioClip>,
}

/// Generates a corpus with `n_per_class` utterances per class distributed
/// round-robin over the speakers of `n_sessions` sessions.
pub fn synth_corpus(opts: &SynthOptions) -> Result<SynthCorpus> {
    let ratios: [f64; Emotion::COUNT] = if opts.imbalanced {
        // Neutral-heavy skew; happiness and anger end up rarest.
        [1.0, 0.6, 0.32, 0.26]
    } else {
        [1.0; Emotion::COUNT]
    };
    let n_speakers = opts.n_sessions as usize * 2;
    let mut counts = Vec::new();
    for (ci, emotion) in Emotion::ALL.iter().enumerate() {
        let total = ((opts.n_per_class as f64) * ratios[ci]).ceil() as usize;
        // Round-robin over speakers in (session, F/M) order.
        let mut per_speaker = vec![0usize; n_speakers];
        for k in 0..total {
            per_speaker[k % n_speakers] += 1;
        }
        for (si, &n) in per_speaker.iter().enumerate() {
            if n > 0 {
                let session = (si / 2) as u8 + 1;
                let gender = if si % 2 == 0 { Gender::F } else { Gender::M };
                counts.push((session, gender, *emotion, n));
            }
        }
    }
    synth_with_counts(
        opts.seed,
        opts.sample_rate,
        opts.duration_range,
        &counts,
    )
}

/// Generates a corpus with explicit per-(speaker, class) utterance counts.
pub fn synth_with_counts(
    seed: u64,
    sample_rate: u32,
    duration_range: (f64, f64),
    counts: &[(u8, Gender, Emotion, usize)],
) -> Result<SynthCorpus> {
    // Deterministic utterance order: by session, gender, class, then count.
    let mut sorted: Vec<_> = counts.to_vec();
    sorted.sort_by_key(|&(s, g, e, _)| (s, g, e.index()));

    let mut utterances = Vec::new();
    let mut clips = Vec::new();
    for &(session, gender, emotion, n) in &sorted {
        for k in 0..n {
            let id = format!(
                "s{session}{}-{}-{k:03}",
                gender.letter(),
                &emotion.name()[..3]
            );
            // Every utterance gets an independent stream so corpora with
            // different counts still agree on shared utterances.
            let utt_seed = substream(
                seed,
                &[
                    session as u64,
                    gender as u64,
                    emotion.index() as u64,
                    k as u64,
                ],
            );
            let mut rng = ChaCha8Rng::seed_from_u64(utt_seed);
            let clip = synth_clip(
                &mut rng,
                sample_rate,
                duration_range,
                CLASS_CENTER_HZ[emotion.index()] * speaker_multiplier(session, gender),
            )?;
            utterances.push(Utterance {
                id: id.clone(),
                path: std::path::PathBuf::from(format!("{id}.wav")),
                label: emotion,
                session,
                gender,
            });
            clips.push(clip);
        }
    }
    let manifest = Manifest::new(utterances, format!("synthetic corpus, seed {seed}"))?;
    Ok(SynthCorpus { manifest, clips })
}

/// One clip: a small stack of harmonically related tones around the band
/// center, low-level noise, and raised-cosine edge fades.
fn synth_clip(
    rng: &mut ChaCha8Rng,
    sample_rate: u32,
    duration_range: (f64, f64),
    center_hz: f64,
) -> Result<AudioClip> {
    let dur = if duration_range.0 == duration_range.1 {
        duration_range.0
    } else {
        rng.random_range(duration_range.0..duration_range.1)
    };
    let n = (dur * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;

    // Per-utterance detune and loudness keep clips from being carbon
    // copies; broadband noise makes the band estimate genuinely noisy.
    let f1 = center_hz * (1.0 + rng.random_range(-0.04..0.04));
    let loudness = rng.random_range(0.35..1.0);
    let components = [
        (0.55 * loudness, f1),
        (0.20 * loudness, 0.45 * f1),
        (0.12 * loudness, 2.2 * f1),
    ];
    let phases: Vec<f64> = components
        .iter()
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();

    let fade = (0.02 * sr) as usize;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let mut s = 0.0;
        for ((amp, freq), phase) in components.iter().zip(&phases) {
            // Keep everything safely below Nyquist.
            if *freq < 0.48 * sr {
                s += amp * (std::f64::consts::TAU * freq * t + phase).sin();
            }
        }
        s += 0.45 * rng.random_range(-1.0..1.0);
        let env = if i < fade {
            0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos()
        } else if i + fade > n {
            let j = n - i;
            0.5 - 0.5 * (std::f64::consts::PI * j as f64 / fade as f64).cos()
        } else {
            1.0
        };
        samples.push((s * env * 0.9).clamp(-0.99, 0.99));
    }
    AudioClip::new(samples, sample_rate)
}
