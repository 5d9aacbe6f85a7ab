//! Deterministic seed derivation for independent random streams.

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives an independent substream seed from a base seed and a stream tag.
///
/// Used so that e.g. parameter initialization, per-epoch shuffling, and
/// per-epoch augmentation draws never share a stream, and so changing the
/// epoch count of one consumer cannot shift another's sequence.
pub fn substream(seed: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}
