//! Deterministic random streams.
//!
//! Every pipeline run is driven by one `u64` seed. Consumers draw from named
//! substreams derived from that seed, so adding draws in one module never
//! perturbs the sequence seen by another. Streams are ChaCha-based and stable
//! across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over a byte string; folds stream names into key material.
fn fnv1a(bytes: &[u8], basis: u64) -> u64 {
    let mut h = basis;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// A named substream of the master seed.
pub fn substream(seed: u64, name: &str) -> ChaCha12Rng {
    substream_indexed(seed, name, 0)
}

/// A named substream further split by an index (particle id, span id, ...).
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(name.as_bytes(), 0xcbf2_9ce4_8422_2325).to_le_bytes());
    key[16..24].copy_from_slice(&fnv1a(name.as_bytes(), 0x9ae1_6a3b_2f90_404f).to_le_bytes());
    key[24..32].copy_from_slice(&index.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Fold a stage name and index into a new master seed, for pipeline stages
/// that hand a whole seed (not just a stream) to a nested component.
pub fn fold_seed(seed: u64, name: &str, index: u64) -> u64 {
    fnv1a(name.as_bytes(), seed ^ 0x517c_c1b7_2722_0a95)
        ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Draw log-uniformly from (lo, hi); used for rate initialization so every
/// order of magnitude in the range is equally likely.
pub(crate) fn log_uniform<R: rand::Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

/// Draw from Exp(rate) by inversion. `rate = 0` yields infinity.
pub fn sample_exp<R: rand::Rng>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -u.ln() / rate
}
