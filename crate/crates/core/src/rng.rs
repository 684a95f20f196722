//! Deterministic, splittable random streams.
//!
//! Every parallel unit of work (a pulse batch, a jackknife block, a bootstrap
//! for one gate position) draws from its own ChaCha8 stream selected by
//! `(seed, stream)`. Results never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `total` items into `parts` contiguous chunks whose sizes differ by at most one.
pub(crate) fn partition(total: u64, parts: u64) -> impl Iterator<Item = (u64, u64)> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).scan(0u64, move |start, k| {
        let len = base + u64::from(k < extra);
        let chunk = (*start, len);
        *start += len;
        Some(chunk)
    })
}
