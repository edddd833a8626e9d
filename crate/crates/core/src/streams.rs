//! Deterministic derivation of generator seeds.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is
//! mixed from the user seed and a content key, and whose stream id is the
//! lane index. Lane count is fixed, so the output does not depend on how many
//! threads happen to run the lanes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of independent lanes a Monte Carlo run is split into.
pub(crate) const LANES: usize = 16;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold `words` into `seed`. Order-sensitive.
pub(crate) fn derive(seed: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    words
        .into_iter()
        .fold(splitmix(seed), |acc, w| splitmix(acc ^ splitmix(w)))
}

pub(crate) fn lane_rng(seed: u64, lane: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(lane as u64);
    rng
}

/// Sizes of the `LANES` chunks `total` is split into; earlier lanes take the
/// remainder.
pub(crate) fn lane_sizes(total: usize) -> impl Iterator<Item = usize> {
    let base = total / LANES;
    let extra = total % LANES;
    (0..LANES).map(move |l| base + usize::from(l < extra))
}
