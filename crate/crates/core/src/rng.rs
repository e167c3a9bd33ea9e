//! Seeded randomness.
//!
//! Every random stream is a ChaCha8 generator keyed by `(seed, stream)`, so
//! independent consumers (batch order, adversarial directions, sample
//! selection) never perturb each other. Subsampling is a partial
//! Fisher–Yates shuffle: for `i in 0..k`, swap position `i` with a uniform
//! draw from `i..n`; the chosen indices are returned in ascending order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Prng = ChaCha8Rng;

/// Named streams used across the crate.
pub mod streams {
    pub const SAMPLING: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCHES: u64 = 3;
    pub const VAT: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const FEATURES: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const TRIPLETS: u64 = 8;
    pub const FOREST: u64 = 9;
}

pub fn stream(seed: u64, stream: u64) -> Prng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `k` distinct indices from `0..n`, ascending.
pub fn sample_indices(n: usize, k: usize, rng: &mut Prng) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} of {n}");
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Keeps `k` elements of `items` chosen uniformly without replacement,
/// preserving their relative order.
pub fn subsample<T: Clone>(items: &[T], k: usize, rng: &mut Prng) -> Vec<T> {
    sample_indices(items.len(), k, rng)
        .into_iter()
        .map(|i| items[i].clone())
        .collect()
}

pub fn shuffle<T>(items: &mut [T], rng: &mut Prng) {
    items.shuffle(rng);
}

/// Weighted sampling of exactly `k` distinct indices without replacement
/// (exponential-key method: keep the `k` largest `u^(1/w)`). Ascending.
pub fn weighted_sample_indices(weights: &[f64], k: usize, rng: &mut Prng) -> Vec<usize> {
    assert!(k <= weights.len());
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let key = if w > 0.0 {
                u.ln() / w
            } else {
                f64::NEG_INFINITY
            };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keys[..k].iter().map(|&(_, i)| i).collect();
    out.sort_unstable();
    out
}

pub fn normal(rng: &mut Prng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: Vec<u32> = (0..4).map(|_| stream(7, 1).random()).collect();
        let b: Vec<u32> = (0..4).map(|_| stream(7, 1).random()).collect();
        assert_eq!(a, b);
        let x: u64 = stream(7, 1).random();
        let y: u64 = stream(7, 2).random();
        assert_ne!(x, y);
    }

    #[test]
    fn sample_is_distinct_sorted() {
        let mut rng = stream(3, 0);
        let s = sample_indices(100, 30, &mut rng);
        assert_eq!(s.len(), 30);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_indices(5, 5, &mut rng), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn weighted_sample_prefers_heavy_items() {
        let mut rng = stream(11, 0);
        let mut w = vec![1.0; 100];
        for x in w.iter_mut().take(10) {
            *x = 1000.0;
        }
        let s = weighted_sample_indices(&w, 10, &mut rng);
        assert!(s.iter().filter(|&&i| i < 10).count() >= 8);
        assert_eq!(weighted_sample_indices(&w, 100, &mut rng).len(), 100);
    }
}
