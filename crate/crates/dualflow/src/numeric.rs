//! Shared numeric helpers: float formatting that round-trips, deterministic
//! summation, and the standard normal CDF.

/// Format with 17 significant digits (always enough to round-trip an `f64`).
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Deterministic pairwise summation over a fixed-order slice.
///
/// The reduction tree depends only on the slice length, so results are
/// bit-identical no matter how the values were produced (serially or by a
/// worker pool that later restores index order).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Sample mean and standard error of the mean (unbiased variance, `n >= 2`).
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "standard error needs at least two samples");
    let mean = pairwise_sum(xs) / n as f64;
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// The splitmix64 finalizer: a bijective mixer whose outputs over any set of
/// distinct inputs behave like independent uniform words. All counter-mode
/// randomness in the crate bottoms out here.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a over byte parts, with a separator fold between parts
/// so `["ab","c"]` and `["a","bc"]` hash differently. Used to derive stream
/// ids from check/fixture names; must never change across releases.
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x100_0000_01b3;
    let mut h = OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    }
    h
}
