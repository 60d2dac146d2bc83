//! Deterministic Brownian increment tables.
//!
//! Draws are counter-based: every Gaussian is a pure function of
//! `(seed, stream, purpose, absolute indices)`, so the same window of
//! increments can be regenerated from scratch in any order, by any number of
//! workers, with bit-identical results. Refinement splits an increment with a
//! Brownian-bridge midpoint whose key names the *base* step, the refinement
//! level, and the position inside the base step — refining in one shot or in
//! stages produces the same table bit for bit.

use crate::numeric::splitmix64;

/// Purpose tags keeping base draws and bridge draws in disjoint key spaces.
const TAG_BASE: u64 = 0x42_41_53_45; // "BASE"
const TAG_BRIDGE: u64 = 0x42_52_44_47; // "BRDG"

fn fold(words: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3; // π digits; arbitrary nonzero start
    for &w in words {
        h = splitmix64(h ^ w);
    }
    h
}

/// Standard normal draw keyed by the word tuple (Box–Muller over two
/// counter-mixed uniforms).
fn normal(words: &[u64]) -> f64 {
    let h1 = fold(words);
    let h2 = splitmix64(h1 ^ 0x5851_F42D_4C95_7F2D);
    // 53-bit uniforms; u1 in (0, 1] so the log is finite.
    let u1 = 1.0 - (h1 >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
    let u2 = (h2 >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A window of Brownian increments on a uniform grid, possibly refined to a
/// dyadic sub-grid and possibly time-reversed.
///
/// The window covers base steps `(base_lo, base_hi]`: increment `j` of the
/// table spans the `j`-th fine interval of that window in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    seed: u64,
    stream: u64,
    base_lo: i64,
    base_hi: i64,
    level: u32,
    dt: f64,
    reversed: bool,
    increments: Vec<f64>,
}

impl NoisePath {
    /// Sample the base-level window `(lo, hi]` of steps of duration `dt`.
    /// Increment `k` (for `k` in `lo+1 ..= hi`) covers `((k−1)·dt, k·dt]`.
    pub fn sample(seed: u64, stream: u64, dt: f64, window: (i64, i64)) -> NoisePath {
        let (lo, hi) = window;
        assert!(hi > lo, "window must be nonempty");
        assert!(dt > 0.0 && dt.is_finite(), "dt must be positive");
        let scale = dt.sqrt();
        let increments = (lo + 1..=hi)
            .map(|k| scale * normal(&[seed, stream, TAG_BASE, k as u64]))
            .collect();
        NoisePath { seed, stream, base_lo: lo, base_hi: hi, level: 0, dt, reversed: false, increments }
    }

    /// An all-zero table over the window — a deterministic stand-in for dry
    /// runs and tests of the noise-free recursions.
    pub fn zeros(dt: f64, window: (i64, i64)) -> NoisePath {
        let (lo, hi) = window;
        assert!(hi > lo, "window must be nonempty");
        assert!(dt > 0.0 && dt.is_finite(), "dt must be positive");
        NoisePath {
            seed: 0,
            stream: 0,
            base_lo: lo,
            base_hi: hi,
            level: 0,
            dt,
            reversed: false,
            increments: vec![0.0; (hi - lo) as usize],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    /// The covered window in fine-step indices: increment `j` is fine step
    /// `fine_window().0 + 1 + j`.
    pub fn fine_window(&self) -> (i64, i64) {
        (self.base_lo << self.level, self.base_hi << self.level)
    }

    /// Reverse time around 0: the mirrored window `(−hi, −lo]` with each
    /// increment order-reversed and negated. An exact involution.
    pub fn time_reverse(&self) -> NoisePath {
        let increments = self.increments.iter().rev().map(|&x| -x).collect();
        NoisePath {
            seed: self.seed,
            stream: self.stream,
            base_lo: -self.base_hi,
            base_hi: -self.base_lo,
            level: self.level,
            dt: self.dt,
            reversed: !self.reversed,
            increments,
        }
    }

    /// Split every increment `extra_levels` times with Brownian-bridge
    /// midpoints. Children of an increment `D` over a span `τ` are
    /// `D/2 ± (√τ/2)·Z`, with `Z` keyed by the base step, the new absolute
    /// level, and the position inside the base step — so
    /// `refine(a).refine(b)` equals `refine(a + b)` bit for bit.
    pub fn refine(&self, extra_levels: u32) -> NoisePath {
        assert!(
            !self.reversed,
            "refine the forward table first, then reverse: bridge keys are anchored forward"
        );
        let mut out = self.clone();
        for _ in 0..extra_levels {
            let new_level = out.level + 1;
            let half_scale = 0.5 * out.dt.sqrt();
            let mut fine = Vec::with_capacity(out.increments.len() * 2);
            for (j, &d) in out.increments.iter().enumerate() {
                let base_index = out.base_lo + 1 + (j >> out.level) as i64;
                let pos = (j as u64) & ((1u64 << out.level) - 1);
                let z = normal(&[
                    out.seed,
                    out.stream,
                    TAG_BRIDGE,
                    base_index as u64,
                    new_level as u64,
                    pos,
                ]);
                let g = half_scale * z;
                fine.push(0.5 * d + g);
                fine.push(0.5 * d - g);
            }
            out.increments = fine;
            out.level = new_level;
            out.dt *= 0.5;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{mean_and_std_err, pairwise_sum};

    #[test]
    fn sampling_is_deterministic_and_window_indexed() {
        let a = NoisePath::sample(42, 7, 0.25, (0, 8));
        let b = NoisePath::sample(42, 7, 0.25, (0, 8));
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        // A shifted window shares the increments of the overlap: counter
        // draws depend on the absolute index only.
        let c = NoisePath::sample(42, 7, 0.25, (4, 8));
        assert_eq!(&a.increments()[4..], c.increments());
        // Different seeds and streams decorrelate.
        assert_ne!(NoisePath::sample(43, 7, 0.25, (0, 8)).increments(), a.increments());
        assert_ne!(NoisePath::sample(42, 8, 0.25, (0, 8)).increments(), a.increments());
    }

    #[test]
    fn marginal_law_matches_standard_normal() {
        // One long window at dt = 1; seeded, so these are frozen statistics.
        let p = NoisePath::sample(42, 0, 1.0, (0, 100_000));
        let xs = p.increments();
        let n = xs.len() as f64;
        let (mean, se) = mean_and_std_err(xs);
        assert!(mean.abs() <= 4.0 * se, "mean {mean}, se {se}");
        let var = pairwise_sum(&xs.iter().map(|x| x * x).collect::<Vec<_>>()) / n;
        assert!((var - 1.0).abs() <= 5.0 * (2.0_f64 / n).sqrt(), "var {var}");
        let below = xs.iter().filter(|&&x| x < 0.0).count() as f64 / n;
        assert!((below - 0.5).abs() <= 4.0 * 0.5 / n.sqrt(), "P(<0) {below}");
        // Lag-1 serial correlation.
        let lag: Vec<f64> = xs.windows(2).map(|w| w[0] * w[1]).collect();
        let (rho, _) = mean_and_std_err(&lag);
        assert!(rho.abs() <= 4.0 / n.sqrt(), "lag-1 {rho}");
        // Tail frequency beyond 2σ ≈ 4.55%.
        let tails = xs.iter().filter(|&&x| x.abs() > 2.0).count() as f64 / n;
        assert!((tails - 0.0455).abs() < 0.004, "tails {tails}");
    }

    #[test]
    fn increments_scale_with_dt() {
        let p = NoisePath::sample(5, 1, 0.0625, (0, 4000));
        let var = pairwise_sum(&p.increments().iter().map(|x| x * x).collect::<Vec<_>>())
            / p.len() as f64;
        assert!((var - 0.0625).abs() <= 5.0 * 0.0625 * (2.0_f64 / 4000.0).sqrt(), "var {var}");
    }

    #[test]
    fn time_reverse_is_an_exact_involution() {
        let p = NoisePath::sample(42, 3, 0.5, (-4, 6));
        let r = p.time_reverse();
        assert_eq!(r.fine_window(), (-6, 4));
        assert!(r.is_reversed());
        assert_eq!(r.len(), p.len());
        for (j, &x) in r.increments().iter().enumerate() {
            let orig = p.increments()[p.len() - 1 - j];
            assert_eq!(x.to_bits(), (-orig).to_bits());
        }
        let back = r.time_reverse();
        assert_eq!(back, p);
    }

    #[test]
    fn refinement_is_stage_independent() {
        let p = NoisePath::sample(42, 11, 1.0, (0, 16));
        let once = p.refine(3);
        let staged = p.refine(1).refine(1).refine(1);
        assert_eq!(once.len(), 16 * 8);
        assert_eq!(once.dt(), 0.125);
        for (a, b) in once.increments().iter().zip(staged.increments()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn refinement_preserves_parent_sums() {
        let p = NoisePath::sample(9, 2, 0.5, (0, 64));
        let fine = p.refine(4);
        let per = 1 << 4;
        for (k, &parent) in p.increments().iter().enumerate() {
            let child_sum = pairwise_sum(&fine.increments()[k * per..(k + 1) * per]);
            assert!((child_sum - parent).abs() <= 1e-13, "step {k}");
        }
    }

    #[test]
    fn refined_increments_have_fine_variance() {
        let p = NoisePath::sample(1, 0, 1.0, (0, 2000)).refine(3);
        let var = pairwise_sum(&p.increments().iter().map(|x| x * x).collect::<Vec<_>>())
            / p.len() as f64;
        let want = 0.125;
        assert!((var - want).abs() <= 5.0 * want * (2.0 / p.len() as f64).sqrt(), "var {var}");
    }

    #[test]
    fn reverse_of_refined_matches_componentwise() {
        // Reversal after refinement is the supported order and keeps the
        // mirrored fine window aligned.
        let p = NoisePath::sample(4, 4, 1.0, (0, 4)).refine(2);
        let r = p.time_reverse();
        assert_eq!(r.fine_window(), (-16, 0));
        assert_eq!(r.dt(), 0.25);
        let back = r.time_reverse();
        assert_eq!(back, p);
    }

    #[test]
    #[should_panic(expected = "refine the forward table")]
    fn refining_a_reversed_table_is_rejected() {
        let p = NoisePath::sample(0, 0, 1.0, (0, 2)).time_reverse();
        let _ = p.refine(1);
    }
}
