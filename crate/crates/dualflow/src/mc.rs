//! Seeded Monte Carlo estimators for the duality relations, with analytic
//! Brownian oracles to compare against.
//!
//! Reproducibility contract: every estimator derives one noise stream per
//! sample by hashing a check label, the check parameters, and the sample
//! index. Samples are therefore pure functions of `(seed, parameters, index)`;
//! rayon may compute them in any order, but they are collected back in index
//! order and reduced with a fixed pairwise tree, so the reported numbers are
//! bit-identical for every worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::coefficients::{CoefficientModel, Coefficients};
use crate::flow::{
    em_absorbing_flow, em_absorbing_terminal, exact_window_map, reference_flow, FlowError,
    TimeGrid,
};
use crate::monotone::{sup_metric, MonotoneFn};
use crate::noise::NoisePath;
use crate::numeric::{fmt_g17, mean_and_std_err, pairwise_sum, splitmix64, stable_hash64};

/// Errors from the statistical checks.
#[derive(Debug, Error)]
pub enum McError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    /// The drift-only (Gronwall) bound is stated for state-independent
    /// diffusion coefficients only.
    #[error("drift-only bound needs constant sigma, but sigma'({x}) = {slope}")]
    SigmaNotConstant { x: f64, slope: f64 },
    #[error("need at least {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("rate fit needs at least {needed} grid sizes, got {got}")]
    NotEnoughLevels { needed: usize, got: usize },
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

impl McEstimate {
    /// Mean and standard error of the mean (sample standard deviation / √n).
    pub fn from_samples(samples: &[f64]) -> McEstimate {
        let (mean, std_err) = mean_and_std_err(samples);
        McEstimate { mean, std_err, n_samples: samples.len() }
    }

    /// Distance from `other` in combined standard errors:
    /// `(a − b) / √(seₐ² + se_b²)`, with `0/0` read as agreement.
    pub fn z_against(&self, other: &McEstimate) -> f64 {
        let diff = self.mean - other.mean;
        if diff == 0.0 {
            return 0.0;
        }
        diff / self.std_err.hypot(other.std_err)
    }
}

/// A smooth, compactly supported test function on `[0, ∞)`.
///
/// The bump `f(u) = (16/R⁴)·u²(R−u)²` on `[0, R]`, zero outside, is C¹ on the
/// whole half-line, vanishes at the absorbing state 0 — so `f(absorbed) = 0`
/// exactly — and is normalized to peak at `f(R/2) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    radius: f64,
    scale: f64,
}

impl TestFunction {
    pub fn bump(radius: f64) -> TestFunction {
        assert!(radius > 0.0 && radius.is_finite(), "support radius must be positive");
        TestFunction { radius, scale: 1.0 }
    }

    /// The zero function. Every estimator must return exactly 0 on it.
    pub fn zero() -> TestFunction {
        TestFunction { radius: 1.0, scale: 0.0 }
    }

    /// Right edge of the support.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 || u >= self.radius {
            return 0.0;
        }
        let r = self.radius;
        self.scale * (16.0 / (r * r * r * r)) * u * u * (r - u) * (r - u)
    }

    pub fn deriv(&self, u: f64) -> f64 {
        if u <= 0.0 || u >= self.radius {
            return 0.0;
        }
        let r = self.radius;
        self.scale * (32.0 / (r * r * r * r)) * u * (r - u) * (r - 2.0 * u)
    }
}

/// Survival tail of Brownian motion absorbed at 0: the probability that the
/// motion started at `start > 0` has not been absorbed by `horizon` and sits
/// above `level > 0` there. By the reflection principle this is
/// `Φ((start−level)/√T) − Φ((−start−level)/√T)`.
pub fn bm_absorbed_tail(start: f64, level: f64, horizon: f64) -> f64 {
    assert!(start > 0.0 && level > 0.0 && horizon > 0.0);
    let s = horizon.sqrt();
    crate::numeric::norm_cdf((start - level) / s) - crate::numeric::norm_cdf((-start - level) / s)
}

/// `E f(|B|)` for Brownian motion reflected at 0, started at `start`, at time
/// `horizon`: the quadrature `∫₀^R f(u)·[φ_T(u−start) + φ_T(u+start)] du`
/// (the integrand vanishes beyond the support of `f`). Simpson's rule with
/// 4096 panels — the integrand is smooth on `[0, R]`, so the quadrature error
/// sits far below every tolerance used in the checks.
pub fn reflected_bm_expectation(f: &TestFunction, start: f64, horizon: f64) -> f64 {
    assert!(start >= 0.0 && horizon > 0.0);
    let panels = 4096;
    let h = f.radius() / panels as f64;
    let g = |u: f64| f.eval(u) * (gauss_density(u - start, horizon) + gauss_density(u + start, horizon));
    let mut sum = g(0.0) + g(f.radius());
    for j in 1..panels {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * g(j as f64 * h);
    }
    sum * h / 3.0
}

fn gauss_density(u: f64, var: f64) -> f64 {
    (-(u * u) / (2.0 * var)).exp() / (std::f64::consts::TAU * var).sqrt()
}

/// Time resolution of a sampler: the coarse grid itself, or a bridge-refined
/// path with `2^extra_levels` substeps per coarse step standing in for the
/// continuous law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Coarse,
    Reference { extra_levels: u32 },
}

impl Scheme {
    fn levels(self) -> u32 {
        match self {
            Scheme::Coarse => 0,
            Scheme::Reference { extra_levels } => extra_levels,
        }
    }
}

/// Noise stream for sample `index` of a check: a stable hash of the check
/// label, a parameter digest, and the index. Adding or reordering checks can
/// never perturb another check's draws.
pub fn sample_stream(label: &str, key: u64, index: u64) -> u64 {
    stable_hash64(&[label.as_bytes(), &key.to_le_bytes(), &index.to_le_bytes()])
}

fn param_key(words: &[u64]) -> u64 {
    let bytes: Vec<[u8; 8]> = words.iter().map(|w| w.to_le_bytes()).collect();
    let parts: Vec<&[u8]> = bytes.iter().map(|b| b.as_slice()).collect();
    stable_hash64(&parts)
}

fn ensure_samples(n: usize) -> Result<(), McError> {
    if n < 2 {
        return Err(McError::NotEnoughSamples { needed: 2, got: n });
    }
    Ok(())
}

/// Run `body` once per sample index, in parallel, collecting results in index
/// order (this, plus pairwise reduction downstream, is what makes the worker
/// count invisible in the output).
fn collect_samples_with<T, F>(n: usize, body: F) -> Result<Vec<T>, McError>
where
    T: Send,
    F: Fn(u64) -> Result<T, McError> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(body).collect()
}

fn collect_samples<F>(n: usize, body: F) -> Result<Vec<f64>, McError>
where
    F: Fn(u64) -> Result<f64, McError> + Sync + Send,
{
    collect_samples_with(n, body)
}

fn forward_noise(seed: u64, stream: u64, grid: &TimeGrid, levels: u32) -> NoisePath {
    let base = NoisePath::sample(seed, stream, grid.dt(), (0, grid.steps() as i64));
    if levels == 0 {
        base
    } else {
        base.refine(levels)
    }
}

/// The map of one noise window in the cheapest exact representation we have
/// for the model family. Both duality sides reduce to it: evaluating the map
/// runs the scheme forward, inverting it at a point is the dual one-point
/// motion (when the window is a time reversal) or the threshold start above
/// which the forward motion beats a level.
enum WindowMap {
    /// Constant coefficients: the latched window map is `y ↦ y + offset` on
    /// `[edge, ∞)` and 0 below, so two scalars carry the whole function.
    Shift { offset: f64, edge: f64 },
    Exact(MonotoneFn),
}

impl WindowMap {
    fn build(model: &CoefficientModel, noise: &NoisePath) -> Result<WindowMap, FlowError> {
        if let CoefficientModel::Constant { sigma, drift } = *model {
            let dt = noise.dt();
            let mut offset = 0.0_f64;
            let mut edge = 0.0_f64;
            for &dw in noise.increments() {
                offset += sigma * dw + drift * dt;
                // clamping at this step zeroes every start below -offset
                edge = edge.max(-offset);
            }
            return Ok(WindowMap::Shift { offset, edge });
        }
        Ok(WindowMap::Exact(exact_window_map(model, noise)?))
    }

    /// `inf { y ≥ 0 : map(y) > level }`; `+∞` when the map never exceeds it.
    fn inverse_at(&self, level: f64) -> f64 {
        match self {
            WindowMap::Shift { offset, edge } => edge.max(level - offset),
            WindowMap::Exact(m) => m.right_inverse_at(level).unwrap_or(f64::INFINITY),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            WindowMap::Shift { offset, edge } => {
                if x < *edge {
                    0.0
                } else {
                    x + offset
                }
            }
            WindowMap::Exact(m) => m.eval(x),
        }
    }
}

/// The dual one-point motion over `noise`'s window, started at `start`, when
/// `noise` is the time reversal of the dual's driving noise — equivalently,
/// for forward noise, the threshold start above which the absorbing motion
/// ends strictly above `start`. `+∞` when the window map never exceeds
/// `start` (never happens for the supported families off a null set).
pub fn window_inverse_at(
    model: &CoefficientModel,
    start: f64,
    noise: &NoisePath,
) -> Result<f64, FlowError> {
    Ok(WindowMap::build(model, noise)?.inverse_at(start))
}

/// Monte Carlo frequency of {absorbing one-point motion from `start` sits
/// strictly above `level` at the horizon}, with its binomial standard error.
pub fn estimate_tail_prob<C: Coefficients + ?Sized>(
    model: &C,
    level: f64,
    start: f64,
    grid: &TimeGrid,
    scheme: Scheme,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    ensure_samples(n_samples)?;
    let key = param_key(&[
        level.to_bits(),
        start.to_bits(),
        grid.steps() as u64,
        grid.dt().to_bits(),
        u64::from(scheme.levels()),
    ]);
    let indicators = collect_samples(n_samples, |i| {
        let noise = forward_noise(seed, sample_stream("tail-prob", key, i), grid, scheme.levels());
        let terminal = em_absorbing_terminal(model, start, &noise)?;
        Ok(if terminal > level { 1.0 } else { 0.0 })
    })?;
    Ok(McEstimate::from_samples(&indicators))
}

fn dual_value_samples(
    model: &CoefficientModel,
    f: &TestFunction,
    start: f64,
    grid: &TimeGrid,
    scheme: Scheme,
    n_samples: usize,
    seed: u64,
    label: &str,
) -> Result<Vec<f64>, McError> {
    let key = param_key(&[
        start.to_bits(),
        f.radius().to_bits(),
        grid.steps() as u64,
        grid.dt().to_bits(),
        u64::from(scheme.levels()),
    ]);
    collect_samples(n_samples, |i| {
        let fwd = forward_noise(seed, sample_stream(label, key, i), grid, scheme.levels());
        let x = window_inverse_at(model, start, &fwd.time_reverse())?;
        Ok(f.eval(x))
    })
}

/// Monte Carlo mean of `f` at the dual one-point motion from `start` at the
/// horizon. The motion is realized exactly as the right-continuous inverse of
/// the window map over the reversed driving noise, which exists in closed
/// piecewise-linear form for the `constant` and `affine` families; the other
/// families go through grid snapshots (`dual_flow`) with interpolation error,
/// a different accuracy regime, so this estimator rejects them.
pub fn estimate_dual_expectation(
    model: &CoefficientModel,
    f: &TestFunction,
    start: f64,
    grid: &TimeGrid,
    scheme: Scheme,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    ensure_samples(n_samples)?;
    let values =
        dual_value_samples(model, f, start, grid, scheme, n_samples, seed, "dual-expectation")?;
    Ok(McEstimate::from_samples(&values))
}

/// Both sides of the duality in law for one `(x, y)` pair, plus their
/// separation in combined standard errors.
#[derive(Debug, Clone, Copy)]
pub struct DualityEstimate {
    /// P(dual motion from `y` ends ≤ `x`).
    pub lhs: McEstimate,
    /// P(absorbing motion from `x` ends > `y`).
    pub rhs: McEstimate,
    pub z: f64,
}

fn siegmund_key(pairs: &[(f64, f64)], grid: &TimeGrid) -> u64 {
    let mut words = vec![grid.steps() as u64, grid.dt().to_bits()];
    for &(x, y) in pairs {
        words.push(x.to_bits());
        words.push(y.to_bits());
    }
    param_key(&words)
}

/// Per-sample duality indicators over a list of `(x, y)` pairs. The dual side
/// inverts one window map per sample and probes it at every pair; the primal
/// side runs the absorbing motion from every `x` on one shared noise window
/// per sample (a flow realization). The two sides draw from disjoint stream
/// families, so they are independent.
fn siegmund_sides(
    model: &CoefficientModel,
    pairs: &[(f64, f64)],
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
    dual_label: &str,
    primal_label: &str,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), McError> {
    let key = siegmund_key(pairs, grid);
    let dual_rows = collect_samples_with(n_samples, |i| {
        let fwd = forward_noise(seed, sample_stream(dual_label, key, i), grid, 0);
        let map = WindowMap::build(model, &fwd.time_reverse())?;
        Ok(pairs
            .iter()
            .map(|&(x, y)| if map.inverse_at(y) <= x { 1.0 } else { 0.0 })
            .collect::<Vec<f64>>())
    })?;
    let primal_rows = collect_samples_with(n_samples, |i| {
        let noise = forward_noise(seed, sample_stream(primal_label, key, i), grid, 0);
        pairs
            .iter()
            .map(|&(x, y)| {
                let terminal = em_absorbing_terminal(model, x, &noise)?;
                Ok(if terminal > y { 1.0 } else { 0.0 })
            })
            .collect::<Result<Vec<f64>, McError>>()
    })?;
    Ok((dual_rows, primal_rows))
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

/// Two-sided duality check, one marginal estimate per `(x, y)` pair: the dual
/// motion from `y` should end at or below `x` exactly as often as the
/// absorbing motion from `x` ends above `y`.
pub fn siegmund_check(
    model: &CoefficientModel,
    pairs: &[(f64, f64)],
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<DualityEstimate>, McError> {
    assert!(!pairs.is_empty(), "need at least one (x, y) pair");
    ensure_samples(n_samples)?;
    let (dual_rows, primal_rows) =
        siegmund_sides(model, pairs, grid, n_samples, seed, "siegmund-dual", "siegmund-primal")?;
    Ok((0..pairs.len())
        .map(|k| {
            let lhs = McEstimate::from_samples(&column(&dual_rows, k));
            let rhs = McEstimate::from_samples(&column(&primal_rows, k));
            DualityEstimate { lhs, rhs, z: lhs.z_against(&rhs) }
        })
        .collect())
}

/// Joint version of [`siegmund_check`]: compares P(all dual motions from the
/// `y`s end ≤ their `x`s) against P(all absorbing motions from the `x`s end >
/// their `y`s), each side evaluated on one realization per sample.
pub fn siegmund_joint_check(
    model: &CoefficientModel,
    pairs: &[(f64, f64)],
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<DualityEstimate, McError> {
    assert!(!pairs.is_empty(), "need at least one (x, y) pair");
    ensure_samples(n_samples)?;
    let (dual_rows, primal_rows) = siegmund_sides(
        model,
        pairs,
        grid,
        n_samples,
        seed,
        "siegmund-joint-dual",
        "siegmund-joint-primal",
    )?;
    let all = |rows: Vec<Vec<f64>>| -> Vec<f64> {
        rows.into_iter().map(|r| if r.iter().all(|&v| v == 1.0) { 1.0 } else { 0.0 }).collect()
    };
    let lhs = McEstimate::from_samples(&all(dual_rows));
    let rhs = McEstimate::from_samples(&all(primal_rows));
    Ok(DualityEstimate { lhs, rhs, z: lhs.z_against(&rhs) })
}

/// Seesaw agreement on shared realizations: computing both duality indicators
/// from the *same* window map — inverse on one side, direct evaluation on the
/// other — must give identical answers unless the map hits a threshold value
/// exactly. Returns the number of disagreeing (sample, pair) combinations;
/// anything above 0 on continuous-law models is a bug.
pub fn siegmund_same_realization_mismatches(
    model: &CoefficientModel,
    pairs: &[(f64, f64)],
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<usize, McError> {
    let key = siegmund_key(pairs, grid);
    let per_sample = collect_samples(n_samples, |i| {
        let noise = forward_noise(seed, sample_stream("siegmund-structural", key, i), grid, 0);
        let map = WindowMap::build(model, &noise)?;
        let mut bad = 0usize;
        for &(x, y) in pairs {
            let from_inverse = map.inverse_at(y) <= x;
            let from_value = map.eval(x) > y;
            if from_inverse != from_value {
                bad += 1;
            }
        }
        Ok(bad as f64)
    })?;
    Ok(pairwise_sum(&per_sample) as usize)
}

fn trapezoid_nodes(radius: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = radius / panels as f64;
    (0..=panels)
        .map(|j| {
            let w = if j == 0 || j == panels { 0.5 * h } else { h };
            (j as f64 * h, w)
        })
        .collect()
}

/// Two independent estimates of the same quantity: the mean of `f` at the
/// inverses evaluated at `x` (left), and `−∫₀^R f′(y)·P(Φ(y) > x) dy` with the
/// tail frequency taken over the second ensemble and the integral done by a
/// 1000-panel trapezoid rule per member (right). Pass disjoint ensembles drawn
/// from the same law; the two estimates then carry honest standard errors.
/// Members whose inverse at `x` is unbounded contribute `f(+∞) = 0`.
pub fn inverse_expectation_identity(
    lhs_ensemble: &[MonotoneFn],
    rhs_ensemble: &[MonotoneFn],
    f: &TestFunction,
    x: f64,
) -> (McEstimate, McEstimate) {
    assert!(lhs_ensemble.len() >= 2 && rhs_ensemble.len() >= 2);
    let lhs_vals: Vec<f64> = lhs_ensemble
        .iter()
        .map(|m| f.eval(m.right_inverse_at(x).unwrap_or(f64::INFINITY)))
        .collect();
    let nodes = trapezoid_nodes(f.radius(), 1000);
    let rhs_vals: Vec<f64> = rhs_ensemble
        .iter()
        .map(|m| {
            let mut acc = 0.0;
            for &(y, w) in &nodes {
                if m.eval(y) > x {
                    acc -= w * f.deriv(y);
                }
            }
            acc
        })
        .collect();
    (McEstimate::from_samples(&lhs_vals), McEstimate::from_samples(&rhs_vals))
}

fn coupled_dual_diff_samples(
    model: &CoefficientModel,
    f: &TestFunction,
    start: f64,
    grid: &TimeGrid,
    extra_levels: u32,
    n_samples: usize,
    seed: u64,
    label: &str,
) -> Result<Vec<f64>, McError> {
    let key = param_key(&[
        start.to_bits(),
        f.radius().to_bits(),
        grid.steps() as u64,
        grid.dt().to_bits(),
        u64::from(extra_levels),
    ]);
    collect_samples(n_samples, |i| {
        let base = forward_noise(seed, sample_stream(label, key, i), grid, 0);
        let coarse = window_inverse_at(model, start, &base.time_reverse())?;
        let fine = window_inverse_at(model, start, &base.refine(extra_levels).time_reverse())?;
        Ok(f.eval(fine) - f.eval(coarse))
    })
}

/// Both sides of the weak-error identity with their separation in combined
/// standard errors.
#[derive(Debug, Clone, Copy)]
pub struct WeakIdentityReport {
    /// `E f(dual, reference) − E f(dual, coarse)`, coupled per sample.
    pub lhs: McEstimate,
    /// `∫₀^R f′(y)·(coarse tail − reference tail)(y) dy`, coupled per sample.
    pub rhs: McEstimate,
    pub z: f64,
}

/// Statistical check of the weak-error identity: the gap between the
/// reference-dual and coarse-dual expectations of `f` must equal the
/// `f′`-weighted integral of the corresponding forward tail gap. Each side is
/// estimated on its own stream family (independent sample sets); within a
/// sample, coarse and reference share the refined base noise, which keeps both
/// variances small. The forward tails are handled per sample through the
/// threshold-start representation: the motion from `y` beats `x` iff `y` lies
/// above the window map's inverse at `x`.
pub fn weak_error_identity_check(
    model: &CoefficientModel,
    f: &TestFunction,
    start: f64,
    grid: &TimeGrid,
    extra_levels: u32,
    n_samples: usize,
    seed: u64,
) -> Result<WeakIdentityReport, McError> {
    ensure_samples(n_samples)?;
    let lhs_vals = coupled_dual_diff_samples(
        model,
        f,
        start,
        grid,
        extra_levels,
        n_samples,
        seed,
        "weak-dual",
    )?;
    let key = param_key(&[
        start.to_bits(),
        f.radius().to_bits(),
        grid.steps() as u64,
        grid.dt().to_bits(),
        u64::from(extra_levels),
    ]);
    let nodes = trapezoid_nodes(f.radius(), 1000);
    let rhs_vals = collect_samples(n_samples, |i| {
        let base = forward_noise(seed, sample_stream("weak-primal", key, i), grid, 0);
        let theta_coarse = window_inverse_at(model, start, &base)?;
        let theta_ref = window_inverse_at(model, start, &base.refine(extra_levels))?;
        let mut acc = 0.0;
        for &(y, w) in &nodes {
            let coarse_tail = y > theta_coarse;
            let ref_tail = y > theta_ref;
            if coarse_tail != ref_tail {
                acc += w * f.deriv(y) * if coarse_tail { 1.0 } else { -1.0 };
            }
        }
        Ok(acc)
    })?;
    let lhs = McEstimate::from_samples(&lhs_vals);
    let rhs = McEstimate::from_samples(&rhs_vals);
    Ok(WeakIdentityReport { lhs, rhs, z: lhs.z_against(&rhs) })
}

/// One grid size of a rate fit: the signed weak-error estimate against the
/// reference proxy, with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct RateLevel {
    pub steps: usize,
    pub error: f64,
    pub std_err: f64,
}

/// Outcome of [`weak_rate_fit`].
#[derive(Debug, Clone)]
pub enum RateFit {
    /// Least-squares slope of `log |error|` against `log n`, with a
    /// percentile-bootstrap 95% band.
    Slope { slope: f64, ci_low: f64, ci_high: f64, levels: Vec<RateLevel> },
    /// Some level's error is statistically indistinguishable from zero, so
    /// its logarithm — and any slope through it — would be noise.
    ResolutionInsufficient { levels: Vec<RateLevel> },
}

/// Least-squares slope of `ln(err)` against `ln(n)` through `(n, err)` points.
pub fn fit_log_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2, "need at least two points for a slope");
    let lx: Vec<f64> = points.iter().map(|&(n, _)| n.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|&(_, e)| e.ln()).collect();
    let mx = pairwise_sum(&lx) / lx.len() as f64;
    let my = pairwise_sum(&ly) / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

const BOOTSTRAP_ROUNDS: usize = 400;

/// Fits the empirical weak convergence rate: for each grid size in
/// `steps_list`, estimates the weak error of the coarse dual against the
/// reference dual (coupled per sample, `2^extra_levels` substeps), then
/// regresses `log |error|` on `log n`. The 95% band comes from a percentile
/// bootstrap that resamples each level's per-sample differences with
/// counter-based indices, so the whole fit is reproducible bit for bit.
pub fn weak_rate_fit(
    model: &CoefficientModel,
    f: &TestFunction,
    start: f64,
    horizon: f64,
    steps_list: &[usize],
    extra_levels: u32,
    n_samples: usize,
    seed: u64,
) -> Result<RateFit, McError> {
    if steps_list.len() < 4 {
        return Err(McError::NotEnoughLevels { needed: 4, got: steps_list.len() });
    }
    ensure_samples(n_samples)?;
    let mut levels = Vec::with_capacity(steps_list.len());
    let mut per_level_diffs = Vec::with_capacity(steps_list.len());
    for &n in steps_list {
        let grid = TimeGrid::new(horizon, n)?;
        let diffs = coupled_dual_diff_samples(
            model,
            f,
            start,
            &grid,
            extra_levels,
            n_samples,
            seed,
            "rate-level",
        )?;
        let est = McEstimate::from_samples(&diffs);
        levels.push(RateLevel { steps: n, error: est.mean, std_err: est.std_err });
        per_level_diffs.push(diffs);
    }
    if levels.iter().any(|l| l.error == 0.0 || l.error.abs() < 2.0 * l.std_err) {
        return Ok(RateFit::ResolutionInsufficient { levels });
    }
    let points: Vec<(f64, f64)> =
        levels.iter().map(|l| (l.steps as f64, l.error.abs())).collect();
    let slope = fit_log_slope(&points);

    let boot_key = param_key(&[
        start.to_bits(),
        f.radius().to_bits(),
        horizon.to_bits(),
        u64::from(extra_levels),
        n_samples as u64,
    ]);
    let mut slopes = collect_samples(BOOTSTRAP_ROUNDS, |b| {
        let resampled: Vec<(f64, f64)> = per_level_diffs
            .iter()
            .zip(steps_list)
            .map(|(diffs, &n)| {
                let state = sample_stream("rate-bootstrap", boot_key, b ^ (n as u64) << 32);
                let m = diffs.len() as u64;
                let mut sum = 0.0;
                for j in 0..m {
                    sum += diffs[(splitmix64(state ^ j) % m) as usize];
                }
                // a resampled mean of exactly 0 has measure zero; floor it so
                // the log stays finite rather than poisoning the percentile
                (n as f64, (sum / m as f64).abs().max(1e-300))
            })
            .collect();
        Ok(fit_log_slope(&resampled))
    })?;
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo_idx = (0.025 * (BOOTSTRAP_ROUNDS - 1) as f64).floor() as usize;
    let hi_idx = (0.975 * (BOOTSTRAP_ROUNDS - 1) as f64).ceil() as usize;
    Ok(RateFit::Slope { slope, ci_low: slopes[lo_idx], ci_high: slopes[hi_idx], levels })
}

/// Result of a pathwise bound check.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub n_samples: usize,
    /// Samples where the left side exceeded the right by more than the
    /// tolerance.
    pub violations: usize,
    /// Per-sample `(lhs, rhs)` pairs, in sample order.
    pub samples: Vec<(f64, f64)>,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    /// Whether the bound also holds between the sample means.
    pub expectation_holds: bool,
}

fn bound_report(samples: Vec<(f64, f64)>, tolerance: f64) -> BoundReport {
    let lhs: Vec<f64> = samples.iter().map(|&(l, _)| l).collect();
    let rhs: Vec<f64> = samples.iter().map(|&(_, r)| r).collect();
    let violations = samples.iter().filter(|&&(l, r)| l > r + tolerance).count();
    let mean_lhs = pairwise_sum(&lhs) / lhs.len() as f64;
    let mean_rhs = pairwise_sum(&rhs) / rhs.len() as f64;
    BoundReport {
        n_samples: samples.len(),
        violations,
        samples,
        mean_lhs,
        mean_rhs,
        expectation_holds: mean_lhs <= mean_rhs + tolerance,
    }
}

/// Sup distance between two monotone functions on `[0, cap]`: the exact
/// breakpoint scan plus a fixed 1000-point grid as belt and braces.
fn sup_distance(a: &MonotoneFn, b: &MonotoneFn, cap: f64) -> f64 {
    let mut m = sup_metric(a, b, cap);
    for j in 0..=1000 {
        let x = cap * j as f64 / 1000.0;
        m = m.max((a.eval(x) - b.eval(x)).abs());
    }
    m
}

type BoundSides = (f64, f64);

/// Shared sampler for the strong-error bounds: couples a coarse flow and a
/// `2^extra_levels`-refined reference flow on the same noise, inverts both
/// full-window snapshots, and hands `(reference dual, coarse dual, reference
/// snapshot, coarse snapshot)` to `sides` for the bound arithmetic.
fn bound_samples<C, F>(
    model: &C,
    initial_points: &[f64],
    grid: &TimeGrid,
    extra_levels: u32,
    n_samples: usize,
    seed: u64,
    label: &str,
    sides: F,
) -> Result<Vec<BoundSides>, McError>
where
    C: Coefficients + ?Sized,
    F: Fn(&MonotoneFn, &MonotoneFn, &MonotoneFn, &MonotoneFn) -> BoundSides + Sync,
{
    ensure_samples(n_samples)?;
    let mut words = vec![grid.steps() as u64, grid.dt().to_bits(), u64::from(extra_levels)];
    words.extend(initial_points.iter().map(|p| p.to_bits()));
    let key = param_key(&words);
    collect_samples_with(n_samples, |i| {
        let base = forward_noise(seed, sample_stream(label, key, i), grid, 0);
        let coarse = em_absorbing_flow(model, grid, initial_points, &base)?;
        let refined = reference_flow(model, grid, initial_points, &base, extra_levels)?;
        let coarse_snap = coarse.snapshot(grid.steps());
        let ref_snap = refined.snapshot(grid.steps());
        let coarse_dual = coarse_snap.right_inverse_fn().map_err(FlowError::from)?;
        let ref_dual = ref_snap.right_inverse_fn().map_err(FlowError::from)?;
        Ok(sides(&ref_dual, &coarse_dual, ref_snap, coarse_snap))
    })
}

/// Pathwise check of the inversion-stability bound on coupled coarse and
/// reference flows: per sample,
/// `sup_{[0,cap]} |dual_ref − dual_coarse|` must stay below
/// `(1 + max slope of dual_ref on [0,cap]) · sup_{[0,m]} |flow_ref − flow_coarse|`
/// with `m = min(dual_ref(cap), dual_coarse(cap))`. Reports per-sample sides
/// and the fraction of violations beyond `tolerance`.
pub fn strong_error_bound_check<C: Coefficients + ?Sized>(
    model: &C,
    cap: f64,
    initial_points: &[f64],
    grid: &TimeGrid,
    extra_levels: u32,
    n_samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<BoundReport, McError> {
    assert!(cap > 0.0);
    let samples = bound_samples(
        model,
        initial_points,
        grid,
        extra_levels,
        n_samples,
        seed,
        "strong-bound",
        |ref_dual, coarse_dual, ref_snap, coarse_snap| {
            let lhs = sup_distance(ref_dual, coarse_dual, cap);
            let m = ref_dual.eval(cap).min(coarse_dual.eval(cap));
            let forward_gap = if m > 0.0 {
                sup_distance(ref_snap, coarse_snap, m)
            } else {
                (ref_snap.eval(0.0) - coarse_snap.eval(0.0)).abs()
            };
            let rhs = (1.0 + ref_dual.max_slope_on(cap)) * forward_gap;
            (lhs, rhs)
        },
    )?;
    Ok(bound_report(samples, tolerance))
}

/// Variant of [`strong_error_bound_check`] with the dual-slope factor replaced
/// by the a-priori drift bound `1 + exp(drift_slope_bound · horizon)`; only
/// valid for constant diffusion coefficients, which the function checks by
/// probing `σ′` at every initial point.
pub fn gronwall_bound_check<C: Coefficients + ?Sized>(
    model: &C,
    drift_slope_bound: f64,
    cap: f64,
    initial_points: &[f64],
    grid: &TimeGrid,
    extra_levels: u32,
    n_samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<BoundReport, McError> {
    assert!(cap > 0.0 && drift_slope_bound >= 0.0);
    for &x in initial_points {
        let slope = model.sigma_prime(x);
        if slope != 0.0 {
            return Err(McError::SigmaNotConstant { x, slope });
        }
    }
    let factor = 1.0 + (drift_slope_bound * grid.horizon()).exp();
    let samples = bound_samples(
        model,
        initial_points,
        grid,
        extra_levels,
        n_samples,
        seed,
        "gronwall-bound",
        |ref_dual, coarse_dual, ref_snap, coarse_snap| {
            let lhs = sup_distance(ref_dual, coarse_dual, cap);
            let m = ref_dual.eval(cap).min(coarse_dual.eval(cap));
            let forward_gap = if m > 0.0 {
                sup_distance(ref_snap, coarse_snap, m)
            } else {
                (ref_snap.eval(0.0) - coarse_snap.eval(0.0)).abs()
            };
            (lhs, factor * forward_gap)
        },
    )?;
    Ok(bound_report(samples, tolerance))
}

/// Monte Carlo frequency of {dual one-point motion from `start` sits exactly
/// at 0 at the step closest to time `at`}. Discrete dual paths hold at 0 with
/// positive probability; the frequency must shrink as the grid refines, since
/// the continuous law puts no mass there.
pub fn zero_occupation_check(
    model: &CoefficientModel,
    start: f64,
    at: f64,
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    ensure_samples(n_samples)?;
    let window = (at / grid.dt()).round() as i64;
    assert!(
        window >= 1 && window <= grid.steps() as i64,
        "time {at} falls outside the grid horizon"
    );
    let key = param_key(&[
        start.to_bits(),
        at.to_bits(),
        grid.steps() as u64,
        grid.dt().to_bits(),
    ]);
    let indicators = collect_samples(n_samples, |i| {
        let fwd = NoisePath::sample(seed, sample_stream("zero-occupation", key, i), grid.dt(), (0, window));
        let motion = window_inverse_at(model, start, &fwd.time_reverse())?;
        Ok(if motion == 0.0 { 1.0 } else { 0.0 })
    })?;
    Ok(McEstimate::from_samples(&indicators))
}

/// One row of a verification report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check: String,
    pub fixture: String,
    pub param_json: String,
    pub lhs: f64,
    pub rhs: f64,
    pub std_err: f64,
    pub z: f64,
    pub pass: bool,
}

/// Render report rows as CSV under the fixed header
/// `check,fixture,param_json,lhs,rhs,std_err,z,pass`. Floats carry 17
/// significant digits so parsing the file back reproduces the exact bits.
pub fn render_report_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("check,fixture,param_json,lhs,rhs,std_err,z,pass\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&row.check),
            csv_field(&row.fixture),
            csv_field(&row.param_json),
            fmt_g17(row.lhs),
            fmt_g17(row.rhs),
            fmt_g17(row.std_err),
            fmt_g17(row.z),
            row.pass,
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::dual_transform;
    use crate::flow::em_reflected_path;

    fn bm() -> CoefficientModel {
        CoefficientModel::constant(1.0, 0.0).unwrap()
    }

    fn grid(horizon: f64, steps: usize) -> TimeGrid {
        TimeGrid::new(horizon, steps).unwrap()
    }

    #[test]
    fn bump_shape() {
        let f = TestFunction::bump(2.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(2.0), 0.0);
        assert_eq!(f.eval(5.0), 0.0);
        assert_eq!(f.eval(-1.0), 0.0);
        assert_eq!(f.eval(f64::INFINITY), 0.0);
        assert_eq!(f.eval(1.0), 1.0); // peak, exact for a power-of-two radius
        assert!(f.eval(0.3) > 0.0 && f.eval(0.3) < 1.0);
        let z = TestFunction::zero();
        assert_eq!(z.eval(0.5), 0.0);
        assert_eq!(z.deriv(0.5), 0.0);
    }

    #[test]
    fn bump_derivative_matches_finite_differences() {
        let f = TestFunction::bump(2.0);
        let h = 1e-6;
        for &u in &[0.1, 0.37, 0.5, 1.0, 1.3, 1.9] {
            let fd = (f.eval(u + h) - f.eval(u - h)) / (2.0 * h);
            let an = f.deriv(u);
            let denom = an.abs().max(1e-3);
            assert!(
                ((fd - an) / denom).abs() < 1e-5,
                "u = {u}: finite difference {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn brownian_tail_closed_form_matches_frozen_table() {
        // (start, level) → probability, frozen from an independent
        // high-precision evaluation of the reflection-principle formula.
        let table = [
            (0.25, 0.25, 0.19146246127401312),
            (0.25, 0.5, 0.17466632194020809),
            (0.25, 1.0, 0.12097757871001293),
            (0.5, 0.25, 0.37207897330605549),
            (0.5, 0.5, 0.34134474606854293),
            (0.5, 1.0, 0.2417303374571288),
            (1.0, 0.25, 0.6677228739562765),
            (1.0, 0.5, 0.62465526000515503),
            (1.0, 1.0, 0.47724986805182079),
        ];
        for (start, level, want) in table {
            let got = bm_absorbed_tail(start, level, 1.0);
            assert!(
                ((got - want) / want).abs() < 1e-14,
                "({start},{level}): got {got:.17e}, want {want:.17e}"
            );
        }
    }

    #[test]
    fn brownian_tail_limits() {
        // level → 0: no absorption constraint beyond staying positive
        let got = bm_absorbed_tail(0.7, 1e-12, 1.0);
        let want = 2.0 * crate::numeric::norm_cdf(0.7) - 1.0;
        assert!((got - want).abs() < 1e-9);
        // start → 0: immediate absorption
        assert!(bm_absorbed_tail(1e-12, 0.5, 1.0) < 1e-9);
    }

    #[test]
    fn reflected_expectation_matches_frozen_value() {
        let f = TestFunction::bump(2.0);
        let got = reflected_bm_expectation(&f, 0.5, 1.0);
        assert!(
            (got - 0.50561515907058441).abs() < 1e-12,
            "quadrature drifted: {got:.17e}"
        );
    }

    #[test]
    fn tail_estimator_is_deterministic_and_worker_independent() {
        let g = grid(1.0, 32);
        let run = || {
            estimate_tail_prob(&bm(), 0.5, 0.5, &g, Scheme::Coarse, 4000, 42).unwrap()
        };
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        let pooled = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(serial.mean.to_bits(), pooled.mean.to_bits());
        assert_eq!(serial.std_err.to_bits(), pooled.std_err.to_bits());
        assert_eq!(serial, run());
    }

    #[test]
    fn tail_estimator_from_zero_start_is_zero() {
        let est =
            estimate_tail_prob(&bm(), 0.5, 0.0, &grid(1.0, 16), Scheme::Coarse, 500, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn tail_estimator_agrees_with_closed_form_on_fine_grids() {
        // 4096 coarse steps keep the barrier-monitoring bias (~σ√dt scale)
        // far inside the 4·SE statistical band at this sample count.
        let g = grid(1.0, 4096);
        let est = estimate_tail_prob(&bm(), 0.5, 0.5, &g, Scheme::Coarse, 3000, 42).unwrap();
        let want = bm_absorbed_tail(0.5, 0.5, 1.0);
        assert!(
            (est.mean - want).abs() <= 4.0 * est.std_err,
            "estimate {} ± {} vs closed form {want}",
            est.mean,
            est.std_err
        );

        // nearly-sure survival: start far above the level on a short horizon
        let g = grid(0.05, 64);
        let est = estimate_tail_prob(&bm(), 0.5, 5.0, &g, Scheme::Coarse, 1500, 42).unwrap();
        let want = bm_absorbed_tail(5.0, 0.5, 0.05);
        assert!(est.mean >= 0.999);
        assert!((est.mean - want).abs() <= 4.0 * est.std_err + 1e-6);
    }

    #[test]
    fn dual_expectation_is_the_reflected_recursion_for_constant_models() {
        // Same streams as the estimator, driven through the reflected
        // clamped recursion with the conjugate coefficients on the reversed
        // window: the two constructions must agree sample by sample.
        let model = CoefficientModel::constant(1.0, -0.5).unwrap();
        let dual = dual_transform(&model);
        let f = TestFunction::bump(2.0);
        let g = grid(1.0, 16);
        let n = 400;
        let est =
            estimate_dual_expectation(&model, &f, 0.6, &g, Scheme::Coarse, n, 42).unwrap();
        let key = param_key(&[
            0.6_f64.to_bits(),
            f.radius().to_bits(),
            g.steps() as u64,
            g.dt().to_bits(),
            0,
        ]);
        let mut manual = Vec::with_capacity(n);
        for i in 0..n as u64 {
            let fwd = forward_noise(42, sample_stream("dual-expectation", key, i), &g, 0);
            let path = em_reflected_path(&dual, 0.6, &fwd).unwrap();
            manual.push(f.eval(path.terminal()));
        }
        let want = McEstimate::from_samples(&manual);
        assert!(
            (est.mean - want.mean).abs() < 1e-12,
            "dual estimator {} vs reflected recursion {}",
            est.mean,
            want.mean
        );
    }

    #[test]
    fn dual_expectation_of_zero_function_is_zero() {
        let est = estimate_dual_expectation(
            &bm(),
            &TestFunction::zero(),
            0.5,
            &grid(1.0, 8),
            Scheme::Coarse,
            200,
            7,
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn dual_expectation_matches_reflected_brownian_quadrature() {
        let f = TestFunction::bump(2.0);
        let g = grid(1.0, 4096);
        let est =
            estimate_dual_expectation(&bm(), &f, 0.5, &g, Scheme::Coarse, 2000, 42).unwrap();
        let want = reflected_bm_expectation(&f, 0.5, 1.0);
        assert!(
            (est.mean - want).abs() <= 4.0 * est.std_err,
            "estimate {} ± {} vs quadrature {want}",
            est.mean,
            est.std_err
        );
    }

    #[test]
    fn dual_expectation_rejects_nonaffine_families() {
        let model = CoefficientModel::sqrt_diffusion(1.0, 0.0, 0.0).unwrap();
        let err = estimate_dual_expectation(
            &model,
            &TestFunction::bump(2.0),
            0.5,
            &grid(1.0, 8),
            Scheme::Coarse,
            100,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, McError::Flow(FlowError::ExactChainUnsupported)));
    }

    #[test]
    fn window_inverse_matches_the_exact_chain() {
        let models = [bm(), CoefficientModel::affine(0.4, 1.0, -0.3, 0.2).unwrap()];
        for model in &models {
            for stream in 0..20 {
                let noise = NoisePath::sample(9, stream, 0.125, (0, 8));
                let map = exact_window_map(model, &noise).unwrap();
                for &p in &[0.0, 0.3, 0.8, 1.7] {
                    let fast = window_inverse_at(model, p, &noise).unwrap();
                    let slow = map.right_inverse_at(p).unwrap_or(f64::INFINITY);
                    assert!(
                        (fast - slow).abs() <= 1e-12 * slow.max(1.0),
                        "stream {stream}, level {p}: {fast} vs {slow}"
                    );
                }
            }
        }
    }

    #[test]
    fn siegmund_same_realization_never_disagrees() {
        let pairs = [(0.25, 0.5), (0.5, 0.5), (1.0, 0.25)];
        let n = siegmund_same_realization_mismatches(&bm(), &pairs, &grid(1.0, 32), 500, 42)
            .unwrap();
        assert_eq!(n, 0);
        let affine = CoefficientModel::affine(0.3, 1.0, -0.2, 0.1).unwrap();
        let n = siegmund_same_realization_mismatches(&affine, &pairs, &grid(1.0, 16), 200, 42)
            .unwrap();
        assert_eq!(n, 0);
    }

    #[test]
    fn siegmund_sides_agree_within_statistics() {
        let pairs = [(0.5, 0.5), (0.25, 0.5)];
        let ests = siegmund_check(&bm(), &pairs, &grid(1.0, 16), 4000, 42).unwrap();
        assert_eq!(ests.len(), 2);
        for (k, est) in ests.iter().enumerate() {
            assert!(est.z.abs() <= 5.0, "pair {k}: z = {}", est.z);
            assert!(est.lhs.mean > 0.0 && est.lhs.mean < 1.0);
        }
        let joint = siegmund_joint_check(&bm(), &pairs, &grid(1.0, 16), 4000, 42).unwrap();
        assert!(joint.z.abs() <= 5.0, "joint z = {}", joint.z);
        // the joint event is smaller than each marginal
        assert!(joint.lhs.mean <= ests[0].lhs.mean);
        assert!(joint.lhs.mean <= ests[1].lhs.mean);
    }

    #[test]
    fn inverse_expectation_identity_on_the_identity_ensemble() {
        let f = TestFunction::bump(2.0);
        let ensemble = vec![MonotoneFn::identity(); 8];
        let (lhs, rhs) = inverse_expectation_identity(&ensemble, &ensemble, &f, 0.8);
        // averaging eight identical samples rounds the mean by an ulp
        assert!((lhs.mean - f.eval(0.8)).abs() <= 1e-15);
        assert!(lhs.std_err <= 1e-15);
        assert!(rhs.std_err <= 1e-15);
        // trapezoid error is dominated by the indicator kink at y = x: O(panel width)
        assert!(
            (rhs.mean - f.eval(0.8)).abs() < 3e-3,
            "rhs {} vs f(x) {}",
            rhs.mean,
            f.eval(0.8)
        );
    }

    #[test]
    fn inverse_expectation_identity_on_a_random_step_ensemble() {
        // Step functions with counter-based random knots/values and a linear
        // tail; the identity must hold between two disjoint ensembles.
        let f = TestFunction::bump(2.0);
        let build = |index: u64| -> MonotoneFn {
            let noise = NoisePath::sample(11, index, 1.0, (0, 4));
            let inc = noise.increments();
            let k1 = 0.3 + 0.2 * inc[0].abs().min(2.0);
            let k2 = k1 + 0.3 + 0.2 * inc[3].abs().min(2.0);
            let v1 = 0.4 + 0.3 * inc[1].abs().min(2.0);
            let v2 = v1 + 0.5 * inc[2].abs().min(2.0);
            MonotoneFn::new(vec![0.0, k1, k2], vec![0.0, v1, v2], vec![0.0, 0.0], 1.0).unwrap()
        };
        let lhs_ensemble: Vec<MonotoneFn> = (0..800).map(build).collect();
        let rhs_ensemble: Vec<MonotoneFn> = (800..1600).map(build).collect();
        let (lhs, rhs) = inverse_expectation_identity(&lhs_ensemble, &rhs_ensemble, &f, 0.9);
        let gap = (lhs.mean - rhs.mean).abs();
        let band = 4.0 * lhs.std_err.hypot(rhs.std_err) + 3e-3;
        assert!(gap <= band, "lhs {} rhs {} gap {gap} band {band}", lhs.mean, rhs.mean);
    }

    #[test]
    fn weak_identity_without_refinement_is_exactly_zero() {
        let report = weak_error_identity_check(
            &bm(),
            &TestFunction::bump(2.0),
            0.5,
            &grid(1.0, 8),
            0,
            300,
            42,
        )
        .unwrap();
        assert_eq!(report.lhs.mean, 0.0);
        assert_eq!(report.rhs.mean, 0.0);
        assert_eq!(report.z, 0.0);
    }

    #[test]
    fn weak_identity_holds_for_brownian_smoke() {
        let report = weak_error_identity_check(
            &bm(),
            &TestFunction::bump(2.0),
            0.5,
            &grid(1.0, 8),
            4,
            5000,
            42,
        )
        .unwrap();
        assert!(report.z.abs() <= 5.0, "z = {}", report.z);
        // coarse duals see a genuinely different law, so the gap is nonzero
        assert!(report.lhs.mean.abs() > 2.0 * report.lhs.std_err);
    }

    #[test]
    fn log_slope_fit_recovers_an_artificial_rate() {
        let points: Vec<(f64, f64)> =
            [4.0, 8.0, 16.0, 32.0, 64.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(-0.5))).collect();
        assert!((fit_log_slope(&points) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_reports_insufficient_resolution_on_the_zero_function() {
        let fit = weak_rate_fit(
            &bm(),
            &TestFunction::zero(),
            0.5,
            1.0,
            &[4, 8, 16, 32],
            3,
            200,
            42,
        )
        .unwrap();
        assert!(matches!(fit, RateFit::ResolutionInsufficient { .. }));
        let err = weak_rate_fit(
            &bm(),
            &TestFunction::bump(2.0),
            0.5,
            1.0,
            &[4, 8],
            3,
            200,
            42,
        )
        .unwrap_err();
        assert!(matches!(err, McError::NotEnoughLevels { .. }));
    }

    #[test]
    fn rate_fit_smoke_and_ci_scaling() {
        let run = |n_samples: usize| {
            weak_rate_fit(
                &bm(),
                &TestFunction::bump(2.0),
                0.5,
                1.0,
                &[4, 8, 16, 32],
                4,
                n_samples,
                42,
            )
            .unwrap()
        };
        let (slope, lo1, hi1) = match run(5000) {
            RateFit::Slope { slope, ci_low, ci_high, .. } => (slope, ci_low, ci_high),
            RateFit::ResolutionInsufficient { levels } => {
                panic!("resolution should suffice at 5e3 samples: {levels:?}")
            }
        };
        assert!((-1.0..=-0.1).contains(&slope), "slope = {slope}");
        assert!(lo1 <= slope && slope <= hi1);
        let (lo2, hi2) = match run(10_000) {
            RateFit::Slope { ci_low, ci_high, .. } => (ci_low, ci_high),
            RateFit::ResolutionInsufficient { .. } => unreachable!(),
        };
        let ratio = (hi2 - lo2) / (hi1 - lo1);
        // doubling the samples should shrink the band roughly by 1/√2
        assert!((0.35..=1.0).contains(&ratio), "CI width ratio {ratio}");
    }

    #[test]
    fn strong_bound_without_refinement_is_degenerate() {
        let points = crate::flow::geometric_grid(1e-3, 8.0, 33).unwrap();
        let report =
            strong_error_bound_check(&bm(), 1.0, &points, &grid(1.0, 8), 0, 50, 42, 1e-6)
                .unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.expectation_holds);
        for &(l, r) in &report.samples {
            assert_eq!(l, 0.0);
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn strong_bound_holds_on_brownian_smoke() {
        let points = crate::flow::geometric_grid(1e-3, 8.0, 33).unwrap();
        let report =
            strong_error_bound_check(&bm(), 1.0, &points, &grid(1.0, 8), 3, 50, 42, 1e-6)
                .unwrap();
        assert_eq!(report.violations, 0, "samples: {:?}", report.samples);
        assert!(report.expectation_holds);
        assert!(report.mean_lhs > 0.0);
    }

    #[test]
    fn gronwall_bound_rejects_state_dependent_sigma() {
        let model = CoefficientModel::sqrt_diffusion(1.0, 0.0, 0.5).unwrap();
        let points = [0.5, 1.0, 2.0];
        let err =
            gronwall_bound_check(&model, 1.0, 1.0, &points, &grid(1.0, 8), 2, 50, 42, 1e-6)
                .unwrap_err();
        assert!(matches!(err, McError::SigmaNotConstant { .. }));
    }

    #[test]
    fn gronwall_bound_holds_for_drifted_brownian_smoke() {
        let model = CoefficientModel::constant(1.0, -0.3).unwrap();
        let points = crate::flow::geometric_grid(1e-3, 8.0, 33).unwrap();
        let report =
            gronwall_bound_check(&model, 0.0, 1.0, &points, &grid(1.0, 8), 3, 50, 42, 1e-6)
                .unwrap();
        assert_eq!(report.violations, 0, "samples: {:?}", report.samples);
        assert!(report.expectation_holds);
    }

    #[test]
    fn zero_occupation_trivial_and_frozen_fixtures() {
        // far start, short horizon: the dual cannot reach 0
        let est = zero_occupation_check(&bm(), 10.0, 1.0, &grid(1.0, 8), 200, 42).unwrap();
        assert_eq!(est.mean, 0.0);
        // frozen fixture: start 0.1, full horizon; frequency near 0.19 at n=8
        let est = zero_occupation_check(&bm(), 0.1, 1.0, &grid(1.0, 8), 10_000, 42).unwrap();
        assert!(
            (est.mean - 0.1906).abs() <= 4.0 * (est.std_err + 0.0013),
            "frequency {} ± {}",
            est.mean,
            est.std_err
        );
    }

    #[test]
    fn report_csv_renders_quoted_fields_and_exact_floats() {
        let rows = vec![
            CheckRow {
                check: "siegmund".into(),
                fixture: "brownian".into(),
                param_json: r#"{"x":0.25,"y":0.5}"#.into(),
                lhs: 0.5,
                rhs: 0.25,
                std_err: 0.001,
                z: -1.5,
                pass: true,
            },
            CheckRow {
                check: "weak\"identity".into(),
                fixture: "affine".into(),
                param_json: "{}".into(),
                lhs: 0.0,
                rhs: 0.0,
                std_err: 0.0,
                z: 0.0,
                pass: false,
            },
        ];
        let csv = render_report_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "check,fixture,param_json,lhs,rhs,std_err,z,pass");
        assert!(lines[1].starts_with(r#"siegmund,brownian,"{""x"":0.25,""y"":0.5}","#));
        assert!(lines[1].ends_with(",true"));
        assert!(lines[2].starts_with(r#""weak""identity",affine,{},"#));
        assert!(lines[2].ends_with(",false"));
        // float fields round-trip exactly; the quoted json field holds commas,
        // so index lhs from the comma-free tail of the row
        let lhs_field = lines[1].rsplit(',').nth(4).unwrap();
        assert_eq!(lhs_field.parse::<f64>().unwrap(), 0.5);
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn z_score_degenerate_cases() {
        let a = McEstimate { mean: 1.0, std_err: 0.0, n_samples: 10 };
        assert_eq!(a.z_against(&a), 0.0);
        let b = McEstimate { mean: 2.0, std_err: 0.0, n_samples: 10 };
        assert!(a.z_against(&b).is_infinite());
    }
}


