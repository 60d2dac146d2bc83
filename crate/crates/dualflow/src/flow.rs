//! Euler–Maruyama flows on the half-line.
//!
//! The absorbing scheme iterates `x ↦ max{0, x + σ(x)Δw + b(x)Δt}` with a
//! latch: a state that reaches 0 stays there. Run from a whole grid of
//! initial points on one shared noise table, the per-step snapshots are
//! monotone maps; inverting the maps anchored at the *end* of a reversed
//! window produces the conjugate (reflected) flow. For σ, b affine the
//! one-step map is exactly piecewise linear, and whole windows can be
//! composed in closed form.

use crate::coefficients::{CoefficientModel, Coefficients};
use crate::monotone::{MonotoneError, MonotoneFn};
use crate::noise::NoisePath;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FlowError {
    #[error("time grid requires a positive finite horizon and at least one step")]
    BadGrid,
    #[error("noise step {noise_dt} does not match the grid step {grid_dt}")]
    StepMismatch { noise_dt: f64, grid_dt: f64 },
    #[error("initial points must be finite, strictly positive and strictly increasing")]
    BadInitialPoints,
    #[error("initial state must be finite and non-negative, got {x}")]
    BadInitialState { x: f64 },
    #[error(
        "scheme map decreased at step {step}: {lower_value} at point {lower} \
         exceeds {upper_value} at point {upper}"
    )]
    NotMonotone { step: usize, lower: f64, upper: f64, lower_value: f64, upper_value: f64 },
    #[error("coefficients produced a non-finite value at step {step} from state {x}")]
    NonFinite { step: usize, x: f64 },
    #[error("snapshot {step} is eventually flat; its inverse is unbounded")]
    FlatTail { step: usize },
    #[error("one-step map has slope {slope}; exact chains require a non-negative slope")]
    NonMonotoneStep { slope: f64 },
    #[error("exact one-step chains need constant or affine coefficients")]
    ExactChainUnsupported,
    #[error(transparent)]
    Snapshot(#[from] MonotoneError),
}

/// Uniform partition of `[0, T]` into `n` steps of length `T/n`. Only the
/// step length and nominal horizon live here; noise windows pick the actual
/// index range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<TimeGrid, FlowError> {
        if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
            return Err(FlowError::BadGrid);
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: i64) -> f64 {
        k as f64 * self.dt()
    }

    /// The grid with every step split `extra_levels` times; its step length
    /// equals `dt() / 2^extra_levels` bit for bit.
    pub fn refined(&self, extra_levels: u32) -> TimeGrid {
        TimeGrid { horizon: self.horizon, steps: self.steps << extra_levels }
    }
}

/// One scheme step. Returns 0 for `x ≤ 0` (the latch); otherwise
/// `max{0, x + σ(x)·dw + b(x)·dt}`. A non-finite update is returned as-is so
/// callers can detect coefficient blowups before the clamp hides them.
pub fn em_absorbing_step<C: Coefficients + ?Sized>(model: &C, x: f64, dw: f64, dt: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let raw = x + model.sigma(x) * dw + model.drift(x) * dt;
    if raw.is_finite() {
        raw.max(0.0)
    } else {
        raw
    }
}

/// Terminal state of the one-point absorbing recursion.
pub fn em_absorbing_terminal<C: Coefficients + ?Sized>(
    model: &C,
    x0: f64,
    noise: &NoisePath,
) -> Result<f64, FlowError> {
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(FlowError::BadInitialState { x: x0 });
    }
    let dt = noise.dt();
    let mut x = x0;
    for (step, &dw) in noise.increments().iter().enumerate() {
        if x == 0.0 {
            return Ok(0.0);
        }
        x = em_absorbing_step(model, x, dw, dt);
        if !x.is_finite() {
            return Err(FlowError::NonFinite { step, x });
        }
    }
    Ok(x)
}

/// The absorbing scheme run from a grid of initial points on one shared
/// noise table, with a monotone snapshot per step.
///
/// Snapshots are anchored at the window start: `snapshot(l)` maps an initial
/// point to its state after the first `l` steps. Each snapshot interpolates
/// the grid images piecewise-linearly, reads as exactly 0 below the first
/// unabsorbed grid point, and continues the last cell's slope above the
/// largest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFlow {
    grid: TimeGrid,
    start_time: f64,
    initial_points: Vec<f64>,
    values: Vec<Vec<f64>>,
    snapshots: Vec<MonotoneFn>,
    absorption_step: Vec<Option<usize>>,
}

impl DiscreteFlow {
    fn from_values(
        grid: TimeGrid,
        start_time: f64,
        initial_points: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<DiscreteFlow, FlowError> {
        let mut snapshots = Vec::with_capacity(values.len());
        snapshots.push(MonotoneFn::identity());
        for (l, row) in values.iter().enumerate().skip(1) {
            check_row(l - 1, &values[l - 1], row)?;
            snapshots.push(MonotoneFn::from_grid(&initial_points, row)?);
        }
        let absorption_step = (0..initial_points.len())
            .map(|i| values.iter().position(|row| row[i] == 0.0))
            .collect();
        Ok(DiscreteFlow { grid, start_time, initial_points, values, snapshots, absorption_step })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Time label of the window start; step `l` sits at `start_time + l·dt`.
    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn initial_points(&self) -> &[f64] {
        &self.initial_points
    }

    /// Grid images after `l` steps, aligned with `initial_points`.
    pub fn values_at(&self, l: usize) -> &[f64] {
        &self.values[l]
    }

    pub fn snapshot(&self, l: usize) -> &MonotoneFn {
        &self.snapshots[l]
    }

    pub fn snapshots(&self) -> &[MonotoneFn] {
        &self.snapshots
    }

    pub fn is_absorbed(&self, l: usize, point_index: usize) -> bool {
        self.values[l][point_index] == 0.0
    }

    /// First step at which the point's state is 0, if it ever is.
    pub fn absorption_step(&self, point_index: usize) -> Option<usize> {
        self.absorption_step[point_index]
    }
}

fn validate_points(points: &[f64]) -> Result<(), FlowError> {
    let increasing = points.windows(2).all(|w| w[0] < w[1]);
    if points.is_empty() || !increasing || !points.iter().all(|&y| y > 0.0 && y.is_finite()) {
        return Err(FlowError::BadInitialPoints);
    }
    Ok(())
}

fn check_row(step: usize, prev: &[f64], row: &[f64]) -> Result<(), FlowError> {
    if let Some(i) = row.iter().position(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite { step, x: prev[i] });
    }
    if let Some(i) = row.windows(2).position(|w| w[0] > w[1]) {
        return Err(FlowError::NotMonotone {
            step,
            lower: prev[i],
            upper: prev[i + 1],
            lower_value: row[i],
            upper_value: row[i + 1],
        });
    }
    Ok(())
}

fn advance_row<C: Coefficients + ?Sized>(model: &C, row: &mut [f64], dw: f64, dt: f64) {
    for x in row.iter_mut() {
        *x = em_absorbing_step(model, *x, dw, dt);
    }
}

/// Run the absorbing scheme over the full noise window from every initial
/// point. Fails if any per-step snapshot loses monotonicity on the grid —
/// the inversion construction is meaningless past that point.
pub fn em_absorbing_flow<C: Coefficients + ?Sized>(
    model: &C,
    grid: &TimeGrid,
    initial_points: &[f64],
    noise: &NoisePath,
) -> Result<DiscreteFlow, FlowError> {
    validate_points(initial_points)?;
    let dt = noise.dt();
    if dt != grid.dt() {
        return Err(FlowError::StepMismatch { noise_dt: dt, grid_dt: grid.dt() });
    }
    let mut values = Vec::with_capacity(noise.len() + 1);
    values.push(initial_points.to_vec());
    let mut cur = initial_points.to_vec();
    for &dw in noise.increments() {
        advance_row(model, &mut cur, dw, dt);
        values.push(cur.clone());
    }
    let start_time = noise.fine_window().0 as f64 * dt;
    DiscreteFlow::from_values(*grid, start_time, initial_points.to_vec(), values)
}

/// The absorbing scheme on bridge-refined noise (`2^r` sub-steps per step),
/// subsampled back to the coarse nodes. Shares the parent noise table with
/// the coarse run, so the two flows are pathwise coupled; `r = 0` reproduces
/// [`em_absorbing_flow`] exactly.
pub fn reference_flow<C: Coefficients + ?Sized>(
    model: &C,
    grid: &TimeGrid,
    initial_points: &[f64],
    noise: &NoisePath,
    r: u32,
) -> Result<DiscreteFlow, FlowError> {
    validate_points(initial_points)?;
    if noise.dt() != grid.dt() {
        return Err(FlowError::StepMismatch { noise_dt: noise.dt(), grid_dt: grid.dt() });
    }
    let fine = noise.refine(r);
    let stride = 1usize << r;
    let dt = fine.dt();
    let mut values = Vec::with_capacity(noise.len() + 1);
    values.push(initial_points.to_vec());
    let mut cur = initial_points.to_vec();
    for (j, &dw) in fine.increments().iter().enumerate() {
        advance_row(model, &mut cur, dw, dt);
        if (j + 1) % stride == 0 {
            values.push(cur.clone());
        }
    }
    let start_time = noise.fine_window().0 as f64 * noise.dt();
    DiscreteFlow::from_values(*grid, start_time, initial_points.to_vec(), values)
}

/// Snapshots anchored at the window *end*: entry `l` maps an initial point
/// through the last `l` steps of the noise window. Entry 0 is the identity.
/// These are the maps whose inverses form the conjugate flow.
pub fn suffix_snapshots<C: Coefficients + ?Sized>(
    model: &C,
    initial_points: &[f64],
    noise: &NoisePath,
) -> Result<Vec<MonotoneFn>, FlowError> {
    validate_points(initial_points)?;
    let dt = noise.dt();
    let incs = noise.increments();
    let mut out = Vec::with_capacity(incs.len() + 1);
    out.push(MonotoneFn::identity());
    for l in 1..=incs.len() {
        let window = &incs[incs.len() - l..];
        let mut prev = initial_points.to_vec();
        let mut cur = initial_points.to_vec();
        for (j, &dw) in window.iter().enumerate() {
            prev.copy_from_slice(&cur);
            advance_row(model, &mut cur, dw, dt);
            check_row(incs.len() - l + j, &prev, &cur)?;
        }
        out.push(MonotoneFn::from_grid(initial_points, &cur)?);
    }
    Ok(out)
}

/// The conjugate flow: right-continuous inverses of the end-anchored
/// absorbing snapshots. Feed the *reversed* noise window, i.e. the forward
/// driving noise of the conjugate process is `noise.time_reverse()`; entry
/// `l` is then the conjugate map over the first `l` forward steps.
pub fn dual_flow<C: Coefficients + ?Sized>(
    model: &C,
    initial_points: &[f64],
    noise: &NoisePath,
) -> Result<Vec<MonotoneFn>, FlowError> {
    let suffix = suffix_snapshots(model, initial_points, noise)?;
    suffix
        .iter()
        .enumerate()
        .map(|(l, s)| {
            if s.tail_slope() <= 0.0 {
                return Err(FlowError::FlatTail { step: l });
            }
            s.right_inverse_fn().map_err(FlowError::from)
        })
        .collect()
}

/// Reflected path of the one-point scheme: `x ↦ max{0, x + σ(x)Δw + b(x)Δt}`
/// with the clamped deficit recorded as a local-time increment. No latch —
/// the state may leave 0 again.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath {
    dt: f64,
    values: Vec<f64>,
    local_time: Vec<f64>,
}

impl ReflectedPath {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// States per step, starting with the initial state.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("path has at least the initial state")
    }

    /// Per-step pushing increments; positive only on steps that land on 0.
    pub fn local_time(&self) -> &[f64] {
        &self.local_time
    }

    pub fn total_local_time(&self) -> f64 {
        crate::numeric::pairwise_sum(&self.local_time)
    }
}

pub fn em_reflected_path<C: Coefficients + ?Sized>(
    model: &C,
    x0: f64,
    noise: &NoisePath,
) -> Result<ReflectedPath, FlowError> {
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(FlowError::BadInitialState { x: x0 });
    }
    let dt = noise.dt();
    let mut values = Vec::with_capacity(noise.len() + 1);
    let mut local_time = Vec::with_capacity(noise.len());
    values.push(x0);
    let mut x = x0;
    for (step, &dw) in noise.increments().iter().enumerate() {
        let raw = x + model.sigma(x) * dw + model.drift(x) * dt;
        if !raw.is_finite() {
            return Err(FlowError::NonFinite { step, x });
        }
        x = raw.max(0.0);
        values.push(x);
        local_time.push(x - raw);
    }
    Ok(ReflectedPath { dt, values, local_time })
}

/// `(slope, offset)` of the exact one-step map `x ↦ max{0, slope·x + offset}`
/// for models whose σ and b are affine in the state; `None` otherwise.
pub fn affine_step_coefficients(
    model: &CoefficientModel,
    dw: f64,
    dt: f64,
) -> Option<(f64, f64)> {
    match *model {
        CoefficientModel::Constant { sigma, drift } => Some((1.0, sigma * dw + drift * dt)),
        CoefficientModel::AffineAffine { alpha, beta, gamma, delta } => {
            Some((1.0 + alpha * dw + gamma * dt, beta * dw + delta * dt))
        }
        _ => None,
    }
}

/// `x ↦ max{0, slope·x + offset}` as a monotone object.
pub fn step_map(slope: f64, offset: f64) -> Result<MonotoneFn, FlowError> {
    if !slope.is_finite() || !offset.is_finite() || slope < 0.0 {
        return Err(FlowError::NonMonotoneStep { slope });
    }
    if slope == 0.0 {
        return Ok(MonotoneFn::constant(offset.max(0.0)));
    }
    let f = if offset >= 0.0 {
        MonotoneFn::new(vec![0.0], vec![offset], vec![], slope)
    } else {
        MonotoneFn::new(vec![0.0, -offset / slope], vec![0.0, 0.0], vec![0.0], slope)
    };
    Ok(f.expect("one-step map parameters are validated above"))
}

/// `outer ∘ inner`, latched: the result is 0 wherever `inner` is 0. This is
/// composition as the absorbing scheme performs it — a point sitting at 0
/// when the maps meet never moves again, even if `outer(0⁺) > 0`.
pub fn latch_compose(outer: &MonotoneFn, inner: &MonotoneFn) -> MonotoneFn {
    let composed = outer.compose(inner);
    match inner.right_inverse_at(0.0) {
        Err(_) => MonotoneFn::constant(0.0),
        Ok(z) if z == 0.0 => composed,
        Ok(z) => zero_until(&composed, z),
    }
}

/// Force values to 0 on `[0, z)`, keeping the function from `z` on. The value
/// at `z` itself stays `f(z)` — right continuity at the absorption edge.
fn zero_until(f: &MonotoneFn, z: f64) -> MonotoneFn {
    let mut knots = vec![0.0, z];
    let mut values = vec![0.0, f.eval(z)];
    let mut slopes = vec![0.0];
    for (i, &k) in f.knots().iter().enumerate() {
        if k > z {
            let prev = *knots.last().expect("seeded with two knots");
            slopes.push(f.slope_at(0.5 * (prev + k)));
            knots.push(k);
            values.push(f.values()[i]);
        }
    }
    MonotoneFn::new(knots, values, slopes, f.tail_slope())
        .expect("latching a monotone map preserves monotonicity")
}

/// Exact end-anchored window maps for constant/affine models: entry `l`
/// composes the last `l` one-step maps with the latch at every junction.
/// Bit-for-bit the same function the pointwise scheme computes, without a
/// state grid.
pub fn exact_suffix_chain(
    model: &CoefficientModel,
    noise: &NoisePath,
) -> Result<Vec<MonotoneFn>, FlowError> {
    let dt = noise.dt();
    let mut out = Vec::with_capacity(noise.len() + 1);
    out.push(MonotoneFn::identity());
    for (l, &dw) in noise.increments().iter().rev().enumerate() {
        let (s, c) =
            affine_step_coefficients(model, dw, dt).ok_or(FlowError::ExactChainUnsupported)?;
        let step = step_map(s, c)?;
        out.push(latch_compose(&out[l], &step));
    }
    Ok(out)
}

/// The map of the whole noise window as a single piecewise-linear function:
/// the last entry of [`exact_suffix_chain`], computed without materializing
/// the intermediate entries.
pub fn exact_window_map(
    model: &CoefficientModel,
    noise: &NoisePath,
) -> Result<MonotoneFn, FlowError> {
    let dt = noise.dt();
    let mut acc = MonotoneFn::identity();
    for &dw in noise.increments().iter().rev() {
        let (s, c) =
            affine_step_coefficients(model, dw, dt).ok_or(FlowError::ExactChainUnsupported)?;
        acc = latch_compose(&acc, &step_map(s, c)?);
    }
    Ok(acc)
}

/// Geometrically spaced state grid from `min_point` up to and including
/// `x_max`. Snapshots interpolate between seeded points, so the smallest
/// point also sets the resolution next to the absorbing boundary; callers
/// that care about behavior near 0 should keep `min_point` well below the
/// states they probe.
pub fn geometric_grid(min_point: f64, x_max: f64, points: usize) -> Result<Vec<f64>, FlowError> {
    if !(min_point > 0.0 && x_max > min_point && x_max.is_finite() && points >= 2) {
        return Err(FlowError::BadInitialPoints);
    }
    let ratio = x_max / min_point;
    let last = points - 1;
    Ok((0..points)
        .map(|k| {
            if k == last {
                x_max
            } else {
                min_point * ratio.powf(k as f64 / last as f64)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::dual_transform;

    fn bm() -> CoefficientModel {
        CoefficientModel::constant(1.0, 0.0).unwrap()
    }

    #[test]
    fn grid_step_and_refinement() {
        let g = TimeGrid::new(2.0, 8).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.node(3), 0.75);
        let fine = g.refined(3);
        assert_eq!(fine.steps(), 64);
        assert_eq!(fine.dt().to_bits(), (0.25_f64 / 8.0).to_bits());
        assert_eq!(TimeGrid::new(0.0, 4), Err(FlowError::BadGrid));
        assert_eq!(TimeGrid::new(1.0, 0), Err(FlowError::BadGrid));
    }

    #[test]
    fn absorbing_step_cases() {
        let m = bm();
        assert_eq!(em_absorbing_step(&m, 0.0, 5.0, 0.1), 0.0);
        assert_eq!(em_absorbing_step(&m, 1.0, -2.0, 0.1), 0.0);
        assert_eq!(em_absorbing_step(&m, 1.0, 0.5, 0.1), 1.5);
    }

    #[test]
    fn zero_noise_driftless_flow_is_the_identity() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let noise = NoisePath::zeros(grid.dt(), (0, 4));
        let points = [0.5, 1.0, 2.0];
        let flow = em_absorbing_flow(&bm(), &grid, &points, &noise).unwrap();
        assert_eq!(flow.steps(), 4);
        assert_eq!(flow.snapshot(0), &MonotoneFn::identity());
        for l in 0..=4 {
            for &y in &points {
                assert_eq!(flow.snapshot(l).eval(y), y);
            }
        }
    }

    #[test]
    fn flow_matches_scalar_recursion_per_point() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let noise = NoisePath::sample(7, 0, grid.dt(), (0, 32));
        let points = [0.2, 1.0, 2.5];
        let m = CoefficientModel::constant(1.0, -0.5).unwrap();
        let flow = em_absorbing_flow(&m, &grid, &points, &noise).unwrap();
        for (i, &y) in points.iter().enumerate() {
            let mut x = y;
            for (l, &dw) in noise.increments().iter().enumerate() {
                x = if x == 0.0 { 0.0 } else { (x + dw - 0.5 * grid.dt()).max(0.0) };
                assert_eq!(flow.values_at(l + 1)[i].to_bits(), x.to_bits(), "point {i} step {l}");
            }
        }
    }

    #[test]
    fn absorption_is_latched_and_snapshots_flatten_at_zero() {
        // Pure downward drift: point y dies at step ceil(y / (dt)).
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let noise = NoisePath::zeros(0.25, (0, 4));
        let m = CoefficientModel::constant(1.0, -1.0).unwrap();
        let points = [0.2, 0.3, 1.0];
        let flow = em_absorbing_flow(&m, &grid, &points, &noise).unwrap();
        assert_eq!(flow.absorption_step(0), Some(1));
        assert_eq!(flow.absorption_step(1), Some(2));
        assert_eq!(flow.absorption_step(2), Some(4));
        for i in 0..points.len() {
            let mut seen_zero = false;
            for l in 0..=flow.steps() {
                if flow.is_absorbed(l, i) {
                    seen_zero = true;
                }
                if seen_zero {
                    assert!(flow.is_absorbed(l, i), "absorption must persist");
                }
            }
        }
        // After two steps the first two points are dead: flat zero up to the
        // surviving point, a jump there, then strict increase.
        let s2 = flow.snapshot(2);
        assert_eq!(s2.eval(0.0), 0.0);
        assert_eq!(s2.eval(0.3), 0.0);
        assert_eq!(s2.left_limit(1.0), 0.0);
        assert_eq!(s2.eval(1.0), 0.5);
        assert_eq!(s2.flat_image_set(), vec![0.0]);
        assert_eq!(s2.jump_set(), vec![1.0]);
    }

    #[test]
    fn window_splitting_reproduces_the_full_run() {
        // Counter-based noise lets a restarted flow reuse the exact same
        // increments: running 0..8 equals running 0..4 then 4..8 from the
        // intermediate images, point by point, bit for bit.
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let m = CoefficientModel::constant(1.0, -0.3).unwrap();
        let full_noise = NoisePath::sample(42, 5, grid.dt(), (0, 8));
        let points = [0.1, 0.4, 1.0, 3.0];
        let full = em_absorbing_flow(&m, &grid, &points, &full_noise).unwrap();

        let first = em_absorbing_flow(&m, &grid, &points, &NoisePath::sample(42, 5, grid.dt(), (0, 4)))
            .unwrap();
        let images = first.values_at(4).to_vec();
        let alive: Vec<f64> = images.iter().copied().filter(|&v| v > 0.0).collect();
        let second =
            em_absorbing_flow(&m, &grid, &alive, &NoisePath::sample(42, 5, grid.dt(), (4, 8)))
                .unwrap();
        for (i, &img) in images.iter().enumerate() {
            let direct = full.values_at(8)[i];
            if img == 0.0 {
                assert_eq!(direct, 0.0, "absorbed points stay absorbed");
            } else {
                let j = alive.iter().position(|&v| v == img).unwrap();
                assert_eq!(direct.to_bits(), second.values_at(4)[j].to_bits());
            }
        }
    }

    #[test]
    fn monotonicity_violation_is_reported_with_context() {
        // σ(x) = x, b ≡ 0.5 at dt = 1: the one-step map x(1 + Δw) + 0.5 is
        // decreasing whenever Δw < −1, and the clamp then crosses the two
        // points: the smaller one keeps a positive value while the larger
        // lands on 0. Scan a sampled window for such a shock.
        let m = CoefficientModel::affine(1.0, 0.0, 0.0, 0.5).unwrap();
        let grid = TimeGrid::new(300.0, 300).unwrap();
        let scan = NoisePath::sample(6, 0, grid.dt(), (0, 300));
        let k = scan
            .increments()
            .iter()
            .position(|&dw| dw < -1.2)
            .expect("a 300-draw window contains a shock below -1.2") as i64;
        let shock = NoisePath::sample(6, 0, grid.dt(), (k, k + 1));
        let err = em_absorbing_flow(&m, &grid, &[0.1, 50.0], &shock).unwrap_err();
        match err {
            FlowError::NotMonotone { step: 0, lower, upper, lower_value, upper_value } => {
                assert_eq!((lower, upper), (0.1, 50.0));
                assert!(lower_value > upper_value);
                assert_eq!(upper_value, 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn suffix_snapshots_and_duals_for_constant_coefficients() {
        let m = CoefficientModel::constant(0.8, 0.3).unwrap();
        let dt = 0.25;
        let w = NoisePath::sample(11, 2, dt, (-3, 0));

        // Exact route: invert the closed-form window chains.
        let chain = exact_suffix_chain(&m, &w).unwrap();
        let exact_duals: Vec<MonotoneFn> =
            chain.iter().map(|f| f.right_inverse_fn().unwrap()).collect();
        assert_eq!(exact_duals[0], MonotoneFn::identity());
        // One-step conjugate map: max{0, x − σΔw₀ − bΔt} with Δw₀ the last
        // increment of the window.
        let dw0 = *w.increments().last().unwrap();
        let c = 0.8 * dw0 + 0.3 * dt;
        for &x in &[0.0, 0.1, 0.7, 1.3, 2.9] {
            assert!((exact_duals[1].eval(x) - (x - c).max(0.0)).abs() < 1e-12, "x = {x}");
        }
        // Full-window conjugate motion equals the clamped reflected
        // recursion on the reversed noise, driven by (σ, −b).
        let dual_model = dual_transform(&m);
        let x0 = 1.3;
        let reflected = em_reflected_path(&dual_model, x0, &w.time_reverse()).unwrap();
        for (l, d) in exact_duals.iter().enumerate() {
            assert!(
                (d.eval(x0) - reflected.values()[l]).abs() <= 1e-12,
                "step {l}: {} vs {}",
                d.eval(x0),
                reflected.values()[l]
            );
        }

        // Grid route: inverting interpolated snapshots agrees with the exact
        // conjugate maps up to the state-grid resolution.
        let points: Vec<f64> = (1..=40).map(|i| 0.1 * i as f64).collect();
        let grid_duals = dual_flow(&m, &points, &w).unwrap();
        assert_eq!(grid_duals[0], MonotoneFn::identity());
        for (l, d) in grid_duals.iter().enumerate() {
            for &x in &[0.0, 0.1, 0.7, 1.3, 2.9] {
                assert!(
                    (d.eval(x) - exact_duals[l].eval(x)).abs() <= 0.1,
                    "step {l}, x = {x}: {} vs {}",
                    d.eval(x),
                    exact_duals[l].eval(x)
                );
            }
        }
    }

    #[test]
    fn dual_flow_rejects_flat_snapshots() {
        // Strong downward drift absorbs every grid point in one step; the
        // snapshot is constant 0 and has no inverse.
        let m = CoefficientModel::constant(0.1, -10.0).unwrap();
        let w = NoisePath::zeros(0.5, (-2, 0));
        let err = dual_flow(&m, &[0.5, 1.0], &w).unwrap_err();
        assert!(matches!(err, FlowError::FlatTail { .. }));
    }

    #[test]
    fn reflected_path_invariants() {
        let m = CoefficientModel::constant(1.0, -0.2).unwrap();
        let noise = NoisePath::sample(3, 9, 0.01, (0, 1000));
        let p = em_reflected_path(&m, 0.5, &noise).unwrap();
        assert_eq!(p.values().len(), 1001);
        let mut pushed = 0usize;
        for (l, &dphi) in p.local_time().iter().enumerate() {
            let x = p.values()[l + 1];
            assert!(x >= 0.0);
            assert!(dphi >= 0.0);
            if dphi > 0.0 {
                assert_eq!(x, 0.0, "pushing only happens at the boundary");
                pushed += 1;
            }
        }
        assert!(pushed > 0, "this path should hit the boundary");
        assert!(p.total_local_time() > 0.0);
    }

    #[test]
    fn reflected_path_climbs_from_zero_under_positive_drift() {
        let m = CoefficientModel::constant(1.0, 0.4).unwrap();
        let noise = NoisePath::zeros(0.25, (0, 8));
        let p = em_reflected_path(&m, 0.0, &noise).unwrap();
        for (l, &v) in p.values().iter().enumerate() {
            assert!((v - 0.4 * 0.25 * l as f64).abs() < 1e-15);
        }
        assert_eq!(p.total_local_time(), 0.0);
    }

    #[test]
    fn reference_flow_at_r0_is_the_coarse_flow() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let noise = NoisePath::sample(21, 4, grid.dt(), (0, 16));
        let m = CoefficientModel::constant(1.0, -0.1).unwrap();
        let points = [0.3, 1.0, 2.0];
        let coarse = em_absorbing_flow(&m, &grid, &points, &noise).unwrap();
        let reference = reference_flow(&m, &grid, &points, &noise, 0).unwrap();
        assert_eq!(coarse, reference);
    }

    #[test]
    fn reference_flow_agrees_for_unabsorbed_brownian_paths() {
        // For σ ≡ 1, b ≡ 0 the update is x + Δw; when the clamp never binds
        // the coarse value is x + Σ(coarse increments) and the fine value is
        // x + Σ(fine increments), which differ only by bridge rounding.
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let noise = NoisePath::sample(13, 1, grid.dt(), (0, 8));
        let points = [50.0, 60.0];
        let coarse = em_absorbing_flow(&bm(), &grid, &points, &noise).unwrap();
        let reference = reference_flow(&bm(), &grid, &points, &noise, 5).unwrap();
        for l in 0..=8 {
            for i in 0..points.len() {
                assert!(
                    (coarse.values_at(l)[i] - reference.values_at(l)[i]).abs() < 1e-10,
                    "step {l} point {i}"
                );
            }
        }
    }

    #[test]
    fn reference_flows_form_a_cauchy_sequence_in_r() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let m = CoefficientModel::constant(1.0, -0.5).unwrap();
        let points = [0.5, 1.0, 2.0];
        let n_paths = 300;
        let mut gaps = [0.0f64; 3];
        for path in 0..n_paths {
            let noise = NoisePath::sample(1000, path as u64, grid.dt(), (0, 16));
            let flows: Vec<DiscreteFlow> = (0..4)
                .map(|r| reference_flow(&m, &grid, &points, &noise, r).unwrap())
                .collect();
            for r in 0..3 {
                let sup = points
                    .iter()
                    .enumerate()
                    .map(|(i, _)| {
                        (flows[r].values_at(16)[i] - flows[r + 1].values_at(16)[i]).abs()
                    })
                    .fold(0.0, f64::max);
                gaps[r] += sup / n_paths as f64;
            }
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
    }

    #[test]
    fn step_map_shapes() {
        let up = step_map(1.0, 0.7).unwrap();
        assert_eq!(up.eval(0.0), 0.7);
        assert_eq!(up.eval(2.0), 2.7);
        let down = step_map(1.0, -0.5).unwrap();
        assert_eq!(down.eval(0.3), 0.0);
        assert_eq!(down.eval(0.5), 0.0);
        assert_eq!(down.eval(1.25), 0.75);
        let flat = step_map(0.0, -1.0).unwrap();
        assert_eq!(flat, MonotoneFn::constant(0.0));
        assert!(matches!(step_map(-0.1, 0.0), Err(FlowError::NonMonotoneStep { .. })));
    }

    #[test]
    fn latch_compose_respects_absorption() {
        // Step 1 kills [0, 0.5]; step 2 lifts by 0.7. Plain composition
        // resurrects the dead points at 0.7 — the latch keeps them at 0.
        let u1 = step_map(1.0, -0.5).unwrap();
        let u2 = step_map(1.0, 0.7).unwrap();
        let plain = u2.compose(&u1);
        assert_eq!(plain.eval(0.3), 0.7);
        let latched = latch_compose(&u2, &u1);
        assert_eq!(latched.eval(0.3), 0.0);
        assert_eq!(latched.left_limit(0.5), 0.0);
        assert_eq!(latched.eval(0.5), 0.7); // right-continuous at the edge
        assert_eq!(latched.eval(1.5), 1.7);
        assert_eq!(latched.jump_set(), vec![0.5]);
    }

    #[test]
    fn exact_chains_match_the_pointwise_scheme() {
        let dt = 1.0 / 16.0;
        let noise = NoisePath::sample(17, 3, dt, (-16, 0));
        for m in [
            CoefficientModel::constant(1.0, -0.4).unwrap(),
            CoefficientModel::affine(0.2, 0.5, -0.1, 0.05).unwrap(),
        ] {
            let chain = exact_suffix_chain(&m, &noise).unwrap();
            let points = [0.05, 0.3, 1.0, 2.2, 5.0];
            for l in 0..=noise.len() {
                let window = &noise.increments()[noise.len() - l..];
                for &y in &points {
                    let mut x = y;
                    for &dw in window {
                        x = em_absorbing_step(&m, x, dw, dt);
                    }
                    assert!(
                        (chain[l].eval(y) - x).abs() <= 1e-12 * x.max(1.0),
                        "window {l}, start {y}: chain {} vs scalar {x}",
                        chain[l].eval(y)
                    );
                }
            }
        }
    }

    #[test]
    fn exact_chains_need_affine_structure() {
        let m = CoefficientModel::sqrt_diffusion(1.0, 0.0, 0.0).unwrap();
        let noise = NoisePath::sample(1, 1, 0.25, (0, 4));
        assert_eq!(exact_suffix_chain(&m, &noise).unwrap_err(), FlowError::ExactChainUnsupported);
    }

    #[test]
    fn constant_chain_stays_small() {
        // Constant-coefficient chains collapse to at most jump + one kink.
        let noise = NoisePath::sample(23, 0, 0.125, (-64, 0));
        let m = CoefficientModel::constant(1.0, 0.0).unwrap();
        let chain = exact_suffix_chain(&m, &noise).unwrap();
        for f in &chain {
            assert!(f.knots().len() <= 3, "chain blew up to {} knots", f.knots().len());
        }
    }

    #[test]
    fn window_map_is_the_last_chain_entry() {
        let noise = NoisePath::sample(5, 9, 0.0625, (0, 16));
        for m in [
            CoefficientModel::constant(1.0, -0.4).unwrap(),
            CoefficientModel::affine(0.3, 1.0, -0.2, 0.1).unwrap(),
        ] {
            let chain = exact_suffix_chain(&m, &noise).unwrap();
            assert_eq!(exact_window_map(&m, &noise).unwrap(), *chain.last().unwrap());
        }
    }

    #[test]
    fn window_map_keeps_the_jump_at_a_recovered_edge() {
        // This realization clamps an interior step to zero and then moves back
        // up, so the window map jumps at the absorbed edge. A rounding slip in
        // the composition used to drop that jump value.
        let model = CoefficientModel::constant(1.0, 0.0).unwrap();
        let noise = NoisePath::sample(9, 3, 0.125, (0, 8));
        let mut offset = 0.0_f64;
        let mut edge = 0.0_f64;
        for &dw in noise.increments() {
            offset += dw;
            edge = edge.max(-offset);
        }
        assert!(edge + offset > 0.1, "fixture must recover after the clamp");
        let map = exact_window_map(&model, &noise).unwrap();
        assert!(map.jump_set().contains(&edge));
        // Pointwise absorbing recursion away from the edge (at the edge itself
        // the map stores the right limit while the pointwise value is
        // absorbed).
        for y in [0.0, 0.5 * edge, edge + 1e-9, edge + 0.3, edge + 2.0] {
            let x = em_absorbing_terminal(&model, y, &noise).unwrap();
            assert!((map.eval(y) - x).abs() <= 1e-12, "y = {y}");
        }
        let inv = map.right_inverse_at(0.3).unwrap();
        assert!((inv - edge.max(0.3 - offset)).abs() <= 1e-12);
    }

    #[test]
    fn geometric_grid_shape() {
        let g = geometric_grid(1e-3, 8.0, 41).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[40], 8.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        // constant ratio between neighbors
        let r0 = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r0).abs() < 1e-9));
        assert_eq!(geometric_grid(0.0, 1.0, 4).unwrap_err(), FlowError::BadInitialPoints);
        assert_eq!(geometric_grid(1.0, 1.0, 4).unwrap_err(), FlowError::BadInitialPoints);
        assert_eq!(geometric_grid(0.1, 1.0, 1).unwrap_err(), FlowError::BadInitialPoints);
    }
}
