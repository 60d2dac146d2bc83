//! Diffusion/drift coefficient pairs `(σ, b)` on `(0, ∞)`, the duality
//! transform `(σ, b) ↦ (σ, σσ′ − b)`, a numerical boundary-classification
//! integral, and the sufficient condition for one-step monotonicity of the
//! absorbing Euler scheme.

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CoefficientError {
    #[error("{family}: parameter {name} must satisfy {requirement}")]
    BadParameter { family: &'static str, name: &'static str, requirement: &'static str },
    #[error("sigma is not positive at x = {x} (value {value})")]
    SigmaNotPositive { x: f64, value: f64 },
}

/// Evaluation interface shared by built-in families, custom models and
/// transformed duals. All maps are defined for `x > 0`.
pub trait Coefficients: Send + Sync {
    fn sigma(&self, x: f64) -> f64;
    fn sigma_prime(&self, x: f64) -> f64;
    /// Second derivative of σ when available analytically; `None` falls back
    /// to a finite difference of [`Coefficients::sigma_prime`] where needed.
    fn sigma_second(&self, x: f64) -> Option<f64>;
    fn drift(&self, x: f64) -> f64;
    fn drift_prime(&self, x: f64) -> f64;
}

/// A user-supplied coefficient pair. Derivatives must be provided explicitly;
/// there is no automatic differentiation. The label names the model in
/// reports.
#[derive(Clone)]
pub struct CustomCoefficients {
    pub label: String,
    pub sigma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub sigma_prime: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub sigma_second: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub drift: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub drift_prime: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for CustomCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomCoefficients").field("label", &self.label).finish_non_exhaustive()
    }
}

/// Built-in coefficient families plus an escape hatch for custom pairs.
#[derive(Debug, Clone)]
pub enum CoefficientModel {
    /// σ ≡ sigma, b ≡ drift.
    Constant { sigma: f64, drift: f64 },
    /// σ(x) = αx + β, b(x) = γx + δ.
    AffineAffine { alpha: f64, beta: f64, gamma: f64, delta: f64 },
    /// σ(x) = √(2ax), b(x) = cx + d.
    SqrtDiffusion { a: f64, c: f64, d: f64 },
    /// σ(x) = αx + β, b(x) = c/x.
    InverseDrift { alpha: f64, beta: f64, c: f64 },
    Custom(CustomCoefficients),
}

impl CoefficientModel {
    pub fn constant(sigma: f64, drift: f64) -> Result<Self, CoefficientError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(CoefficientError::BadParameter {
                family: "constant",
                name: "sigma",
                requirement: "sigma > 0",
            });
        }
        if !drift.is_finite() {
            return Err(CoefficientError::BadParameter {
                family: "constant",
                name: "drift",
                requirement: "finite",
            });
        }
        Ok(CoefficientModel::Constant { sigma, drift })
    }

    pub fn affine(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self, CoefficientError> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(CoefficientError::BadParameter {
                family: "affine_affine",
                name: "alpha",
                requirement: "alpha >= 0",
            });
        }
        if !(beta >= 0.0 && beta.is_finite()) || alpha + beta == 0.0 {
            return Err(CoefficientError::BadParameter {
                family: "affine_affine",
                name: "beta",
                requirement: "beta >= 0 with alpha + beta > 0",
            });
        }
        if !gamma.is_finite() || !delta.is_finite() {
            return Err(CoefficientError::BadParameter {
                family: "affine_affine",
                name: "gamma/delta",
                requirement: "finite",
            });
        }
        Ok(CoefficientModel::AffineAffine { alpha, beta, gamma, delta })
    }

    pub fn sqrt_diffusion(a: f64, c: f64, d: f64) -> Result<Self, CoefficientError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(CoefficientError::BadParameter {
                family: "sqrt_diffusion",
                name: "a",
                requirement: "a > 0",
            });
        }
        if !c.is_finite() || !d.is_finite() {
            return Err(CoefficientError::BadParameter {
                family: "sqrt_diffusion",
                name: "c/d",
                requirement: "finite",
            });
        }
        Ok(CoefficientModel::SqrtDiffusion { a, c, d })
    }

    pub fn inverse_drift(alpha: f64, beta: f64, c: f64) -> Result<Self, CoefficientError> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(CoefficientError::BadParameter {
                family: "inverse_drift",
                name: "alpha/beta",
                requirement: "alpha, beta >= 0",
            });
        }
        if alpha + beta == 0.0 {
            return Err(CoefficientError::BadParameter {
                family: "inverse_drift",
                name: "beta",
                requirement: "alpha + beta > 0",
            });
        }
        if !c.is_finite() {
            return Err(CoefficientError::BadParameter {
                family: "inverse_drift",
                name: "c",
                requirement: "finite",
            });
        }
        Ok(CoefficientModel::InverseDrift { alpha, beta, c })
    }

    pub fn custom(custom: CustomCoefficients) -> Self {
        CoefficientModel::Custom(custom)
    }

    pub fn family_tag(&self) -> &'static str {
        match self {
            CoefficientModel::Constant { .. } => "constant",
            CoefficientModel::AffineAffine { .. } => "affine_affine",
            CoefficientModel::SqrtDiffusion { .. } => "sqrt_diffusion",
            CoefficientModel::InverseDrift { .. } => "inverse_drift",
            CoefficientModel::Custom(_) => "custom",
        }
    }

    /// Named parameters for reports; empty for custom models.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            CoefficientModel::Constant { sigma, drift } => {
                vec![("sigma", sigma), ("drift", drift)]
            }
            CoefficientModel::AffineAffine { alpha, beta, gamma, delta } => {
                vec![("alpha", alpha), ("beta", beta), ("gamma", gamma), ("delta", delta)]
            }
            CoefficientModel::SqrtDiffusion { a, c, d } => vec![("a", a), ("c", c), ("d", d)],
            CoefficientModel::InverseDrift { alpha, beta, c } => {
                vec![("alpha", alpha), ("beta", beta), ("c", c)]
            }
            CoefficientModel::Custom(_) => vec![],
        }
    }
}

impl Coefficients for CoefficientModel {
    fn sigma(&self, x: f64) -> f64 {
        match self {
            CoefficientModel::Constant { sigma, .. } => *sigma,
            CoefficientModel::AffineAffine { alpha, beta, .. } => alpha * x + beta,
            CoefficientModel::SqrtDiffusion { a, .. } => (2.0 * a * x).sqrt(),
            CoefficientModel::InverseDrift { alpha, beta, .. } => alpha * x + beta,
            CoefficientModel::Custom(c) => (c.sigma)(x),
        }
    }

    fn sigma_prime(&self, x: f64) -> f64 {
        match self {
            CoefficientModel::Constant { .. } => 0.0,
            CoefficientModel::AffineAffine { alpha, .. } => *alpha,
            CoefficientModel::SqrtDiffusion { a, .. } => {
                let s = (2.0 * a * x).sqrt();
                a / s
            }
            CoefficientModel::InverseDrift { alpha, .. } => *alpha,
            CoefficientModel::Custom(c) => (c.sigma_prime)(x),
        }
    }

    fn sigma_second(&self, x: f64) -> Option<f64> {
        match self {
            CoefficientModel::Constant { .. } => Some(0.0),
            CoefficientModel::AffineAffine { .. } => Some(0.0),
            CoefficientModel::SqrtDiffusion { a, .. } => {
                let s = (2.0 * a * x).sqrt();
                Some(-a * a / (s * s * s))
            }
            CoefficientModel::InverseDrift { .. } => Some(0.0),
            CoefficientModel::Custom(c) => c.sigma_second.as_ref().map(|f| f(x)),
        }
    }

    fn drift(&self, x: f64) -> f64 {
        match self {
            CoefficientModel::Constant { drift, .. } => *drift,
            CoefficientModel::AffineAffine { gamma, delta, .. } => gamma * x + delta,
            CoefficientModel::SqrtDiffusion { c, d, .. } => c * x + d,
            CoefficientModel::InverseDrift { c, .. } => c / x,
            CoefficientModel::Custom(cc) => (cc.drift)(x),
        }
    }

    fn drift_prime(&self, x: f64) -> f64 {
        match self {
            CoefficientModel::Constant { .. } => 0.0,
            CoefficientModel::AffineAffine { gamma, .. } => *gamma,
            CoefficientModel::SqrtDiffusion { c, .. } => *c,
            CoefficientModel::InverseDrift { c, .. } => -c / (x * x),
            CoefficientModel::Custom(cc) => (cc.drift_prime)(x),
        }
    }
}

impl<C: Coefficients + ?Sized> Coefficients for &C {
    fn sigma(&self, x: f64) -> f64 {
        (**self).sigma(x)
    }
    fn sigma_prime(&self, x: f64) -> f64 {
        (**self).sigma_prime(x)
    }
    fn sigma_second(&self, x: f64) -> Option<f64> {
        (**self).sigma_second(x)
    }
    fn drift(&self, x: f64) -> f64 {
        (**self).drift(x)
    }
    fn drift_prime(&self, x: f64) -> f64 {
        (**self).drift_prime(x)
    }
}

/// The Siegmund-dual coefficient pair: same diffusion, drift `σσ′ − b`.
/// Applying the transform twice restores the original drift.
#[derive(Debug, Clone)]
pub struct DualCoefficients<C> {
    base: C,
}

impl<C> DualCoefficients<C> {
    pub fn base(&self) -> &C {
        &self.base
    }
}

pub fn dual_transform<C: Coefficients + Clone>(model: &C) -> DualCoefficients<C> {
    DualCoefficients { base: model.clone() }
}

impl<C: Coefficients> Coefficients for DualCoefficients<C> {
    fn sigma(&self, x: f64) -> f64 {
        self.base.sigma(x)
    }

    fn sigma_prime(&self, x: f64) -> f64 {
        self.base.sigma_prime(x)
    }

    fn sigma_second(&self, x: f64) -> Option<f64> {
        self.base.sigma_second(x)
    }

    fn drift(&self, x: f64) -> f64 {
        self.base.sigma(x) * self.base.sigma_prime(x) - self.base.drift(x)
    }

    fn drift_prime(&self, x: f64) -> f64 {
        let sp = self.base.sigma_prime(x);
        let second = self.base.sigma_second(x).unwrap_or_else(|| {
            // Central difference of σ′ at a scale-aware step.
            let h = (1e-6 * x.abs()).max(1e-9);
            (self.base.sigma_prime(x + h) - self.base.sigma_prime(x - h)) / (2.0 * h)
        });
        sp * sp + self.base.sigma(x) * second - self.base.drift_prime(x)
    }
}

/// Outcome of the boundary-classification integral
/// `∫₀¹ [σ(x)⁻² e^{−B(x)} + e^{B(x)}] dx`, `B(x) = ∫ₓ¹ 2b/σ² dy`.
#[derive(Debug, Clone, PartialEq)]
pub enum FellerIntegral {
    Finite(f64),
    /// The heuristic divergence trigger fired: either the cumulative sum blew
    /// past 1e8, or the per-level contributions on dyadic subintervals
    /// `[2^{-(k+1)}, 2^{-k}]` stopped decaying (ratio ≥ 0.9) for 10
    /// consecutive levels, or 200 levels failed to converge.
    Divergent { levels_scanned: u32, cumulative: f64 },
}

/// Which side of the duality to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FellerSide {
    Original,
    Dual,
}

const FELLER_BLOWUP: f64 = 1e8;
const FELLER_MAX_LEVELS: u32 = 200;
const FELLER_NON_DECAY_RATIO: f64 = 0.9;
const FELLER_NON_DECAY_STREAK: u32 = 10;

/// Evaluate the boundary integral for a model or its dual. This is a
/// numerical heuristic, not a proof: divergence is declared by growth
/// patterns of the dyadic level sums (see [`FellerIntegral::Divergent`]).
pub fn feller_integral(
    model: &CoefficientModel,
    side: FellerSide,
) -> Result<FellerIntegral, CoefficientError> {
    match side {
        FellerSide::Original => feller_integral_of(model),
        FellerSide::Dual => feller_integral_of(&dual_transform(model)),
    }
}

/// The integral itself, for any coefficient implementation.
pub fn feller_integral_of<C: Coefficients + ?Sized>(
    model: &C,
) -> Result<FellerIntegral, CoefficientError> {
    let mut cumulative = 0.0_f64;
    let mut b_right = 0.0_f64; // B(2^{-k}) accumulated from the levels above
    let mut prev_level: Option<f64> = None;
    let mut non_decay_streak = 0u32;
    let mut small_streak = 0u32;
    for k in 0..FELLER_MAX_LEVELS {
        let hi = 2.0_f64.powi(-(k as i32));
        let lo = 0.5 * hi;
        let (level, delta_b) = feller_level(model, lo, hi, b_right)?;
        if !level.is_finite() {
            return Ok(FellerIntegral::Divergent { levels_scanned: k + 1, cumulative: f64::MAX });
        }
        cumulative += level;
        if cumulative > FELLER_BLOWUP {
            return Ok(FellerIntegral::Divergent { levels_scanned: k + 1, cumulative });
        }
        if let Some(prev) = prev_level {
            if level >= FELLER_NON_DECAY_RATIO * prev {
                non_decay_streak += 1;
                if non_decay_streak >= FELLER_NON_DECAY_STREAK {
                    return Ok(FellerIntegral::Divergent { levels_scanned: k + 1, cumulative });
                }
            } else {
                non_decay_streak = 0;
            }
        }
        if level <= 1e-12 * cumulative.max(1.0) || level <= 1e-15 {
            small_streak += 1;
            if small_streak >= 3 {
                return Ok(FellerIntegral::Finite(cumulative));
            }
        } else {
            small_streak = 0;
        }
        prev_level = Some(level);
        b_right += delta_b;
        if !b_right.is_finite() {
            return Ok(FellerIntegral::Divergent { levels_scanned: k + 1, cumulative: f64::MAX });
        }
    }
    Ok(FellerIntegral::Divergent { levels_scanned: FELLER_MAX_LEVELS, cumulative })
}

/// Composite-Simpson integral of the boundary integrand over one dyadic level
/// `[lo, hi]`, given `B(hi) = b_right`. Returns the level contribution and
/// `∫_lo^hi 2b/σ² dy`. Node counts double until both stabilize.
fn feller_level<C: Coefficients + ?Sized>(
    model: &C,
    lo: f64,
    hi: f64,
    b_right: f64,
) -> Result<(f64, f64), CoefficientError> {
    let mut nodes = 16usize;
    let mut prev: Option<(f64, f64)> = None;
    loop {
        let value = feller_level_at(model, lo, hi, b_right, nodes)?;
        if let Some((pi, pb)) = prev {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
            if (close(pi, value.0) && close(pb, value.1)) || nodes >= 4096 {
                return Ok(value);
            }
        }
        prev = Some(value);
        nodes *= 2;
    }
}

fn feller_level_at<C: Coefficients + ?Sized>(
    model: &C,
    lo: f64,
    hi: f64,
    b_right: f64,
    nodes: usize,
) -> Result<(f64, f64), CoefficientError> {
    // Simpson weights over `nodes` subintervals (nodes even).
    let n = nodes;
    let h = (hi - lo) / n as f64;
    // g = 2b/σ² sampled once; B at node j by Simpson on [x_j, hi] computed
    // via a reverse cumulative pass over pairs of subintervals.
    let mut g = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let x = lo + h * j as f64;
        let s = model.sigma(x);
        if !(s > 0.0) {
            return Err(CoefficientError::SigmaNotPositive { x, value: s });
        }
        g.push(2.0 * model.drift(x) / (s * s));
    }
    // Reverse cumulative Simpson over pairs: B at even nodes; odd nodes get
    // the trapezoid of their flanking evens (adequate: B is smooth and the
    // node count doubles until the level stabilizes).
    let mut b_at = vec![0.0_f64; n + 1];
    b_at[n] = b_right;
    let mut j = n;
    while j >= 2 {
        let chunk = h / 3.0 * (g[j - 2] + 4.0 * g[j - 1] + g[j]);
        b_at[j - 2] = b_at[j] + chunk;
        b_at[j - 1] = b_at[j] + 0.5 * chunk;
        j -= 2;
    }
    let delta_b = b_at[0] - b_right;
    let integrand = |j: usize| -> f64 {
        let x = lo + h * j as f64;
        let s = model.sigma(x);
        let b = b_at[j];
        (-b).exp() / (s * s) + b.exp()
    };
    let mut acc = integrand(0) + integrand(n);
    let mut j = 1;
    while j < n {
        acc += 4.0 * integrand(j);
        if j + 1 < n {
            acc += 2.0 * integrand(j + 1);
        }
        j += 2;
    }
    Ok((acc * h / 3.0, delta_b))
}

/// Verdict of the one-step monotonicity condition
/// `x σ′/σ + (b σ′/σ − b′) Δt ≤ 1` on a grid over `x_range`; built-in
/// families short-circuit through their known sufficient parameter regimes.
#[derive(Debug, Clone, PartialEq)]
pub enum StepCondition {
    Holds { analytic: bool },
    Fails { witness: f64, lhs: f64 },
}

const STEP_GRID: usize = 10_000;

pub fn monotone_step_condition(
    model: &CoefficientModel,
    dt: f64,
    x_range: (f64, f64),
) -> StepCondition {
    assert!(dt > 0.0 && dt.is_finite(), "dt must be positive");
    let (lo, hi) = x_range;
    assert!(lo > 0.0 && hi > lo && hi.is_finite(), "x_range must be positive and ordered");
    if let Some(analytic) = analytic_step_condition(model, dt) {
        if analytic {
            return StepCondition::Holds { analytic: true };
        }
    }
    for j in 0..STEP_GRID {
        let x = lo + (hi - lo) * j as f64 / (STEP_GRID - 1) as f64;
        // b (log|b|)' = b' where b != 0, and the b'-form extends continuously
        // through zeros of b, so the b' form is used everywhere.
        let ls = model.sigma_prime(x) / model.sigma(x);
        let lhs = x * ls + (model.drift(x) * ls - model.drift_prime(x)) * dt;
        if lhs > 1.0 + 1e-12 {
            return StepCondition::Fails { witness: x, lhs };
        }
    }
    StepCondition::Holds { analytic: false }
}

/// Known sufficient parameter regimes (exact, no sampling):
/// affine/affine with α,β,γ ≥ 0, δ ≤ 0; σ affine with b = c/x, c ≤ 0;
/// σ = √(2ax) with d ≤ 0 and c·Δt ≥ −1; constants always.
fn analytic_step_condition(model: &CoefficientModel, dt: f64) -> Option<bool> {
    match *model {
        CoefficientModel::Constant { .. } => Some(true),
        CoefficientModel::AffineAffine { alpha, beta, gamma, delta } => {
            Some(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0 && delta <= 0.0)
        }
        CoefficientModel::InverseDrift { alpha, beta, c } => {
            Some(alpha >= 0.0 && beta >= 0.0 && c <= 0.0)
        }
        CoefficientModel::SqrtDiffusion { c, d, .. } => {
            Some(d <= 0.0 && (c >= 0.0 || c * dt >= -1.0))
        }
        CoefficientModel::Custom(_) => None,
    }
}

/// Condition report for a model: positivity of σ, analytic-vs-finite-difference
/// consistency of the stated derivatives (relative 1e-6), and the boundary
/// integral on both sides of the duality.
#[derive(Debug, Clone)]
pub struct CoefficientReport {
    pub sigma_positive: bool,
    pub derivatives_consistent: bool,
    pub max_derivative_rel_err: f64,
    pub feller_original: Result<FellerIntegral, CoefficientError>,
    pub feller_dual: Result<FellerIntegral, CoefficientError>,
}

/// Run the condition checks at the given sample points (all > 0).
pub fn check_conditions(model: &CoefficientModel, xs: &[f64]) -> CoefficientReport {
    let mut sigma_positive = true;
    let mut max_rel = 0.0_f64;
    for &x in xs {
        assert!(x > 0.0, "sample points must be positive");
        if !(model.sigma(x) > 0.0) {
            sigma_positive = false;
        }
        let h = (1e-5 * x).max(1e-8);
        if x - h > 0.0 {
            let fd_sigma = (model.sigma(x + h) - model.sigma(x - h)) / (2.0 * h);
            let fd_drift = (model.drift(x + h) - model.drift(x - h)) / (2.0 * h);
            let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1.0);
            max_rel = max_rel.max(rel(fd_sigma, model.sigma_prime(x)));
            max_rel = max_rel.max(rel(fd_drift, model.drift_prime(x)));
        }
    }
    CoefficientReport {
        sigma_positive,
        derivatives_consistent: max_rel <= 1e-6,
        max_derivative_rel_err: max_rel,
        feller_original: feller_integral(model, FellerSide::Original),
        feller_dual: feller_integral(model, FellerSide::Dual),
    }
}
