//! Pathwise duality for one-dimensional stochastic flows on the half-line.
//!
//! The crate builds discrete stochastic flows with the absorbing
//! Euler–Maruyama scheme, inverts them exactly as piecewise-linear monotone
//! functions to obtain the dual (reflected) flows, and verifies the duality
//! relations — the Siegmund identity in law, a weak-error identity, and
//! pathwise strong-error bounds — by deterministic checks and seeded Monte
//! Carlo with closed-form Brownian oracles.
//!
//! The companion guide under `book/` walks through the concepts; the
//! `dualflow` binary exposes the checks on the command line.

pub mod coefficients;
pub mod flow;
pub mod mc;
pub mod monotone;
pub mod noise;
pub mod numeric;

pub use coefficients::{
    dual_transform, feller_integral, monotone_step_condition, CoefficientError, CoefficientModel,
    Coefficients, DualCoefficients, FellerIntegral, FellerSide, StepCondition,
};
pub use flow::{
    dual_flow, em_absorbing_flow, em_absorbing_terminal, em_reflected_path, exact_suffix_chain,
    exact_window_map, geometric_grid, reference_flow, suffix_snapshots, DiscreteFlow, FlowError,
    ReflectedPath, TimeGrid,
};
pub use mc::{
    bm_absorbed_tail, estimate_dual_expectation, estimate_tail_prob, gronwall_bound_check,
    inverse_expectation_identity, reflected_bm_expectation, render_report_csv, siegmund_check,
    siegmund_joint_check, strong_error_bound_check, weak_error_identity_check, weak_rate_fit,
    zero_occupation_check, BoundReport, CheckRow, DualityEstimate, McError, McEstimate, RateFit,
    Scheme, TestFunction, WeakIdentityReport,
};
pub use monotone::{
    inversion_property_suite, levy_metric, rd_condition, sup_metric, MonotoneError, MonotoneFn,
    PropertyCheck, PropertySuiteReport,
};
pub use noise::NoisePath;
