//! Numerical tolerances shared by constructors, validators and tests.

/// Max-norm Hermiticity slack for stored density matrices.
pub const HERMITIAN: f64 = 1e-12;
/// Hermiticity slack accepted for caller-supplied operators.
pub const HERMITIAN_INPUT: f64 = 1e-10;
/// Smallest eigenvalue allowed for a positive semidefinite operator.
pub const PSD: f64 = 1e-10;
/// Unit-trace slack for normalized states.
pub const TRACE: f64 = 1e-12;
/// Max-norm slack on POVM completeness and PVM projector identities.
pub const MEASUREMENT: f64 = 1e-10;
/// Gell-Mann coefficient round-trip slack.
pub const ROUND_TRIP: f64 = 1e-12;
/// Smoothing added under the square root of each eigenvalue on the
/// differentiable trace-norm path: |x| ~ sqrt(x^2 + eps).
pub const TRACE_NORM_SMOOTHING: f64 = 1e-12;
/// Minimum Tr[M M^dag] for a usable hidden-state parameter.
pub const MIN_STATE_NORM: f64 = 1e-30;
