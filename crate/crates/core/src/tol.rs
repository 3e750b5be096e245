//! Numerical tolerances used across validation, checks, and tests.
//!
//! Centralized so that every module thresholds the same quantity the same
//! way. Each constant notes what it bounds and why the value is safe for
//! the matrix sizes this crate handles (n <= 8 states, superoperators up
//! to a few hundred rows).

/// Row sums of stochastic matrices, row sums of rate matrices, and
/// decomposition weight sums. Inputs are exact or normalized once, so
/// only a handful of additions separate them from 1 (or 0); 1e-12 leaves
/// four orders of magnitude of slack over accumulated f64 rounding.
pub const ROW_SUM_ABS: f64 = 1e-12;

/// Row sums of numerically computed stochastic matrices (matrix
/// exponentials). The Pade evaluation and repeated squaring lose more
/// digits than plain normalization, hence the looser bound.
pub const NUMERICAL_ROW_SUM: f64 = 1e-10;

/// Most negative entry tolerated in a computed stochastic matrix before
/// construction fails. Entries in (-NUMERICAL_ENTRY_CLAMP, 0) are rounding
/// noise and are clamped to exactly 0 so that support queries stay honest.
pub const NUMERICAL_ENTRY_CLAMP: f64 = 1e-10;

/// Allowed Poisson tail mass beyond the truncation order of the
/// uniformized exponential series.
pub const SERIES_TAIL: f64 = 1e-13;

/// Residual for algebraic identities evaluated by two independent finite
/// routes (uniformization round trips, decomposition round trips, induced
/// generators, Lindblad generator identities).
pub const EXACT_ALGEBRA: f64 = 1e-12;

/// Residual between two full matrix exponential routes (Pade versus
/// truncated uniformized series).
pub const EXP_CROSS: f64 = 1e-10;

/// Semigroup law residual exp(R(t+s)) vs exp(Rt)exp(Rs); two exponentials
/// and one product stack their errors.
pub const SEMIGROUP: f64 = 1e-9;

/// Residual for the semigroup extension check exp(Lt) m_f = m_{exp(Rt)f}
/// over a time grid; the superoperator exponential runs on d^2 x d^2
/// matrices and is the loosest exponential route in the crate.
pub const EXTENSION: f64 = 1e-8;

/// Residual between generators built from couplings completed in two
/// different ways; the two routes differ only in the enumeration order of
/// terms, so they agree almost to machine precision.
pub const COMPLETION_INVARIANCE: f64 = 1e-14;

/// Most negative Choi eigenvalue tolerated when certifying complete
/// positivity of exp(Lt).
pub const PSD_EIG_FLOOR: f64 = 1e-10;

/// Residual of exp(Lt)(I) - I (unitality of the Heisenberg semigroup).
pub const IDENTITY_PRESERVATION: f64 = 1e-10;

/// Significance level for chi-square goodness-of-fit verdicts.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// Width of Monte Carlo acceptance bands in standard errors.
pub const STAT_SIGMA: f64 = 3.0;
