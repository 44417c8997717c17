//! Numerical tolerances shared across modules.

/// Relative symmetry tolerance: `‖M − Mᵀ‖ ≤ SYM_TOL · (1 + ‖M‖)`.
pub const SYM_TOL: f64 = 1e-8;

/// Orthogonality tolerance for rotations: `‖QᵀQ − I‖ ≤ ORTH_TOL`.
pub const ORTH_TOL: f64 = 1e-8;

/// Periodicity tolerance per state dimension: residual must be `≤ PERIOD_TOL_PER_DIM · n`.
pub const PERIOD_TOL_PER_DIM: f64 = 1e-8;

/// Margin on the strict conjugated-norm inequality `‖·‖ < 1`.
pub const COND_SLACK: f64 = 1e-9;

/// Relative invertibility margin for gain evaluation: `σ_min(Φ) > INV_MARGIN · ‖Φ‖`.
pub const INV_MARGIN: f64 = 1e-9;

/// Angle within which a rotation block is treated as a half turn.
pub const HALF_TURN_TOL: f64 = 1e-10;

/// Default uniform grid size for singularity scans.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// Minimum grid size accepted by singularity scans.
pub const MIN_GRID_POINTS: usize = 16;

/// Default fixed RK4 steps per segment.
pub const DEFAULT_STEPS_PER_SEGMENT: usize = 2000;

/// Minimum RK4 steps per segment.
pub const MIN_STEPS_PER_SEGMENT: usize = 100;

/// Default relative terminal error accepted by verification.
pub const DEFAULT_TERMINAL_TOL: f64 = 1e-6;

/// Default bound on the normalized Lyapunov residual for covariance plans.
pub const DEFAULT_LYAPUNOV_TOL: f64 = 1e-6;

/// Fixed-point tolerance for the nonlinear feedback law.
pub const FP_TOL: f64 = 1e-12;

/// Iteration cap for the nonlinear feedback law.
pub const FP_MAX_ITERS: usize = 200;

/// Number of Heymann draws before pole assignment gives up.
pub const HEYMANN_DRAWS: usize = 8;

/// Relative numerical-rank threshold for the Kalman test (scaled by `n · σ_max`).
pub const RANK_TOL: f64 = 1e-12;

/// Seed used when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 0x5EED_C011_EC71_7E00;
