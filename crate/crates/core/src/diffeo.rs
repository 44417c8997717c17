//! Feedback for nonlinear rearrangements `x ↦ φ(x)` over one period.
//!
//! Each agent can be steered open loop from `x_in` to `φ(x_in)` by the
//! minimum-energy pair
//!
//! ```text
//! x*_t = e^{A_c t} (x_in + W_t W⁻¹ (φ(x_in) − x_in))
//! u*_t = Bᵀ e^{−A_cᵀ t} W⁻¹ (φ(x_in) − x_in)
//! ```
//!
//! with `W = W_{t_s}`. To make this a feedback `u = K(x, t)` one must recover
//! `x_in` from the current state. In scaled coordinates `x_in = W^{1/2} y`,
//! with `ψ(y) = W^{−1/2} φ(W^{1/2} y) − y`, the initial point solves
//!
//! ```text
//! y = W^{−1/2} e^{−A_c t} x − W^{−1/2} W_t W^{−1/2} ψ(y),
//! ```
//!
//! a contraction whenever `ψ` is (since `W_t ⪯ W`). The Banach iteration is
//! used. Contraction is only checked empirically on probe pairs in a box;
//! the hypothesis it stands for is global.
//!
//! Longer words of contractions (composing several such legs) are not
//! implemented.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SteerError};
use crate::matfun::{expm, sqrtm_spd};
use crate::sysmod::GramianEvaluator;
use crate::tolerances::{DEFAULT_STEPS_PER_SEGMENT, FP_MAX_ITERS, FP_TOL, MIN_STEPS_PER_SEGMENT};
use crate::{Mat, Vector};

/// Number of random pairs used for the empirical Lipschitz estimate.
pub const LIPSCHITZ_PROBES: usize = 200;

/// A map `ℝⁿ → ℝⁿ` usable as a rearrangement target.
pub type Map = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Named maps exposed on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinMap {
    Identity,
    /// `x + c`.
    Translate(Vector),
    /// `M x`.
    Linear(Mat),
    /// `x + α tanh(x)` componentwise.
    TanhPerturb(f64),
}

impl BuiltinMap {
    pub fn dim_ok(&self, n: usize) -> bool {
        match self {
            BuiltinMap::Translate(c) => c.len() == n,
            BuiltinMap::Linear(m) => m.shape() == (n, n),
            _ => true,
        }
    }

    pub fn into_map(self) -> Map {
        match self {
            BuiltinMap::Identity => Arc::new(|x: &Vector| x.clone()),
            BuiltinMap::Translate(c) => Arc::new(move |x: &Vector| x + &c),
            BuiltinMap::Linear(m) => Arc::new(move |x: &Vector| &m * x),
            BuiltinMap::TanhPerturb(alpha) => Arc::new(move |x: &Vector| x + x.map(|v| alpha * v.tanh())),
        }
    }
}

/// A contraction-compatible rearrangement over one period of a periodized system.
#[derive(Clone)]
pub struct DiffeoTask {
    eval: Arc<GramianEvaluator>,
    phi: Map,
    /// `e^{−A_c t_s}` (the identity up to the periodicity residual).
    drift_back: Mat,
    lipschitz: f64,
    w_half: Mat,
    w_inv_half: Mat,
}

impl std::fmt::Debug for DiffeoTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffeoTask").field("n", &self.eval.n()).field("lipschitz", &self.lipschitz).finish()
    }
}

/// Result of solving for the feedback at one `(x, t)`.
#[derive(Debug, Clone)]
pub struct FeedbackSolution {
    /// Input `u = K(x, t)` added to the periodizing feedback.
    pub u: Vector,
    /// Recovered initial point `x_in`.
    pub x_in: Vector,
    pub iterations: usize,
    /// `‖y_{k+1} − y_k‖` per iteration.
    pub residuals: Vec<f64>,
}

impl DiffeoTask {
    /// Estimates the Lipschitz constant of `ψ` from [`LIPSCHITZ_PROBES`] random
    /// pairs with `x` uniform in `[−half_width, half_width]ⁿ` and refuses maps
    /// whose estimate (or `lipschitz_hint`, if larger) is not below 1.
    pub fn new(
        eval: Arc<GramianEvaluator>,
        phi: Map,
        half_width: f64,
        lipschitz_hint: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(SteerError::Domain(format!("probe box half-width must be positive, got {half_width}")));
        }
        let n = eval.n();
        let probe = phi(&Vector::zeros(n));
        if probe.len() != n {
            return Err(SteerError::Dimension(format!("map must send R^{n} to R^{n}, got length {}", probe.len())));
        }
        let drift_back = expm(&(eval.system().a_c() * -eval.t_s()))?;
        let w_half = sqrtm_spd(eval.w_end()).into_mat();
        let w_inv_half = eval.w_end_inv_sqrt().as_mat().clone();
        let mut task = DiffeoTask { eval, phi, drift_back, lipschitz: 0.0, w_half, w_inv_half };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut estimate: f64 = 0.0;
        for _ in 0..LIPSCHITZ_PROBES {
            let x1 = Vector::from_fn(n, |_, _| rng.random_range(-half_width..=half_width));
            let x2 = Vector::from_fn(n, |_, _| rng.random_range(-half_width..=half_width));
            let (y1, y2) = (&task.w_inv_half * x1, &task.w_inv_half * x2);
            let dy = (&y1 - &y2).norm();
            if dy > 0.0 {
                let dpsi = (task.psi(&y1) - task.psi(&y2)).norm();
                if !dpsi.is_finite() {
                    return Err(SteerError::NonFinite("map value"));
                }
                estimate = estimate.max(dpsi / dy);
            }
        }
        let l = estimate.max(lipschitz_hint.unwrap_or(0.0));
        if !(l < 1.0) {
            return Err(SteerError::NotContraction { estimate: l });
        }
        task.lipschitz = l;
        Ok(task)
    }

    pub fn from_builtin(eval: Arc<GramianEvaluator>, map: BuiltinMap, half_width: f64, seed: u64) -> Result<Self> {
        if !map.dim_ok(eval.n()) {
            return Err(SteerError::Dimension(format!("builtin map does not act on R^{}", eval.n())));
        }
        DiffeoTask::new(eval, map.into_map(), half_width, None, seed)
    }

    pub fn evaluator(&self) -> &Arc<GramianEvaluator> {
        &self.eval
    }

    /// Lipschitz constant used (empirical estimate or the larger hint).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn period(&self) -> f64 {
        self.eval.t_s()
    }

    /// `φ(x)`.
    pub fn apply(&self, x: &Vector) -> Vector {
        (self.phi)(x)
    }

    /// `ψ(y) = W^{−1/2} e^{−A_c t_s} φ(W^{1/2} y) − y`.
    pub fn psi(&self, y: &Vector) -> Vector {
        let x = &self.w_half * y;
        &self.w_inv_half * (&self.drift_back * (self.phi)(&x)) - y
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let d = self.period();
        if !(t >= -1e-12 * d && t <= d * (1.0 + 1e-12)) {
            return Err(SteerError::Domain(format!("time {t} outside [0, {d}]")));
        }
        Ok(t.clamp(0.0, d))
    }

    fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.eval.n() {
            return Err(SteerError::Dimension(format!("state must have length {}, got {}", self.eval.n(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SteerError::NonFinite("state"));
        }
        Ok(())
    }

    /// Open-loop minimum-energy pair `(x*_t, u*_t)` from `x_in`.
    pub fn open_loop_pair(&self, x_in: &Vector, t: f64) -> Result<(Vector, Vector)> {
        self.check_point(x_in)?;
        let t = self.check_time(t)?;
        let flow = self.eval.flow(t)?;
        let gap = &self.drift_back * (self.phi)(x_in) - x_in;
        let coef = self.eval.w_end().solve(&Mat::from_column_slice(gap.len(), 1, gap.as_slice()))?;
        let coef = coef.column(0).into_owned();
        let x_star = &flow.exp_ac * (x_in + &flow.gramian * &coef);
        let u_star = self.eval.system().base().b().transpose() * &flow.exp_neg_act * &coef;
        Ok((x_star, u_star))
    }

    /// Solves the fixed point for `x_in` and returns the feedback with its trace.
    pub fn feedback_solve(&self, x: &Vector, t: f64) -> Result<FeedbackSolution> {
        self.check_point(x)?;
        let t = self.check_time(t)?;
        let flow = self.eval.flow(t)?;
        let back = expm(&(self.eval.system().a_c() * -t))?;
        let c = &self.w_inv_half * (back * x);
        let s = &self.w_inv_half * &flow.gramian * &self.w_inv_half;
        let mut y = c.clone();
        let mut residuals = Vec::new();
        for it in 1..=FP_MAX_ITERS {
            let next = &c - &s * self.psi(&y);
            let step = (&next - &y).norm();
            residuals.push(step);
            y = next;
            if !step.is_finite() {
                break;
            }
            if step <= FP_TOL * y.norm().max(1.0) {
                let x_in = &self.w_half * &y;
                let (_, u) = self.open_loop_pair(&x_in, t)?;
                return Ok(FeedbackSolution { u, x_in, iterations: it, residuals });
            }
        }
        Err(SteerError::FixedPointStalled {
            iterations: residuals.len(),
            residual: residuals.last().copied().unwrap_or(f64::NAN),
        })
    }

    /// `u = K(x, t)`.
    pub fn feedback_eval(&self, x: &Vector, t: f64) -> Result<Vector> {
        Ok(self.feedback_solve(x, t)?.u)
    }

    /// Integrates `ẋ = A_c x + B K(x, t)` from `x_in` over one period (RK4,
    /// `steps` steps) and returns the trajectory samples `(t, x_t)`.
    pub fn closed_loop_trajectory(&self, x_in: &Vector, steps: usize) -> Result<Vec<(f64, Vector)>> {
        self.check_point(x_in)?;
        if steps < MIN_STEPS_PER_SEGMENT {
            return Err(SteerError::Domain(format!("need at least {MIN_STEPS_PER_SEGMENT} steps, got {steps}")));
        }
        let a_c = self.eval.system().a_c();
        let b = self.eval.system().base().b();
        let field = |t: f64, x: &Vector| -> Result<Vector> { Ok(a_c * x + b * self.feedback_eval(x, t)?) };
        let d = self.period();
        let h = d / steps as f64;
        let mut x = x_in.clone();
        let mut out = vec![(0.0, x.clone())];
        for i in 0..steps {
            let t = i as f64 * h;
            let t_next = if i + 1 == steps { d } else { t + h };
            let k1 = field(t, &x)?;
            let k2 = field(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
            let k3 = field(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
            let k4 = field(t_next, &(&x + &k3 * h))?;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SteerError::BlowUp { t: t_next });
            }
            out.push((t_next, x.clone()));
        }
        Ok(out)
    }

    /// `‖x_{t_s} − φ(x_in)‖` under the closed loop.
    pub fn closed_loop_check(&self, x_in: &Vector, steps: usize) -> Result<f64> {
        let traj = self.closed_loop_trajectory(x_in, steps)?;
        Ok((&traj.last().unwrap().1 - self.apply(x_in)).norm())
    }
}

/// Default RK4 step count for closed-loop checks.
pub const DEFAULT_CLOSED_LOOP_STEPS: usize = DEFAULT_STEPS_PER_SEGMENT;
