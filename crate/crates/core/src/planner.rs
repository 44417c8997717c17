//! End-to-end gain schedules.
//!
//! A schedule concatenates legs of equal duration `t_s` over one periodized
//! system. Leg `k` steers `I → Φ_k`; by right invariance the trajectory on leg
//! `k` is `Φ^{k,*}_τ · Φ_{k−1} ⋯ Φ₁` and the gain is just leg `k`'s feedback
//! gain at the local clock `τ`, so prior targets never enter the gain.
//!
//! Mean steering (a common reference input added to every agent) is out of
//! scope: the ensemble is steered about the origin.

use std::sync::Arc;

use crate::error::{Result, SteerError};
use crate::factorizer::{
    self, conjugation_epsilon, near_identity_factorize, ordered_product, planar_angle, spd_cone_factorize,
    SpdConeFactorization,
};
use crate::matfun::{self, rel_error, sqrtm_spd, Spd};
use crate::segment::{ConditionTag, SteeringSegment};
use crate::sysmod::{kalman_rank_ok, periodize_seeded, GramianEvaluator, LinearEnsemble, PeriodizedSystem};
use crate::tolerances::DEFAULT_SEED;
use crate::Mat;

/// Default period for free-time plans.
pub const DEFAULT_FREE_TIME_PERIOD: f64 = 1.0;

/// Maximum number of recomputations of the factor count in strong plans.
const MAX_K_ROUNDS: usize = 6;

/// How the goal is given.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// Transition from `Φ_in` to `Φ_fn`; the effective target is `Φ_fn Φ_in⁻¹`.
    Transition { phi_in: Mat, phi_fn: Mat },
    /// Arrangements of `n` agents (`n × n`, one agent per column); the
    /// effective target is `X_fn X_in⁻¹`.
    Arrangement { x_in: Mat, x_fn: Mat },
}

impl TargetSpec {
    /// Steer from the identity to `phi_fn`.
    pub fn to(phi_fn: Mat) -> Self {
        let n = phi_fn.nrows();
        TargetSpec::Transition { phi_in: Mat::identity(n, n), phi_fn }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Transition { phi_fn, .. } => phi_fn.nrows(),
            TargetSpec::Arrangement { x_fn, .. } => x_fn.nrows(),
        }
    }

    /// Effective target in `GL⁺(n)`.
    pub fn effective_target(&self) -> Result<Mat> {
        let (start, end, what) = match self {
            TargetSpec::Transition { phi_in, phi_fn } => (phi_in, phi_fn, "initial transition matrix"),
            TargetSpec::Arrangement { x_in, x_fn } => (x_in, x_fn, "initial arrangement"),
        };
        matfun::ensure_square_finite(start, what)?;
        matfun::ensure_square_finite(end, "final arrangement")?;
        if start.shape() != end.shape() {
            return Err(SteerError::Dimension(format!(
                "initial and final must agree, got {:?} and {:?}",
                start.shape(),
                end.shape()
            )));
        }
        let inv = start
            .clone()
            .try_inverse()
            .ok_or_else(|| SteerError::Domain(format!("{what} is singular")))?;
        let target = end * inv;
        let det = target.clone().determinant();
        if !(det > 0.0) {
            return Err(SteerError::NotInGlPlus { det });
        }
        Ok(target)
    }
}

/// Factor family used by [`plan_strong`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorizationKind {
    /// Polar split plus Givens reduction, `K = 1 + 3·#sub-rotations`.
    SpdCone,
    /// Planar rotations only: `[W^{1/2}, W^{1/2}S_iW^{−1/2} (i=1..3), W^{−1/2}]`.
    PlanarFive,
}

impl FactorizationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FactorizationKind::SpdCone => "spd_cone",
            FactorizationKind::PlanarFive => "planar_five",
        }
    }
}

/// A steering request.
#[derive(Debug, Clone)]
pub struct SteeringTask {
    pub system: LinearEnsemble,
    pub target: TargetSpec,
    /// Total time; required by strong and single-segment plans.
    pub t_fn: Option<f64>,
    /// Caller-supplied periodizing gain (residual-checked).
    pub k_c: Option<Mat>,
    /// Seed for the randomized parts of gain synthesis.
    pub seed: u64,
    pub factorization: FactorizationKind,
}

impl SteeringTask {
    pub fn new(system: LinearEnsemble, target: TargetSpec) -> Self {
        SteeringTask { system, target, t_fn: None, k_c: None, seed: DEFAULT_SEED, factorization: FactorizationKind::SpdCone }
    }

    pub fn with_t_fn(mut self, t_fn: f64) -> Self {
        self.t_fn = Some(t_fn);
        self
    }

    pub fn with_gain(mut self, k_c: Mat) -> Self {
        self.k_c = Some(k_c);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_factorization(mut self, kind: FactorizationKind) -> Self {
        self.factorization = kind;
        self
    }

    fn validate(&self) -> Result<Mat> {
        if self.target.dim() != self.system.n() {
            return Err(SteerError::Dimension(format!(
                "target is {0}x{0} but the system has n = {1}",
                self.target.dim(),
                self.system.n()
            )));
        }
        if !kalman_rank_ok(&self.system) {
            return Err(SteerError::Uncontrollable);
        }
        self.target.effective_target()
    }

    fn required_t_fn(&self) -> Result<f64> {
        match self.t_fn {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(SteerError::Domain(format!("t_fn must be positive, got {t}"))),
            None => Err(SteerError::Domain("this mode needs a total time t_fn".into())),
        }
    }

    fn evaluator(&self, t_s: f64) -> Result<Arc<GramianEvaluator>> {
        evaluator_for(&self.system, self.k_c.as_ref(), t_s, self.seed)
    }
}

/// Periodizes (or checks a supplied gain) and builds the Gramian evaluator.
pub fn evaluator_for(system: &LinearEnsemble, k_c: Option<&Mat>, t_s: f64, seed: u64) -> Result<Arc<GramianEvaluator>> {
    let p = match k_c {
        Some(k) => PeriodizedSystem::with_gain(system.clone(), k.clone(), t_s)?,
        None => periodize_seeded(system, t_s, seed)?,
    };
    Ok(Arc::new(GramianEvaluator::new(p)?))
}

/// Steering of a covariance `Σ_in → Σ_fn` in time `t_fn`.
#[derive(Debug, Clone)]
pub struct CovarianceTask {
    pub system: LinearEnsemble,
    pub sigma_in: Spd,
    pub sigma_fn: Spd,
    pub t_fn: f64,
    pub k_c: Option<Mat>,
    pub seed: u64,
}

impl CovarianceTask {
    pub fn new(system: LinearEnsemble, sigma_in: Spd, sigma_fn: Spd, t_fn: f64) -> Self {
        CovarianceTask { system, sigma_in, sigma_fn, t_fn, k_c: None, seed: DEFAULT_SEED }
    }
}

/// Where a schedule's legs came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// `strong`, `free_time`, `single_segment`, `covariance`, `explicit` or `replay`.
    pub mode: String,
    /// `spd_cone`, `planar_five`, `near_identity`, `single`, `covariance`, `explicit`, or `none`.
    pub factorization: String,
    /// Near-identity bound, when used.
    pub epsilon: Option<f64>,
    /// Near-identity copy counts `(N₁, N₂)`, when used.
    pub copies: Option<(usize, usize)>,
    /// Identity legs appended to keep `t_s = t_fn / K` consistent.
    pub padding: usize,
}

impl Provenance {
    pub fn new(mode: &str, factorization: &str) -> Self {
        Provenance { mode: mode.into(), factorization: factorization.into(), epsilon: None, copies: None, padding: 0 }
    }
}

/// Initial and final covariances carried by covariance plans.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEnds {
    pub sigma_in: Spd,
    pub sigma_fn: Spd,
}

/// Ordered legs of equal duration `t_s` tiling `[0, total_time]`.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    eval: Arc<GramianEvaluator>,
    segments: Vec<SteeringSegment>,
    /// `prefix[k] = Φ_k ⋯ Φ₁` (so `prefix[0] = I`).
    prefix: Vec<Mat>,
    total_time: f64,
    target: Mat,
    provenance: Provenance,
    covariance: Option<CovarianceEnds>,
}

impl GainSchedule {
    /// Assembles legs over `eval` (all legs last `t_s`). With no legs the
    /// schedule holds `K_c` for `hold_time`.
    pub fn new(
        eval: Arc<GramianEvaluator>,
        segments: Vec<SteeringSegment>,
        target: Mat,
        hold_time: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = eval.n();
        if target.shape() != (n, n) {
            return Err(SteerError::Dimension(format!("schedule target must be {n}x{n}")));
        }
        let mut prefix = vec![Mat::identity(n, n)];
        for seg in &segments {
            if !Arc::ptr_eq(seg.evaluator(), &eval) && seg.evaluator().system() != eval.system() {
                return Err(SteerError::Domain("all legs must share the schedule's system".into()));
            }
            let next = seg.target() * prefix.last().unwrap();
            prefix.push(next);
        }
        let total_time = if segments.is_empty() {
            if !(hold_time >= 0.0 && hold_time.is_finite()) {
                return Err(SteerError::Domain(format!("hold time must be non-negative, got {hold_time}")));
            }
            hold_time
        } else {
            segments.len() as f64 * eval.t_s()
        };
        Ok(GainSchedule { eval, segments, prefix, total_time, target, provenance, covariance: None })
    }

    /// Pins the total time. Schedules with legs accept only a change within a
    /// relative `1e-9` of `K · t_s` (stored horizons round in the last bits).
    pub fn with_total_time(mut self, total: f64) -> Result<Self> {
        let ok = if self.segments.is_empty() {
            total >= 0.0 && total.is_finite()
        } else {
            (total - self.total_time).abs() <= 1e-9 * self.total_time
        };
        if !ok {
            return Err(SteerError::Domain(format!("total time {total} does not match the legs ({})", self.total_time)));
        }
        self.total_time = total;
        Ok(self)
    }

    pub fn with_covariance(mut self, ends: CovarianceEnds) -> Self {
        self.covariance = Some(ends);
        self
    }

    pub fn evaluator(&self) -> &Arc<GramianEvaluator> {
        &self.eval
    }

    pub fn system(&self) -> &PeriodizedSystem {
        self.eval.system()
    }

    pub fn segments(&self) -> &[SteeringSegment] {
        &self.segments
    }

    pub fn t_s(&self) -> f64 {
        self.eval.t_s()
    }

    /// Start time of leg `k`.
    pub fn start(&self, k: usize) -> f64 {
        k as f64 * self.eval.t_s()
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    /// The task target the schedule is meant to realize.
    pub fn target(&self) -> &Mat {
        &self.target
    }

    /// `Φ_K ⋯ Φ₁` of the leg targets.
    pub fn leg_product(&self) -> &Mat {
        self.prefix.last().unwrap()
    }

    /// `Φ_k ⋯ Φ₁` for `k = 0..=K`.
    pub fn prefix(&self, k: usize) -> &Mat {
        &self.prefix[k]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn covariance(&self) -> Option<&CovarianceEnds> {
        self.covariance.as_ref()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.total_time.max(1e-300);
        if !(t >= -slack && t <= self.total_time + slack) {
            return Err(SteerError::Domain(format!("time {t} outside schedule [0, {}]", self.total_time)));
        }
        Ok(())
    }

    /// Leg index and local clock for `t`. Legs are left-closed, right-open;
    /// `t = total_time` belongs to the last leg.
    pub fn locate(&self, t: f64) -> Result<Option<(usize, f64)>> {
        self.check_time(t)?;
        if self.segments.is_empty() {
            return Ok(None);
        }
        let t_s = self.eval.t_s();
        let k = ((t.max(0.0) / t_s).floor() as usize).min(self.segments.len() - 1);
        let tau = (t - self.start(k)).clamp(0.0, t_s);
        Ok(Some((k, tau)))
    }

    /// `K_t`; `K_c` when the schedule has no legs.
    pub fn eval_gain(&self, t: f64) -> Result<Mat> {
        match self.locate(t)? {
            None => Ok(self.eval.system().k_c().clone()),
            Some((k, tau)) => self.segments[k].feedback_gain(tau).map_err(|e| shift_time(e, self.start(k))),
        }
    }

    /// Closed-form piecewise trajectory `Φ_t = Φ^{k,*}_τ · Φ_{k−1} ⋯ Φ₁`.
    pub fn trajectory(&self, t: f64) -> Result<Mat> {
        match self.locate(t)? {
            None => matfun::expm(&(self.eval.system().a_c() * t)),
            Some((k, tau)) => Ok(self.segments[k].optimal_trajectory(tau)? * &self.prefix[k]),
        }
    }

    /// `Σ_t = Φ_t Σ_in Φ_tᵀ` for covariance plans.
    pub fn covariance_at(&self, t: f64) -> Result<Option<Mat>> {
        let Some(c) = &self.covariance else { return Ok(None) };
        let phi = self.trajectory(t)?;
        Ok(Some(&phi * c.sigma_in.as_mat() * phi.transpose()))
    }

    /// Relative Frobenius error of the leg product against the target.
    pub fn product_error(&self) -> f64 {
        rel_error(self.leg_product(), &self.target)
    }
}

fn shift_time(e: SteerError, offset: f64) -> SteerError {
    match e {
        SteerError::LeavesGlPlus { t } => SteerError::LeavesGlPlus { t: t + offset },
        other => other,
    }
}

fn is_identity(m: &Mat) -> bool {
    let n = m.nrows();
    (m - Mat::identity(n, n)).norm() <= 64.0 * f64::EPSILON * n as f64
}

fn hold_schedule(eval: Arc<GramianEvaluator>, target: Mat, hold: f64, provenance: Provenance) -> Result<GainSchedule> {
    GainSchedule::new(eval, Vec::new(), target, hold, provenance)
}

/// Prescribed-time plan: every leg passes the conjugated-SPD condition, so the
/// plan exists for any `t_fn > 0`.
///
/// The factor count `K` depends on `W_{t_s}` and `t_s = t_fn / K`: a trial
/// factorization at `t_fn / 5` fixes `K`, the factorization is recomputed at
/// `t_fn / K`, and if it then needs fewer factors the list is padded with
/// identity legs; if it needs more, `K` is raised and the step repeated.
pub fn plan_strong(task: &SteeringTask) -> Result<GainSchedule> {
    let target = task.validate()?;
    let t_fn = task.required_t_fn()?;
    let mode = "strong";
    if is_identity(&target) {
        let eval = task.evaluator(t_fn)?;
        return hold_schedule(eval, target, t_fn, Provenance::new(mode, "none"));
    }

    let factorize = |eval: &GramianEvaluator| -> Result<SpdConeFactorization> {
        match task.factorization {
            FactorizationKind::SpdCone => spd_cone_factorize(&target, eval.w_end()),
            FactorizationKind::PlanarFive => {
                let theta = planar_angle(&target)?;
                factorizer::planar_rotation_five_factors(theta, eval.w_end())
            }
        }
    };

    let trial = factorize(&*task.evaluator(t_fn / 5.0)?)?;
    let mut k = trial.len().max(1);
    for _ in 0..MAX_K_ROUNDS {
        let eval = task.evaluator(t_fn / k as f64)?;
        let f = factorize(&eval)?;
        if f.len() <= k {
            let padding = k - f.len();
            let n = target.nrows();
            let mut factors = f.factors;
            factors.extend(std::iter::repeat_n(Mat::identity(n, n), padding));
            let mut segments = Vec::with_capacity(k);
            for phi in factors {
                let tag = if is_identity(&phi) { ConditionTag::ConjugatedNorm } else { ConditionTag::ConjugatedSpd };
                segments.push(SteeringSegment::with_tag(eval.clone(), phi, tag)?);
            }
            let mut prov = Provenance::new(mode, task.factorization.as_str());
            prov.padding = padding;
            let schedule = GainSchedule::new(eval, segments, target, t_fn, prov)?;
            return Ok(force_total(schedule, t_fn));
        }
        k = f.len();
    }
    Err(SteerError::Numerical(format!("factor count did not settle after {MAX_K_ROUNDS} rounds")))
}

/// `K · (t_fn/K)` can differ from `t_fn` in the last bit; pin it.
fn force_total(mut s: GainSchedule, t_fn: f64) -> GainSchedule {
    s.total_time = t_fn;
    s
}

/// Free-time plan: near-identity legs of one period each, every leg passing
/// the conjugated-norm condition; total time `N · t_s`.
pub fn plan_free_time(task: &SteeringTask, t_s: Option<f64>) -> Result<GainSchedule> {
    let target = task.validate()?;
    let t_s = t_s.unwrap_or(DEFAULT_FREE_TIME_PERIOD);
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(SteerError::Domain(format!("period must be positive, got {t_s}")));
    }
    let eval = task.evaluator(t_s)?;
    if is_identity(&target) {
        return hold_schedule(eval, target, 0.0, Provenance::new("free_time", "none"));
    }
    let mut epsilon = conjugation_epsilon(eval.w_end());
    // The bound ‖Φ_k − I‖ < ε gives the norm condition strictly; shrink ε
    // slightly if a factor lands inside the safety slack.
    for _ in 0..8 {
        let f = near_identity_factorize(&target, epsilon)?;
        let segments: Result<Vec<_>> = f
            .factors
            .iter()
            .map(|phi| SteeringSegment::with_tag(eval.clone(), phi.clone(), ConditionTag::ConjugatedNorm))
            .collect();
        match segments {
            Ok(segments) => {
                let mut prov = Provenance::new("free_time", "near_identity");
                prov.epsilon = Some(f.epsilon);
                prov.copies = Some((f.n1, f.n2));
                return GainSchedule::new(eval, segments, target, 0.0, prov);
            }
            Err(SteerError::ConditionNotMet { .. }) => epsilon *= 0.99,
            Err(e) => return Err(e),
        }
    }
    Err(SteerError::Numerical("near-identity factors keep missing the norm condition".into()))
}

/// One minimum-energy leg over `t_fn`; rejected (not repaired) when the
/// target meets neither reachability condition.
pub fn plan_single_segment(task: &SteeringTask) -> Result<GainSchedule> {
    let target = task.validate()?;
    let t_fn = task.required_t_fn()?;
    let eval = task.evaluator(t_fn)?;
    let seg = SteeringSegment::new(eval.clone(), target.clone())?;
    let schedule = GainSchedule::new(eval, vec![seg], target, t_fn, Provenance::new("single_segment", "single"))?;
    Ok(force_total(schedule, t_fn))
}

/// The conjugated-SPD target carrying `Σ_in` to `Σ_fn` against `W`:
/// `Φ = W^{1/2} Σ̃_in^{−1/2} (Σ̃_in^{1/2} Σ̃_fn Σ̃_in^{1/2})^{1/2} Σ̃_in^{−1/2} W^{−1/2}`
/// with `Σ̃ = W^{−1/2} Σ W^{−1/2}`.
pub fn covariance_target(sigma_in: &Spd, sigma_fn: &Spd, w: &Spd) -> Result<Mat> {
    let w_half = sqrtm_spd(w);
    let w_inv_half = w.inv_sqrt();
    let conj = |s: &Spd| Spd::new(matfun::symmetrize(&(w_inv_half.as_mat() * s.as_mat() * w_inv_half.as_mat())));
    let tin = conj(sigma_in)?;
    let tfn = conj(sigma_fn)?;
    let tin_half = sqrtm_spd(&tin);
    let tin_inv_half = tin.inv_sqrt();
    let middle = Spd::new(matfun::symmetrize(&(tin_half.as_mat() * tfn.as_mat() * tin_half.as_mat())))?;
    let mut core = matfun::symmetrize(&(tin_inv_half.as_mat() * sqrtm_spd(&middle).as_mat() * tin_inv_half.as_mat()));
    // The conjugated covariances carry κ(Σ)·κ(W); polish S against the
    // residual measured in the original coordinates.
    let lift = |s: &Mat| w_half.as_mat() * s * w_inv_half.as_mat();
    let residual = |s: &Mat| {
        let phi = lift(s);
        &phi * sigma_in.as_mat() * phi.transpose() - sigma_fn.as_mat()
    };
    for _ in 0..COVARIANCE_REFINE_STEPS {
        let r = residual(&core);
        if r.norm() <= 1e-15 * sigma_fn.as_mat().norm() {
            break;
        }
        let c = -(w_inv_half.as_mat() * r * w_inv_half.as_mat());
        let m = tin.as_mat() * &core;
        let Some(ds) = solve_congruence(&m, &c) else { break };
        let next = matfun::symmetrize(&(&core + ds));
        if residual(&next).norm() >= residual(&core).norm() {
            break;
        }
        core = next;
    }
    Ok(lift(&core))
}

/// Newton steps used to polish the covariance transport core.
const COVARIANCE_REFINE_STEPS: usize = 3;

/// Solves `X M + Mᵀ X = C` for `X` (vectorized, `n ≤` a handful).
fn solve_congruence(m: &Mat, c: &Mat) -> Option<Mat> {
    let n = m.nrows();
    let eye = Mat::identity(n, n);
    let op = m.transpose().kronecker(&eye) + eye.kronecker(&m.transpose());
    let rhs = nalgebra::DVector::from_column_slice(c.as_slice());
    let x = op.lu().solve(&rhs)?;
    Some(Mat::from_column_slice(n, n, x.as_slice()))
}

/// Covariance plan: a single conjugated-SPD leg over `t_fn`.
pub fn plan_covariance(task: &CovarianceTask) -> Result<GainSchedule> {
    let n = task.system.n();
    if task.sigma_in.dim() != n || task.sigma_fn.dim() != n {
        return Err(SteerError::Dimension(format!("covariances must be {n}x{n}")));
    }
    if !(task.t_fn > 0.0 && task.t_fn.is_finite()) {
        return Err(SteerError::Domain(format!("t_fn must be positive, got {}", task.t_fn)));
    }
    if !kalman_rank_ok(&task.system) {
        return Err(SteerError::Uncontrollable);
    }
    let eval = evaluator_for(&task.system, task.k_c.as_ref(), task.t_fn, task.seed)?;
    let target = covariance_target(&task.sigma_in, &task.sigma_fn, eval.w_end())?;
    let ends = CovarianceEnds { sigma_in: task.sigma_in.clone(), sigma_fn: task.sigma_fn.clone() };
    let prov = Provenance::new("covariance", "covariance");
    if is_identity(&target) {
        return Ok(hold_schedule(eval, target, task.t_fn, prov)?.with_covariance(ends));
    }
    let seg = SteeringSegment::with_tag(eval.clone(), target.clone(), ConditionTag::ConjugatedSpd)?;
    let schedule = GainSchedule::new(eval, vec![seg], target, task.t_fn, prov)?;
    Ok(force_total(schedule, task.t_fn).with_covariance(ends))
}

/// Schedule from an explicit factor list, one leg of `t_s` each; every factor
/// must pass one of the reachability conditions.
pub fn plan_from_factors(eval: Arc<GramianEvaluator>, factors: &[Mat], factorization: &str) -> Result<GainSchedule> {
    let n = eval.n();
    let segments: Result<Vec<_>> = factors.iter().map(|f| SteeringSegment::new(eval.clone(), f.clone())).collect();
    let target = ordered_product(factors, n);
    GainSchedule::new(eval, segments?, target, 0.0, Provenance::new("explicit", factorization))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn double_integrator() -> LinearEnsemble {
        LinearEnsemble::new(Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), Mat::from_row_slice(2, 1, &[0.0, 1.0])).unwrap()
    }

    fn rot(theta: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn arrangement_target() {
        let x_in = Mat::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 2.0]);
        let phi = rot(0.4);
        let spec = TargetSpec::Arrangement { x_in: x_in.clone(), x_fn: &phi * &x_in };
        assert!(rel_error(&spec.effective_target().unwrap(), &phi) < 1e-14);
        let flipped = TargetSpec::Arrangement { x_in: x_in.clone(), x_fn: Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]) * &x_in };
        assert!(matches!(flipped.effective_target(), Err(SteerError::NotInGlPlus { .. })));
    }

    #[test]
    fn identity_targets_hold() {
        let task = SteeringTask::new(double_integrator(), TargetSpec::to(Mat::identity(2, 2))).with_t_fn(2.0);
        let s = plan_strong(&task).unwrap();
        assert!(s.segments().is_empty());
        assert_eq!(s.total_time(), 2.0);
        assert_eq!(&s.eval_gain(1.0).unwrap(), s.system().k_c());
        assert!(plan_free_time(&task, None).unwrap().segments().is_empty());
    }

    #[test]
    fn strong_plan_tiles_time_and_reconstructs() {
        for &t_fn in &[20.0, 0.5, 0.05] {
            let task = SteeringTask::new(double_integrator(), TargetSpec::to(rot(PI / 4.0))).with_t_fn(t_fn);
            let s = plan_strong(&task).unwrap();
            assert_eq!(s.total_time(), t_fn);
            assert!((s.segments().len() as f64 * s.t_s() - t_fn).abs() < 1e-12 * t_fn);
            assert!(s.product_error() < 1e-8, "{}", s.product_error());
            assert!(s.segments().iter().all(|g| g.tag().is_certified()));
            assert!(rel_error(&s.trajectory(t_fn).unwrap(), &rot(PI / 4.0)) < 1e-8);
        }
    }

    #[test]
    fn planar_five_strong_plan() {
        let task = SteeringTask::new(double_integrator(), TargetSpec::to(rot(PI / 4.0)))
            .with_t_fn(20.0)
            .with_factorization(FactorizationKind::PlanarFive);
        let s = plan_strong(&task).unwrap();
        assert_eq!(s.segments().len(), 5);
        assert!((s.t_s() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_convention_is_left_closed() {
        let task = SteeringTask::new(double_integrator(), TargetSpec::to(rot(PI / 4.0))).with_t_fn(1.0);
        let s = plan_strong(&task).unwrap();
        let t_s = s.t_s();
        assert_eq!(s.locate(t_s).unwrap(), Some((1, 0.0)));
        assert_eq!(s.locate(1.0).unwrap().unwrap().0, s.segments().len() - 1);
        assert!(s.eval_gain(1.5).is_err());
        let g = s.eval_gain(t_s).unwrap();
        assert!(rel_error(&g, &s.segments()[1].feedback_gain(0.0).unwrap()) < 1e-14);
    }

    #[test]
    fn trajectory_is_continuous_at_boundaries() {
        let task = SteeringTask::new(double_integrator(), TargetSpec::to(rot(2.0))).with_t_fn(3.0);
        let s = plan_strong(&task).unwrap();
        for k in 1..s.segments().len() {
            let left = s.segments()[k - 1].optimal_trajectory(s.t_s()).unwrap() * s.prefix(k - 1);
            let right = s.trajectory(s.start(k)).unwrap();
            assert!(rel_error(&left, &right) < 1e-8);
        }
    }

    #[test]
    fn free_time_plan() {
        let task = SteeringTask::new(double_integrator(), TargetSpec::to(rot(PI / 4.0)));
        let s = plan_free_time(&task, Some(4.0)).unwrap();
        assert!(s.segments().len() > 1);
        assert_eq!(s.total_time(), s.segments().len() as f64 * 4.0);
        assert!(s.segments().iter().all(|g| g.tag() == ConditionTag::ConjugatedNorm));
        assert!(s.product_error() < 1e-9);

        let half = SteeringTask::new(double_integrator(), TargetSpec::to(-Mat::identity(2, 2)));
        let s = plan_free_time(&half, None).unwrap();
        assert!(s.product_error() < 1e-9);
    }

    #[test]
    fn single_segment_rejects_example_one() {
        let sys = LinearEnsemble::new(Mat::zeros(2, 2), Mat::identity(2, 2)).unwrap();
        let task = SteeringTask::new(sys, TargetSpec::to(-Mat::identity(2, 2))).with_t_fn(1.0).with_gain(Mat::zeros(2, 2));
        match plan_single_segment(&task) {
            Err(SteerError::ConditionNotMet { norm, .. }) => assert!((norm - 2.0).abs() < 1e-9),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn covariance_closed_form() {
        let sys = LinearEnsemble::new(Mat::zeros(2, 2), Mat::identity(2, 2)).unwrap();
        let sigma_fn = Spd::new(Mat::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0])).unwrap();
        let mut task = CovarianceTask::new(sys, Spd::identity(2), sigma_fn.clone(), 1.0);
        task.k_c = Some(Mat::zeros(2, 2));
        let s = plan_covariance(&task).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(rel_error(s.target(), &expected) < 1e-12);
        let end = s.covariance_at(1.0).unwrap().unwrap();
        assert!(rel_error(&end, sigma_fn.as_mat()) < 1e-10);

        let same = CovarianceTask::new(double_integrator(), Spd::identity(2), Spd::identity(2), 1.0);
        assert!(plan_covariance(&same).unwrap().segments().is_empty());
    }
}
