//! Independent verification of schedules by direct integration.
//!
//! `Φ̇ = (A + B K_t) Φ` is integrated with classical fixed-step RK4, restarted
//! at every leg boundary so that no step straddles a gain discontinuity.
//! Gains are evaluated in closed form at the RK4 nodes.

use crate::error::{Result, SteerError};
use crate::matfun::{min_singular_value, operator_norm, rel_error};
use crate::planner::GainSchedule;
use crate::segment::{satisfies_norm_condition, satisfies_spd_condition, ConditionTag};
use crate::tolerances::{DEFAULT_LYAPUNOV_TOL, DEFAULT_STEPS_PER_SEGMENT, DEFAULT_TERMINAL_TOL, MIN_STEPS_PER_SEGMENT};
use crate::Mat;

/// One sample of a propagated matrix trajectory (`Φ_t`, or particle states `X_t`).
#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub state: Mat,
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < MIN_STEPS_PER_SEGMENT {
        return Err(SteerError::Domain(format!(
            "need at least {MIN_STEPS_PER_SEGMENT} steps per segment, got {steps}"
        )));
    }
    Ok(())
}

/// Integrates `Ẋ = (A + B K_t) X` from `x0` over the schedule.
///
/// Returns every RK4 node; both endpoints of every leg are included (a leg
/// boundary therefore appears twice, once per leg). A schedule without legs
/// is integrated under `K_c` over its hold time in `steps` steps.
fn propagate(schedule: &GainSchedule, x0: &Mat, steps: usize) -> Result<Vec<Sample>> {
    check_steps(steps)?;
    let base = schedule.system().base();
    let (a, b) = (base.a(), base.b());
    let legs = schedule.segments().len();
    let mut out = Vec::with_capacity((legs.max(1)) * (steps + 1));
    let mut x = x0.clone();

    let mut run = |start: f64, span: f64, gain: &dyn Fn(f64) -> Result<Mat>, x: &mut Mat| -> Result<()> {
        let h = span / steps as f64;
        out.push(Sample { t: start, state: x.clone() });
        if span == 0.0 {
            return Ok(());
        }
        let field = |tau: f64, x: &Mat| -> Result<Mat> {
            let k = gain(tau)?;
            Ok((a + b * k) * x)
        };
        for i in 0..steps {
            let tau = i as f64 * h;
            let k1 = field(tau, x)?;
            let k2 = field(tau + 0.5 * h, &(&*x + &k1 * (0.5 * h)))?;
            let k3 = field(tau + 0.5 * h, &(&*x + &k2 * (0.5 * h)))?;
            let k4 = field(if i + 1 == steps { span } else { tau + h }, &(&*x + &k3 * h))?;
            *x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let t = if i + 1 == steps { start + span } else { start + tau + h };
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SteerError::BlowUp { t });
            }
            out.push(Sample { t, state: x.clone() });
        }
        Ok(())
    };

    if legs == 0 {
        let k_c = schedule.system().k_c().clone();
        run(0.0, schedule.total_time(), &|_| Ok(k_c.clone()), &mut x)?;
    } else {
        for (k, seg) in schedule.segments().iter().enumerate() {
            let start = schedule.start(k);
            let gain = |tau: f64| {
                seg.feedback_gain(tau).map_err(|e| match e {
                    SteerError::LeavesGlPlus { t } => SteerError::LeavesGlPlus { t: start + t },
                    other => other,
                })
            };
            run(start, seg.duration(), &gain, &mut x)?;
        }
    }
    Ok(out)
}

/// Transition matrix `Φ_t` from `Φ_0 = I`, sampled at every RK4 node.
pub fn propagate_transition(schedule: &GainSchedule, steps_per_segment: usize) -> Result<Vec<Sample>> {
    let n = schedule.evaluator().n();
    propagate(schedule, &Mat::identity(n, n), steps_per_segment)
}

/// Particle states (`n × N`, one particle per column) under the broadcast
/// feedback `u_i = K_t x_i`.
pub fn propagate_swarm(schedule: &GainSchedule, x_in: &Mat, steps_per_segment: usize) -> Result<Vec<Sample>> {
    let n = schedule.evaluator().n();
    if x_in.nrows() != n || x_in.ncols() == 0 {
        return Err(SteerError::Dimension(format!(
            "swarm must be {n} x N with N >= 1, got {}x{}",
            x_in.nrows(),
            x_in.ncols()
        )));
    }
    if x_in.iter().any(|v| !v.is_finite()) {
        return Err(SteerError::NonFinite("swarm state"));
    }
    propagate(schedule, x_in, steps_per_segment)
}

/// Verification knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySettings {
    pub steps_per_segment: usize,
    /// Relative Frobenius tolerance on the terminal transition matrix.
    pub terminal_tol: f64,
    /// Tolerance on the normalized Lyapunov residual (covariance plans).
    pub lyapunov_tol: f64,
    /// Interior sample times per leg for the Lyapunov residual.
    pub lyapunov_samples: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            steps_per_segment: DEFAULT_STEPS_PER_SEGMENT,
            terminal_tol: DEFAULT_TERMINAL_TOL,
            lyapunov_tol: DEFAULT_LYAPUNOV_TOL,
            lyapunov_samples: 16,
        }
    }
}

/// Per-leg diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDiagnostics {
    pub index: usize,
    pub start: f64,
    pub tag: ConditionTag,
    /// Whether the recorded tag's condition actually holds for the leg target.
    pub tag_holds: bool,
    /// Smallest `σ_min(Φ_t)` over the leg's samples.
    pub min_inv_margin: f64,
    /// Relative error of the integrated leg endpoint against the closed form.
    pub endpoint_error: f64,
}

/// Covariance transport diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDiagnostics {
    /// Relative Frobenius error of `Φ_T Σ_in Φ_Tᵀ` against `Σ_fn` (integrated `Φ`).
    pub terminal_error: f64,
    /// `Σ_t` positive definite at every sample.
    pub spd_ok: bool,
    /// Smallest eigenvalue of `Σ_t` over the samples.
    pub min_eigenvalue: f64,
    /// `max ‖Σ̇_t − A_K Σ_t − Σ_t A_Kᵀ‖ / (1 + ‖Σ_t‖)` over interior sample times,
    /// with `Σ_t` in closed form and `Σ̇_t` by an extrapolated five-point stencil.
    pub lyapunov_residual: f64,
}

/// Outcome of [`verify`].
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringReport {
    pub passed: bool,
    /// `None` when integration did not reach the final time.
    pub terminal_error: Option<f64>,
    pub min_inv_margin: f64,
    pub det_sign_ok: bool,
    /// Every leg's recorded tag holds.
    pub tags_ok: bool,
    /// Relative error between integrated and closed-form terminal `Φ`.
    pub closed_form_error: Option<f64>,
    pub total_time: f64,
    pub steps_per_segment: usize,
    pub terminal_tol: f64,
    pub segments: Vec<SegmentDiagnostics>,
    pub covariance: Option<CovarianceDiagnostics>,
    /// Why the plan failed, if it did.
    pub failure: Option<String>,
}

/// Integrates the schedule and checks terminal accuracy, invertibility and
/// (for covariance plans) covariance transport. Failures are report outcomes.
pub fn verify(schedule: &GainSchedule, settings: &VerifySettings) -> Result<SteeringReport> {
    check_steps(settings.steps_per_segment)?;
    let w = schedule.evaluator().w_end();
    let tag_holds = |tag: ConditionTag, target: &Mat| match tag {
        ConditionTag::ConjugatedNorm => satisfies_norm_condition(target, w),
        ConditionTag::ConjugatedSpd => satisfies_spd_condition(target, w),
        ConditionTag::Unchecked => false,
    };
    let mut report = SteeringReport {
        passed: false,
        terminal_error: None,
        min_inv_margin: f64::INFINITY,
        det_sign_ok: true,
        tags_ok: schedule.segments().iter().all(|s| tag_holds(s.tag(), s.target())),
        closed_form_error: None,
        total_time: schedule.total_time(),
        steps_per_segment: settings.steps_per_segment,
        terminal_tol: settings.terminal_tol,
        segments: Vec::new(),
        covariance: None,
        failure: None,
    };

    let samples = match propagate_transition(schedule, settings.steps_per_segment) {
        Ok(s) => s,
        Err(e @ (SteerError::LeavesGlPlus { .. } | SteerError::BlowUp { .. })) => {
            report.min_inv_margin = 0.0;
            report.det_sign_ok = false;
            report.failure = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };

    for s in &samples {
        report.min_inv_margin = report.min_inv_margin.min(min_singular_value(&s.state));
        if !(s.state.clone().determinant() > 0.0) {
            report.det_sign_ok = false;
        }
    }

    let per_leg = settings.steps_per_segment + 1;
    for (k, seg) in schedule.segments().iter().enumerate() {
        let chunk = &samples[k * per_leg..(k + 1) * per_leg];
        let margin = chunk.iter().map(|s| min_singular_value(&s.state)).fold(f64::INFINITY, f64::min);
        let closed = schedule.trajectory(schedule.start(k) + seg.duration())?;
        let endpoint = &chunk.last().unwrap().state;
        report.segments.push(SegmentDiagnostics {
            index: k,
            start: schedule.start(k),
            tag: seg.tag(),
            tag_holds: tag_holds(seg.tag(), seg.target()),
            min_inv_margin: margin,
            endpoint_error: rel_error(endpoint, &closed),
        });
    }

    let phi_end = &samples.last().unwrap().state;
    let terminal_error = rel_error(phi_end, schedule.target());
    report.terminal_error = Some(terminal_error);
    report.closed_form_error = Some(rel_error(phi_end, &schedule.trajectory(schedule.total_time())?));

    let mut failures = Vec::new();
    if !(terminal_error <= settings.terminal_tol) {
        failures.push(format!("terminal error {terminal_error:e} exceeds {:e}", settings.terminal_tol));
    }
    if !(report.min_inv_margin > 0.0) {
        failures.push("trajectory reaches a singular matrix".to_string());
    }
    if !report.det_sign_ok {
        failures.push("determinant is not positive along the trajectory".to_string());
    }

    if let Some(ends) = schedule.covariance() {
        let sigma_in = ends.sigma_in.as_mat();
        let mut min_eig = f64::INFINITY;
        for s in &samples {
            let sigma = &s.state * sigma_in * s.state.transpose();
            min_eig = min_eig.min(crate::matfun::symmetrize(&sigma).symmetric_eigenvalues().min());
        }
        let sigma_end = phi_end * sigma_in * phi_end.transpose();
        let lyap = lyapunov_residual(schedule, settings.lyapunov_samples)?;
        let diag = CovarianceDiagnostics {
            terminal_error: rel_error(&sigma_end, ends.sigma_fn.as_mat()),
            spd_ok: min_eig > 0.0,
            min_eigenvalue: min_eig,
            lyapunov_residual: lyap,
        };
        if !(diag.terminal_error <= settings.terminal_tol) {
            failures.push(format!("covariance terminal error {:e} exceeds {:e}", diag.terminal_error, settings.terminal_tol));
        }
        if !diag.spd_ok {
            failures.push("covariance leaves the SPD cone".to_string());
        }
        if !(diag.lyapunov_residual <= settings.lyapunov_tol) {
            failures.push(format!("Lyapunov residual {:e} exceeds {:e}", diag.lyapunov_residual, settings.lyapunov_tol));
        }
        report.covariance = Some(diag);
    }

    report.passed = failures.is_empty();
    if !failures.is_empty() {
        report.failure = Some(failures.join("; "));
    }
    Ok(report)
}

/// Largest normalized residual of `Σ̇ = A_K Σ + Σ A_Kᵀ` along a covariance plan.
///
/// `Σ_t = Φ_t Σ_in Φ_tᵀ` is taken from the closed-form trajectory; `Σ̇_t` from a
/// Richardson-extrapolated five-point central stencil whose points stay
/// inside one leg.
pub fn lyapunov_residual(schedule: &GainSchedule, samples_per_leg: usize) -> Result<f64> {
    let Some(ends) = schedule.covariance() else { return Ok(0.0) };
    let base = schedule.system().base();
    let sigma_at = |t: f64| -> Result<Mat> {
        let phi = schedule.trajectory(t)?;
        Ok(&phi * ends.sigma_in.as_mat() * phi.transpose())
    };
    let legs = schedule.segments().len().max(1);
    let span = if schedule.segments().is_empty() { schedule.total_time() } else { schedule.t_s() };
    if span == 0.0 {
        return Ok(0.0);
    }
    let h = 1e-3 * span;
    let mut worst: f64 = 0.0;
    for k in 0..legs {
        let start = k as f64 * span;
        for j in 0..samples_per_leg.max(1) {
            let t = start + 2.0 * h + (span - 4.0 * h) * (j as f64 + 0.5) / samples_per_leg.max(1) as f64;
            let stencil = |h: f64| -> Result<Mat> {
                Ok((sigma_at(t - 2.0 * h)? - sigma_at(t - h)? * 8.0 + sigma_at(t + h)? * 8.0 - sigma_at(t + 2.0 * h)?)
                    / (12.0 * h))
            };
            // Richardson on h and h/2 cancels the h⁴ truncation term, which
            // otherwise dominates on fast legs.
            let d = (stencil(h / 2.0)? * 16.0 - stencil(h)?) / 15.0;
            let sigma = sigma_at(t)?;
            let a_k = base.a() + base.b() * schedule.eval_gain(t)?;
            let r = d - &a_k * &sigma - &sigma * a_k.transpose();
            worst = worst.max(operator_norm(&r) / (1.0 + operator_norm(&sigma)));
        }
    }
    Ok(worst)
}
