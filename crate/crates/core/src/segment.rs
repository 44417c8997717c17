//! One minimum-energy steering leg over a period of a periodized system.
//!
//! For a target `Φ_k` and duration `T = t_s`, the unique minimum-energy input
//! for `Φ̇ = A_c Φ + B U` is
//!
//! ```text
//! U*_t = Bᵀ e^{−A_cᵀ t} W_T⁻¹ (e^{−A_c T} Φ_k − I)
//! Φ*_t = e^{A_c t} (I + W_t W_T⁻¹ (e^{−A_c T} Φ_k − I))
//! K*_t = U*_t (Φ*_t)⁻¹ + K_c
//! ```
//!
//! With periodization `e^{−A_c T} = I`; the general form is kept because it is
//! no more expensive and absorbs the (tolerated) periodicity residual exactly.
//! The feedback form exists as long as `Φ*_t` stays in `GL⁺`, which is
//! guaranteed when the target passes either reachability condition below.

use std::sync::Arc;

use crate::error::{Result, SteerError};
use crate::matfun::{expm, min_singular_value, operator_norm, symmetrize, Spd};
use crate::sysmod::GramianEvaluator;
use crate::tolerances::{COND_SLACK, INV_MARGIN, MIN_GRID_POINTS, SYM_TOL};
use crate::Mat;

/// Margin below which a refined local minimum of `σ_min/max(1, ‖Φ‖)` counts
/// as a touching zero of the determinant.
const TOUCH_TOL: f64 = 1e-8;

/// Which reachability condition a segment target was certified by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionTag {
    /// `‖W^{−1/2} Φ W^{1/2} − I‖ < 1`: the trajectory stays invertible.
    ConjugatedNorm,
    /// `W^{−1/2} Φ W^{1/2}` symmetric positive definite: invertible for any duration.
    ConjugatedSpd,
    /// Not certified (replayed or deliberately forced segments only).
    Unchecked,
}

impl ConditionTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditionTag::ConjugatedNorm => "conjugated_norm",
            ConditionTag::ConjugatedSpd => "conjugated_spd",
            ConditionTag::Unchecked => "unchecked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conjugated_norm" => Some(ConditionTag::ConjugatedNorm),
            "conjugated_spd" => Some(ConditionTag::ConjugatedSpd),
            "unchecked" => Some(ConditionTag::Unchecked),
            _ => None,
        }
    }

    /// True for tags that certify invertibility along the leg.
    pub fn is_certified(self) -> bool {
        !matches!(self, ConditionTag::Unchecked)
    }
}

/// `Ψ = W^{−1/2} Φ W^{1/2}`.
pub fn conjugate(target: &Mat, w: &Spd) -> Mat {
    let half = w.map_spectrum(f64::sqrt);
    let inv_half = w.inv_sqrt();
    inv_half.as_mat() * target * half
}

/// `‖W^{−1/2} Φ W^{1/2} − I‖₂`.
pub fn conjugated_norm(target: &Mat, w: &Spd) -> f64 {
    let n = target.nrows();
    operator_norm(&(conjugate(target, w) - Mat::identity(n, n)))
}

/// Relative symmetry defect `‖Ψ − Ψᵀ‖₂ / (1 + ‖Ψ‖₂)` and `λ_min(sym Ψ)` of the conjugate.
pub fn conjugated_spd_defect(target: &Mat, w: &Spd) -> (f64, f64) {
    let psi = conjugate(target, w);
    let defect = operator_norm(&(&psi - psi.transpose())) / (1.0 + operator_norm(&psi));
    let min_eig = symmetrize(&psi).symmetric_eigenvalues().min();
    (defect, min_eig)
}

fn det_positive(target: &Mat) -> bool {
    target.iter().all(|x| x.is_finite()) && target.clone().determinant() > 0.0
}

/// Norm condition: `det Φ > 0` and `‖W^{−1/2} Φ W^{1/2} − I‖ < 1` (with a small
/// safety slack; the boundary itself is rejected).
pub fn satisfies_norm_condition(target: &Mat, w: &Spd) -> bool {
    det_positive(target) && conjugated_norm(target, w) < 1.0 - COND_SLACK
}

/// SPD condition: `W^{−1/2} Φ W^{1/2}` is symmetric (to `SYM_TOL` relative) and
/// its symmetric part is positive definite.
pub fn satisfies_spd_condition(target: &Mat, w: &Spd) -> bool {
    if !det_positive(target) {
        return false;
    }
    let (defect, min_eig) = conjugated_spd_defect(target, w);
    defect <= SYM_TOL && min_eig > 0.0
}

/// Closed-form quantities of a leg at one instant.
#[derive(Debug, Clone)]
pub struct SegmentSample {
    /// `Φ*_t`.
    pub trajectory: Mat,
    /// `U*_t`.
    pub input: Mat,
}

/// One minimum-energy leg from `I` to `target` over one period of the system.
#[derive(Debug, Clone)]
pub struct SteeringSegment {
    eval: Arc<GramianEvaluator>,
    target: Mat,
    tag: ConditionTag,
    /// `W_T⁻¹ (e^{−A_c T} Φ_k − I)`.
    coef: Mat,
}

impl SteeringSegment {
    /// Certifies `target` against `W_{t_s}` (norm condition first, then SPD)
    /// and builds the leg. Fails with a structured rejection if neither holds.
    pub fn new(eval: Arc<GramianEvaluator>, target: Mat) -> Result<Self> {
        check_target(&eval, &target)?;
        let det = target.clone().determinant();
        if !(det > 0.0) {
            return Err(SteerError::NotInGlPlus { det });
        }
        let w = eval.w_end();
        let tag = if satisfies_norm_condition(&target, w) {
            ConditionTag::ConjugatedNorm
        } else if satisfies_spd_condition(&target, w) {
            ConditionTag::ConjugatedSpd
        } else {
            let norm = conjugated_norm(&target, w);
            let (symmetry_defect, min_eig) = conjugated_spd_defect(&target, w);
            return Err(SteerError::ConditionNotMet { norm, symmetry_defect, min_eig });
        };
        Self::build(eval, target, tag)
    }

    /// Builds the leg only if `target` passes the requested condition.
    pub fn with_tag(eval: Arc<GramianEvaluator>, target: Mat, tag: ConditionTag) -> Result<Self> {
        check_target(&eval, &target)?;
        let det = target.clone().determinant();
        if !(det > 0.0) {
            return Err(SteerError::NotInGlPlus { det });
        }
        let w = eval.w_end();
        let ok = match tag {
            ConditionTag::ConjugatedNorm => satisfies_norm_condition(&target, w),
            ConditionTag::ConjugatedSpd => satisfies_spd_condition(&target, w),
            ConditionTag::Unchecked => true,
        };
        if !ok {
            let norm = conjugated_norm(&target, w);
            let (symmetry_defect, min_eig) = conjugated_spd_defect(&target, w);
            return Err(SteerError::ConditionNotMet { norm, symmetry_defect, min_eig });
        }
        Self::build(eval, target, tag)
    }

    /// Builds the leg without any check beyond shape and finiteness, tagged
    /// [`ConditionTag::Unchecked`]. Used for forced legs and for replaying
    /// plan files that may have been tampered with; verification is expected
    /// to catch the consequences.
    pub fn unchecked(eval: Arc<GramianEvaluator>, target: Mat) -> Result<Self> {
        check_target(&eval, &target)?;
        Self::build(eval, target, ConditionTag::Unchecked)
    }

    fn build(eval: Arc<GramianEvaluator>, target: Mat, tag: ConditionTag) -> Result<Self> {
        let n = eval.n();
        let drift_back = expm(&(eval.system().a_c() * -eval.t_s()))?;
        let g = drift_back * &target - Mat::identity(n, n);
        let coef = eval.w_end().solve(&g)?;
        Ok(SteeringSegment { eval, target, tag, coef })
    }

    pub fn evaluator(&self) -> &Arc<GramianEvaluator> {
        &self.eval
    }

    pub fn target(&self) -> &Mat {
        &self.target
    }

    pub fn tag(&self) -> ConditionTag {
        self.tag
    }

    /// Leg duration (the system period).
    pub fn duration(&self) -> f64 {
        self.eval.t_s()
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let d = self.duration();
        // Allow round-off when callers add up local clocks.
        if !(t >= -1e-12 * d && t <= d * (1.0 + 1e-12)) {
            return Err(SteerError::Domain(format!("time {t} outside segment [0, {d}]")));
        }
        Ok(t.clamp(0.0, d))
    }

    /// `Φ*_t` and `U*_t` from one block exponential.
    pub fn sample(&self, t: f64) -> Result<SegmentSample> {
        let t = self.check_time(t)?;
        let n = self.eval.n();
        let flow = self.eval.flow(t)?;
        let trajectory = &flow.exp_ac * (Mat::identity(n, n) + &flow.gramian * &self.coef);
        let input = self.eval.system().base().b().transpose() * &flow.exp_neg_act * &self.coef;
        Ok(SegmentSample { trajectory, input })
    }

    /// Minimum-energy open-loop input `U*_t` (`m × n`).
    pub fn optimal_input(&self, t: f64) -> Result<Mat> {
        Ok(self.sample(t)?.input)
    }

    /// Optimal transition matrix `Φ*_t`.
    pub fn optimal_trajectory(&self, t: f64) -> Result<Mat> {
        Ok(self.sample(t)?.trajectory)
    }

    /// Feedback gain `K*_t = U*_t (Φ*_t)⁻¹ + K_c`.
    ///
    /// Fails with [`SteerError::LeavesGlPlus`] when
    /// `σ_min(Φ*_t) ≤ INV_MARGIN · max(1, ‖Φ*_t‖)`.
    pub fn feedback_gain(&self, t: f64) -> Result<Mat> {
        let s = self.sample(t)?;
        gain_from_sample(&s, self.eval.system().k_c(), t)
    }

    /// Times in `[0, T]` where `det Φ*_t` vanishes.
    ///
    /// Sign changes of the determinant on a uniform grid are bisected to
    /// `1e−9 · T`. Zeros where the determinant touches zero without changing
    /// sign (even multiplicity, e.g. a scalar multiple of the identity passing
    /// through zero in even dimension) are found by refining every grid-local
    /// minimum of `σ_min(Φ*_t) / max(1, ‖Φ*_t‖)` with a golden-section search and
    /// reporting those that reach `INV_MARGIN`.
    pub fn singularity_scan(&self, grid_points: usize) -> Result<Vec<f64>> {
        if grid_points < MIN_GRID_POINTS {
            return Err(SteerError::Domain(format!(
                "singularity scan needs at least {MIN_GRID_POINTS} grid points, got {grid_points}"
            )));
        }
        let d = self.duration();
        let times: Vec<f64> = (0..=grid_points).map(|i| d * i as f64 / grid_points as f64).collect();
        let mut dets = Vec::with_capacity(times.len());
        let mut margins = Vec::with_capacity(times.len());
        for &t in &times {
            let phi = self.optimal_trajectory(t)?;
            dets.push(phi.clone().determinant());
            margins.push(relative_margin(&phi));
        }

        let det_at = |t: f64| self.optimal_trajectory(t).map(|p| p.determinant());
        let margin_at = |t: f64| self.optimal_trajectory(t).map(|p| relative_margin(&p));
        let tol = 1e-9 * d;
        let mut found = Vec::new();

        for i in 0..times.len() {
            if dets[i] == 0.0 || margins[i] <= INV_MARGIN {
                found.push(times[i]);
                continue;
            }
            if i + 1 < times.len() && dets[i + 1] != 0.0 && dets[i].signum() != dets[i + 1].signum() {
                let (mut lo, mut hi) = (times[i], times[i + 1]);
                let s_lo = dets[i].signum();
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    let v = det_at(mid)?;
                    if v == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if v.signum() == s_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                found.push(0.5 * (lo + hi));
            }
        }

        for i in 1..times.len() - 1 {
            if margins[i] <= margins[i - 1] && margins[i] <= margins[i + 1] && margins[i] > INV_MARGIN {
                let (t_min, m_min) = golden_minimize(&margin_at, times[i - 1], times[i + 1], 1e-12 * d)?;
                if m_min <= TOUCH_TOL {
                    found.push(t_min);
                }
            }
        }

        found.sort_by(f64::total_cmp);
        found.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * d);
        Ok(found)
    }
}

/// `σ_min(Φ) / max(1, ‖Φ‖)`: relative for large trajectories, absolute near
/// zero (a pure ratio would rate `10⁻¹⁶·I` as perfectly invertible).
pub(crate) fn relative_margin(phi: &Mat) -> f64 {
    min_singular_value(phi) / operator_norm(phi).max(1.0)
}

pub(crate) fn gain_from_sample(s: &SegmentSample, k_c: &Mat, t: f64) -> Result<Mat> {
    let phi = &s.trajectory;
    if !(relative_margin(phi) > INV_MARGIN) || !phi.clone().determinant().is_finite() {
        return Err(SteerError::LeavesGlPlus { t });
    }
    // K = U Φ⁻¹  ⇔  Φᵀ Kᵀ = Uᵀ.
    let kt = phi
        .transpose()
        .lu()
        .solve(&s.input.transpose())
        .ok_or(SteerError::LeavesGlPlus { t })?;
    Ok(kt.transpose() + k_c)
}

fn golden_minimize(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

fn check_target(eval: &GramianEvaluator, target: &Mat) -> Result<()> {
    let n = eval.n();
    if target.nrows() != n || target.ncols() != n {
        return Err(SteerError::Dimension(format!(
            "target must be {n}x{n}, got {}x{}",
            target.nrows(),
            target.ncols()
        )));
    }
    if target.iter().any(|x| !x.is_finite()) {
        return Err(SteerError::NonFinite("segment target"));
    }
    Ok(())
}
