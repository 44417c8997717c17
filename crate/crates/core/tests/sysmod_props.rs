mod common;

use collective_steer::matfun::{operator_norm, spectral_radius};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{double_integrator_eval, random_eval, rng};

/// Placing `±2πik/t_s` needs gains of order `(2π⌊n/2⌋/t_s)^{n/m}`; for
/// n ≥ 5 at sub-second periods `e^{A_c t_s}` can no longer be evaluated to the
/// periodicity tolerance, so those draws use longer periods.
fn period_for(r: &mut ChaCha8Rng, n: usize) -> f64 {
    r.random_range(if n >= 5 { 1.0 } else { 0.5 }..3.0)
}

#[test]
fn gramian_is_monotone() {
    let mut r = rng(101);
    for case in 0..40 {
        let n = 1 + case % 6;
        let t_s = period_for(&mut r, n);
        let eval = random_eval(&mut r, n, t_s);
        let mut t = [r.random_range(0.01..t_s), r.random_range(0.01..t_s)];
        t.sort_by(f64::total_cmp);
        if t[1] - t[0] < 1e-3 {
            continue;
        }
        let diff = eval.flow(t[1]).unwrap().gramian - eval.flow(t[0]).unwrap().gramian;
        let min_eig = collective_steer::matfun::symmetrize(&diff).symmetric_eigenvalues().min();
        assert!(min_eig > 0.0, "case {case}: n = {n}, t = {t:?}, min eig {min_eig:e}");
    }
}

#[test]
fn gramian_is_additive() {
    let mut r = rng(202);
    for case in 0..30 {
        let n = 1 + case % 6;
        let t_s = period_for(&mut r, n);
        let eval = random_eval(&mut r, n, t_s);
        let t1 = r.random_range(0.0..0.6 * t_s);
        let t2 = r.random_range(0.0..(t_s - t1));
        let f1 = eval.flow(t1).unwrap();
        let w2 = eval.flow(t2).unwrap().gramian;
        let back = f1.exp_neg_act.transpose();
        let want = &f1.gramian + &back * &w2 * back.transpose();
        let got = eval.flow(t1 + t2).unwrap().gramian;
        // The oracle itself amplifies rounding by ‖e^{−A_c t₁}‖²; measure
        // against the magnitude of its terms.
        let scale = f1.gramian.norm() + back.norm().powi(2) * w2.norm();
        let err = (&got - &want).norm() / scale;
        assert!(err <= 1e-9, "case {case}: {err:e}");
    }
}

#[test]
fn ratio_spectral_radius_stays_below_one() {
    let mut r = rng(303);
    for case in 0..30 {
        let n = 1 + case % 6;
        let t_s = period_for(&mut r, n);
        let eval = random_eval(&mut r, n, t_s);
        // Closer to t_s the gap 1 − ρ falls below rounding (W_{t_s} − W_t has
        // tiny eigenvalues when m < n).
        for frac in [0.05, 0.25, 0.5, 0.75, 0.9] {
            let ratio = eval.gramian_ratio(frac * t_s, t_s).unwrap();
            assert!(spectral_radius(&ratio) < 1.0, "case {case}, frac {frac}");
        }
    }
}

#[test]
fn ratio_norm_exceeds_one_for_short_periods() {
    for t_s in [0.1, 0.05, 0.01] {
        let eval = double_integrator_eval(t_s);
        let ratio = eval.gramian_ratio(t_s / 4.0, t_s).unwrap();
        assert!(operator_norm(&ratio) > 1.0, "t_s = {t_s}: norm {}", operator_norm(&ratio));
        assert!(spectral_radius(&ratio) < 1.0);
    }
    // And the norm grows as the period shrinks.
    let norm = |t_s: f64| operator_norm(&double_integrator_eval(t_s).gramian_ratio(t_s / 4.0, t_s).unwrap());
    assert!(norm(0.01) > norm(0.1));
}

#[test]
fn multi_input_periodization_meets_tolerance() {
    let mut r = rng(404);
    for case in 0..30 {
        let n = 2 + case % 4;
        let t_s = r.random_range(1.0..4.0);
        let eval = random_eval(&mut r, n, t_s);
        assert!(eval.system().periodicity_residual() <= 1e-8, "case {case}");
    }
}
