mod common;

use std::f64::consts::FRAC_PI_2;

use collective_steer::factorizer::{
    conjugation_epsilon, near_identity_factorize, ordered_product, rotation_to_three_spd, spd_cone_factorize,
};
use collective_steer::matfun::{operator_norm, polar, rel_error, sqrtm_spd, symmetrize};
use collective_steer::segment::{satisfies_norm_condition, satisfies_spd_condition};
use collective_steer::Mat;
use proptest::prelude::*;
use rand::Rng;

use common::{gaussian, random_eval, random_gl_plus, random_spd, rng};

fn rot(theta: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

#[test]
fn conjugation_stretches_by_at_most_the_condition_root() {
    let mut r = rng(1);
    for case in 0..500 {
        let n = 1 + case % 6;
        let w = random_spd(&mut r, n, 1e-3, 1e3);
        let d = gaussian(&mut r, n, n, 1.0);
        let d = &d * (r.random_range(0.0..0.999) / operator_norm(&d));
        let conj = sqrtm_spd(&w).as_mat() * &d * w.inv_sqrt().as_mat();
        let bound = (w.max_eigenvalue() / w.min_eigenvalue()).sqrt();
        assert!(operator_norm(&conj) < bound, "case {case}");
    }
}

#[test]
fn near_identity_factors_pass_the_norm_condition() {
    let mut r = rng(2);
    for case in 0..30 {
        let n = 1 + case % 5;
        let w = random_spd(&mut r, n, 1e-2, 1e2);
        let target = random_gl_plus(&mut r, n);
        let eps = conjugation_epsilon(&w);
        let f = near_identity_factorize(&target, eps).unwrap();
        for phi in &f.factors {
            assert!(operator_norm(&(phi - Mat::identity(n, n))) < eps);
            assert!(satisfies_norm_condition(phi, &w), "case {case}");
        }
        assert!(rel_error(&ordered_product(&f.factors, n), &target) <= 1e-9);
    }
}

#[test]
fn ordered_product_applies_the_first_factor_first() {
    let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let b = Mat::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
    assert_ne!(&a * &b, &b * &a);
    // [Φ₁, Φ₂] ↦ Φ₂ Φ₁
    assert_eq!(ordered_product(&[a.clone(), b.clone()], 2), &b * &a);
    assert_eq!(ordered_product(&[], 2), Mat::identity(2, 2));
}

#[test]
fn three_spd_triples_realize_rotations() {
    let mut r = rng(3);
    for _ in 0..50 {
        let theta = r.random_range(1e-3..FRAC_PI_2 - 1e-3) * if r.random::<bool>() { 1.0 } else { -1.0 };
        let (s1, s2, s3) = rotation_to_three_spd(theta).unwrap();
        let product = s3.as_mat() * s2.as_mat() * s1.as_mat();
        assert!(rel_error(&product, &rot(theta)) <= 1e-12, "theta {theta}");
        if theta > 0.0 {
            let (_, q) = polar(&(s2.as_mat() * s1.as_mat())).unwrap();
            assert!(rel_error(q.as_mat(), &rot(theta)) <= 1e-12);
        }
    }
}

#[test]
fn random_targets_reconstruct() {
    let mut r = rng(4);
    for case in 0..40 {
        let n = 1 + case % 5;
        let t_s = r.random_range(0.5..2.0);
        let eval = random_eval(&mut r, n, t_s);
        let w = eval.w_end();
        let target = random_gl_plus(&mut r, n);

        let cone = spd_cone_factorize(&target, w).unwrap();
        // The cores multiply out to round-off; conjugating each by W^{±1/2}
        // amplifies rounding by up to κ(W) per factor.
        let kappa = w.max_eigenvalue() / w.min_eigenvalue();
        let cores: Vec<Mat> = cone.cores.iter().map(|c| c.as_mat().clone()).collect();
        let psi = eval.w_end_inv_sqrt().as_mat() * &target * eval.w_end_sqrt().as_mat();
        assert!(rel_error(&ordered_product(&cores, n), &psi) <= 1e-12, "case {case}");
        let err = rel_error(&ordered_product(&cone.factors, n), &target);
        let tol = 1e-8f64.max(2e-14 * kappa * cone.len() as f64);
        assert!(err <= tol, "case {case}: {err:e} with κ(W) = {kappa:e}");
        if kappa <= 1e4 {
            assert!(err <= 1e-8, "case {case}: {err:e}");
        }
        for (phi, core) in cone.factors.iter().zip(&cone.cores) {
            assert!(satisfies_spd_condition(phi, w), "case {case}");
            assert!(core.min_eigenvalue() > 0.0);
            let c = core.as_mat();
            assert!((c - c.transpose()).norm() <= 1e-10 * (1.0 + c.norm()));
        }

        let near = near_identity_factorize(&target, conjugation_epsilon(w)).unwrap();
        assert!(rel_error(&ordered_product(&near.factors, n), &target) <= 1e-9, "case {case}");
        assert!(near.factors.iter().all(|phi| satisfies_norm_condition(phi, w)), "case {case}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spd_cone_cores_are_spd(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng(seed);
        let w = random_spd(&mut r, n, 1e-2, 1e2);
        let target = random_gl_plus(&mut r, n);
        let f = spd_cone_factorize(&target, &w).unwrap();
        prop_assert_eq!(f.factors.len(), f.cores.len());
        for core in &f.cores {
            let sym = symmetrize(core.as_mat());
            prop_assert!(sym.symmetric_eigenvalues().min() > 0.0);
        }
        prop_assert!(rel_error(&ordered_product(&f.factors, n), &target) <= 1e-8);
    }
}
