#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use collective_steer::matfun::{expm, Spd};
use collective_steer::planner::evaluator_for;
use collective_steer::sysmod::{kalman_rank_ok, GramianEvaluator, LinearEnsemble, PeriodizedSystem};
use collective_steer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn double_integrator() -> LinearEnsemble {
    LinearEnsemble::new(Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), Mat::from_row_slice(2, 1, &[0.0, 1.0])).unwrap()
}

/// Double integrator with the gain `K_c = [−(2π/t_s)², 0]`.
pub fn double_integrator_eval(t_s: f64) -> Arc<GramianEvaluator> {
    let w = 2.0 * PI / t_s;
    let p = PeriodizedSystem::with_gain(double_integrator(), Mat::from_row_slice(1, 2, &[-w * w, 0.0]), t_s).unwrap();
    Arc::new(GramianEvaluator::new(p).unwrap())
}

pub fn driftless_eval(n: usize, t_s: f64) -> Arc<GramianEvaluator> {
    let sys = LinearEnsemble::new(Mat::zeros(n, n), Mat::identity(n, n)).unwrap();
    Arc::new(GramianEvaluator::new(PeriodizedSystem::with_gain(sys, Mat::zeros(n, n), t_s).unwrap()).unwrap())
}

/// Random controllable pair with `A ~ N(0, 1/n)`, `B ~ N(0, 1)`.
pub fn random_controllable(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearEnsemble {
    loop {
        let a = gaussian(rng, n, n, 1.0 / (n as f64).sqrt());
        let b = gaussian(rng, n, m, 1.0);
        if let Ok(sys) = LinearEnsemble::new(a, b) {
            if kalman_rank_ok(&sys) {
                return sys;
            }
        }
    }
}

/// Periodized evaluator for a random system; multi-input draws keep the
/// periodizing gain well conditioned.
pub fn random_eval(rng: &mut ChaCha8Rng, n: usize, t_s: f64) -> Arc<GramianEvaluator> {
    let m = if n == 1 { 1 } else { 2.min(n) };
    let mut last = None;
    for _ in 0..50 {
        let sys = random_controllable(rng, n, m);
        match evaluator_for(&sys, None, t_s, rng.random()) {
            Ok(e) => return e,
            Err(e) => last = Some(e),
        }
    }
    panic!("no random n = {n} system periodized at t_s = {t_s}: {last:?}");
}

/// SPD with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Spd {
    let q = random_rotation(rng, n);
    let d = Mat::from_diagonal(&collective_steer::Vector::from_fn(n, |_, _| rng.random_range(lo..=hi)));
    Spd::new(collective_steer::matfun::symmetrize(&(&q * d * q.transpose()))).unwrap()
}

pub fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let skew = {
        let g = gaussian(rng, n, n, 1.0);
        (&g - g.transpose()) * 0.5
    };
    expm(&(skew * 1.5)).unwrap()
}

/// Random element of `GL⁺(n)` with moderate conditioning.
pub fn random_gl_plus(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    loop {
        let m = Mat::identity(n, n) + gaussian(rng, n, n, 0.8);
        let det = m.clone().determinant();
        let cond = {
            let s = m.clone().singular_values();
            s.max() / s.min()
        };
        if det > 0.0 && cond < 50.0 {
            return m;
        }
    }
}
