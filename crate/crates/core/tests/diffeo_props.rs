mod common;

use std::sync::Arc;

use collective_steer::diffeo::{BuiltinMap, DiffeoTask};
use collective_steer::segment::SteeringSegment;
use collective_steer::sysmod::GramianEvaluator;
use collective_steer::{Mat, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{double_integrator_eval, driftless_eval, gaussian, rng};

fn point(r: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vector {
    Vector::from_fn(n, |_, _| r.random_range(-half_width..=half_width))
}

fn tanh_tasks() -> Vec<DiffeoTask> {
    vec![
        DiffeoTask::from_builtin(driftless_eval(2, 1.0), BuiltinMap::TanhPerturb(0.4), 2.0, 1).unwrap(),
        DiffeoTask::from_builtin(driftless_eval(3, 2.5), BuiltinMap::TanhPerturb(-0.3), 2.0, 2).unwrap(),
        DiffeoTask::from_builtin(double_integrator_eval(2.0), BuiltinMap::TanhPerturb(0.02), 2.0, 3).unwrap(),
    ]
}

#[test]
fn feedback_recovers_the_open_loop_input() {
    let mut r = rng(61);
    for (k, task) in tanh_tasks().iter().enumerate() {
        let n = task.evaluator().n();
        for _ in 0..20 {
            let x_in = point(&mut r, n, 2.0);
            let t = r.random_range(0.0..task.period());
            let (x, u) = task.open_loop_pair(&x_in, t).unwrap();
            let sol = task.feedback_solve(&x, t).unwrap();
            assert!((&sol.u - &u).norm() <= 1e-8 * u.norm().max(1.0), "task {k}, t = {t}");
            assert!((&sol.x_in - &x_in).norm() <= 1e-8 * x_in.norm().max(1.0));
        }
    }
}

#[test]
fn iteration_contracts_at_the_lipschitz_rate() {
    let mut r = rng(62);
    for (k, task) in tanh_tasks().iter().enumerate() {
        let l = task.lipschitz();
        assert!(l < 1.0);
        let n = task.evaluator().n();
        for _ in 0..10 {
            let x = point(&mut r, n, 2.0);
            let t = r.random_range(0.0..task.period());
            let sol = task.feedback_solve(&x, t).unwrap();
            for pair in sol.residuals.windows(2) {
                // Below ~1e-10 the steps are round-off, not contraction.
                if pair[0] > 1e-10 {
                    assert!(pair[1] <= (l + 0.05) * pair[0], "task {k}: {} → {} with L = {l}", pair[0], pair[1]);
                }
            }
        }
    }
}

/// `W^{1/2} (I + Δ) W^{−1/2}` with `‖Δ‖ = radius`.
fn norm_target(r: &mut ChaCha8Rng, eval: &GramianEvaluator, radius: f64) -> Mat {
    let n = eval.n();
    let d = gaussian(r, n, n, 1.0);
    let d = &d * (radius / collective_steer::matfun::operator_norm(&d));
    eval.w_end_sqrt().as_mat() * (Mat::identity(n, n) + d) * eval.w_end_inv_sqrt().as_mat()
}

#[test]
fn linear_maps_reduce_to_the_segment_law() {
    let mut r = rng(63);
    let evals: Vec<Arc<GramianEvaluator>> = vec![double_integrator_eval(2.0), driftless_eval(3, 1.0), common::random_eval(&mut r, 3, 1.5)];
    for (k, eval) in evals.into_iter().enumerate() {
        let n = eval.n();
        let m = norm_target(&mut r, &eval, 0.6);
        let seg = SteeringSegment::new(eval.clone(), m.clone()).unwrap();
        let task = DiffeoTask::from_builtin(eval.clone(), BuiltinMap::Linear(m), 2.0, 4).unwrap();
        let k_c = eval.system().k_c().clone();
        for _ in 0..10 {
            let x_in = point(&mut r, n, 2.0);
            let t = r.random_range(0.0..eval.t_s());
            let (x, u) = task.open_loop_pair(&x_in, t).unwrap();
            let x_seg = seg.optimal_trajectory(t).unwrap() * &x_in;
            assert!((&x - &x_seg).norm() <= 1e-8 * x_seg.norm().max(1.0), "system {k}");
            let u_seg = (seg.feedback_gain(t).unwrap() - &k_c) * &x;
            assert!((&u - &u_seg).norm() <= 1e-8 * u_seg.norm().max(1.0), "system {k}");
            let fb = task.feedback_eval(&x, t).unwrap();
            assert!((&fb - &u_seg).norm() <= 1e-8 * u_seg.norm().max(1.0), "system {k}");
        }
    }
}

#[test]
fn closed_loop_lands_on_the_image() {
    let task = &tanh_tasks()[0];
    for x_in in [[1.0, -0.5], [-1.5, 1.2], [0.0, 2.0]] {
        let x_in = Vector::from_row_slice(&x_in);
        assert!(task.closed_loop_check(&x_in, 400).unwrap() <= 1e-6);
    }
}
