//! Plant model, periodizing constant gain, and controllability Gramians.

use std::f64::consts::PI;

use nalgebra::linalg::Hessenberg;
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SteerError};
use crate::matfun::{self, expm, operator_norm, symmetrize, Spd};
use crate::tolerances::{HEYMANN_DRAWS, PERIOD_TOL_PER_DIM, RANK_TOL};
use crate::Mat;

type CMat = nalgebra::DMatrix<Complex<f64>>;

/// The common plant `ẋ = A x + B u` shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEnsemble {
    a: Mat,
    b: Mat,
}

impl LinearEnsemble {
    /// Validates shapes, finiteness, and full column rank of `B`.
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        matfun::ensure_square_finite(&a, "drift matrix A")?;
        let n = a.nrows();
        if b.nrows() != n || b.ncols() == 0 || b.ncols() > n {
            return Err(SteerError::Dimension(format!(
                "B must be {n}x m with 1 <= m <= {n}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(SteerError::NonFinite("input matrix B"));
        }
        if numerical_rank(&b) < b.ncols() {
            return Err(SteerError::RankDeficientInput);
        }
        Ok(LinearEnsemble { a, b })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Closed-loop drift `A + B K`.
    pub fn closed_loop(&self, k: &Mat) -> Mat {
        &self.a + &self.b * k
    }
}

fn numerical_rank(m: &Mat) -> usize {
    let sv = m.singular_values();
    let smax = sv.max();
    let tol = m.nrows().max(m.ncols()) as f64 * smax * RANK_TOL;
    sv.iter().filter(|s| **s > tol).count()
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn controllability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = Mat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        c.columns_mut(k * m, m).copy_from(&block);
        block = a * block;
    }
    c
}

fn pair_controllable(a: &Mat, b: &Mat) -> bool {
    let c = controllability_matrix(a, b);
    let sv = c.singular_values();
    let n = a.nrows();
    let tol = n as f64 * sv.max() * RANK_TOL;
    sv.iter().filter(|s| **s > tol).count() == n
}

/// Kalman rank test: `rank [B, AB, …, A^{n−1}B] = n`.
pub fn kalman_rank_ok(sys: &LinearEnsemble) -> bool {
    pair_controllable(sys.a(), sys.b())
}

/// A constant gain `K_c` whose closed loop `A_c = A + B K_c` is `t_s`-periodic:
/// `e^{A_c t_s} = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodizedSystem {
    base: LinearEnsemble,
    k_c: Mat,
    a_c: Mat,
    t_s: f64,
    residual: f64,
}

impl PeriodizedSystem {
    /// Wraps a caller-supplied gain after checking the periodicity residual.
    pub fn with_gain(base: LinearEnsemble, k_c: Mat, t_s: f64) -> Result<Self> {
        check_period(t_s)?;
        if k_c.nrows() != base.m() || k_c.ncols() != base.n() {
            return Err(SteerError::Dimension(format!(
                "K_c must be {}x{}, got {}x{}",
                base.m(),
                base.n(),
                k_c.nrows(),
                k_c.ncols()
            )));
        }
        if k_c.iter().any(|x| !x.is_finite()) {
            return Err(SteerError::NonFinite("gain K_c"));
        }
        let a_c = base.closed_loop(&k_c);
        let residual = periodicity_residual(&a_c, t_s)?;
        let tol = period_tol(base.n());
        if !(residual <= tol) {
            return Err(SteerError::Periodicity { residual, tol });
        }
        Ok(PeriodizedSystem { base, k_c, a_c, t_s, residual })
    }

    pub fn base(&self) -> &LinearEnsemble {
        &self.base
    }

    pub fn k_c(&self) -> &Mat {
        &self.k_c
    }

    pub fn a_c(&self) -> &Mat {
        &self.a_c
    }

    pub fn t_s(&self) -> f64 {
        self.t_s
    }

    /// `‖e^{A_c t_s} − I‖₂`.
    pub fn periodicity_residual(&self) -> f64 {
        self.residual
    }
}

pub fn period_tol(n: usize) -> f64 {
    PERIOD_TOL_PER_DIM * n as f64
}

fn check_period(t_s: f64) -> Result<()> {
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(SteerError::Domain(format!("period must be positive, got {t_s}")));
    }
    Ok(())
}

fn periodicity_residual(a_c: &Mat, t_s: f64) -> Result<f64> {
    let n = a_c.nrows();
    Ok(operator_norm(&(expm(&(a_c * t_s))? - Mat::identity(n, n))))
}

/// Synthesizes a periodizing gain with the default seed.
pub fn periodize(sys: &LinearEnsemble, t_s: f64) -> Result<PeriodizedSystem> {
    periodize_seeded(sys, t_s, crate::tolerances::DEFAULT_SEED)
}

/// Synthesizes `K_c` placing the closed-loop spectrum at `±2πik/t_s`,
/// `k = 1..⌊n/2⌋`, plus `0` when `n` is odd.
///
/// For `m ≥ 2` a robust eigenvector assignment (closed-loop eigenvectors
/// chosen as orthogonal as the input allows) is tried first: single-input
/// reductions have eigenvector conditioning that grows quickly with `n`, and
/// the periodicity residual inherits it. Then, as a fallback, multi-input pairs are
/// reduced to a single input `b = B v` after a random cyclic preconditioning
/// gain `K₀` (Heymann's lemma), with the single-input assignment done in
/// controller-Hessenberg coordinates. Up to `HEYMANN_DRAWS` draws are tried.
/// The lowest-residual candidate is returned if it is within tolerance.
pub fn periodize_seeded(sys: &LinearEnsemble, t_s: f64, seed: u64) -> Result<PeriodizedSystem> {
    check_period(t_s)?;
    if !kalman_rank_ok(sys) {
        return Err(SteerError::Uncontrollable);
    }
    let (n, m) = (sys.n(), sys.m());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = period_tol(n);
    let mut best = f64::INFINITY;
    let scale = operator_norm(sys.a()).max(1.0) / operator_norm(sys.b()).max(f64::MIN_POSITIVE);
    let mut best_gain: Option<(Mat, Mat)> = None;
    let mut consider = |k_c: Mat, best: &mut f64| {
        let a_c = sys.closed_loop(&k_c);
        if let Ok(r) = periodicity_residual(&a_c, t_s) {
            if r < *best {
                *best = r;
                best_gain = Some((k_c, a_c));
            }
        }
    };

    if m >= 2 {
        for start in 0..HEYMANN_DRAWS {
            let coeff: Vec<f64> = (0..2 * m * n)
                .map(|i| if start == 0 { 1.0 + (i % m) as f64 } else { rng.sample(StandardNormal) })
                .collect();
            if let Some(k_c) = robust_assignment(sys.a(), sys.b(), t_s, &coeff) {
                consider(k_c, &mut best);
            }
            if best <= tol {
                break;
            }
        }
    }

    for draw in 0..HEYMANN_DRAWS {
        let k0 = if draw == 0 {
            Mat::zeros(m, n)
        } else {
            Mat::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
        };
        let v = if m == 1 {
            Mat::from_element(1, 1, 1.0)
        } else {
            let v = Mat::from_fn(m, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            v / norm
        };
        let a1 = sys.closed_loop(&k0);
        let b1 = sys.b() * &v;
        if !pair_controllable(&a1, &b1) {
            continue;
        }
        let Some(k) = assign_periodic_spectrum(&a1, &b1, t_s) else {
            continue;
        };
        consider(k0 + v * k, &mut best);
        if best <= tol {
            break;
        }
    }
    match best_gain {
        Some((k_c, a_c)) if best <= tol => {
            Ok(PeriodizedSystem { base: sys.clone(), k_c, a_c, t_s, residual: best })
        }
        _ => Err(SteerError::PlacementFailed { residual: best }),
    }
}

/// Periodic target spectrum, one representative per conjugate pair
/// (non-negative imaginary part), lowest harmonics first.
fn periodic_spectrum(n: usize, t_s: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=n / 2).map(|k| 2.0 * PI * k as f64 / t_s).collect();
    if n % 2 == 1 {
        w.push(0.0);
    }
    w
}

/// Multi-input eigenstructure assignment.
///
/// Each closed-loop eigenvector `x_j` of `λ_j` must lie in
/// `S_j = {x : (λ_j I − A) x ∈ range B}`. Starting from arbitrary members,
/// sweeps replace `x_j` by the projection onto `S_j` of the direction
/// orthogonal to all other eigenvectors (conjugate partners kept as exact
/// conjugates), which drives `X` towards a well-conditioned basis. The gain
/// is then `K = B⁺ (X Λ X⁻¹ − A)`. `start` seeds the initial coefficients.
fn robust_assignment(a: &Mat, b: &Mat, t_s: f64, start: &[f64]) -> Option<Mat> {
    type C = Complex<f64>;
    let n = a.nrows();
    let m = b.ncols();
    let freqs = periodic_spectrum(n, t_s);

    // Orthonormal bases of S_j via the null space of [λI − A, −B].
    let mut bases: Vec<CMat> = Vec::with_capacity(freqs.len());
    for &w in &freqs {
        let lambda = C::new(0.0, w);
        let dim = n + m;
        let mut big = CMat::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                big[(i, j)] = C::new(-a[(i, j)], 0.0);
            }
            big[(i, i)] += lambda;
            for j in 0..m {
                big[(i, n + j)] = C::new(-b[(i, j)], 0.0);
            }
        }
        let svd = big.svd(false, true);
        let v_t = svd.v_t?;
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
        let mut xs = CMat::zeros(n, m);
        for (c, &row) in order.iter().take(m).enumerate() {
            for i in 0..n {
                xs[(i, c)] = v_t[(row, i)].conj();
            }
        }
        let q = if w == 0.0 {
            // Real eigenvalue: keep a real basis (the null space is real up to phase).
            let re = Mat::from_fn(n, m, |i, j| xs[(i, j)].re);
            let im = Mat::from_fn(n, m, |i, j| xs[(i, j)].im);
            let both = Mat::from_fn(n, 2 * m, |i, j| if j < m { re[(i, j)] } else { im[(i, j - m)] });
            let svd = both.svd(true, false);
            let u = svd.u?;
            let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
            idx.sort_by(|&p, &q| svd.singular_values[q].total_cmp(&svd.singular_values[p]));
            CMat::from_fn(n, m, |i, j| C::new(u[(i, idx[j])], 0.0))
        } else {
            xs.qr().q()
        };
        bases.push(q);
    }

    // Column layout of X: (x_j, conj x_j) for each pair, then the real one.
    let slot = |j: usize| -> (usize, Option<usize>) {
        if freqs[j] == 0.0 {
            (2 * j, None)
        } else {
            (2 * j, Some(2 * j + 1))
        }
    };
    let mut x = CMat::zeros(n, n);
    let place = |x: &mut CMat, j: usize, v: &nalgebra::DVector<C>| {
        let (p, q) = slot(j);
        x.set_column(p, v);
        if let Some(q) = q {
            x.set_column(q, &v.map(|z| z.conj()));
        }
    };
    for (j, basis) in bases.iter().enumerate() {
        let coeff = nalgebra::DVector::<C>::from_fn(m, |i, _| {
            C::new(start[(2 * j * m + 2 * i) % start.len()], start[(2 * j * m + 2 * i + 1) % start.len()])
        });
        let v = basis * coeff;
        let norm = v.norm();
        place(&mut x, j, &(v / C::new(norm, 0.0)));
    }

    let cond = |x: &CMat| {
        let sv = x.singular_values();
        sv.max() / sv.min()
    };
    let mut best_x = x.clone();
    let mut best_cond = cond(&x);
    for _sweep in 0..30 {
        for (j, basis) in bases.iter().enumerate() {
            let (p, _) = slot(j);
            // Direction orthogonal to every other column.
            let others = CMat::from_fn(n, n - 1, |i, c| x[(i, if c < p { c } else { c + 1 })]);
            let svd = others.clone().svd(true, false);
            let u = svd.u?;
            let y = if n - 1 < u.ncols() {
                u.column(n - 1).clone_owned()
            } else {
                // Full U is not returned for thin matrices; complete the basis.
                let proj = &u * u.adjoint();
                let mut pick = None;
                for e in 0..n {
                    let mut c = -proj.column(e).clone_owned();
                    c[e] += C::new(1.0, 0.0);
                    if pick.as_ref().is_none_or(|b: &nalgebra::DVector<C>| c.norm() > b.norm()) {
                        pick = Some(c);
                    }
                }
                pick?
            };
            let mut v = basis * (basis.adjoint() * &y);
            if freqs[j] == 0.0 {
                // Keep the real eigenvector real.
                let re = v.map(|z| z.re);
                let im = v.map(|z| z.im);
                let r = if re.norm() >= im.norm() { re } else { im };
                v = r.map(|z| C::new(z, 0.0));
            }
            let norm = v.norm();
            if !(norm > 1e-300) {
                continue;
            }
            place(&mut x, j, &(v / C::new(norm, 0.0)));
        }
        let c = cond(&x);
        if c < best_cond {
            best_cond = c;
            best_x = x.clone();
        }
    }
    if !best_cond.is_finite() {
        return None;
    }

    let mut lam = CMat::zeros(n, n);
    for (j, &w) in freqs.iter().enumerate() {
        let (p, q) = slot(j);
        lam[(p, p)] = C::new(0.0, w);
        if let Some(q) = q {
            lam[(q, q)] = C::new(0.0, -w);
        }
    }
    let x_inv = best_x.clone().try_inverse()?;
    let target = &best_x * lam * x_inv;
    let target = Mat::from_fn(n, n, |i, j| target[(i, j)].re);
    let b_pinv = b.clone().pseudo_inverse(0.0).ok()?;
    let k = b_pinv * (target - a);
    k.iter().all(|v| v.is_finite()).then_some(k)
}

/// Single-input assignment for `(A, b)`: returns the row gain `k` such that
/// `A + b k` has the periodic spectrum.
///
/// In coordinates where `A` is upper Hessenberg and `b = β e₁`, the
/// controllability matrix is upper triangular, so Ackermann's formula reduces
/// to the last row of `p(H)` divided by `β ∏ h_{i+1,i}`.
fn assign_periodic_spectrum(a: &Mat, b: &Mat, t_s: f64) -> Option<Mat> {
    let n = a.nrows();
    let bvec = b.column(0);
    let beta_norm = bvec.norm();
    if beta_norm == 0.0 {
        return None;
    }
    // Householder reflector mapping b onto the first axis.
    let sign = if bvec[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = bvec.clone_owned();
    v[0] += sign * beta_norm;
    let vv = v.dot(&v);
    let q1 = Mat::identity(n, n) - (&v * v.transpose()) * (2.0 / vv);
    let beta = -sign * beta_norm;

    let hess = Hessenberg::new(&q1 * a * &q1);
    let (qh, h) = hess.unpack();
    let q = &q1 * qh;

    let mut diag_prod = beta;
    for i in 0..n.saturating_sub(1) {
        diag_prod *= h[(i + 1, i)];
    }
    if diag_prod == 0.0 || !diag_prod.is_finite() {
        return None;
    }

    // Last row of p(H), p(s) = s^{n mod 2} ∏_k (s² + ω_k²).
    let mut row = Mat::zeros(1, n);
    row[(0, n - 1)] = 1.0;
    let h2 = &h * &h;
    for k in 1..=n / 2 {
        let omega = 2.0 * PI * k as f64 / t_s;
        row = &row * &h2 + &row * (omega * omega);
    }
    if n % 2 == 1 {
        row = &row * &h;
    }
    let f = row * (-1.0 / diag_prod);
    let k = f * q.transpose();
    k.iter().all(|x| x.is_finite()).then_some(k)
}

/// Flow quantities at one instant, from a single block exponential.
#[derive(Debug, Clone)]
pub struct FlowSample {
    /// `e^{A_c t}`.
    pub exp_ac: Mat,
    /// `e^{−A_cᵀ t}`.
    pub exp_neg_act: Mat,
    /// `W_t`, symmetric (zero at `t = 0`).
    pub gramian: Mat,
}

fn van_loan_generator(a_c: &Mat, b: &Mat) -> Mat {
    let n = a_c.nrows();
    let mut generator = Mat::zeros(2 * n, 2 * n);
    generator.view_mut((0, 0), (n, n)).copy_from(a_c);
    generator.view_mut((0, n), (n, n)).copy_from(&(b * b.transpose()));
    generator.view_mut((n, n), (n, n)).copy_from(&(-a_c.transpose()));
    generator
}

fn split_flow(generator: &Mat, n: usize, t: f64) -> Result<FlowSample> {
    let e = expm(&(generator * t))?;
    let exp_ac = e.view((0, 0), (n, n)).into_owned();
    let top_right = e.view((0, n), (n, n)).into_owned();
    let exp_neg_act = e.view((n, n), (n, n)).into_owned();
    let gramian = symmetrize(&(exp_neg_act.transpose() * top_right));
    Ok(FlowSample { exp_ac, exp_neg_act, gramian })
}

/// `W_t` for any drift `a` (no periodicity required), e.g. the open loop.
pub fn gramian_of(a: &Mat, b: &Mat, t: f64) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(SteerError::Dimension(format!("A is {}x{}, B is {}x{}", n, a.ncols(), b.nrows(), b.ncols())));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SteerError::Domain(format!("time must be non-negative, got {t}")));
    }
    Ok(split_flow(&van_loan_generator(a, b), n, t)?.gramian)
}

/// Evaluates `W_t = ∫₀ᵗ e^{−A_c τ} B Bᵀ e^{−A_cᵀ τ} dτ` for a periodized system.
///
/// Uses the Van Loan block exponential
/// `exp([[A_c, BBᵀ], [0, −A_cᵀ]] t) = [[e^{A_c t}, e^{A_c t} W_t], [0, e^{−A_cᵀ t}]]`.
/// The period Gramian and its square roots are computed once at construction.
#[derive(Debug, Clone)]
pub struct GramianEvaluator {
    system: PeriodizedSystem,
    generator: Mat,
    w_end: Spd,
    w_end_sqrt: Spd,
    w_end_inv_sqrt: Spd,
}

impl GramianEvaluator {
    pub fn new(system: PeriodizedSystem) -> Result<Self> {
        let n = system.base().n();
        let generator = van_loan_generator(system.a_c(), system.base().b());
        let mut eval = GramianEvaluator {
            w_end: Spd::identity(n),
            w_end_sqrt: Spd::identity(n),
            w_end_inv_sqrt: Spd::identity(n),
            system,
            generator,
        };
        let w_end = eval.gramian(eval.system.t_s())?;
        eval.w_end_sqrt = matfun::sqrtm_spd(&w_end);
        eval.w_end_inv_sqrt = w_end.inv_sqrt();
        eval.w_end = w_end;
        Ok(eval)
    }

    pub fn system(&self) -> &PeriodizedSystem {
        &self.system
    }

    pub fn n(&self) -> usize {
        self.system.base().n()
    }

    pub fn t_s(&self) -> f64 {
        self.system.t_s()
    }

    /// `W_{t_s}`.
    pub fn w_end(&self) -> &Spd {
        &self.w_end
    }

    /// `W_{t_s}^{1/2}`.
    pub fn w_end_sqrt(&self) -> &Spd {
        &self.w_end_sqrt
    }

    /// `W_{t_s}^{−1/2}`.
    pub fn w_end_inv_sqrt(&self) -> &Spd {
        &self.w_end_inv_sqrt
    }

    pub fn flow(&self, t: f64) -> Result<FlowSample> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(SteerError::Domain(format!("time must be non-negative, got {t}")));
        }
        split_flow(&self.generator, self.n(), t)
    }

    /// `W_t` for `t > 0`.
    pub fn gramian(&self, t: f64) -> Result<Spd> {
        if !(t > 0.0) {
            return Err(SteerError::Domain(format!("Gramian needs t > 0, got {t}")));
        }
        let w = self.flow(t)?.gramian;
        let min_eig = w.symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            return Err(SteerError::IndefiniteGramian { t, min_eig });
        }
        Spd::new(w).map_err(|_| SteerError::IndefiniteGramian { t, min_eig })
    }

    /// `W_t W_{t_end}^{−1}` via a Cholesky solve; zero at `t = 0`.
    pub fn gramian_ratio(&self, t: f64, t_end: f64) -> Result<Mat> {
        if !(t >= 0.0 && t <= t_end) {
            return Err(SteerError::Domain(format!("need 0 <= t <= {t_end}, got {t}")));
        }
        let n = self.n();
        if t == 0.0 {
            return Ok(Mat::zeros(n, n));
        }
        let w_end = if t_end == self.t_s() { self.w_end.clone() } else { self.gramian(t_end)? };
        if t == t_end {
            return Ok(Mat::identity(n, n));
        }
        let w_t = self.gramian(t)?;
        // X W_end = W_t  ⇔  W_end Xᵀ = W_t.
        Ok(w_end.solve(w_t.as_mat())?.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfun::{rel_error, spectral_radius};

    fn double_integrator() -> LinearEnsemble {
        LinearEnsemble::new(
            Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    /// Composite Gauss–Legendre quadrature of the Gramian integrand.
    fn quadrature_gramian(a_c: &Mat, b: &Mat, t: f64, panels: usize) -> Mat {
        let nodes = [-0.906179845938664, -0.5384693101056831, 0.0, 0.5384693101056831, 0.906179845938664];
        let weights = [0.23692688505618908, 0.47862867049936647, 0.5688888888888889, 0.47862867049936647, 0.23692688505618908];
        let n = a_c.nrows();
        let h = t / panels as f64;
        let mut w = Mat::zeros(n, n);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (x, wt) in nodes.iter().zip(weights) {
                let tau = mid + 0.5 * h * x;
                let e = expm(&(a_c * -tau)).unwrap();
                w += (&e * b * b.transpose() * e.transpose()) * (0.5 * h * wt);
            }
        }
        w
    }

    #[test]
    fn kalman_examples() {
        assert!(kalman_rank_ok(&double_integrator()));
        let full = LinearEnsemble::new(Mat::zeros(2, 2), Mat::identity(2, 2)).unwrap();
        assert!(kalman_rank_ok(&full));
        let half = LinearEnsemble::new(Mat::zeros(2, 2), Mat::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(!kalman_rank_ok(&half));
    }

    #[test]
    fn ensemble_rejects_bad_inputs() {
        assert!(matches!(
            LinearEnsemble::new(Mat::zeros(2, 2), Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])),
            Err(SteerError::RankDeficientInput)
        ));
        assert!(matches!(
            LinearEnsemble::new(Mat::zeros(2, 2), Mat::zeros(3, 1)),
            Err(SteerError::Dimension(_))
        ));
    }

    #[test]
    fn double_integrator_gain_matches_closed_form() {
        for &t_s in &[0.05, 1.0, 4.0] {
            let p = periodize(&double_integrator(), t_s).unwrap();
            let expected = -4.0 * PI * PI / (t_s * t_s);
            assert!((p.k_c()[(0, 0)] - expected).abs() <= 1e-9 * expected.abs());
            assert!(p.k_c()[(0, 1)].abs() <= 1e-9 * expected.abs());
            assert!(p.periodicity_residual() <= 1e-8);
        }
    }

    #[test]
    fn driftless_full_input_periodizes() {
        let sys = LinearEnsemble::new(Mat::zeros(2, 2), Mat::identity(2, 2)).unwrap();
        let p = periodize(&sys, 0.3).unwrap();
        assert!(p.periodicity_residual() <= 2e-8);
        // Zero gain is also a valid (trivially periodic) choice.
        let z = PeriodizedSystem::with_gain(sys, Mat::zeros(2, 2), 0.3).unwrap();
        assert_eq!(z.periodicity_residual(), 0.0);
    }

    #[test]
    fn random_five_state_system_periodizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mat::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = Mat::from_fn(5, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = periodize(&LinearEnsemble::new(a, b).unwrap(), 0.7).unwrap();
        let e = expm(&(p.a_c() * 0.7)).unwrap();
        assert!(operator_norm(&(e - Mat::identity(5, 5))) <= 1e-8);
    }

    #[test]
    fn uncontrollable_pair_is_refused() {
        let sys = LinearEnsemble::new(Mat::zeros(2, 2), Mat::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert_eq!(periodize(&sys, 1.0), Err(SteerError::Uncontrollable));
    }

    #[test]
    fn supplied_gain_must_be_periodic() {
        let err = PeriodizedSystem::with_gain(double_integrator(), Mat::from_row_slice(1, 2, &[-1.0, 0.0]), 1.0)
            .unwrap_err();
        assert!(matches!(err, SteerError::Periodicity { .. }));
    }

    #[test]
    fn gramian_identity_input_is_linear_in_time() {
        let sys = LinearEnsemble::new(Mat::zeros(2, 2), Mat::identity(2, 2)).unwrap();
        let g = GramianEvaluator::new(PeriodizedSystem::with_gain(sys, Mat::zeros(2, 2), 1.0).unwrap()).unwrap();
        for &t in &[0.25, 1.0, 3.0] {
            let w = g.gramian(t).unwrap();
            assert!((w.as_mat() - Mat::identity(2, 2) * t).abs().max() < 1e-14);
        }
    }

    #[test]
    fn gramian_double_integrator_matches_quadrature_and_polynomial() {
        // K_c = 0 is periodic for no t_s, so build the evaluator around a
        // hand-made system with zero gain through the block exponential directly.
        let sys = double_integrator();
        let p = PeriodizedSystem { base: sys.clone(), k_c: Mat::zeros(1, 2), a_c: sys.a().clone(), t_s: 1.0, residual: 0.0 };
        let g = GramianEvaluator::new(p).unwrap();
        for &t in &[0.1, 1.0, 10.0] {
            let w = g.gramian(t).unwrap();
            let quad = quadrature_gramian(sys.a(), sys.b(), t, 8);
            let poly = Mat::from_row_slice(2, 2, &[t * t * t / 3.0, -t * t / 2.0, -t * t / 2.0, t]);
            assert!(rel_error(&quad, &poly) < 1e-13);
            assert!(rel_error(w.as_mat(), &poly) < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn gramian_ratio_quarter_period_closed_form() {
        // W_t W_{t_s}^{-1} = (t/t_s) I − (1/2π)[[sin(4πt/t_s)/2, (t_s/2π) sin²(2πt/t_s)],
        //                                      [(2π/t_s) sin²(2πt/t_s), −sin(4πt/t_s)/2]];
        // at t = t_s/4 the lower-left entry is −1/t_s (checked against quadrature).
        for &t_s in &[0.1, 1.0, 4.0] {
            let g = GramianEvaluator::new(periodize(&double_integrator(), t_s).unwrap()).unwrap();
            let r = g.gramian_ratio(t_s / 4.0, t_s).unwrap();
            let expected = Mat::from_row_slice(2, 2, &[0.25, -t_s / (4.0 * PI * PI), -1.0 / t_s, 0.25]);
            assert!(rel_error(&r, &expected) < 1e-9, "t_s = {t_s}: {r}");

            let a_c = g.system().a_c().clone();
            let quad = quadrature_gramian(&a_c, double_integrator().b(), t_s / 4.0, 16)
                * quadrature_gramian(&a_c, double_integrator().b(), t_s, 64).try_inverse().unwrap();
            assert!(rel_error(&quad, &expected) < 1e-9);
        }
    }

    #[test]
    fn gramian_ratio_endpoints() {
        let g = GramianEvaluator::new(periodize(&double_integrator(), 2.0).unwrap()).unwrap();
        assert_eq!(g.gramian_ratio(0.0, 2.0).unwrap(), Mat::zeros(2, 2));
        assert_eq!(g.gramian_ratio(2.0, 2.0).unwrap(), Mat::identity(2, 2));
        assert!(g.gramian_ratio(2.5, 2.0).is_err());
        assert!(g.gramian(0.0).is_err());
    }

    #[test]
    fn ratio_norm_exceeds_one_but_spectral_radius_does_not() {
        let t_s = 0.1;
        let g = GramianEvaluator::new(periodize(&double_integrator(), t_s).unwrap()).unwrap();
        let r = g.gramian_ratio(t_s / 4.0, t_s).unwrap();
        assert!(operator_norm(&r) > 1.0);
        assert!(spectral_radius(&r) < 1.0);
    }

    #[test]
    fn gramian_additivity() {
        let g = GramianEvaluator::new(periodize(&double_integrator(), 3.0).unwrap()).unwrap();
        let (t1, t2) = (0.7, 1.1);
        let w12 = g.gramian(t1 + t2).unwrap();
        let w1 = g.gramian(t1).unwrap();
        let w2 = g.gramian(t2).unwrap();
        let e = expm(&(g.system().a_c() * -t1)).unwrap();
        let rebuilt = w1.as_mat() + &e * w2.as_mat() * e.transpose();
        assert!(rel_error(&rebuilt, w12.as_mat()) < 1e-9);
    }
}
