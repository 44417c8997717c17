//! Splitting a target in `GL⁺(n)` into individually steerable factors.
//!
//! Factor lists are ordered in application order: `[Φ₁, …, Φ_N]` reconstructs
//! the target as `Φ_N ⋯ Φ₁` (see [`ordered_product`]).
//!
//! Two families are produced:
//!
//! - near-identity factors `‖Φ_k − I‖ < ε` from a two-exponential split
//!   `Φ = e^{M₂} e^{M₁}` (skew `M₁`, symmetric `M₂`), suitable for the
//!   conjugated-norm condition with `ε = √(λ_min(W)/λ_max(W))`;
//! - W-conjugated SPD factors `W^{1/2} S_k W^{−1/2}`, each satisfying the
//!   conjugated-SPD condition, built constructively from a polar split and a
//!   Givens reduction of the orthogonal part. Every plane rotation by
//!   `|θ| < π/2` is a product of three SPD matrices.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;

use crate::error::{Result, SteerError};
use crate::matfun::{self, expm, logm_rotation, logm_spd, operator_norm, polar, Rotation, Spd};
use crate::segment::{satisfies_norm_condition, satisfies_spd_condition, ConditionTag};
use crate::Mat;

/// Plane rotations wider than this are split into eighth turns. Anything
/// below a quarter turn is legal, but the SPD triples have norms ~σ⁻²
/// (σ → 0 at a quarter turn), and once conjugated by `W^{±1/2}` that costs
/// digits in the product.
const SPLIT_ABOVE: f64 = 1.5 * FRAC_PI_4;

/// Givens angles below this are round-off from an orthogonal factor that is
/// the identity; dropping them perturbs the product by at most this much.
const NEGLIGIBLE_ANGLE: f64 = 1e-13;

/// `Φ_N ⋯ Φ₁` for the list `[Φ₁, …, Φ_N]`; the empty product is `I_n`.
pub fn ordered_product(factors: &[Mat], n: usize) -> Mat {
    factors.iter().fold(Mat::identity(n, n), |acc, f| f * acc)
}

fn ensure_gl_plus(target: &Mat) -> Result<()> {
    matfun::ensure_square_finite(target, "target")?;
    let det = target.clone().determinant();
    if !(det > 0.0) {
        return Err(SteerError::NotInGlPlus { det });
    }
    Ok(())
}

/// `Φ = e^{M₂} e^{M₁}` with `M₁ = log Q` skew and `M₂ = log P` symmetric,
/// where `Φ = P Q` is the polar decomposition. Returns `(M₁, M₂)`.
pub fn two_exponential_split(target: &Mat) -> Result<(Mat, Mat)> {
    ensure_gl_plus(target)?;
    let (p, q) = polar(target)?;
    let m1 = logm_rotation(&q)?;
    let m2 = logm_spd(&p);
    Ok((m1, m2))
}

/// Near-identity factors `[e^{M₁/N₁}; N₁ times] ++ [e^{M₂/N₂}; N₂ times]`.
#[derive(Debug, Clone)]
pub struct NearIdentityFactorization {
    pub factors: Vec<Mat>,
    /// Bound met by every factor: `‖Φ_k − I‖ < epsilon`.
    pub epsilon: f64,
    pub n1: usize,
    pub n2: usize,
    /// Skew logarithm of the orthogonal polar factor.
    pub m1: Mat,
    /// Symmetric logarithm of the SPD polar factor.
    pub m2: Mat,
}

impl NearIdentityFactorization {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Smallest `N` with `N > ‖M‖ / log(1 + ε)`, or 0 for `M = 0`.
fn copies_needed(norm: f64, epsilon: f64) -> usize {
    if norm <= 64.0 * f64::EPSILON {
        return 0;
    }
    (norm / epsilon.ln_1p()).floor() as usize + 1
}

/// Factors `target` into near-identity pieces: since
/// `‖e^{M/N} − I‖ ≤ e^{‖M‖/N} − 1 < ε` once `N > ‖M‖/log(1+ε)`.
pub fn near_identity_factorize(target: &Mat, epsilon: f64) -> Result<NearIdentityFactorization> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(SteerError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let (m1, m2) = two_exponential_split(target)?;
    let n1 = copies_needed(operator_norm(&m1), epsilon);
    let n2 = copies_needed(operator_norm(&m2), epsilon);
    let mut factors = Vec::with_capacity(n1 + n2);
    if n1 > 0 {
        let f = expm(&(&m1 / n1 as f64))?;
        factors.extend(std::iter::repeat_n(f, n1));
    }
    if n2 > 0 {
        let f = expm(&(&m2 / n2 as f64))?;
        factors.extend(std::iter::repeat_n(f, n2));
    }
    Ok(NearIdentityFactorization { factors, epsilon, n1, n2, m1, m2 })
}

/// `ε = √(λ_min(W)/λ_max(W))`: near-identity factors within `ε` of `I` pass
/// the conjugated-norm condition against `W`.
pub fn conjugation_epsilon(w: &Spd) -> f64 {
    (w.min_eigenvalue() / w.max_eigenvalue()).sqrt()
}

/// Three SPD matrices with `S₃ S₂ S₁ = [[cos θ, −sin θ], [sin θ, cos θ]]`.
///
/// `S₁ = [[1, σ], [σ, 2σ²]]`, `S₂ = [[2σ², σ], [σ, 1]]` and
/// `S₃ = (S₂ S₁² S₂)^{−1/2}`, so `S₃ S₂ S₁` is the orthogonal polar factor of
/// `S₂ S₁ = [[3σ², 4σ³], [2σ, 3σ²]]`, whose angle satisfies
/// `tan θ = (1 − 2σ²)/(3σ)`; `σ` is the positive root of
/// `2σ² + 3σ tan θ − 1 = 0`. Negative angles use the transposed triple.
pub fn rotation_to_three_spd(theta: f64) -> Result<(Spd, Spd, Spd)> {
    if !(theta.is_finite() && theta != 0.0 && theta.abs() < FRAC_PI_2) {
        return Err(SteerError::Domain(format!("rotation angle must satisfy 0 < |θ| < π/2, got {theta}")));
    }
    let t = theta.abs().tan();
    // Positive root, written to avoid cancellation for large t.
    let sigma = 2.0 / (3.0 * t + (9.0 * t * t + 8.0).sqrt());
    let s2sq = 2.0 * sigma * sigma;
    let s1 = Spd::new(Mat::from_row_slice(2, 2, &[1.0, sigma, sigma, s2sq]))?;
    let s2 = Spd::new(Mat::from_row_slice(2, 2, &[s2sq, sigma, sigma, 1.0]))?;
    // S₃ = (S₂S₁²S₂)^{−1/2}. The Gram matrix has condition ~σ⁻⁸ near π/2,
    // so use the closed-form 2×2 root with the exact determinant
    // √det = det(S₂S₁) = σ⁴: √G = (G + σ⁴I)/√(tr G + 2σ⁴). All entries
    // are positive, so nothing cancels.
    let gram = matfun::symmetrize(&(s2.as_mat() * s1.as_mat() * s1.as_mat() * s2.as_mat()));
    let d = sigma.powi(4);
    let root = (&gram + Mat::identity(2, 2) * d) / (gram.trace() + 2.0 * d).sqrt();
    let adj = Mat::from_row_slice(2, 2, &[root[(1, 1)], -root[(0, 1)], -root[(1, 0)], root[(0, 0)]]);
    let s3 = Spd::new(matfun::symmetrize(&(adj / d)))?;
    if theta > 0.0 {
        Ok((s1, s2, s3))
    } else {
        Ok((s3, s2, s1))
    }
}

/// Factors of the form `W^{1/2} S_k W^{−1/2}`, `S_k` SPD.
#[derive(Debug, Clone)]
pub struct SpdConeFactorization {
    pub factors: Vec<Mat>,
    pub cores: Vec<Spd>,
    pub w: Spd,
}

impl SpdConeFactorization {
    /// Number of factors `K`.
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// A plane rotation `G` acting on coordinates `(i, j)`, `i < j`, by angle `θ`:
/// `G[i,i] = G[j,j] = cos θ`, `G[i,j] = −sin θ`, `G[j,i] = sin θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRotation {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
}

impl PlaneRotation {
    pub fn to_mat(&self, n: usize) -> Mat {
        embed(&plane(self.theta), self.i, self.j, n)
    }
}

fn plane(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

fn embed(block: &Mat, i: usize, j: usize, n: usize) -> Mat {
    let mut m = Mat::identity(n, n);
    m[(i, i)] = block[(0, 0)];
    m[(i, j)] = block[(0, 1)];
    m[(j, i)] = block[(1, 0)];
    m[(j, j)] = block[(1, 1)];
    m
}

/// Writes `Q ∈ SO(n)` as `G₁ G₂ ⋯ G_k` of plane rotations.
///
/// Below-diagonal entries are eliminated column by column with rotations
/// that keep pivots non-negative; an orthogonal upper-triangular matrix with
/// non-negative leading pivots and determinant `+1` is the identity, so
/// `R_k ⋯ R₁ Q = I` and `G_l = R_lᵀ`. Rotations with zero angle are omitted.
pub fn givens_decompose(q: &Rotation) -> Vec<PlaneRotation> {
    let mut r = q.as_mat().clone();
    let n = r.nrows();
    let mut out = Vec::new();
    for col in 0..n.saturating_sub(1) {
        for row in col + 1..n {
            let a = r[(col, col)];
            let b = r[(row, col)];
            if b == 0.0 && a >= 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for k in 0..n {
                let (x, y) = (r[(col, k)], r[(row, k)]);
                r[(col, k)] = c * x + s * y;
                r[(row, k)] = -s * x + c * y;
            }
            r[(row, col)] = 0.0;
            // R acts on rows (col, row) as [[c, s], [−s, c]]; G = Rᵀ rotates by atan2(s, c).
            out.push(PlaneRotation { i: col, j: row, theta: s.atan2(c) });
        }
    }
    out
}

/// Splits a plane angle into pieces usable by [`rotation_to_three_spd`].
fn split_angle(theta: f64) -> Vec<f64> {
    if theta.abs() <= SPLIT_ABOVE {
        return vec![theta];
    }
    let parts = (theta.abs() / FRAC_PI_4).ceil() as usize;
    vec![theta / parts as f64; parts]
}

/// Constructive factorization into `K = 1 + 3·(#sub-rotations)` W-conjugated
/// SPD factors.
///
/// With `Ψ = W^{−1/2} Φ W^{1/2} = Q P_r` (right polar form) and
/// `Q = G₁ ⋯ G_k`, the cores are `[P_r, triple(G_k), …, triple(G₁)]` with each
/// triple listed as `S₁, S₂, S₃`. An already-conjugated-SPD target yields the
/// single core `Ψ`; the identity yields no factors.
pub fn spd_cone_factorize(target: &Mat, w: &Spd) -> Result<SpdConeFactorization> {
    ensure_gl_plus(target)?;
    let n = target.nrows();
    if w.dim() != n {
        return Err(SteerError::Dimension(format!("W must be {n}x{n}, got {}x{}", w.dim(), w.dim())));
    }
    let w_half = matfun::sqrtm_spd(w);
    let w_inv_half = w.inv_sqrt();
    let psi = w_inv_half.as_mat() * target * w_half.as_mat();
    if satisfies_spd_condition(target, w) {
        let core = Spd::new(matfun::symmetrize(&psi))?;
        if (core.as_mat() - Mat::identity(n, n)).norm() <= 64.0 * f64::EPSILON * n as f64 {
            return Ok(SpdConeFactorization { factors: Vec::new(), cores: Vec::new(), w: w.clone() });
        }
        return Ok(SpdConeFactorization { factors: vec![target.clone()], cores: vec![core], w: w.clone() });
    }

    let (p, q) = polar(&psi)?;
    // Ψ = P Q = Q (Qᵀ P Q).
    let p_r = Spd::new(matfun::symmetrize(&(q.as_mat().transpose() * p.as_mat() * q.as_mat())))?;

    let mut cores = Vec::new();
    if (p_r.as_mat() - Mat::identity(n, n)).norm() > 64.0 * f64::EPSILON * n as f64 {
        cores.push(p_r);
    }
    for g in givens_decompose(&q).iter().rev().filter(|g| g.theta.abs() > NEGLIGIBLE_ANGLE) {
        for piece in split_angle(g.theta) {
            let (s1, s2, s3) = rotation_to_three_spd(piece)?;
            for s in [s1, s2, s3] {
                cores.push(Spd::new(embed(s.as_mat(), g.i, g.j, n))?);
            }
        }
    }

    let factors = cores.iter().map(|c| w_half.as_mat() * c.as_mat() * w_inv_half.as_mat()).collect();
    Ok(SpdConeFactorization { factors, cores, w: w.clone() })
}

/// Five-factor list for a planar rotation by `0 < |θ| < π/2`:
/// `[W^{1/2}, W^{1/2}S₁W^{−1/2}, W^{1/2}S₂W^{−1/2}, W^{1/2}S₃W^{−1/2}, W^{−1/2}]`,
/// whose ordered product is `S₃ S₂ S₁`, the rotation itself.
pub fn planar_rotation_five_factors(theta: f64, w: &Spd) -> Result<SpdConeFactorization> {
    if w.dim() != 2 {
        return Err(SteerError::Dimension(format!("planar construction needs a 2x2 W, got {}x{}", w.dim(), w.dim())));
    }
    let (s1, s2, s3) = rotation_to_three_spd(theta)?;
    let w_half = matfun::sqrtm_spd(w);
    let w_inv_half = w.inv_sqrt();
    let cores = vec![w_half.clone(), s1, s2, s3, w_inv_half.clone()];
    let factors = cores.iter().map(|c| w_half.as_mat() * c.as_mat() * w_inv_half.as_mat()).collect();
    Ok(SpdConeFactorization { factors, cores, w: w.clone() })
}

/// Angle of a 2×2 rotation matrix (within `ORTH_TOL` of `SO(2)`).
pub fn planar_angle(q: &Mat) -> Result<f64> {
    if q.nrows() != 2 || q.ncols() != 2 {
        return Err(SteerError::Dimension("planar angle needs a 2x2 matrix".into()));
    }
    let r = Rotation::new(q.clone())?;
    Ok(r.as_mat()[(1, 0)].atan2(r.as_mat()[(0, 0)]))
}

/// Condition tag each factor passes against `W` (conjugated norm checked first).
pub fn factor_tags(factors: &[Mat], w: &Spd) -> Vec<ConditionTag> {
    factors
        .iter()
        .map(|f| {
            if satisfies_norm_condition(f, w) {
                ConditionTag::ConjugatedNorm
            } else if satisfies_spd_condition(f, w) {
                ConditionTag::ConjugatedSpd
            } else {
                ConditionTag::Unchecked
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfun::rel_error;
    use std::f64::consts::PI;

    fn rot(theta: f64) -> Mat {
        plane(theta)
    }

    #[test]
    fn ordered_product_applies_last_element_last() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = Mat::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let prod = ordered_product(&[a.clone(), b.clone()], 2);
        assert_eq!(prod, &b * &a);
        assert_ne!(prod, &a * &b);
        assert_eq!(ordered_product(&[], 3), Mat::identity(3, 3));
    }

    #[test]
    fn split_of_identity_and_rotation() {
        let (m1, m2) = two_exponential_split(&Mat::identity(3, 3)).unwrap();
        assert!(m1.norm() < 1e-14 && m2.norm() < 1e-14);
        let (m1, m2) = two_exponential_split(&rot(PI / 4.0)).unwrap();
        let omega = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((m1 - omega * (PI / 4.0)).norm() < 1e-12);
        assert!(m2.norm() < 1e-12);
        assert!(matches!(two_exponential_split(&-Mat::identity(3, 3)), Err(SteerError::NotInGlPlus { .. })));
    }

    #[test]
    fn near_identity_counts_match_bounds() {
        let f = near_identity_factorize(&rot(PI / 4.0), 0.1).unwrap();
        assert_eq!((f.n1, f.n2, f.len()), (9, 0, 9));
        assert!(rel_error(&f.factors[0], &rot(PI / 36.0)) < 1e-12);
        assert!(rel_error(&ordered_product(&f.factors, 2), &rot(PI / 4.0)) < 1e-12);

        let d = Mat::from_diagonal(&crate::Vector::from_vec(vec![3f64.exp(), 1.0]));
        let f = near_identity_factorize(&d, 0.5).unwrap();
        assert_eq!((f.n1, f.n2), (0, 8));
        assert!(rel_error(&ordered_product(&f.factors, 2), &d) < 1e-12);
        for k in &f.factors {
            assert!(operator_norm(&(k - Mat::identity(2, 2))) < 0.5);
        }

        let f = near_identity_factorize(&Mat::identity(2, 2), 0.3).unwrap();
        assert!(f.is_empty());
        assert!(near_identity_factorize(&rot(0.1), 0.0).is_err());
    }

    #[test]
    fn three_spd_reproduces_quarter_turn_example() {
        let (s1, s2, s3) = rotation_to_three_spd(PI / 4.0).unwrap();
        let sigma = (17f64.sqrt() - 3.0) / 4.0;
        assert!((s1.as_mat()[(0, 1)] - sigma).abs() < 1e-15);
        let prod = s3.as_mat() * s2.as_mat() * s1.as_mat();
        assert!(rel_error(&prod, &rot(PI / 4.0)) < 1e-10);
    }

    #[test]
    fn three_spd_across_angles() {
        for &theta in &[PI / 3.0, -PI / 3.0, 1e-6, -0.7, 1.4] {
            let (s1, s2, s3) = rotation_to_three_spd(theta).unwrap();
            let prod = s3.as_mat() * s2.as_mat() * s1.as_mat();
            assert!(rel_error(&prod, &rot(theta)) < 1e-10, "θ = {theta}");
        }
        // σ → 1/√2 as θ → 0.
        let (s1, ..) = rotation_to_three_spd(1e-9).unwrap();
        assert!((s1.as_mat()[(0, 1)] - 0.5f64.sqrt()).abs() < 1e-8);
        assert!(rotation_to_three_spd(PI / 2.0).is_err());
        assert!(rotation_to_three_spd(0.0).is_err());
    }

    #[test]
    fn givens_reconstructs_rotation() {
        let q = Rotation::new(crate::matfun::expm(&Mat::from_row_slice(3, 3, &[0.0, -1.0, 2.0, 1.0, 0.0, -0.5, -2.0, 0.5, 0.0])).unwrap())
            .unwrap();
        let gs = givens_decompose(&q);
        let prod = gs.iter().fold(Mat::identity(3, 3), |acc, g| acc * g.to_mat(3));
        assert!(rel_error(&prod, q.as_mat()) < 1e-13);
        // Half turn: −I in 2D is a single rotation by π.
        let gs = givens_decompose(&Rotation::new(-Mat::identity(2, 2)).unwrap());
        assert_eq!(gs.len(), 1);
        assert!((gs[0].theta.abs() - PI).abs() < 1e-15);
    }

    #[test]
    fn spd_cone_on_rotation_with_example_gramian() {
        let w = Spd::new(Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.6])).unwrap();
        let f = spd_cone_factorize(&rot(PI / 4.0), &w).unwrap();
        assert_eq!(f.len(), 4);
        assert!(rel_error(&ordered_product(&f.factors, 2), &rot(PI / 4.0)) < 1e-9);
        assert!(factor_tags(&f.factors, &w).iter().all(|t| t.is_certified()));
        for (k, c) in f.factors.iter().zip(&f.cores) {
            assert!(satisfies_spd_condition(k, &w));
            assert!(c.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn spd_cone_on_conjugated_spd_is_single_factor() {
        let w = Spd::new(Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.6])).unwrap();
        let s = Mat::from_row_slice(2, 2, &[1.5, -0.2, -0.2, 0.8]);
        let target = crate::matfun::sqrtm_spd(&w).as_mat() * &s * w.inv_sqrt().as_mat();
        let f = spd_cone_factorize(&target, &w).unwrap();
        assert_eq!(f.len(), 1);
        assert!(rel_error(&f.factors[0], &target) < 1e-12);
        assert!(spd_cone_factorize(&Mat::identity(2, 2), &w).unwrap().is_empty());
    }

    #[test]
    fn half_turn_is_split() {
        let w = Spd::identity(2);
        let f = spd_cone_factorize(&-Mat::identity(2, 2), &w).unwrap();
        assert_eq!(f.len(), 12);
        assert!(rel_error(&ordered_product(&f.factors, 2), &-Mat::identity(2, 2)) < 1e-9);
    }

    #[test]
    fn planar_five_reconstructs() {
        let w = Spd::new(Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.6])).unwrap();
        let f = planar_rotation_five_factors(PI / 4.0, &w).unwrap();
        assert_eq!(f.len(), 5);
        assert!(rel_error(&ordered_product(&f.factors, 2), &rot(PI / 4.0)) < 1e-10);
        assert!(f.factors.iter().all(|k| satisfies_spd_condition(k, &w)));
        assert!((planar_angle(&rot(0.3)).unwrap() - 0.3).abs() < 1e-15);
    }
}
