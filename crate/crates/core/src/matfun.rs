//! Dense matrix functions on small real matrices.
//!
//! Only the branches needed for steering on `GL⁺(n)` are provided: the
//! exponential, logarithms of SPD matrices and of rotations, SPD square
//! roots, and the polar decomposition that ties them together
//! (`M = P·Q = e^{log P}·e^{log Q}`). There is deliberately no general real
//! matrix logarithm.

use nalgebra::linalg::{Schur, SymmetricEigen, SVD};

use crate::error::{Result, SteerError};
use crate::tolerances::{HALF_TURN_TOL, ORTH_TOL, SYM_TOL};
use crate::Mat;

/// Symmetric positive definite matrix.
///
/// Construction symmetrizes inputs that are symmetric to within
/// `SYM_TOL · (1 + ‖M‖)` and rejects anything with a non-positive eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct Spd(Mat);

impl Spd {
    pub fn new(m: Mat) -> Result<Self> {
        ensure_square_finite(&m, "SPD candidate")?;
        let defect = (&m - m.transpose()).norm();
        let scale = 1.0 + operator_norm(&m);
        if defect > SYM_TOL * scale {
            return Err(SteerError::NotSpd(format!("symmetry defect {defect:e}")));
        }
        let s = symmetrize(&m);
        let min = s.symmetric_eigenvalues().min();
        if !(min > 0.0) {
            return Err(SteerError::NotSpd(format!("smallest eigenvalue {min:e}")));
        }
        Ok(Spd(s))
    }

    pub fn identity(n: usize) -> Self {
        Spd(Mat::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigenvalues().max()
    }

    /// Applies a scalar function to the spectrum: `V f(Λ) Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Mat {
        let eig = SymmetricEigen::new(self.0.clone());
        let v = &eig.eigenvectors;
        let mut scaled = v.clone();
        for (j, lambda) in eig.eigenvalues.iter().enumerate() {
            let fj = f(*lambda);
            scaled.column_mut(j).scale_mut(fj);
        }
        symmetrize(&(scaled * v.transpose()))
    }

    /// `P^{-1/2}`.
    pub fn inv_sqrt(&self) -> Spd {
        Spd(self.map_spectrum(|l| 1.0 / l.sqrt()))
    }

    /// Solves `P X = rhs` by Cholesky.
    pub fn solve(&self, rhs: &Mat) -> Result<Mat> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| SteerError::NotSpd("Cholesky factorization failed".into()))?;
        Ok(chol.solve(rhs))
    }

    pub fn inverse(&self) -> Result<Spd> {
        let inv = self.solve(&Mat::identity(self.dim(), self.dim()))?;
        Ok(Spd(symmetrize(&inv)))
    }
}

/// Special orthogonal matrix (`QᵀQ = I`, `det Q = +1`).
///
/// Inputs within `ORTH_TOL` of `SO(n)` are re-orthonormalized through their
/// polar factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation(Mat);

impl Rotation {
    pub fn new(m: Mat) -> Result<Self> {
        ensure_square_finite(&m, "rotation candidate")?;
        let n = m.nrows();
        let defect = (m.transpose() * &m - Mat::identity(n, n)).norm();
        if defect > ORTH_TOL {
            return Err(SteerError::NotRotation(format!("orthogonality defect {defect:e}")));
        }
        let det = m.determinant();
        if det <= 0.0 {
            return Err(SteerError::NotRotation(format!("determinant {det}")));
        }
        let svd = SVD::new(m, true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        Ok(Rotation(u * vt))
    }

    pub fn identity(n: usize) -> Self {
        Rotation(Mat::identity(n, n))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

pub(crate) fn ensure_square_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(SteerError::Dimension(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SteerError::NonFinite(what));
    }
    Ok(())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn skew_part(m: &Mat) -> Mat {
    (m - m.transpose()) * 0.5
}

/// Induced 2-norm (largest singular value).
pub fn operator_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn min_singular_value(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn one_norm(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Relative Frobenius distance `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_error(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Backward-error bounds for the [m/m] approximants in the 1-norm.
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

/// Matrix exponential by scaling and squaring with diagonal Padé approximants
/// of degree 3 through 13.
///
/// The argument is first balanced by an exact (power-of-two) diagonal
/// similarity when that lowers its 1-norm: badly scaled generators such as
/// `[[0, 1], [−ω², 0]]` then become nearly normal, which keeps the squaring
/// phase from amplifying round-off.
pub fn expm(m: &Mat) -> Result<Mat> {
    ensure_square_finite(m, "expm argument")?;
    let (balanced, d) = balance(m);
    if one_norm(&balanced) < 0.95 * one_norm(m) {
        let e = expm_unbalanced(&balanced)?;
        let n = m.nrows();
        return Ok(Mat::from_fn(n, n, |i, j| e[(i, j)] * d[i] / d[j]));
    }
    expm_unbalanced(m)
}

/// Parlett–Reinsch balancing with radix 2: returns `(D⁻¹ M D, diag D)`.
fn balance(m: &Mat) -> (Mat, Vec<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut d = vec![1.0; n];
    for _sweep in 0..100 {
        let mut converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            let mut g = r / 2.0;
            while c < g {
                f *= 2.0;
                c *= 4.0;
            }
            g = r * 2.0;
            while c >= g {
                f /= 2.0;
                c /= 4.0;
            }
            if (c + r) / f < 0.95 * total {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
    (a, d)
}

fn expm_unbalanced(m: &Mat) -> Result<Mat> {
    let n = m.nrows();
    let id = Mat::identity(n, n);
    let norm = one_norm(m);

    for &(degree, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match degree {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(m, coeffs, &id).and_then(|r| finite_or_overflow(r, norm));
        }
    }

    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    if s > 1000 {
        return Err(SteerError::Overflow { norm });
    }
    let a = m * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = pade_solve(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
        if r.iter().any(|x| !x.is_finite()) {
            return Err(SteerError::Overflow { norm });
        }
    }
    finite_or_overflow(r, norm)
}

fn pade_low(a: &Mat, coeffs: &[f64], id: &Mat) -> Result<Mat> {
    let a2 = a * a;
    let mut power = id.clone();
    let mut u = Mat::zeros(a.nrows(), a.ncols());
    let mut v = Mat::zeros(a.nrows(), a.ncols());
    for (k, pair) in coeffs.chunks(2).enumerate() {
        if k > 0 {
            power = &power * &a2;
        }
        v += &power * pair[0];
        if let Some(odd) = pair.get(1) {
            u += &power * *odd;
        }
    }
    let u = a * u;
    pade_solve(&u, &v)
}

fn pade_solve(u: &Mat, v: &Mat) -> Result<Mat> {
    let q = v - u;
    let p = v + u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| SteerError::Numerical("singular Padé denominator".into()))
}

fn finite_or_overflow(r: Mat, norm: f64) -> Result<Mat> {
    if r.iter().all(|x| x.is_finite()) {
        Ok(r)
    } else {
        Err(SteerError::Overflow { norm })
    }
}

/// Symmetric logarithm of an SPD matrix, via its eigendecomposition.
pub fn logm_spd(p: &Spd) -> Mat {
    p.map_spectrum(f64::ln)
}

/// Unique SPD square root.
pub fn sqrtm_spd(p: &Spd) -> Spd {
    Spd(p.map_spectrum(f64::sqrt))
}

/// Principal skew-symmetric logarithm of a rotation.
///
/// Works block-wise on the real Schur form `Q = U T Uᵀ`; for an orthogonal
/// matrix `T` is block diagonal with 2×2 rotation blocks and ±1 entries.
/// Eigenangles land in `(−π, π]`. Half turns (angle π, including pairs of
/// real −1 eigenvalues) take `+π`; the logarithm is not unique there.
pub fn logm_rotation(q: &Rotation) -> Result<Mat> {
    let n = q.as_mat().nrows();
    let schur = Schur::try_new(q.as_mat().clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| SteerError::Numerical("real Schur form did not converge".into()))?;
    let (mut u, t) = schur.unpack();
    let mut log_t = Mat::zeros(n, n);
    let mut half_turns = Vec::new();
    let mut i = 0;
    while i < n {
        let is_block = i + 1 < n && t[(i + 1, i)].abs() > 1e-13;
        if !is_block {
            if t[(i, i)] < 0.0 {
                half_turns.push(i);
            }
            i += 1;
            continue;
        }
        let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
        if a * d - b * c < 0.0 {
            // Reflection block with eigenvalues ±1: diagonalize it in place.
            let blk = Mat::from_row_slice(2, 2, &[a, b, c, d]);
            let eig = SymmetricEigen::new(symmetrize(&blk));
            let cols = u.columns(i, 2) * &eig.eigenvectors;
            u.columns_mut(i, 2).copy_from(&cols);
            for (k, lambda) in eig.eigenvalues.iter().enumerate() {
                if *lambda < 0.0 {
                    half_turns.push(i + k);
                }
            }
        } else {
            let mut theta = (c - b).atan2(a + d);
            if (theta.abs() - std::f64::consts::PI).abs() < HALF_TURN_TOL {
                theta = std::f64::consts::PI;
            }
            log_t[(i, i + 1)] = -theta;
            log_t[(i + 1, i)] = theta;
        }
        i += 2;
    }
    if half_turns.len() % 2 != 0 {
        return Err(SteerError::NotRotation(
            "odd number of -1 eigenvalues (determinant is not +1)".into(),
        ));
    }
    for pair in half_turns.chunks(2) {
        let (p, r) = (pair[0], pair[1]);
        log_t[(p, r)] = -std::f64::consts::PI;
        log_t[(r, p)] = std::f64::consts::PI;
    }
    Ok(skew_part(&(&u * log_t * u.transpose())))
}

/// Polar decomposition `M = P·Q` with `P = (M Mᵀ)^{1/2}` SPD and `Q ∈ SO(n)`.
///
/// Computed from the SVD `M = U Σ Vᵀ` as `P = U Σ Uᵀ`, `Q = U Vᵀ`.
pub fn polar(m: &Mat) -> Result<(Spd, Rotation)> {
    ensure_square_finite(m, "polar argument")?;
    let det = m.determinant();
    if !(det > 0.0) {
        return Err(SteerError::NotInGlPlus { det });
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut us = u.clone();
    for (j, s) in svd.singular_values.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    let p = Spd::new(symmetrize(&(us * u.transpose())))?;
    let q = Rotation::new(u * vt)?;
    Ok((p, q))
}
