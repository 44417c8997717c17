use thiserror::Error;

pub type Result<T, E = SteerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteerError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not in GL+ (det = {det:e})")]
    NotInGlPlus { det: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),

    #[error("matrix exponential overflow (1-norm {norm:e})")]
    Overflow { norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("pair (A, B) fails the Kalman rank test")]
    Uncontrollable,

    #[error("input matrix B does not have full column rank")]
    RankDeficientInput,

    #[error("pole assignment failed; best periodicity residual {residual:e}")]
    PlacementFailed { residual: f64 },

    #[error("periodicity residual {residual:e} exceeds tolerance {tol:e}")]
    Periodicity { residual: f64, tol: f64 },

    #[error("Gramian is not positive definite at t = {t} (min eigenvalue {min_eig:e})")]
    IndefiniteGramian { t: f64, min_eig: f64 },

    #[error("trajectory leaves GL+ at t = {t}")]
    LeavesGlPlus { t: f64 },

    #[error(
        "condition not met: conjugated norm = {norm:.15} (needs < 1), \
         conjugated symmetry defect = {symmetry_defect:e}, min eigenvalue = {min_eig:e}"
    )]
    ConditionNotMet { norm: f64, symmetry_defect: f64, min_eig: f64 },

    #[error("scaled map is not a contraction (Lipschitz estimate {estimate})")]
    NotContraction { estimate: f64 },

    #[error("fixed-point iteration stalled after {iterations} iterations (residual {residual:e})")]
    FixedPointStalled { iterations: usize, residual: f64 },

    #[error("integration blew up at t = {t}")]
    BlowUp { t: f64 },
}

impl SteerError {
    /// True for failures that are mathematical verdicts on the request
    /// (condition not met, target outside `GL⁺`, map not contracting) rather
    /// than operational errors.
    pub fn is_rejection(&self) -> bool {
        matches!(
            self,
            SteerError::NotInGlPlus { .. }
                | SteerError::ConditionNotMet { .. }
                | SteerError::LeavesGlPlus { .. }
                | SteerError::Uncontrollable
                | SteerError::NotContraction { .. }
        )
    }
}
