//! On-disk formats: system specs, task files and plan files.
//!
//! Matrices are row-major arrays of arrays. Every format rejects unknown
//! fields and is validated before any computation starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use collective_steer::planner::{CovarianceEnds, GainSchedule, Provenance};
use collective_steer::segment::{ConditionTag, SteeringSegment};
use collective_steer::sysmod::{GramianEvaluator, LinearEnsemble, PeriodizedSystem};
use collective_steer::Mat;
use serde::Deserialize;
use serde_json::Value;

use crate::json;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub type Rows = Vec<Vec<f64>>;

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Converts rows to a matrix, checking shape and finiteness.
pub fn to_mat(rows: &Rows, what: &str) -> Result<Mat, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(CliError::Schema(format!("{what} is empty")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Schema(format!("{what} has rows of unequal length")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(CliError::Schema(format!("{what} has non-finite entries")));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_square(rows: &Rows, n: usize, what: &str) -> Result<Mat, CliError> {
    let m = to_mat(rows, what)?;
    if m.shape() != (n, n) {
        return Err(CliError::Schema(format!("{what} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn positive(x: f64, what: &str) -> Result<f64, CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Schema(format!("{what} must be positive and finite, got {x}")))
    }
}

/// Plant description: `ẋ = Ax + Bu`, optional period and periodizing gain.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    pub t_s: Option<f64>,
    #[serde(rename = "K_c")]
    pub k_c: Option<Rows>,
}

/// Validated system spec.
#[derive(Debug, Clone)]
pub struct System {
    pub ensemble: LinearEnsemble,
    pub t_s: Option<f64>,
    pub k_c: Option<Mat>,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<System, CliError> {
        let a = to_mat(&self.a, "A")?;
        let b = to_mat(&self.b, "B")?;
        let n = a.nrows();
        let ensemble = LinearEnsemble::new(a, b).map_err(|e| CliError::Schema(e.to_string()))?;
        let t_s = self.t_s.map(|t| positive(t, "t_s")).transpose()?;
        let k_c = match &self.k_c {
            Some(rows) => {
                let k = to_mat(rows, "K_c")?;
                if k.shape() != (ensemble.m(), n) {
                    return Err(CliError::Schema(format!("K_c must be {}x{n}", ensemble.m())));
                }
                if t_s.is_none() {
                    return Err(CliError::Schema("K_c requires t_s".into()));
                }
                Some(k)
            }
            None => None,
        };
        Ok(System { ensemble, t_s, k_c })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Any prescribed total time (conjugated-SPD legs).
    Strong,
    /// Near-identity legs of one period each.
    FreeTime,
    /// One leg; rejected when neither condition holds.
    SingleSegment,
    Covariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorizationName {
    SpdCone,
    PlanarFive,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub phi_in: Option<Rows>,
    pub phi_fn: Rows,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrangementSpec {
    pub x_in: Rows,
    pub x_fn: Rows,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub sigma_in: Rows,
    pub sigma_fn: Rows,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub terminal_tol: Option<f64>,
    pub steps_per_segment: Option<usize>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub plan: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Planning request.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub mode: Mode,
    pub target: Option<TransitionSpec>,
    pub arrangement: Option<ArrangementSpec>,
    pub covariance: Option<CovarianceSpec>,
    pub t_fn: Option<f64>,
    pub factorization: Option<FactorizationName>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Outputs,
}

/// What a validated task asks for.
#[derive(Debug, Clone)]
pub enum Goal {
    Transition { phi_in: Mat, phi_fn: Mat },
    Arrangement { x_in: Mat, x_fn: Mat },
    Covariance { sigma_in: Mat, sigma_fn: Mat },
}

#[derive(Debug, Clone)]
pub struct Task {
    pub system: System,
    pub mode: Mode,
    pub goal: Goal,
    pub t_fn: Option<f64>,
    pub factorization: FactorizationName,
    pub seed: Option<u64>,
    pub tolerances: Tolerances,
    pub output: Outputs,
}

impl TaskFile {
    pub fn validate(self) -> Result<Task, CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let system = self.system.validate()?;
        let n = system.ensemble.n();
        let goals = [self.target.is_some(), self.arrangement.is_some(), self.covariance.is_some()];
        if goals.iter().filter(|&&g| g).count() != 1 {
            return Err(CliError::Schema("exactly one of target, arrangement, covariance is required".into()));
        }
        let goal = if let Some(t) = &self.target {
            let phi_in = match &t.phi_in {
                Some(rows) => to_square(rows, n, "target.phi_in")?,
                None => Mat::identity(n, n),
            };
            Goal::Transition { phi_in, phi_fn: to_square(&t.phi_fn, n, "target.phi_fn")? }
        } else if let Some(a) = &self.arrangement {
            Goal::Arrangement { x_in: to_square(&a.x_in, n, "arrangement.x_in")?, x_fn: to_square(&a.x_fn, n, "arrangement.x_fn")? }
        } else {
            let c = self.covariance.as_ref().unwrap();
            Goal::Covariance {
                sigma_in: to_square(&c.sigma_in, n, "covariance.sigma_in")?,
                sigma_fn: to_square(&c.sigma_fn, n, "covariance.sigma_fn")?,
            }
        };
        if (self.mode == Mode::Covariance) != matches!(goal, Goal::Covariance { .. }) {
            return Err(CliError::Schema("covariance mode goes with a covariance goal and only with it".into()));
        }
        let t_fn = self.t_fn.map(|t| positive(t, "t_fn")).transpose()?;
        if self.mode != Mode::FreeTime && t_fn.is_none() {
            return Err(CliError::Schema("this mode needs t_fn".into()));
        }
        if let Some(tol) = self.tolerances.terminal_tol {
            positive(tol, "tolerances.terminal_tol")?;
        }
        Ok(Task {
            system,
            mode: self.mode,
            goal,
            t_fn,
            factorization: self.factorization.unwrap_or(FactorizationName::SpdCone),
            seed: self.seed,
            tolerances: self.tolerances,
            output: self.output,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSystem {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "K_c")]
    pub k_c: Rows,
    pub t_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSegment {
    pub index: usize,
    pub start: f64,
    pub duration: f64,
    pub tag: String,
    pub target: Rows,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanProvenance {
    pub mode: String,
    pub factorization: String,
    pub epsilon: Option<f64>,
    pub copies: Option<[usize; 2]>,
    pub padding: usize,
}

/// A synthesized schedule on disk.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub schema_version: u32,
    pub system: PlanSystem,
    pub segments: Vec<PlanSegment>,
    pub target: Rows,
    pub total_time: f64,
    pub provenance: PlanProvenance,
    pub covariance: Option<CovarianceSpec>,
    pub diagnostics: Option<Value>,
}

impl PlanFile {
    /// Rebuilds the schedule. Legs keep their recorded tag when it still
    /// holds and are otherwise loaded unchecked, so the verifier judges them.
    pub fn into_schedule(self) -> Result<GainSchedule, CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!("unsupported plan schema_version {}", self.schema_version)));
        }
        let a = to_mat(&self.system.a, "system.A")?;
        let n = a.nrows();
        let base = LinearEnsemble::new(a, to_mat(&self.system.b, "system.B")?).map_err(|e| CliError::Schema(e.to_string()))?;
        let k_c = to_mat(&self.system.k_c, "system.K_c")?;
        let t_s = positive(self.system.t_s, "system.t_s")?;
        let eval = Arc::new(GramianEvaluator::new(PeriodizedSystem::with_gain(base, k_c, t_s)?)?);
        let mut segments = Vec::with_capacity(self.segments.len());
        for (i, s) in self.segments.iter().enumerate() {
            if s.index != i {
                return Err(CliError::Schema(format!("segment {i} carries index {}", s.index)));
            }
            let tag = ConditionTag::parse(&s.tag).ok_or_else(|| CliError::Schema(format!("unknown tag {:?}", s.tag)))?;
            let target = to_square(&s.target, n, "segment target")?;
            let seg = SteeringSegment::with_tag(eval.clone(), target.clone(), tag)
                .or_else(|_| SteeringSegment::unchecked(eval.clone(), target))?;
            segments.push(seg);
        }
        let p = &self.provenance;
        let provenance = Provenance {
            mode: p.mode.clone(),
            factorization: p.factorization.clone(),
            epsilon: p.epsilon,
            copies: p.copies.map(|[a, b]| (a, b)),
            padding: p.padding,
        };
        let target = to_square(&self.target, n, "target")?;
        let mut schedule =
            GainSchedule::new(eval, segments, target, self.total_time, provenance)?.with_total_time(self.total_time)?;
        if let Some(c) = &self.covariance {
            let spd = |rows: &Rows, what: &str| -> Result<_, CliError> {
                Ok(collective_steer::matfun::Spd::new(to_square(rows, n, what)?)?)
            };
            schedule = schedule
                .with_covariance(CovarianceEnds { sigma_in: spd(&c.sigma_in, "sigma_in")?, sigma_fn: spd(&c.sigma_fn, "sigma_fn")? });
        }
        Ok(schedule)
    }
}

/// Serializes a schedule as a plan file.
pub fn plan_to_json(schedule: &GainSchedule) -> Value {
    let sys = schedule.system();
    let segments = schedule
        .segments()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            json::object([
                ("index", Value::from(k as u64)),
                ("start", json::float(schedule.start(k))),
                ("duration", json::float(s.duration())),
                ("tag", Value::from(s.tag().as_str())),
                ("target", json::matrix(s.target())),
            ])
        })
        .collect();
    let p = schedule.provenance();
    let mut prov = json::object([
        ("mode", Value::from(p.mode.as_str())),
        ("factorization", Value::from(p.factorization.as_str())),
        ("padding", Value::from(p.padding as u64)),
    ]);
    if let Some(e) = p.epsilon {
        prov["epsilon"] = json::float(e);
    }
    if let Some((a, b)) = p.copies {
        prov["copies"] = Value::from(vec![a as u64, b as u64]);
    }
    let mut plan = json::object([
        ("schema_version", Value::from(SCHEMA_VERSION)),
        (
            "system",
            json::object([
                ("A", json::matrix(sys.base().a())),
                ("B", json::matrix(sys.base().b())),
                ("K_c", json::matrix(sys.k_c())),
                ("t_s", json::float(sys.t_s())),
            ]),
        ),
        ("segments", Value::Array(segments)),
        ("target", json::matrix(schedule.target())),
        ("total_time", json::float(schedule.total_time())),
        ("provenance", prov),
        (
            "diagnostics",
            json::object([
                ("product_error", json::float(schedule.product_error())),
                ("periodicity_residual", json::float(sys.periodicity_residual())),
            ]),
        ),
    ]);
    if let Some(c) = schedule.covariance() {
        plan["covariance"] =
            json::object([("sigma_in", json::matrix(c.sigma_in.as_mat())), ("sigma_fn", json::matrix(c.sigma_fn.as_mat()))]);
    }
    plan
}
