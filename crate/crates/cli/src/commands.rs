//! The subcommands.

use std::io::Write;
use std::path::Path;

use collective_steer::diffeo::{BuiltinMap, DiffeoTask};
use collective_steer::factorizer::{
    conjugation_epsilon, factor_tags, near_identity_factorize, ordered_product, planar_angle,
    planar_rotation_five_factors, spd_cone_factorize,
};
use collective_steer::matfun::{operator_norm, rel_error, spectral_radius, Spd};
use collective_steer::planner::{
    evaluator_for, plan_covariance, plan_free_time, plan_single_segment, plan_strong, CovarianceTask,
    FactorizationKind, GainSchedule, SteeringTask, TargetSpec, DEFAULT_FREE_TIME_PERIOD,
};
use collective_steer::segment::{ConditionTag, SteeringSegment};
use collective_steer::simverify::{propagate_swarm, propagate_transition, verify, SteeringReport, VerifySettings};
use collective_steer::tolerances::{DEFAULT_GRID_POINTS, DEFAULT_SEED, DEFAULT_STEPS_PER_SEGMENT};
use collective_steer::{Mat, SteerError, Vector};
use serde_json::Value;

use crate::files::{self, FactorizationName, Goal, Mode, PlanFile, Rows, SystemSpec, Task, TaskFile};
use crate::json;
use crate::{Cli, CliError, Command, FactorMode};

pub fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Plan { task, output } => cmd_plan(cli, task, output.as_deref()),
        Command::Verify { plan, output } => cmd_verify(cli, plan, output.as_deref()),
        Command::Simulate { plan, swarm, output, stride, plot_script } => {
            cmd_simulate(cli, plan, swarm.as_deref(), output.as_deref(), *stride, plot_script.as_deref())
        }
        Command::Factor { matrix, mode, w, system, epsilon, output } => {
            cmd_factor(cli, matrix, *mode, w.as_deref(), system.as_deref(), *epsilon, output.as_deref())
        }
        Command::Gram { system, at, output } => cmd_gram(cli, system, at, output.as_deref()),
        Command::Diffeo { system, map, points, half_width, output, report } => {
            cmd_diffeo(cli, system, map, points.as_deref(), *half_width, output.as_deref(), report.as_deref())
        }
    }
}

fn seed(cli: &Cli, from_file: Option<u64>) -> u64 {
    cli.seed.or(from_file).unwrap_or(DEFAULT_SEED)
}

fn steps(cli: &Cli, from_file: Option<usize>) -> usize {
    cli.steps_per_segment.or(from_file).unwrap_or(DEFAULT_STEPS_PER_SEGMENT)
}

fn grid_points(cli: &Cli, from_file: Option<usize>) -> usize {
    cli.grid_points.or(from_file).unwrap_or(DEFAULT_GRID_POINTS)
}

fn settings(cli: &Cli, tol: &files::Tolerances) -> VerifySettings {
    let defaults = VerifySettings::default();
    VerifySettings {
        steps_per_segment: steps(cli, tol.steps_per_segment),
        terminal_tol: cli.terminal_tol.or(tol.terminal_tol).unwrap_or(defaults.terminal_tol),
        ..defaults
    }
}

fn load_plan(path: &Path) -> Result<GainSchedule, CliError> {
    files::read_json::<PlanFile>(path)?.into_schedule()
}

// ---------------------------------------------------------------- plan

fn cmd_plan(cli: &Cli, task_path: &Path, output: Option<&Path>) -> Result<i32, CliError> {
    let task = files::read_json::<TaskFile>(task_path)?.validate()?;
    let seed = seed(cli, task.seed);
    let schedule = synthesize(cli, &task, seed)?;
    let out = output.or(task.output.plan.as_deref());
    files::write_text(out, &json::to_string(&files::plan_to_json(&schedule)))?;
    eprintln!(
        "plan: mode {}, {} segment(s), total time {}, product error {:.3e}",
        schedule.provenance().mode,
        schedule.segments().len(),
        schedule.total_time(),
        schedule.product_error()
    );
    if let Some(report_path) = &task.output.report {
        let report = verify(&schedule, &settings(cli, &task.tolerances))?;
        let grid = grid_points(cli, task.tolerances.grid_points);
        files::write_text(Some(report_path), &json::to_string(&report_to_json(&schedule, &report, grid)?))?;
        if !report.passed {
            return Err(CliError::Rejected {
                message: format!("plan fails verification: {}", report.failure.unwrap_or_default()),
                detail: None,
            });
        }
    }
    Ok(0)
}

fn synthesize(cli: &Cli, task: &Task, seed: u64) -> Result<GainSchedule, CliError> {
    let system = task.system.ensemble.clone();
    let target = match &task.goal {
        Goal::Transition { phi_in, phi_fn } => TargetSpec::Transition { phi_in: phi_in.clone(), phi_fn: phi_fn.clone() },
        Goal::Arrangement { x_in, x_fn } => TargetSpec::Arrangement { x_in: x_in.clone(), x_fn: x_fn.clone() },
        Goal::Covariance { sigma_in, sigma_fn } => {
            let mut c = CovarianceTask::new(
                system,
                Spd::new(sigma_in.clone())?,
                Spd::new(sigma_fn.clone())?,
                task.t_fn.expect("validated"),
            );
            c.k_c = task.system.k_c.clone();
            c.seed = seed;
            return Ok(plan_covariance(&c)?);
        }
    };
    let mut st = SteeringTask::new(system, target).with_seed(seed).with_factorization(match task.factorization {
        FactorizationName::SpdCone => FactorizationKind::SpdCone,
        FactorizationName::PlanarFive => FactorizationKind::PlanarFive,
    });
    st.t_fn = task.t_fn;
    st.k_c = task.system.k_c.clone();
    let planned = match task.mode {
        Mode::Strong => plan_strong(&st),
        Mode::FreeTime => plan_free_time(&st, task.system.t_s),
        Mode::SingleSegment => plan_single_segment(&st),
        Mode::Covariance => unreachable!("validated"),
    };
    match planned {
        Ok(s) => Ok(s),
        Err(e @ SteerError::ConditionNotMet { norm, symmetry_defect, min_eig }) => {
            // Explain the rejection: where the forced leg would turn singular.
            let t_fn = st.t_fn.expect("validated");
            let eval = evaluator_for(&st.system, st.k_c.as_ref(), t_fn, seed)?;
            let forced = SteeringSegment::unchecked(eval, st.target.effective_target()?)?;
            let grid = grid_points(cli, task.tolerances.grid_points);
            let singular = forced.singularity_scan(grid)?;
            let detail = json::object([
                ("status", Value::from("rejected")),
                ("reason", Value::from("condition_not_met")),
                ("conjugated_norm", json::float(norm)),
                ("symmetry_defect", json::float(symmetry_defect)),
                ("min_eigenvalue", json::float(min_eig)),
                ("singular_times", Value::Array(singular.iter().map(|&t| json::float(t)).collect())),
            ]);
            Err(CliError::Rejected { message: e.to_string(), detail: Some(detail) })
        }
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------- verify

fn report_to_json(schedule: &GainSchedule, r: &SteeringReport, grid: usize) -> Result<Value, CliError> {
    let opt = |x: Option<f64>| x.map_or(Value::Null, json::float);
    let mut segments = Vec::new();
    for (d, seg) in r.segments.iter().zip(schedule.segments()) {
        let singular = seg.singularity_scan(grid)?;
        segments.push(json::object([
            ("index", Value::from(d.index as u64)),
            ("start", json::float(d.start)),
            ("tag", Value::from(d.tag.as_str())),
            ("tag_holds", Value::from(d.tag_holds)),
            ("min_inv_margin", json::float(d.min_inv_margin)),
            ("endpoint_error", json::float(d.endpoint_error)),
            ("singular_times", Value::Array(singular.iter().map(|&t| json::float(t)).collect())),
        ]));
    }
    let mut v = json::object([
        ("passed", Value::from(r.passed)),
        ("terminal_error", opt(r.terminal_error)),
        ("min_inv_margin", json::float(r.min_inv_margin)),
        ("det_sign_ok", Value::from(r.det_sign_ok)),
        ("tags_ok", Value::from(r.tags_ok)),
        ("closed_form_error", opt(r.closed_form_error)),
        ("total_time", json::float(r.total_time)),
        (
            "integrator",
            json::object([
                ("method", Value::from("rk4")),
                ("steps_per_segment", Value::from(r.steps_per_segment as u64)),
                ("terminal_tol", json::float(r.terminal_tol)),
            ]),
        ),
        ("segments", Value::Array(segments)),
        ("failure", r.failure.clone().map_or(Value::Null, Value::from)),
    ]);
    if let Some(c) = &r.covariance {
        v["covariance"] = json::object([
            ("terminal_error", json::float(c.terminal_error)),
            ("spd_ok", Value::from(c.spd_ok)),
            ("min_eigenvalue", json::float(c.min_eigenvalue)),
            ("lyapunov_residual", json::float(c.lyapunov_residual)),
        ]);
    }
    Ok(v)
}

fn cmd_verify(cli: &Cli, plan: &Path, output: Option<&Path>) -> Result<i32, CliError> {
    let schedule = load_plan(plan)?;
    let report = verify(&schedule, &settings(cli, &Default::default()))?;
    let v = report_to_json(&schedule, &report, grid_points(cli, None))?;
    files::write_text(output, &json::to_string(&v))?;
    if report.passed {
        eprintln!("verify: pass (terminal error {:.3e})", report.terminal_error.unwrap_or(f64::NAN));
        Ok(0)
    } else {
        Err(CliError::Rejected { message: report.failure.unwrap_or_default(), detail: None })
    }
}

// ---------------------------------------------------------------- simulate

/// Reads points, one row of `n` coordinates each, into an `n × N` matrix. A
/// non-numeric first row is taken as a header.
pub fn read_points(path: &Path, n: usize) -> Result<Mat, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut cols: Vec<f64> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CliError::Schema(format!("{}: row {}: {e}", path.display(), i + 1))),
        };
        if row.len() != n {
            return Err(CliError::Schema(format!(
                "dimension mismatch: {} row {} has {} coordinates, system has n = {n}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Schema(format!("{}: non-finite coordinate", path.display())));
        }
        cols.extend(row);
    }
    if cols.is_empty() {
        return Err(CliError::Schema(format!("{}: no points", path.display())));
    }
    Ok(Mat::from_column_slice(n, cols.len() / n, &cols))
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

fn swarm_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "particle_id".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h
}

fn cmd_simulate(
    cli: &Cli,
    plan: &Path,
    swarm: Option<&Path>,
    output: Option<&Path>,
    stride: usize,
    plot_script: Option<&Path>,
) -> Result<i32, CliError> {
    if stride == 0 {
        return Err(CliError::Schema("stride must be at least 1".into()));
    }
    let schedule = load_plan(plan)?;
    let n = schedule.evaluator().n();
    let steps = steps(cli, None);
    let keep = |i: usize| {
        let j = i % (steps + 1);
        j.is_multiple_of(stride) || j == steps
    };
    let mut w = csv_writer(output)?;
    match swarm {
        Some(path) => {
            let x_in = read_points(path, n)?;
            let samples = propagate_swarm(&schedule, &x_in, steps)?;
            w.write_record(swarm_header(n)).map_err(csv_err)?;
            for (_, s) in samples.iter().enumerate().filter(|(i, _)| keep(*i)) {
                for p in 0..s.state.ncols() {
                    let mut row = vec![json::format_float(s.t), p.to_string()];
                    row.extend(s.state.column(p).iter().map(|&x| json::format_float(x)));
                    w.write_record(&row).map_err(csv_err)?;
                }
            }
        }
        None => {
            let samples = propagate_transition(&schedule, steps)?;
            let mut header = vec!["t".to_string()];
            for i in 1..=n {
                header.extend((1..=n).map(|j| format!("entry_{i}_{j}")));
            }
            w.write_record(&header).map_err(csv_err)?;
            for (_, s) in samples.iter().enumerate().filter(|(i, _)| keep(*i)) {
                let mut row = vec![json::format_float(s.t)];
                for i in 0..n {
                    row.extend((0..n).map(|j| json::format_float(s.state[(i, j)])));
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(csv_err)?;
    if let Some(script) = plot_script {
        let csv_name = output.map_or_else(|| "trajectory.csv".to_string(), |p| p.display().to_string());
        files::write_text(Some(script), &plot_script_text(&csv_name, swarm.is_some()))?;
    }
    Ok(0)
}

fn plot_script_text(csv_path: &str, swarm: bool) -> String {
    let body = if swarm {
        "for pid, g in df.groupby(\"particle_id\"):\n    \
         ax.plot(g[\"x_1\"], g[\"x_2\"], label=f\"particle {pid}\")\n    \
         ax.plot(g[\"x_1\"].iloc[0], g[\"x_2\"].iloc[0], \"o\", color=\"k\")\n    \
         ax.plot(g[\"x_1\"].iloc[-1], g[\"x_2\"].iloc[-1], \"s\", color=\"k\")\n\
         ax.set_xlabel(\"x_1\")\nax.set_ylabel(\"x_2\")\nax.set_aspect(\"equal\")\n"
    } else {
        "for col in df.columns[1:]:\n    ax.plot(df[\"t\"], df[col], label=col)\nax.set_xlabel(\"t\")\n"
    };
    format!(
        "# Plots the trajectory CSV written by `collective-steer simulate`.\n\
         import sys\n\nimport matplotlib.pyplot as plt\nimport pandas as pd\n\n\
         path = sys.argv[1] if len(sys.argv) > 1 else {csv_path:?}\n\
         df = pd.read_csv(path)\nfig, ax = plt.subplots()\n{body}\
         ax.legend()\nfig.savefig(path.rsplit(\".\", 1)[0] + \".png\", dpi=150)\n"
    )
}

// ---------------------------------------------------------------- factor

fn cmd_factor(
    cli: &Cli,
    matrix: &Path,
    mode: FactorMode,
    w_path: Option<&Path>,
    system: Option<&Path>,
    epsilon: Option<f64>,
    output: Option<&Path>,
) -> Result<i32, CliError> {
    let target = files::to_mat(&files::read_json::<Rows>(matrix)?, "matrix")?;
    let n = target.nrows();
    if target.ncols() != n {
        return Err(CliError::Schema("matrix must be square".into()));
    }
    let w = if let Some(p) = w_path {
        Spd::new(files::to_square(&files::read_json::<Rows>(p)?, n, "W")?)?
    } else if let Some(p) = system {
        let sys = files::read_json::<SystemSpec>(p)?.validate()?;
        let t_s = sys.t_s.unwrap_or(DEFAULT_FREE_TIME_PERIOD);
        evaluator_for(&sys.ensemble, sys.k_c.as_ref(), t_s, seed(cli, None))?.w_end().clone()
    } else {
        Spd::identity(n)
    };
    if w.dim() != n {
        return Err(CliError::Schema(format!("W must be {n}x{n}")));
    }
    let det = target.clone().determinant();
    if det.is_nan() || det <= 0.0 {
        return Err(SteerError::NotInGlPlus { det }.into());
    }

    let mut v = json::object([("W", json::matrix(w.as_mat()))]);
    let factors = match mode {
        FactorMode::SpdCone | FactorMode::PlanarFive => {
            let f = if mode == FactorMode::SpdCone {
                spd_cone_factorize(&target, &w)?
            } else {
                if n != 2 {
                    return Err(CliError::Schema("planar-five needs a 2x2 rotation".into()));
                }
                planar_rotation_five_factors(planar_angle(&target)?, &w)?
            };
            v["cores"] = Value::Array(f.cores.iter().map(|c| json::matrix(c.as_mat())).collect());
            v["K"] = Value::from(f.len() as u64);
            f.factors
        }
        FactorMode::NearIdentity => {
            let eps = epsilon.unwrap_or_else(|| conjugation_epsilon(&w));
            let f = near_identity_factorize(&target, eps)?;
            v["epsilon"] = json::float(f.epsilon);
            v["N"] = Value::from(f.len() as u64);
            v["copies"] = Value::from(vec![f.n1 as u64, f.n2 as u64]);
            f.factors
        }
    };
    let tags: Vec<ConditionTag> = factor_tags(&factors, &w);
    let product_error = rel_error(&ordered_product(&factors, n), &target);
    v["mode"] = Value::from(match mode {
        FactorMode::SpdCone => "spd_cone",
        FactorMode::PlanarFive => "planar_five",
        FactorMode::NearIdentity => "near_identity",
    });
    v["factors"] = Value::Array(factors.iter().map(json::matrix).collect());
    v["tags"] = Value::Array(tags.iter().map(|t| Value::from(t.as_str())).collect());
    v["product_error"] = json::float(product_error);
    files::write_text(output, &json::to_string(&v))?;
    eprintln!("factor: {} factor(s), product error {product_error:.3e}", factors.len());
    Ok(0)
}

// ---------------------------------------------------------------- gram

fn cmd_gram(cli: &Cli, system: &Path, at: &[f64], output: Option<&Path>) -> Result<i32, CliError> {
    let sys = files::read_json::<SystemSpec>(system)?.validate()?;
    let t_s = sys.t_s.unwrap_or(DEFAULT_FREE_TIME_PERIOD);
    let eval = evaluator_for(&sys.ensemble, sys.k_c.as_ref(), t_s, seed(cli, None))?;
    let mut evaluations = Vec::new();
    for &t in at {
        if !(t >= 0.0 && t <= t_s) {
            return Err(CliError::Schema(format!("--at {t} outside [0, t_s = {t_s}]")));
        }
        let ratio = eval.gramian_ratio(t, t_s)?;
        evaluations.push(json::object([
            ("t", json::float(t)),
            ("gramian", json::matrix(&eval.flow(t)?.gramian)),
            ("ratio", json::matrix(&ratio)),
            ("ratio_norm", json::float(operator_norm(&ratio))),
            ("ratio_spectral_radius", json::float(spectral_radius(&ratio))),
        ]));
    }
    let p = eval.system();
    let v = json::object([
        ("t_s", json::float(t_s)),
        ("K_c", json::matrix(p.k_c())),
        ("A_c", json::matrix(p.a_c())),
        ("periodicity_residual", json::float(p.periodicity_residual())),
        ("gramian_end", json::matrix(eval.w_end().as_mat())),
        ("evaluations", Value::Array(evaluations)),
    ]);
    files::write_text(output, &json::to_string(&v))?;
    Ok(0)
}

// ---------------------------------------------------------------- diffeo

fn parse_numbers(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| CliError::Schema(format!("{what}: {x:?}: {e}"))))
        .collect()
}

/// Parses `identity`, `translate c1,c2,…`, `linear m11,m12;m21,m22` or
/// `tanh_perturb α` (a `:` may replace the space).
pub fn parse_map(spec: &str, n: usize) -> Result<BuiltinMap, CliError> {
    let spec = spec.trim();
    let (name, arg) = match spec.find(|c: char| c.is_whitespace() || c == ':') {
        Some(i) => (&spec[..i], spec[i + 1..].trim()),
        None => (spec, ""),
    };
    let map = match name {
        "identity" => BuiltinMap::Identity,
        "translate" => BuiltinMap::Translate(Vector::from_vec(parse_numbers(arg, "translate")?)),
        "linear" => {
            let rows: Result<Rows, _> = arg.split(';').map(|r| parse_numbers(r, "linear")).collect();
            BuiltinMap::Linear(files::to_square(&rows?, n, "linear map")?)
        }
        "tanh_perturb" => {
            let a = parse_numbers(arg, "tanh_perturb")?;
            if a.len() != 1 || !a[0].is_finite() {
                return Err(CliError::Schema("tanh_perturb takes one finite coefficient".into()));
            }
            BuiltinMap::TanhPerturb(a[0])
        }
        other => return Err(CliError::Schema(format!("unknown map {other:?}"))),
    };
    if !map.dim_ok(n) {
        return Err(CliError::Schema(format!("map {name} does not act on R^{n}")));
    }
    Ok(map)
}

fn cmd_diffeo(
    cli: &Cli,
    system: &Path,
    map: &str,
    points: Option<&Path>,
    half_width: f64,
    output: Option<&Path>,
    report: Option<&Path>,
) -> Result<i32, CliError> {
    let sys = files::read_json::<SystemSpec>(system)?.validate()?;
    let n = sys.ensemble.n();
    let map = parse_map(map, n)?;
    let t_s = sys.t_s.unwrap_or(DEFAULT_FREE_TIME_PERIOD);
    let seed = seed(cli, None);
    let eval = evaluator_for(&sys.ensemble, sys.k_c.as_ref(), t_s, seed)?;
    let task = DiffeoTask::from_builtin(eval, map, half_width, seed)?;
    let x_in = match points {
        Some(p) => read_points(p, n)?,
        None => {
            let id = Mat::identity(n, n);
            Mat::from_fn(n, 2 * n, |i, j| if j < n { id[(i, j)] } else { -id[(i, j - n)] })
        }
    };
    let steps = steps(cli, None);
    let mut w = csv_writer(output)?;
    w.write_record(swarm_header(n)).map_err(csv_err)?;
    let mut max_err: f64 = 0.0;
    let mut max_iters = 0;
    for p in 0..x_in.ncols() {
        let x0 = x_in.column(p).into_owned();
        let traj = task.closed_loop_trajectory(&x0, steps)?;
        for (t, x) in &traj {
            max_iters = max_iters.max(task.feedback_solve(x, *t)?.iterations);
            let mut row = vec![json::format_float(*t), p.to_string()];
            row.extend(x.iter().map(|&v| json::format_float(v)));
            w.write_record(&row).map_err(csv_err)?;
        }
        max_err = max_err.max((&traj.last().unwrap().1 - task.apply(&x0)).norm());
    }
    w.flush().map_err(csv_err)?;
    let summary = json::object([
        ("lipschitz", json::float(task.lipschitz())),
        ("points", Value::from(x_in.ncols() as u64)),
        ("period", json::float(t_s)),
        ("steps", Value::from(steps as u64)),
        ("max_endpoint_error", json::float(max_err)),
        ("max_iterations", Value::from(max_iters as u64)),
    ]);
    match report {
        Some(p) => files::write_text(Some(p), &json::to_string(&summary))?,
        None => eprintln!(
            "diffeo: Lipschitz {:.3}, max endpoint error {max_err:.3e}, max iterations {max_iters}",
            task.lipschitz()
        ),
    }
    Ok(0)
}
