//! The `run` and `gen-problem` commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use augkrylov_core::regparam::SelectionMethod;
use augkrylov_core::solver::{solve, SolveResult, SolverConfig};

use crate::config::{self, ExperimentConfig, NamedSolver, ProblemSource};
use crate::formats::{write_grid_csv, write_pgm, Scaling};
use crate::problem::{self, LoadedProblem};
use crate::{trace, CliError};

/// Outcome of one solver within a run.
#[derive(Debug)]
pub struct SolverOutcome {
    pub name: String,
    pub method: &'static str,
    pub result: Result<SolverSummary, String>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSummary {
    pub iterations: usize,
    pub stop_reason: &'static str,
    pub rel_err_u: Option<f64>,
    pub rel_err_x: Option<f64>,
    pub rel_err_xi: Option<f64>,
    pub a_applies: usize,
    pub at_applies: usize,
    pub q_applies: usize,
}

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub outcomes: Vec<SolverOutcome>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        context: path.display().to_string(),
        source: e,
    }
}

/// Fills in the noise level the discrepancy principle needs.
fn finalize(solver: &NamedSolver, p: &LoadedProblem) -> Result<SolverConfig, CliError> {
    let mut cfg = solver.config.clone();
    let sel = &mut cfg.selection;
    if cfg.fixed_params.is_none() {
        if sel.method == SelectionMethod::Dp && sel.noise_sigma.is_none() {
            sel.noise_sigma = Some(p.noise_sigma.ok_or_else(|| {
                CliError::Config(format!(
                    "[solver.{}]: selection = \"dp\" needs noise_sigma, which the problem does not record",
                    solver.name
                ))
            })?);
        }
        if sel.method == SelectionMethod::Optimal && p.truth.is_none() {
            return Err(CliError::Config(format!(
                "[solver.{}]: selection = \"optimal\" needs the true solution",
                solver.name
            )));
        }
    }
    Ok(cfg)
}

/// Runs every solver of a configuration file. Outputs go to `out_override`
/// when given, else to the configured directory.
pub fn run(config_path: &Path, out_override: Option<PathBuf>) -> Result<RunReport, CliError> {
    let cfg = config::load(config_path)?;
    run_config(&cfg, out_override)
}

pub fn run_config(cfg: &ExperimentConfig, out_override: Option<PathBuf>) -> Result<RunReport, CliError> {
    let p = problem::build(&cfg.problem)?;
    let solvers = cfg
        .solvers
        .iter()
        .map(|s| Ok((s, finalize(s, &p)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let out_dir = out_override.unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let mut outcomes = Vec::new();
    for (named, scfg) in solvers {
        let start = Instant::now();
        let res = solve(p.a.as_ref(), &p.q, &p.rinv, &p.b, &scfg, p.truth());
        let wall_time = start.elapsed().as_secs_f64();
        let result = match res {
            Ok(r) => {
                let dir = out_dir.join(&named.name);
                write_solver_outputs(&dir, &r, p.side, cfg)?;
                log::info!(
                    "{}: {} iterations, stopped by {}",
                    named.name,
                    r.iterations(),
                    r.stop_reason.name()
                );
                Ok(summarize(&r))
            }
            Err(e) => {
                log::error!("{}: {e}", named.name);
                Err(e.to_string())
            }
        };
        outcomes.push(SolverOutcome {
            name: named.name.clone(),
            method: scfg.method.name(),
            result,
            wall_time,
        });
    }
    let summary = out_dir.join("summary.csv");
    fs::write(&summary, summary_csv(&outcomes)).map_err(io_err(&summary))?;
    Ok(RunReport { out_dir, outcomes })
}

fn summarize(r: &SolveResult) -> SolverSummary {
    let last = r.trace.last();
    SolverSummary {
        iterations: r.iterations(),
        stop_reason: r.stop_reason.name(),
        rel_err_u: last.and_then(|t| t.rel_error_u),
        rel_err_x: last.and_then(|t| t.rel_error_x),
        rel_err_xi: last.and_then(|t| t.rel_error_xi),
        a_applies: r.operator_counts.a,
        at_applies: r.operator_counts.at,
        q_applies: r.operator_counts.q,
    }
}

fn write_solver_outputs(dir: &Path, r: &SolveResult, side: usize, cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tp = dir.join("trace.csv");
    trace::write(&tp, &r.trace).map_err(io_err(&tp))?;
    let images = [("u", &r.u), ("x", &r.x), ("xi", &r.xi)];
    if cfg.output.images {
        let mut scaling = String::from("image,min,max\n");
        for (name, v) in images {
            let path = dir.join(format!("{name}.pgm"));
            let Scaling { min, max } = write_pgm(&path, v, side).map_err(io_err(&path))?;
            scaling.push_str(&format!("{name},{min},{max}\n"));
        }
        let sp = dir.join("scaling.csv");
        fs::write(&sp, scaling).map_err(io_err(&sp))?;
    }
    if cfg.output.vectors {
        for (name, v) in images {
            let path = dir.join(format!("{name}.csv"));
            write_grid_csv(&path, v, side).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

const SUMMARY_COLUMNS: &str = "rank,solver,method,stop_iteration,stop_reason,rel_err_u,rel_err_x,rel_err_xi,\
A_applies,At_applies,Q_applies,wall_time_s,status";

/// Successful solvers ranked by final error in `u`, then failures.
pub fn summary_csv(outcomes: &[SolverOutcome]) -> String {
    let key = |o: &SolverOutcome| match &o.result {
        Ok(s) => (0, s.rel_err_u.unwrap_or(f64::INFINITY)),
        Err(_) => (1, f64::INFINITY),
    };
    let mut order: Vec<&SolverOutcome> = outcomes.iter().collect();
    order.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS.split(',')).expect("in-memory write");
    for (i, o) in order.iter().enumerate() {
        let rank = (i + 1).to_string();
        let wall = o.wall_time.to_string();
        let rec: Vec<String> = match &o.result {
            Ok(s) => vec![
                rank,
                o.name.clone(),
                o.method.into(),
                s.iterations.to_string(),
                s.stop_reason.into(),
                opt(s.rel_err_u),
                opt(s.rel_err_x),
                opt(s.rel_err_xi),
                s.a_applies.to_string(),
                s.at_applies.to_string(),
                s.q_applies.to_string(),
                wall,
                "ok".into(),
            ],
            Err(e) => {
                let mut r = vec![String::new(); 13];
                r[0] = rank;
                r[1] = o.name.clone();
                r[2] = o.method.into();
                r[11] = wall;
                r[12] = format!("failed: {e}");
                r
            }
        };
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("csv is utf-8")
}

/// Generates the problem of a configuration file and saves it to `out`.
pub fn gen_problem(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let text =
        fs::read_to_string(config_path).map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let src = config::Source {
        name: config_path.display().to_string(),
        text: &text,
    };
    // Only the problem table matters; solver tables may be absent.
    let raw = src.parse()?;
    if raw.problem.get_ref().kind.get_ref() == "file" {
        return Err(src.error(Some(raw.problem.span()), "gen-problem needs a generator kind"));
    }
    let pcfg = config::generator_config(&src, &raw.problem)?;
    let p = problem::build(&ProblemSource::Generated(pcfg))?;
    problem::save(out, &p)?;
    log::info!("wrote problem with {} unknowns to {}", p.config.n(), out.display());
    Ok(())
}
