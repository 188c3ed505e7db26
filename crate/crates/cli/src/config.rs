//! Experiment configuration: a TOML file with `[problem]`, `[solver.NAME]`
//! and `[output]` tables.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use augkrylov_core::operators::{Boundary, Matern};
use augkrylov_core::problems::{ForwardModel, ProblemConfig};
use augkrylov_core::regparam::{DpDimension, RegParams, SelectionMethod};
use augkrylov_core::solver::{Method, SolverConfig, WeightInit};
use serde::Deserialize;
use toml::Spanned;

use crate::CliError;

/// Where the problem comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Generated(ProblemConfig),
    /// Directory written by `gen-problem`.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedSolver {
    pub name: String,
    pub config: SolverConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write PGM images of `u`, `x`, `xi`.
    pub images: bool,
    /// Write the reconstructions as CSV.
    pub vectors: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    /// Sorted by name.
    pub solvers: Vec<NamedSolver>,
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawConfig {
    pub problem: Spanned<RawProblem>,
    #[serde(default)]
    pub solver: BTreeMap<String, Spanned<RawSolver>>,
    #[serde(default)]
    pub output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawProblem {
    pub kind: Spanned<String>,
    pub path: Option<String>,
    pub side: Option<usize>,
    pub seed: Option<u64>,
    pub noise_level: Option<f64>,
    pub psf_sigma: Option<f64>,
    pub boundary: Option<Spanned<String>>,
    pub rows: Option<usize>,
    pub truth_nu: Option<f64>,
    pub truth_ell: Option<f64>,
    pub truth_variance: Option<f64>,
    pub prior_nu: Option<f64>,
    pub prior_ell: Option<f64>,
    pub prior_variance: Option<f64>,
    pub n_speckles: Option<usize>,
    pub speckle_scale: Option<f64>,
    /// Set by `gen-problem`; the true noise level is unknown for loaded data.
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawSolver {
    method: Option<Spanned<String>>,
    maxit: Option<usize>,
    tau: Option<f64>,
    selection: Option<Spanned<String>>,
    noise_sigma: Option<f64>,
    tau_dp: Option<f64>,
    dp_dimension: Option<Spanned<String>>,
    lambda_x: Option<f64>,
    lambda_xi: Option<f64>,
    /// `false` runs to `maxit`.
    gcv_stop: Option<bool>,
    stop_tol: Option<f64>,
    log_bounds: Option<[f64; 2]>,
    log_init_guess: Option<[f64; 2]>,
    max_evals: Option<usize>,
    seed_grid: Option<usize>,
    quasi_newton: Option<bool>,
    reorthogonalize: Option<bool>,
    breakdown_tol: Option<f64>,
    weight_init: Option<Spanned<String>>,
    saturation_steps: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawOutput {
    dir: Option<String>,
    images: Option<bool>,
    vectors: Option<bool>,
}

/// Source text with its name, for diagnostics.
pub(crate) struct Source<'a> {
    pub name: String,
    pub text: &'a str,
}

impl Source<'_> {
    fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        (line, col)
    }

    pub fn error(&self, span: Option<Range<usize>>, msg: impl std::fmt::Display) -> CliError {
        match span {
            Some(s) => {
                let (line, col) = self.line_col(s.start);
                CliError::Config(format!("{}:{line}:{col}: {msg}", self.name))
            }
            None => CliError::Config(format!("{}: {msg}", self.name)),
        }
    }

    pub fn parse(&self) -> Result<RawConfig, CliError> {
        toml::from_str(self.text).map_err(|e| self.error(e.span(), e.message()))
    }
}

/// Reads and validates a configuration file. Nothing is written.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, &path.display().to_string(), base)
}

/// Parses configuration text; relative paths are taken from `base`.
pub fn parse(text: &str, name: &str, base: &Path) -> Result<ExperimentConfig, CliError> {
    let src = Source {
        name: name.to_string(),
        text,
    };
    let raw = src.parse()?;
    let problem = problem_source(&src, &raw.problem, base)?;
    if raw.solver.is_empty() {
        return Err(src.error(None, "at least one [solver.NAME] table is required"));
    }
    let solvers = raw
        .solver
        .iter()
        .map(|(name, s)| {
            Ok(NamedSolver {
                name: name.clone(),
                config: solver_config(&src, name, s)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let output = OutputConfig {
        dir: base.join(raw.output.dir.as_deref().unwrap_or("augkrylov-out")),
        images: raw.output.images.unwrap_or(true),
        vectors: raw.output.vectors.unwrap_or(true),
    };
    Ok(ExperimentConfig {
        problem,
        solvers,
        output,
    })
}

fn problem_source(src: &Source<'_>, p: &Spanned<RawProblem>, base: &Path) -> Result<ProblemSource, CliError> {
    let raw = p.get_ref();
    if raw.kind.get_ref() == "file" {
        let path = raw
            .path
            .as_ref()
            .ok_or_else(|| src.error(Some(p.span()), "kind = \"file\" needs `path`"))?;
        return Ok(ProblemSource::File(base.join(path)));
    }
    if raw.path.is_some() {
        return Err(src.error(Some(p.span()), "`path` is only valid with kind = \"file\""));
    }
    Ok(ProblemSource::Generated(generator_config(src, p)?))
}

/// Builds a generator configuration from a `[problem]` table.
pub(crate) fn generator_config(src: &Source<'_>, p: &Spanned<RawProblem>) -> Result<ProblemConfig, CliError> {
    let raw = p.get_ref();
    let side = raw.side.ok_or_else(|| src.error(Some(p.span()), "missing `side`"))?;
    let noise = raw.noise_level.unwrap_or(0.01);
    let seed = raw.seed.unwrap_or(0);
    let psf = raw.psf_sigma.unwrap_or(1.0);
    let mut cfg = match raw.kind.get_ref().as_str() {
        "deblur" => {
            let mut c = ProblemConfig::deblur(side, psf, noise, seed);
            if let Some(b) = &raw.boundary {
                let boundary = match b.get_ref().as_str() {
                    "zero" => Boundary::Zero,
                    "reflexive" => Boundary::Reflexive,
                    other => {
                        return Err(src.error(
                            Some(b.span()),
                            format!("unknown boundary `{other}` (expected zero or reflexive)"),
                        ))
                    }
                };
                c.forward = ForwardModel::Blur {
                    psf_sigma: psf,
                    boundary,
                };
            }
            if raw.rows.is_some() {
                return Err(src.error(Some(p.span()), "`rows` is only valid for random_projection"));
            }
            c
        }
        "random_projection" => {
            let mut c = ProblemConfig::random_projection(side, noise, seed);
            if let Some(rows) = raw.rows {
                c.forward = ForwardModel::RandomProjection { rows };
            }
            if raw.psf_sigma.is_some() || raw.boundary.is_some() {
                return Err(src.error(Some(p.span()), "`psf_sigma` and `boundary` are only valid for deblur"));
            }
            c
        }
        other => {
            return Err(src.error(
                Some(raw.kind.span()),
                format!("unknown problem kind `{other}` (expected deblur, random_projection or file)"),
            ))
        }
    };
    let t = cfg.truth_kernel;
    cfg.truth_kernel = Matern {
        nu: raw.truth_nu.unwrap_or(t.nu),
        ell: raw.truth_ell.unwrap_or(t.ell),
        variance: raw.truth_variance.unwrap_or(t.variance),
    };
    let q = cfg.prior_kernel;
    cfg.prior_kernel = Matern {
        nu: raw.prior_nu.unwrap_or(q.nu),
        ell: raw.prior_ell.unwrap_or(q.ell),
        variance: raw.prior_variance.unwrap_or(q.variance),
    };
    cfg.n_speckles = raw.n_speckles.or(cfg.n_speckles);
    cfg.speckle_scale = raw.speckle_scale.unwrap_or(cfg.speckle_scale);
    cfg.validate()
        .map_err(|e| src.error(Some(p.span()), format!("[problem]: {e}")))?;
    Ok(cfg)
}

fn keyword<T: Copy>(src: &Source<'_>, value: &Spanned<String>, what: &str, table: &[(&str, T)]) -> Result<T, CliError> {
    table
        .iter()
        .find(|(k, _)| *k == value.get_ref())
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = table.iter().map(|(k, _)| *k).collect();
            src.error(
                Some(value.span()),
                format!(
                    "unknown {what} `{}` (expected one of: {})",
                    value.get_ref(),
                    names.join(", ")
                ),
            )
        })
}

fn solver_config(src: &Source<'_>, name: &str, s: &Spanned<RawSolver>) -> Result<SolverConfig, CliError> {
    let raw = s.get_ref();
    let here = Some(s.span());
    let methods: Vec<(&str, Method)> = Method::ALL.iter().map(|m| (m.name(), *m)).collect();
    let method = match &raw.method {
        Some(m) => keyword(src, m, "method", &methods)?,
        None => Method::from_name(name).ok_or_else(|| {
            src.error(
                here.clone(),
                format!("[solver.{name}] has no `method` and `{name}` is not a method name"),
            )
        })?,
    };
    let mut cfg = SolverConfig {
        method,
        ..SolverConfig::default()
    };
    if let Some(v) = raw.maxit {
        cfg.maxit = v;
    }
    if let Some(v) = raw.tau {
        cfg.tau = v;
    }
    if let Some(sel) = &raw.selection {
        cfg.selection.method = keyword(
            src,
            sel,
            "selection",
            &[
                ("dp", SelectionMethod::Dp),
                ("wgcv", SelectionMethod::Wgcv),
                ("optimal", SelectionMethod::Optimal),
                ("fixed", SelectionMethod::Fixed),
            ],
        )?;
    }
    cfg.selection.noise_sigma = raw.noise_sigma;
    if let Some(v) = raw.tau_dp {
        cfg.selection.tau_dp = v;
    }
    if let Some(d) = &raw.dp_dimension {
        cfg.selection.dp_dimension = keyword(
            src,
            d,
            "dp_dimension",
            &[("data", DpDimension::Data), ("unknowns", DpDimension::Unknowns)],
        )?;
    }
    let lambdas = raw.lambda_x.is_some() || raw.lambda_xi.is_some();
    if cfg.selection.method == SelectionMethod::Fixed {
        // The parameter of a family the method lacks is never used.
        let lx = raw.lambda_x.or((!method.smooth()).then_some(1.0));
        let lxi = raw.lambda_xi.or((!method.sparse()).then_some(1.0));
        let (Some(lx), Some(lxi)) = (lx, lxi) else {
            return Err(src.error(
                here,
                format!("[solver.{name}]: selection = \"fixed\" needs lambda_x and lambda_xi"),
            ));
        };
        let params = RegParams::new(lx, lxi).map_err(|e| src.error(here.clone(), format!("[solver.{name}]: {e}")))?;
        cfg.fixed_params = Some(params);
        cfg.selection.fixed = Some(params);
    } else if lambdas {
        return Err(src.error(
            here,
            format!("[solver.{name}]: lambda_x and lambda_xi need selection = \"fixed\""),
        ));
    }
    match (raw.gcv_stop, raw.stop_tol) {
        (Some(false), Some(_)) => {
            return Err(src.error(here, format!("[solver.{name}]: stop_tol given with gcv_stop = false")));
        }
        (Some(false), None) => cfg.stop_tol = None,
        (_, Some(t)) => cfg.stop_tol = Some(t),
        _ => {}
    }
    let search = &mut cfg.selection.search;
    if let Some([lo, hi]) = raw.log_bounds {
        search.bounds = (lo, hi);
    }
    if let Some(g) = raw.log_init_guess {
        search.init_guess = g;
    }
    if let Some(v) = raw.max_evals {
        search.max_evals = v;
    }
    if let Some(v) = raw.seed_grid {
        search.seed_grid = v;
    }
    if let Some(v) = raw.quasi_newton {
        search.quasi_newton = v;
    }
    if let Some(v) = raw.reorthogonalize {
        cfg.reorthogonalize = v;
    }
    if let Some(v) = raw.breakdown_tol {
        cfg.breakdown_tol = v;
    }
    if let Some(w) = &raw.weight_init {
        cfg.weight_init = keyword(
            src,
            w,
            "weight_init",
            &[
                ("first_reconstruction", WeightInit::FirstReconstruction),
                ("sparse_iterate", WeightInit::SparseIterate),
            ],
        )?;
    }
    if let Some(v) = raw.saturation_steps {
        cfg.saturation_steps = v;
    }
    if let Some(t) = cfg.stop_tol {
        if !(t.is_finite() && t >= 0.0) {
            return Err(src.error(
                here,
                format!("[solver.{name}]: stop_tol must be finite and nonnegative"),
            ));
        }
    }
    // The noise level may come from the problem, which is not built yet.
    let mut check = cfg.clone();
    check.selection.noise_sigma.get_or_insert(1.0);
    check
        .validate()
        .map_err(|e| src.error(here, format!("[solver.{name}]: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> Result<ExperimentConfig, CliError> {
        parse(text, "cfg.toml", Path::new("/base"))
    }

    const MINIMAL: &str = "[problem]\nkind = \"deblur\"\nside = 16\n\n[solver.af_gmres]\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_str(MINIMAL).unwrap();
        assert_eq!(c.solvers.len(), 1);
        assert_eq!(c.solvers[0].config.method, Method::AfGmres);
        assert_eq!(c.solvers[0].config.maxit, 50);
        assert_eq!(c.output.dir, Path::new("/base/augkrylov-out"));
        let ProblemSource::Generated(p) = c.problem else {
            panic!()
        };
        assert_eq!(p.side, 16);
        assert_eq!(p.noise_level, 0.01);
    }

    #[test]
    fn solver_name_distinct_from_method() {
        let c = parse_str(
            "[problem]\nkind = \"random_projection\"\nside = 8\nrows = 100\n\
             [solver.mine]\nmethod = \"af_lsqr\"\nselection = \"fixed\"\nlambda_x = 0.5\nlambda_xi = 0.1\ngcv_stop = false\n",
        )
        .unwrap();
        let s = &c.solvers[0];
        assert_eq!(s.name, "mine");
        assert_eq!(s.config.method, Method::AfLsqr);
        assert_eq!(s.config.stop_tol, None);
        assert_eq!(s.config.fixed_params, Some(RegParams::new(0.5, 0.1).unwrap()));
    }

    #[test]
    fn unknown_method_reports_line() {
        let e = parse_str("[problem]\nkind = \"deblur\"\nside = 16\n[solver.a]\nmethod = \"gmres\"\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.starts_with("cfg.toml:5:10:"), "{msg}");
        assert!(msg.contains("af_gmres"), "{msg}");
    }

    #[test]
    fn unnamed_unknown_solver_is_rejected() {
        let e = parse_str("[problem]\nkind = \"deblur\"\nside = 16\n[solver.foo]\nmaxit = 3\n").unwrap_err();
        assert!(e.to_string().contains("`foo` is not a method name"), "{e}");
    }

    #[test]
    fn syntax_and_type_errors_report_line() {
        let e = parse_str("[problem]\nkind = \"deblur\"\nside = \"x\"\n").unwrap_err();
        assert!(e.to_string().starts_with("cfg.toml:3:"), "{e}");
        let e = parse_str("[problem]\nkind = \"deblur\"\nsidee = 3\n").unwrap_err();
        assert!(e.to_string().starts_with("cfg.toml:3:"), "{e}");
        let e = parse_str("[problem\n").unwrap_err();
        assert!(e.to_string().starts_with("cfg.toml:1:"), "{e}");
    }

    #[test]
    fn missing_solvers_and_bad_values() {
        assert!(parse_str("[problem]\nkind = \"deblur\"\nside = 16\n").is_err());
        assert!(parse_str(&format!("{MINIMAL}maxit = 0\n")).is_err());
        assert!(parse_str(&format!("{MINIMAL}lambda_x = 1.0\n")).is_err());
        assert!(parse_str(&format!("{MINIMAL}selection = \"fixed\"\nlambda_x = 1.0\n")).is_err());
        assert!(parse_str(&format!("{MINIMAL}gcv_stop = false\nstop_tol = 0.1\n")).is_err());
        assert!(parse_str("[problem]\nkind = \"deblur\"\nside = 1\n[solver.af_gmres]\n").is_err());
        assert!(parse_str("[problem]\nkind = \"file\"\n[solver.af_gmres]\n").is_err());
    }

    #[test]
    fn file_problem_path_is_relative_to_config() {
        let c = parse_str("[problem]\nkind = \"file\"\npath = \"p\"\n[solver.af_lsqr]\n[output]\ndir = \"/abs\"\n")
            .unwrap();
        assert_eq!(c.problem, ProblemSource::File(PathBuf::from("/base/p")));
        assert_eq!(c.output.dir, Path::new("/abs"));
    }
}
