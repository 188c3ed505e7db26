//! Building, saving and loading problems.
//!
//! A saved problem is a directory holding `problem.toml` (the generator
//! parameters, from which `A` and `Q` are rebuilt) and binary vectors:
//! `b.bin`, `rinv.bin` and, when the truth is known, `b_exact.bin`,
//! `u_true.bin`, `x_true.bin`, `xi_true.bin`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use augkrylov_core::operators::{build_matern_covariance, Boundary, DenseSpd, DiagonalSpd, LinearOperator};
use augkrylov_core::problems::{forward_operator, generate, ForwardModel, ProblemConfig};
use augkrylov_core::solver::Truth;
use augkrylov_core::Error as CoreError;

use crate::config::{generator_config, ProblemSource, Source};
use crate::formats::{read_vector, write_vector};
use crate::CliError;

/// Known parts of the true solution.
#[derive(Debug, Clone)]
pub struct TruthVectors {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

pub struct LoadedProblem {
    pub a: Box<dyn LinearOperator>,
    pub q: DenseSpd,
    pub rinv: DiagonalSpd,
    pub b: Vec<f64>,
    pub b_exact: Option<Vec<f64>>,
    pub truth: Option<TruthVectors>,
    pub noise_sigma: Option<f64>,
    /// Image side; the unknowns form a `side x side` grid.
    pub side: usize,
    pub config: ProblemConfig,
}

impl LoadedProblem {
    pub fn truth(&self) -> Option<Truth<'_>> {
        self.truth.as_ref().map(|t| Truth {
            u: &t.u,
            x: &t.x,
            xi: &t.xi,
        })
    }
}

/// Problem-building errors caused by bad parameters are configuration
/// errors; anything else is a failure.
fn classify(context: &str, e: CoreError) -> CliError {
    match e {
        CoreError::Parameter { .. } | CoreError::Config(_) | CoreError::Dimension { .. } => {
            CliError::Config(format!("{context}: {e}"))
        }
        _ => CliError::Solver(format!("{context}: {e}")),
    }
}

pub fn build(source: &ProblemSource) -> Result<LoadedProblem, CliError> {
    match source {
        ProblemSource::Generated(cfg) => {
            let p = generate(cfg, None).map_err(|e| classify("generating problem", e))?;
            Ok(LoadedProblem {
                a: p.a,
                q: p.q,
                rinv: p.rinv,
                b: p.b,
                b_exact: Some(p.b_exact),
                truth: Some(TruthVectors {
                    u: p.u_true,
                    x: p.x_true,
                    xi: p.xi_true,
                }),
                noise_sigma: Some(p.noise_sigma),
                side: cfg.side,
                config: p.config,
            })
        }
        ProblemSource::File(dir) => load(dir),
    }
}

fn read_in(dir: &Path, file: &str) -> Result<Vec<f64>, CliError> {
    read_vector(&dir.join(file)).map_err(|e| CliError::Config(format!("{}: {e}", dir.join(file).display())))
}

/// Loads a directory written by [`save`].
pub fn load(dir: &Path) -> Result<LoadedProblem, CliError> {
    let toml_path = dir.join("problem.toml");
    let text = fs::read_to_string(&toml_path).map_err(|e| CliError::Config(format!("{}: {e}", toml_path.display())))?;
    let src = Source {
        name: toml_path.display().to_string(),
        text: &text,
    };
    let raw = src.parse()?;
    if raw.problem.get_ref().kind.get_ref() == "file" {
        return Err(src.error(Some(raw.problem.span()), "a saved problem must name its generator"));
    }
    let cfg = generator_config(&src, &raw.problem)?;
    let n = cfg.n();
    let a = forward_operator(&cfg).map_err(|e| classify("forward operator", e))?;
    let q = build_matern_covariance(&cfg.prior_spec()).map_err(|e| classify("prior covariance", e))?;
    let b = read_in(dir, "b.bin")?;
    if b.len() != a.rows() {
        return Err(CliError::Config(format!(
            "{}: b has {} entries, the operator has {} rows",
            dir.display(),
            b.len(),
            a.rows()
        )));
    }
    let rinv = if dir.join("rinv.bin").exists() {
        DiagonalSpd::new(read_in(dir, "rinv.bin")?).map_err(|e| classify("rinv.bin", e))?
    } else {
        DiagonalSpd::identity(b.len())
    };
    if rinv.diagonal().len() != b.len() {
        return Err(CliError::Config(format!(
            "{}: rinv.bin does not match b.bin",
            dir.display()
        )));
    }
    let truth_files = ["u_true.bin", "x_true.bin", "xi_true.bin"];
    let truth = if truth_files.iter().all(|f| dir.join(f).exists()) {
        let [u, x, xi] = truth_files.map(|f| read_in(dir, f));
        let t = TruthVectors { u: u?, x: x?, xi: xi? };
        if [&t.u, &t.x, &t.xi].iter().any(|v| v.len() != n) {
            return Err(CliError::Config(format!(
                "{}: truth vectors must have {n} entries",
                dir.display()
            )));
        }
        Some(t)
    } else {
        None
    };
    let b_exact = if dir.join("b_exact.bin").exists() {
        Some(read_in(dir, "b_exact.bin")?)
    } else {
        None
    };
    Ok(LoadedProblem {
        a,
        q,
        rinv,
        b,
        b_exact,
        truth,
        noise_sigma: raw.problem.get_ref().noise_sigma,
        side: cfg.side,
        config: cfg,
    })
}

/// `problem.toml` contents reproducing `cfg`.
pub fn problem_toml(cfg: &ProblemConfig, noise_sigma: Option<f64>) -> String {
    let mut s = String::from("[problem]\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    match cfg.forward {
        ForwardModel::Blur { psf_sigma, boundary } => {
            kv("kind", "\"deblur\"".into());
            kv("psf_sigma", format!("{psf_sigma:?}"));
            let b = match boundary {
                Boundary::Zero => "zero",
                Boundary::Reflexive => "reflexive",
            };
            kv("boundary", format!("\"{b}\""));
        }
        ForwardModel::RandomProjection { rows } => {
            kv("kind", "\"random_projection\"".into());
            kv("rows", rows.to_string());
        }
    }
    kv("side", cfg.side.to_string());
    kv("seed", cfg.seed.to_string());
    kv("noise_level", format!("{:?}", cfg.noise_level));
    kv("truth_nu", format!("{:?}", cfg.truth_kernel.nu));
    kv("truth_ell", format!("{:?}", cfg.truth_kernel.ell));
    kv("truth_variance", format!("{:?}", cfg.truth_kernel.variance));
    kv("prior_nu", format!("{:?}", cfg.prior_kernel.nu));
    kv("prior_ell", format!("{:?}", cfg.prior_kernel.ell));
    kv("prior_variance", format!("{:?}", cfg.prior_kernel.variance));
    kv("n_speckles", cfg.speckles().to_string());
    kv("speckle_scale", format!("{:?}", cfg.speckle_scale));
    if let Some(s) = noise_sigma {
        kv("noise_sigma", format!("{s:?}"));
    }
    s
}

/// Writes `p` to `dir` in the format read by [`load`].
pub fn save(dir: &Path, p: &LoadedProblem) -> Result<(), CliError> {
    let io = |what: &Path| {
        let what = what.display().to_string();
        move |e: std::io::Error| CliError::Io {
            context: what.clone(),
            source: e,
        }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let toml_path = dir.join("problem.toml");
    fs::write(&toml_path, problem_toml(&p.config, p.noise_sigma)).map_err(io(&toml_path))?;
    let mut files: Vec<(&str, &[f64])> = vec![("b.bin", &p.b), ("rinv.bin", p.rinv.diagonal())];
    if let Some(be) = &p.b_exact {
        files.push(("b_exact.bin", be));
    }
    if let Some(t) = &p.truth {
        files.extend([
            ("u_true.bin", &t.u[..]),
            ("x_true.bin", &t.x[..]),
            ("xi_true.bin", &t.xi[..]),
        ]);
    }
    for (name, v) in files {
        let path = dir.join(name);
        write_vector(&path, v).map_err(io(&path))?;
    }
    Ok(())
}
