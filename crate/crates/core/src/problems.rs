//! Seeded synthetic test problems: Gaussian deblurring of a smooth-plus-sparse
//! image and a well-conditioned random projection of the same kind of truth.
//!
//! The truth's smooth part is a draw from a Matérn Gaussian field, its sparse
//! part a few speckles at the field's maximum intensity. The solver prior `Q`
//! uses different Matérn parameters than the truth by default.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{param, Error, Result};
use crate::operators::{
    build_matern_covariance, gaussian_blur_operator, grid_coords_2d, matern_matrix, Boundary, DenseMatrix, DenseSpd,
    DiagonalSpd, LinearOperator, Matern, MaternSpec, DEFAULT_DENSE_CAP,
};
use crate::vector::norm2;

/// Jitter added to the kernel diagonal when the plain factorization fails.
const JITTER: f64 = 1e-10;

fn truth_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn noise_rng(seed: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

fn operator_rng(seed: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(2);
    r
}

/// Smooth, sparse and total parts of a synthetic truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthParts {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Lower Cholesky factor of a Matérn kernel matrix, reusable across seeds.
#[derive(Debug, Clone)]
pub struct TruthSampler {
    chol: DMatrix<f64>,
    jittered: bool,
}

impl TruthSampler {
    pub fn new(spec: &MaternSpec) -> Result<Self> {
        let k = matern_matrix(spec, DEFAULT_DENSE_CAP)?;
        if let Some(c) = k.clone().cholesky() {
            return Ok(Self {
                chol: c.l(),
                jittered: false,
            });
        }
        let n = k.nrows();
        let jittered = k + DMatrix::identity(n, n) * JITTER * spec.kernel.variance;
        log::warn!("matern kernel not numerically positive definite, adding jitter {JITTER}");
        let c = jittered.cholesky().ok_or(Error::NotSpd { value: JITTER })?;
        Ok(Self {
            chol: c.l(),
            jittered: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// Whether diagonal jitter was needed.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// `x = L g` with `g` standard normal.
    pub fn sample_field(&self, rng: &mut impl Rng) -> Vec<f64> {
        let g: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        (&self.chol * DVector::from_vec(g)).iter().copied().collect()
    }

    /// Field plus `n_speckles` pixels set to `speckle_scale · max(x)`.
    pub fn sample(&self, n_speckles: usize, speckle_scale: f64, seed: u64) -> Result<TruthParts> {
        let n = self.dim();
        if n_speckles >= n {
            return Err(param("n_speckles", "must be smaller than the grid size"));
        }
        if !speckle_scale.is_finite() {
            return Err(param("speckle_scale", "must be finite"));
        }
        let mut rng = truth_rng(seed);
        let x = self.sample_field(&mut rng);
        let peak = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut xi = vec![0.0; n];
        let mut idx = index::sample(&mut rng, n, n_speckles).into_vec();
        idx.sort_unstable();
        for i in idx {
            xi[i] = speckle_scale * peak;
        }
        let u = x.iter().zip(&xi).map(|(a, b)| a + b).collect();
        Ok(TruthParts { u, x, xi })
    }
}

/// One-off truth; use [`TruthSampler`] to draw several from the same kernel.
pub fn smooth_plus_sparse_truth(
    matern: &MaternSpec,
    n_speckles: usize,
    speckle_scale: f64,
    seed: u64,
) -> Result<TruthParts> {
    TruthSampler::new(matern)?.sample(n_speckles, speckle_scale, seed)
}

/// `b + e` with `e = level ‖b‖ g / ‖g‖`, `g` standard normal.
pub fn add_noise(b_exact: &[f64], level: f64, seed: u64) -> Result<Vec<f64>> {
    if !(level.is_finite() && level >= 0.0) {
        return Err(param("noise_level", "must be finite and nonnegative"));
    }
    if level == 0.0 {
        return Ok(b_exact.to_vec());
    }
    let nb = norm2(b_exact);
    if nb == 0.0 {
        return Err(Error::Degenerate("cannot scale noise to zero data"));
    }
    let mut rng = noise_rng(seed);
    let g: Vec<f64> = (0..b_exact.len()).map(|_| rng.sample(StandardNormal)).collect();
    let s = level * nb / norm2(&g);
    Ok(b_exact.iter().zip(&g).map(|(b, gi)| b + s * gi).collect())
}

/// Forward model family of a [`TestProblem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardModel {
    Blur {
        psf_sigma: f64,
        boundary: Boundary,
    },
    /// Dense Gaussian matrix with `rows` rows, entries `N(0, 1/rows)`.
    RandomProjection {
        rows: usize,
    },
}

/// Everything needed to generate a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub side: usize,
    pub forward: ForwardModel,
    pub noise_level: f64,
    pub seed: u64,
    pub truth_kernel: Matern,
    pub prior_kernel: Matern,
    /// `None` picks one speckle per 64 pixels.
    pub n_speckles: Option<usize>,
    pub speckle_scale: f64,
}

impl ProblemConfig {
    /// Blurred image with the default kernels.
    pub fn deblur(side: usize, psf_sigma: f64, noise_level: f64, seed: u64) -> Self {
        Self {
            side,
            forward: ForwardModel::Blur {
                psf_sigma,
                boundary: Boundary::Zero,
            },
            noise_level,
            seed,
            truth_kernel: Matern {
                nu: 2.5,
                ell: 0.05,
                variance: 1.0,
            },
            prior_kernel: Matern {
                nu: 1.0,
                ell: 0.5,
                variance: 1.0,
            },
            n_speckles: None,
            speckle_scale: 1.0,
        }
    }

    /// Random projection with twice as many data as unknowns.
    pub fn random_projection(side: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            forward: ForwardModel::RandomProjection { rows: 2 * side * side },
            ..Self::deblur(side, 1.0, noise_level, seed)
        }
    }

    pub fn n(&self) -> usize {
        self.side * self.side
    }

    pub fn speckles(&self) -> usize {
        self.n_speckles.unwrap_or((self.n() / 64).max(1))
    }

    pub fn truth_spec(&self) -> MaternSpec {
        MaternSpec::new(self.truth_kernel, grid_coords_2d(self.side))
    }

    pub fn prior_spec(&self) -> MaternSpec {
        MaternSpec::new(self.prior_kernel, grid_coords_2d(self.side))
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 2 {
            return Err(param("side", "must be at least 2"));
        }
        self.truth_kernel.validate()?;
        self.prior_kernel.validate()?;
        if self.speckles() >= self.n() {
            return Err(param("n_speckles", "must be smaller than the grid size"));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(param("noise_level", "must be finite and nonnegative"));
        }
        match self.forward {
            ForwardModel::Blur { psf_sigma, .. } => {
                if !(psf_sigma.is_finite() && psf_sigma > 0.0) {
                    return Err(param("psf_sigma", "must be positive"));
                }
            }
            ForwardModel::RandomProjection { rows } => {
                if rows == 0 {
                    return Err(param("rows", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// A synthetic inverse problem with known solution.
pub struct TestProblem {
    pub a: Box<dyn LinearOperator>,
    pub q: DenseSpd,
    pub rinv: DiagonalSpd,
    pub b: Vec<f64>,
    pub b_exact: Vec<f64>,
    pub u_true: Vec<f64>,
    pub x_true: Vec<f64>,
    pub xi_true: Vec<f64>,
    pub noise_level: f64,
    /// `‖e‖ / √m`, the per-entry noise standard deviation.
    pub noise_sigma: f64,
    pub seed: u64,
    pub config: ProblemConfig,
}

impl TestProblem {
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn cols(&self) -> usize {
        self.u_true.len()
    }

    pub fn truth(&self) -> crate::solver::Truth<'_> {
        crate::solver::Truth {
            u: &self.u_true,
            x: &self.x_true,
            xi: &self.xi_true,
        }
    }
}

/// Builds the forward operator of `cfg`.
pub fn forward_operator(cfg: &ProblemConfig) -> Result<Box<dyn LinearOperator>> {
    match cfg.forward {
        ForwardModel::Blur { psf_sigma, boundary } => {
            Ok(Box::new(gaussian_blur_operator(cfg.side, psf_sigma, boundary)?))
        }
        ForwardModel::RandomProjection { rows } => {
            let n = cfg.n();
            let mut rng = operator_rng(cfg.seed);
            let s = 1.0 / libm::sqrt(rows as f64);
            // Row-major fill keeps the draw order independent of storage.
            let data: Vec<f64> = (0..rows * n)
                .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(Box::new(DenseMatrix::from_row_slice(rows, n, &data)))
        }
    }
}

/// Generates the problem of `cfg`, drawing the truth from `sampler` when
/// given (it must be built from `cfg.truth_spec()`).
pub fn generate(cfg: &ProblemConfig, sampler: Option<&TruthSampler>) -> Result<TestProblem> {
    cfg.validate()?;
    let owned;
    let sampler = match sampler {
        Some(s) => {
            if s.dim() != cfg.n() {
                return Err(Error::Dimension {
                    context: "truth sampler",
                    expected: cfg.n(),
                    got: s.dim(),
                });
            }
            s
        }
        None => {
            owned = TruthSampler::new(&cfg.truth_spec())?;
            &owned
        }
    };
    let truth = sampler.sample(cfg.speckles(), cfg.speckle_scale, cfg.seed)?;
    let a = forward_operator(cfg)?;
    let b_exact = a.matvec(&truth.u);
    let b = add_noise(&b_exact, cfg.noise_level, cfg.seed)?;
    let m = b.len();
    let e_norm = libm::sqrt(b.iter().zip(&b_exact).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
    let q = build_matern_covariance(&cfg.prior_spec())?;
    Ok(TestProblem {
        a,
        q,
        rinv: DiagonalSpd::identity(m),
        b,
        b_exact,
        u_true: truth.u,
        x_true: truth.x,
        xi_true: truth.xi,
        noise_level: cfg.noise_level,
        noise_sigma: e_norm / libm::sqrt(m as f64),
        seed: cfg.seed,
        config: cfg.clone(),
    })
}

/// Blurred smooth-plus-sparse image on a `side x side` grid.
pub fn deblur_problem(side: usize, psf_sigma: f64, noise_level: f64, seed: u64) -> Result<TestProblem> {
    if side < 8 {
        return Err(param("side", "must be at least 8"));
    }
    generate(&ProblemConfig::deblur(side, psf_sigma, noise_level, seed), None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_scaled_exactly() {
        let b: Vec<f64> = (0..50).map(|i| libm::sin(i as f64)).collect();
        let nb = add_noise(&b, 0.04, 3).unwrap();
        let d: Vec<f64> = nb.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!((norm2(&d) / norm2(&b) - 0.04).abs() < 1e-14);
        assert_eq!(add_noise(&b, 0.0, 3).unwrap(), b);
        assert!(matches!(add_noise(&[0.0; 3], 0.1, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn truth_parts() {
        let spec = MaternSpec::new(Matern::new(2.5, 0.2, 1.0).unwrap(), grid_coords_2d(6));
        let t = smooth_plus_sparse_truth(&spec, 4, 1.0, 9).unwrap();
        assert_eq!(t.xi.iter().filter(|v| **v != 0.0).count(), 4);
        let peak = t.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(t.xi.iter().filter(|v| **v != 0.0).all(|v| *v == peak));
        let none = smooth_plus_sparse_truth(&spec, 0, 1.0, 9).unwrap();
        assert_eq!(none.u, none.x);
        assert!(smooth_plus_sparse_truth(&spec, 36, 1.0, 9).is_err());
    }

    #[test]
    fn deblur_is_deterministic() {
        let p1 = deblur_problem(8, 1.0, 1e-3, 5).unwrap();
        let p2 = deblur_problem(8, 1.0, 1e-3, 5).unwrap();
        assert_eq!(p1.b, p2.b);
        assert_eq!(p1.u_true, p2.u_true);
        let p3 = deblur_problem(8, 1.0, 1e-3, 6).unwrap();
        assert_ne!(p1.b, p3.b);
        assert!(deblur_problem(4, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn exact_data_without_noise() {
        let p = deblur_problem(8, 1.0, 0.0, 2).unwrap();
        assert_eq!(p.b, p.a.matvec(&p.u_true));
        assert_eq!(p.noise_sigma, 0.0);
    }

    #[test]
    fn random_projection_shape() {
        let cfg = ProblemConfig::random_projection(4, 0.04, 1);
        let p = generate(&cfg, None).unwrap();
        assert_eq!((p.rows(), p.cols()), (32, 16));
        let rel = norm2(&crate::vector::sub(&p.b, &p.b_exact)) / norm2(&p.b_exact);
        assert!((rel - 0.04).abs() < 1e-14);
    }
}
