//! Matérn covariance kernels and dense covariance operators on point sets.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::DenseSpd;
use crate::error::{param, Error, Result};

/// Largest point count for which a dense kernel matrix is assembled.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

/// Matérn kernel `k(r) = s² 2^{1-ν}/Γ(ν) (√(2ν) r/ℓ)^ν K_ν(√(2ν) r/ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matern {
    pub nu: f64,
    pub ell: f64,
    pub variance: f64,
}

impl Matern {
    pub fn new(nu: f64, ell: f64, variance: f64) -> Result<Self> {
        let k = Self { nu, ell, variance };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(param("nu", "must be positive and finite"));
        }
        if !(self.ell.is_finite() && self.ell > 0.0) {
            return Err(param("ell", "must be positive and finite"));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(param("variance", "must be positive and finite"));
        }
        Ok(())
    }

    /// Kernel value; half-integer smoothness uses the closed forms.
    pub fn eval(&self, r: f64) -> f64 {
        if r == 0.0 {
            return self.variance;
        }
        let s = r / self.ell;
        let v = if self.nu == 0.5 {
            libm::exp(-s)
        } else if self.nu == 1.5 {
            let a = libm::sqrt(3.0) * s;
            (1.0 + a) * libm::exp(-a)
        } else if self.nu == 2.5 {
            let a = libm::sqrt(5.0) * s;
            (1.0 + a + a * a / 3.0) * libm::exp(-a)
        } else {
            matern_unit_general(self.nu, s)
        };
        self.variance * v
    }

    /// Evaluation through the modified Bessel function for any `ν`.
    pub fn eval_general(&self, r: f64) -> f64 {
        if r == 0.0 {
            return self.variance;
        }
        self.variance * matern_unit_general(self.nu, r / self.ell)
    }
}

/// Checked kernel evaluation.
pub fn matern_kernel(r: f64, kernel: &Matern) -> Result<f64> {
    kernel.validate()?;
    if !r.is_finite() || r < 0.0 {
        return Err(param("r", "distance must be finite and nonnegative"));
    }
    Ok(kernel.eval(r))
}

/// Unit-variance Matérn correlation at scaled distance `s = r / ℓ > 0`.
fn matern_unit_general(nu: f64, s: f64) -> f64 {
    let z = libm::sqrt(2.0 * nu) * s;
    let log_v = (1.0 - nu) * core::f64::consts::LN_2 - libm::lgamma(nu) + nu * libm::log(z) + log_bessel_k(nu, z);
    libm::exp(log_v).min(1.0)
}

/// `ln K_ν(z)` for `z > 0` from `K_ν(z) = ∫_0^∞ exp(-z cosh t) cosh(νt) dt`,
/// integrated by the trapezoidal rule (geometrically convergent for this
/// analytic, doubly-exponentially decaying integrand).
pub(crate) fn log_bessel_k(nu: f64, z: f64) -> f64 {
    const H: f64 = 0.02;
    let log_cosh = |x: f64| x + libm::log1p(libm::exp(-2.0 * x)) - core::f64::consts::LN_2;
    let g = |t: f64| -z * libm::cosh(t) + log_cosh(nu * t);
    // integrand peak: z sinh t = ν tanh(νt) ≈ ν
    let t_peak = libm::asinh(nu / z).max(0.0);
    let g_peak = g(t_peak).max(g(0.0));
    let mut sum = 0.5 * libm::exp(g(0.0) - g_peak);
    let mut i = 1usize;
    loop {
        let t = i as f64 * H;
        let gt = g(t) - g_peak;
        sum += libm::exp(gt);
        if t > t_peak && gt < -60.0 {
            break;
        }
        i += 1;
    }
    g_peak + libm::log(sum * H)
}

/// Kernel plus the point set it is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct MaternSpec {
    pub kernel: Matern,
    pub coords: Vec<Vec<f64>>,
}

impl MaternSpec {
    pub fn new(kernel: Matern, coords: Vec<Vec<f64>>) -> Self {
        Self { kernel, coords }
    }
}

/// `n` equispaced points on `[0, 1]` at cell centers.
pub fn grid_coords_1d(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect()
}

/// Pixel centers of a `side x side` image on the unit square, row-major.
pub fn grid_coords_2d(side: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / side as f64;
    let mut out = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            out.push(vec![(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
        }
    }
    out
}

/// Dense kernel matrix `K[i][j] = k(|p_i - p_j|)`.
pub fn build_matern_covariance(spec: &MaternSpec) -> Result<DenseSpd> {
    build_matern_covariance_capped(spec, DEFAULT_DENSE_CAP)
}

pub fn build_matern_covariance_capped(spec: &MaternSpec, cap: usize) -> Result<DenseSpd> {
    Ok(DenseSpd {
        mat: matern_matrix(spec, cap)?,
    })
}

pub(crate) fn matern_matrix(spec: &MaternSpec, cap: usize) -> Result<DMatrix<f64>> {
    spec.kernel.validate()?;
    let n = spec.coords.len();
    if n == 0 {
        return Err(param("coords", "empty point set"));
    }
    if n > cap {
        return Err(param("coords", "point count exceeds dense covariance cap"));
    }
    let d = spec.coords[0].len();
    if spec.coords.iter().any(|c| c.len() != d) {
        return Err(Error::Dimension {
            context: "matern coords",
            expected: d,
            got: spec.coords.iter().map(|c| c.len()).find(|l| *l != d).unwrap_or(d),
        });
    }
    // regular grids repeat distances, so general-ν evaluations are memoized
    let mut cache: BTreeMap<u64, f64> = BTreeMap::new();
    let mut duplicates = 0usize;
    let mut mat = DMatrix::zeros(n, n);
    for j in 0..n {
        mat[(j, j)] = spec.kernel.variance;
        for i in 0..j {
            let r2: f64 = spec.coords[i]
                .iter()
                .zip(&spec.coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let r = libm::sqrt(r2);
            if r == 0.0 {
                duplicates += 1;
            }
            let v = *cache.entry(r.to_bits()).or_insert_with(|| spec.kernel.eval(r));
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    if duplicates > 0 {
        log::warn!("matern covariance: {duplicates} duplicate point pairs, matrix is singular");
    }
    Ok(mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::SpdOperator;

    #[test]
    fn zero_distance_is_variance() {
        for nu in [0.3, 0.5, 1.0, 2.5, 7.0] {
            let k = Matern::new(nu, 1.0, 1.0).unwrap();
            assert_eq!(matern_kernel(0.0, &k).unwrap(), 1.0);
        }
        let k = Matern::new(1.0, 1.0, 3.0).unwrap();
        assert_eq!(k.eval(0.0), 3.0);
    }

    #[test]
    fn exponential_case() {
        let k = Matern::new(0.5, 1.0, 1.0).unwrap();
        assert!((matern_kernel(1.0, &k).unwrap() - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn half_integer_reference_value() {
        // scipy: 2^{1-ν}/Γ(ν) z^ν K_ν(z) at ν = 2.5, z = √5
        let k = Matern::new(2.5, 0.05, 1.0).unwrap();
        assert!((k.eval(0.05) - 0.523_994_108_831_820_3).abs() < 1e-14);
        assert!((k.eval_general(0.05) - 0.523_994_108_831_820_3).abs() < 1e-11);
    }

    #[test]
    fn general_path_matches_bessel_reference_values() {
        // frozen from scipy.special.kv
        let cases = [
            (1.0, 0.5, 0.3, 0.667_630_673_973_721_8),
            (1e-6, 0.1, 0.05, 1.474_041_422_144_750_6e-5),
            (0.7, 1.0, 2.0, 0.138_280_697_139_207_02),
            (3.3, 0.2, 0.01, 0.998_209_356_311_744_5),
            (1.0, 0.5, 1e-4, 0.999_999_648_537_951_5),
        ];
        for (nu, ell, r, want) in cases {
            let got = Matern::new(nu, ell, 1.0).unwrap().eval(r);
            assert!(
                ((got - want) / want).abs() < 1e-10,
                "nu={nu} ell={ell} r={r}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn closed_forms_agree_with_bessel_path() {
        for nu in [0.5, 1.5, 2.5] {
            let k = Matern::new(nu, 0.7, 1.0).unwrap();
            let mut s = 1e-3;
            while s <= 10.0 {
                let r = s * 0.7;
                let a = k.eval(r);
                let b = k.eval_general(r);
                assert!(((a - b) / a).abs() < 1e-10, "nu={nu} s={s}: {a} vs {b}");
                s *= 1.3;
            }
        }
    }

    #[test]
    fn strictly_decreasing() {
        for nu in [0.5, 1.0, 2.5, 4.2] {
            let k = Matern::new(nu, 0.3, 1.0).unwrap();
            let mut prev = k.eval(0.0);
            for i in 1..200 {
                let v = k.eval(i as f64 * 0.01);
                assert!(v < prev && v > 0.0);
                prev = v;
            }
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(Matern::new(0.0, 1.0, 1.0).is_err());
        assert!(Matern::new(1.0, -1.0, 1.0).is_err());
        let k = Matern::new(1.0, 1.0, 1.0).unwrap();
        assert!(matern_kernel(f64::NAN, &k).is_err());
        assert!(matern_kernel(f64::INFINITY, &k).is_err());
        assert!(matern_kernel(-1.0, &k).is_err());
    }

    #[test]
    fn single_and_two_point_covariance() {
        let k = Matern::new(1.5, 0.4, 2.0).unwrap();
        let one = build_matern_covariance(&MaternSpec::new(k, vec![vec![0.3, 0.3]])).unwrap();
        assert_eq!(one.matvec(&[1.5]), vec![3.0]);

        let k = Matern::new(0.5, 1.0, 1.0).unwrap();
        let two = build_matern_covariance(&MaternSpec::new(k, vec![vec![0.0], vec![0.25]])).unwrap();
        let kr = (-0.25f64).exp();
        let y = two.matvec(&[2.0, -1.0]);
        assert!((y[0] - (2.0 - kr)).abs() < 1e-15);
        assert!((y[1] - (2.0 * kr - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn columns_match_explicit_assembly() {
        let n = 16;
        let ell = 0.3;
        let coords = grid_coords_1d(n);
        let op =
            build_matern_covariance(&MaternSpec::new(Matern::new(0.5, ell, 1.0).unwrap(), coords.clone())).unwrap();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let col = op.matvec(&e);
            for (j, c) in col.iter().enumerate() {
                let r: f64 = (coords[i][0] - coords[j][0]).abs();
                assert!((c - (-r / ell).exp()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_empty_and_oversized() {
        let k = Matern::new(1.0, 1.0, 1.0).unwrap();
        assert!(build_matern_covariance(&MaternSpec::new(k, vec![])).is_err());
        assert!(build_matern_covariance_capped(&MaternSpec::new(k, grid_coords_1d(10)), 5).is_err());
    }

    #[test]
    fn duplicate_points_still_assemble() {
        let k = Matern::new(2.5, 1.0, 1.0).unwrap();
        let op = build_matern_covariance(&MaternSpec::new(k, vec![vec![0.1], vec![0.1]])).unwrap();
        assert_eq!(op.matvec(&[1.0, -1.0]), vec![0.0, 0.0]);
    }
}
