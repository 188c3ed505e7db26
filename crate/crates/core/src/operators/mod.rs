//! Matrix-free linear operators and weighted inner products.
//!
//! A forward model only has to implement [`LinearOperator::apply`]; the
//! transpose is optional and is only requested by the Golub–Kahan based
//! solvers. Covariance and noise-precision matrices are [`SpdOperator`]s.

mod blur;
mod matern;

pub use blur::{gaussian_blur_operator, Boundary, GaussianBlur};
pub(crate) use matern::matern_matrix;
pub use matern::{
    build_matern_covariance, build_matern_covariance_capped, grid_coords_1d, grid_coords_2d, matern_kernel, Matern,
    MaternSpec, DEFAULT_DENSE_CAP,
};

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, param, Error, Result};
use crate::vector::dot;

/// A linear map `R^cols -> R^rows` given by its action on vectors.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `out = A x`
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// `out = Aᵀ y`
    fn apply_transpose(&self, _y: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingTranspose)
    }

    fn has_transpose(&self) -> bool {
        false
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.apply(x, &mut out);
        out
    }

    fn rmatvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols()];
        self.apply_transpose(y, &mut out)?;
        Ok(out)
    }
}

/// A symmetric positive definite operator `R^dim -> R^dim` (prior covariance
/// `Q` or noise precision `R^{-1}`).
pub trait SpdOperator {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], out: &mut [f64]);

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(x, &mut out);
        out
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).apply_transpose(y, out)
    }
    fn has_transpose(&self) -> bool {
        (**self).has_transpose()
    }
}

impl<T: SpdOperator + ?Sized> SpdOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
}

/// `uᵀ M v`
pub fn weighted_dot(u: &[f64], v: &[f64], m: &dyn SpdOperator) -> Result<f64> {
    check_len("weighted_dot", m.dim(), u.len())?;
    check_len("weighted_dot", m.dim(), v.len())?;
    Ok(dot(u, &m.matvec(v)))
}

/// `sqrt(vᵀ M v)`; fails when the quadratic form is clearly negative.
pub fn weighted_norm(v: &[f64], m: &dyn SpdOperator) -> Result<f64> {
    check_len("weighted_norm", m.dim(), v.len())?;
    let mv = m.matvec(v);
    norm_from_form(dot(v, &mv), dot(v, v))
}

pub(crate) fn norm_from_form(form: f64, euclid_sq: f64) -> Result<f64> {
    if !form.is_finite() {
        return Err(Error::NonFinite("weighted norm"));
    }
    if form < -1e-14 * euclid_sq {
        return Err(Error::NotSpd { value: form });
    }
    Ok(libm::sqrt(form.max(0.0)))
}

/// Dense matrix operator (column-major storage).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    mat: DMatrix<f64>,
}

impl DenseMatrix {
    pub fn new(mat: DMatrix<f64>) -> Self {
        Self { mat }
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

impl LinearOperator for DenseMatrix {
    fn rows(&self) -> usize {
        self.mat.nrows()
    }
    fn cols(&self) -> usize {
        self.mat.ncols()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        dense_gemv(&self.mat, x, out);
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.mat.column(j).as_slice(), y);
        }
        Ok(())
    }
    fn has_transpose(&self) -> bool {
        true
    }
}

fn dense_gemv(mat: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, xj) in x.iter().enumerate() {
        if *xj != 0.0 {
            crate::vector::axpy(*xj, mat.column(j).as_slice(), out);
        }
    }
}

/// Symmetric positive definite dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSpd {
    mat: DMatrix<f64>,
}

impl DenseSpd {
    /// Wraps `mat` after checking that it is square and symmetric to `1e-12`
    /// relative to its largest entry.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        let scale = mat.amax().max(f64::MIN_POSITIVE);
        let n = mat.nrows();
        for j in 0..n {
            for i in 0..j {
                if libm::fabs(mat[(i, j)] - mat[(j, i)]) > 1e-12 * scale {
                    return Err(param("matrix", "not symmetric"));
                }
            }
        }
        Ok(Self { mat })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

impl SpdOperator for DenseSpd {
    fn dim(&self) -> usize {
        self.mat.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        dense_gemv(&self.mat, x, out);
    }
}

/// Positive diagonal operator, e.g. `R^{-1}` for independent noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSpd {
    diag: Vec<f64>,
}

impl DiagonalSpd {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(param("diag", "empty"));
        }
        if let Some(i) = diag.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Weight { index: i });
        }
        Ok(Self { diag })
    }

    pub fn identity(n: usize) -> Self {
        Self { diag: vec![1.0; n] }
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Result<Self> {
        Self::new(vec![scale; n])
    }

    /// Noise precision `R^{-1}` for per-sample noise variances `R = diag(variances)`.
    pub fn precision_from_variances(variances: &[f64]) -> Result<Self> {
        if let Some(i) = variances.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Weight { index: i });
        }
        Self::new(variances.iter().map(|v| 1.0 / v).collect())
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl SpdOperator for DiagonalSpd {
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((o, d), xi) in out.iter_mut().zip(&self.diag).zip(x) {
            *o = d * xi;
        }
    }
}

type ApplyFn = Box<dyn Fn(&[f64], &mut [f64])>;

/// Operator defined by closures.
pub struct FnOperator {
    rows: usize,
    cols: usize,
    forward: ApplyFn,
    adjoint: Option<ApplyFn>,
}

impl FnOperator {
    pub fn new(rows: usize, cols: usize, forward: impl Fn(&[f64], &mut [f64]) + 'static) -> Self {
        Self {
            rows,
            cols,
            forward: Box::new(forward),
            adjoint: None,
        }
    }

    pub fn with_transpose(mut self, adjoint: impl Fn(&[f64], &mut [f64]) + 'static) -> Self {
        self.adjoint = Some(Box::new(adjoint));
        self
    }
}

impl LinearOperator for FnOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.forward)(x, out)
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.adjoint {
            Some(f) => {
                f(y, out);
                Ok(())
            }
            None => Err(Error::MissingTranspose),
        }
    }
    fn has_transpose(&self) -> bool {
        self.adjoint.is_some()
    }
}

/// Assembles the dense matrix of an operator column by column.
pub fn assemble_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let (m, n) = (op.rows(), op.cols());
    let mut mat = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        mat.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    mat
}

/// Assembles the dense matrix of an SPD operator.
pub fn assemble_dense_spd(op: &dyn SpdOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut mat = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        mat.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    mat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_norm_basic_cases() {
        let id = DiagonalSpd::identity(2);
        assert_eq!(weighted_norm(&[0.0, 0.0], &id).unwrap(), 0.0);
        assert_eq!(weighted_norm(&[3.0, 4.0], &id).unwrap(), 5.0);
        let d = DiagonalSpd::new(vec![4.0, 1.0]).unwrap();
        assert!((weighted_norm(&[1.0, 1.0], &d).unwrap() - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weighted_norm_rejects_indefinite() {
        let m = DenseSpd::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(matches!(weighted_norm(&[1.0, 0.0], &m), Err(Error::NotSpd { .. })));
        // zero form within rounding is fine
        assert_eq!(weighted_norm(&[0.0, 0.0], &m).unwrap(), 0.0);
    }

    #[test]
    fn weighted_norm_dimension_mismatch() {
        let id = DiagonalSpd::identity(3);
        assert!(matches!(weighted_norm(&[1.0], &id), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dense_transpose_is_adjoint() {
        let a = DenseMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = [1.0, -1.0, 2.0];
        let y = [0.5, 3.0];
        let ax = a.matvec(&x);
        let aty = a.rmatvec(&y).unwrap();
        assert!((dot(&ax, &y) - dot(&x, &aty)).abs() < 1e-14);
        assert_eq!(ax, vec![5.0, 11.0]);
    }

    #[test]
    fn fn_operator_without_transpose_reports_it() {
        let op = FnOperator::new(2, 2, |x, out| out.copy_from_slice(x));
        assert!(!op.has_transpose());
        assert_eq!(op.rmatvec(&[1.0, 2.0]), Err(Error::MissingTranspose));
    }

    #[test]
    fn diagonal_rejects_nonpositive() {
        assert_eq!(DiagonalSpd::new(vec![1.0, 0.0]), Err(Error::Weight { index: 1 }));
        let p = DiagonalSpd::precision_from_variances(&[4.0, 0.25]).unwrap();
        assert_eq!(p.diagonal(), &[0.25, 4.0]);
    }
}
