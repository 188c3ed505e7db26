//! Weighted Gram–Schmidt bases and bookkeeping shared by the augmented
//! flexible Arnoldi and Golub–Kahan processes.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{param, Result};
use crate::vector::{axpy, dot, scale};

/// Which prior a column of `Ẑ` encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    /// `Q v`: fixed, covariance-preconditioned direction.
    Smooth,
    /// `W⁻¹ v`: flexible, reweighting-preconditioned direction.
    Sparse,
}

/// Result of one expansion step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// A new basis vector was accepted.
    Added,
    /// The candidate lay in the span of the basis and was pruned.
    Pruned,
    /// The direction family has no source vector left to expand.
    Exhausted,
}

/// Operator application counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub a: usize,
    pub at: usize,
    pub q: usize,
}

/// Options shared by both decompositions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    /// Run a second Gram–Schmidt pass.
    pub reorthogonalize: bool,
    /// A candidate is pruned when its norm after orthogonalization is at most
    /// `breakdown_tol` times its norm before.
    pub breakdown_tol: f64,
    /// Add `Q`-preconditioned columns.
    pub smooth: bool,
    /// Add `W⁻¹`-preconditioned columns.
    pub sparse: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            reorthogonalize: true,
            breakdown_tol: 1e-12,
            smooth: true,
            sparse: true,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.smooth && !self.sparse {
            return Err(param("families", "both column families are disabled"));
        }
        if !(self.breakdown_tol >= 0.0 && self.breakdown_tol < 1.0) {
            return Err(param("breakdown_tol", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Read access shared by both decompositions, used to assemble and lift
/// the projected problem.
pub trait Decomposition {
    /// `‖b‖_{R⁻¹}`
    fn beta(&self) -> f64;
    /// `Ĥ` or `M̂`: one row per left basis vector, one column per `Ẑ` column.
    fn coefficients(&self) -> DMatrix<f64>;
    /// `L` acting on the smooth coefficients.
    fn smooth_penalty(&self) -> DMatrix<f64>;
    /// `V_k`, whose `Q` images are the smooth columns of `Ẑ`.
    fn smooth_latent(&self) -> Vec<Vec<f64>>;
    fn zhat(&self) -> &[Vec<f64>];
    fn kinds(&self) -> &[ColumnKind];
    fn counts(&self) -> OpCounts;
    /// Length of the solution vectors.
    fn dim(&self) -> usize;
    /// Length of the data vectors.
    fn left_dim(&self) -> usize;
    /// Number of left basis vectors.
    fn basis_len(&self) -> usize;
    /// True once the left basis spans its whole space.
    fn saturated(&self) -> bool {
        self.basis_len() >= self.left_dim()
    }

    fn column_indices(&self, kind: ColumnKind) -> Vec<usize> {
        self.kinds()
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

pub(crate) struct Orthogonalized {
    /// Projection coefficients onto the existing columns.
    pub coeffs: Vec<f64>,
    /// Norm of the accepted new column, `None` when pruned.
    pub norm: Option<f64>,
}

impl Orthogonalized {
    /// Coefficient column including the subdiagonal entry when accepted.
    pub fn column(&self) -> Vec<f64> {
        let mut c = self.coeffs.clone();
        if let Some(n) = self.norm {
            c.push(n);
        }
        c
    }
}

/// Columns orthonormal in the inner product `⟨u, v⟩_M = uᵀMv`, stored
/// together with `M` times each column so that no further `M` products
/// are needed during orthogonalization.
#[derive(Debug, Clone, Default)]
pub(crate) struct WeightedBasis {
    cols: Vec<Vec<f64>>,
    mcols: Vec<Vec<f64>>,
}

impl WeightedBasis {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn cols(&self) -> &[Vec<f64>] {
        &self.cols
    }

    pub fn mcols(&self) -> &[Vec<f64>] {
        &self.mcols
    }

    /// Modified Gram–Schmidt of `w` (with `mw = M w`) against the basis.
    /// `mw` is updated alongside `w` by linearity.
    pub fn orthogonalize(&mut self, mut w: Vec<f64>, mut mw: Vec<f64>, passes: usize, tol: f64) -> Orthogonalized {
        let before = libm::sqrt(dot(&w, &mw).max(0.0));
        let mut coeffs = vec![0.0; self.cols.len()];
        for _ in 0..passes {
            for (i, (c, mc)) in self.cols.iter().zip(&self.mcols).enumerate() {
                let h = dot(mc, &w);
                axpy(-h, c, &mut w);
                axpy(-h, mc, &mut mw);
                coeffs[i] += h;
            }
        }
        let form = dot(&w, &mw);
        let after = libm::sqrt(form.max(0.0));
        if !after.is_finite() || after <= tol * before || after == 0.0 {
            return Orthogonalized { coeffs, norm: None };
        }
        scale(1.0 / after, &mut w);
        scale(1.0 / after, &mut mw);
        self.cols.push(w);
        self.mcols.push(mw);
        Orthogonalized {
            coeffs,
            norm: Some(after),
        }
    }
}

/// Dense matrix from ragged columns (shorter columns are zero padded).
pub(crate) fn ragged_to_dense(cols: &[Vec<f64>], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate().take(rows) {
            m[(i, j)] = *v;
        }
    }
    m
}

/// Dense `len x cols.len()` matrix whose columns are the given vectors.
pub fn columns_to_dense(cols: &[Vec<f64>], len: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(len, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).copy_from_slice(c);
    }
    m
}

/// Selects the columns of `m` whose kind matches `kind`.
pub(crate) fn select_columns(m: &DMatrix<f64>, kinds: &[ColumnKind], kind: ColumnKind) -> DMatrix<f64> {
    let idx: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == kind)
        .map(|(i, _)| i)
        .collect();
    m.select_columns(idx.iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonalize_in_weighted_inner_product() {
        let m = [2.0, 1.0, 0.5];
        let apply = |v: &[f64]| -> Vec<f64> { v.iter().zip(&m).map(|(a, b)| a * b).collect() };
        let mut basis = WeightedBasis::new();
        for v in [[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]] {
            let out = basis.orthogonalize(v.to_vec(), apply(&v), 2, 1e-12);
            assert!(out.norm.is_some());
        }
        for i in 0..3 {
            for j in 0..3 {
                let g = dot(&basis.cols()[i], &apply(&basis.cols()[j]));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-14);
            }
        }
        // fourth vector must break down in R^3
        let v = [3.0, -1.0, 2.0];
        let out = basis.orthogonalize(v.to_vec(), apply(&v), 2, 1e-12);
        assert!(out.norm.is_none());
        assert_eq!(basis.len(), 3);
    }

    #[test]
    fn zero_candidate_is_pruned() {
        let mut basis = WeightedBasis::new();
        let out = basis.orthogonalize(vec![0.0; 2], vec![0.0; 2], 1, 1e-12);
        assert!(out.norm.is_none());
    }

    #[test]
    fn disabled_families_rejected() {
        let cfg = KrylovConfig {
            smooth: false,
            sparse: false,
            ..KrylovConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
