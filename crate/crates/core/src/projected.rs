//! The small two-parameter Tikhonov problem solved at every iteration,
//!
//! ```text
//! min_y ‖ [ K₁        K₂      ]       [ βe₁ ] ‖
//!       ‖ [ λx L      0       ] y  -  [  0  ] ‖
//!       ‖ [ 0         λξ Rwz  ]       [  0  ] ‖₂
//! ```
//!
//! and the lifting of its solution back to the full space. Coefficients are
//! ordered `[y⁽¹⁾; y⁽²⁾]` (smooth first); lifting scatters them back to the
//! interleaved column order of `Ẑ`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::{ColumnKind, Decomposition};
use crate::error::{check_len, param, Error, Result};
use crate::irls::DiagonalWeights;
use crate::operators::{LinearOperator, SpdOperator};
use crate::vector::{axpy, dot, norm2};

/// Relative size below which a triangular diagonal entry counts as zero.
const RANK_TOL: f64 = 1e-13;

/// Thin QR factorization of `W Z` by twice-repeated Gram–Schmidt.
///
/// New columns are appended as long as the weights stay the same; a change
/// of weights refactors from scratch.
#[derive(Debug, Clone, Default)]
pub struct WzFactor {
    weights: Option<Vec<f64>>,
    qcols: Vec<Vec<f64>>,
    rcols: Vec<Vec<f64>>,
    rank_deficient: bool,
}

impl WzFactor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Brings the factorization up to date with `W Z`. Returns `true` when it
    /// was recomputed rather than extended.
    pub fn update(&mut self, weights: &DiagonalWeights, z: &[Vec<f64>]) -> Result<bool> {
        if let Some(i) = weights.values().iter().position(|w| !(*w > 0.0)) {
            return Err(Error::Weight { index: i });
        }
        for col in z {
            check_len("Wz factor: column", weights.len(), col.len())?;
        }
        let same = self.weights.as_deref() == Some(weights.values()) && self.rcols.len() <= z.len();
        if !same {
            self.weights = Some(weights.values().to_vec());
            self.qcols.clear();
            self.rcols.clear();
            self.rank_deficient = false;
        }
        for col in &z[self.rcols.len()..] {
            self.append(weights.apply(col));
        }
        Ok(!same)
    }

    fn append(&mut self, mut w: Vec<f64>) {
        let before = norm2(&w);
        let mut r = vec![0.0; self.qcols.len() + 1];
        for _ in 0..2 {
            for (i, q) in self.qcols.iter().enumerate() {
                let h = dot(q, &w);
                axpy(-h, q, &mut w);
                r[i] += h;
            }
        }
        let after = norm2(&w);
        let last = r.len() - 1;
        r[last] = after;
        if after <= RANK_TOL * before || after == 0.0 {
            // Keep a zero column so that Q R = W Z still holds.
            self.rank_deficient = true;
            w.iter_mut().for_each(|x| *x = 0.0);
        } else {
            w.iter_mut().for_each(|x| *x /= after);
        }
        self.qcols.push(w);
        self.rcols.push(r);
    }

    /// Orthonormal factor, one vector per column of `Z`.
    pub fn q(&self) -> &[Vec<f64>] {
        &self.qcols
    }

    /// Upper-triangular factor `R⁽ʷᶻ⁾`.
    pub fn r(&self) -> DMatrix<f64> {
        let s = self.rcols.len();
        let mut m = DMatrix::zeros(s, s);
        for (j, c) in self.rcols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.rcols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rcols.is_empty()
    }

    /// Set when some column of `W Z` was numerically dependent on earlier ones.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
}

/// Thin QR of `W Z`, reusing `prev` when the weights are unchanged.
pub fn update_qr_wz(prev: Option<WzFactor>, weights: &DiagonalWeights, z: &[Vec<f64>]) -> Result<WzFactor> {
    let mut f = prev.unwrap_or_default();
    f.update(weights, z)?;
    Ok(f)
}

/// Immutable snapshot of the projected problem at one iteration.
#[derive(Debug, Clone)]
pub struct ProjectedProblem {
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    l: DMatrix<f64>,
    rwz: DMatrix<f64>,
    beta: f64,
    smooth_idx: Vec<usize>,
    sparse_idx: Vec<usize>,
    // `K = Q_K R_K`; the data term reduces to `‖R_K y - c‖² + r0²`.
    rk: DMatrix<f64>,
    c: DVector<f64>,
    r0_sq: f64,
}

/// Minimizer of the projected problem with its diagnostics.
#[derive(Debug, Clone)]
pub struct ProjectedSolution {
    /// Coefficients `[y⁽¹⁾; y⁽²⁾]`.
    pub y: DVector<f64>,
    /// `‖K y - βe₁‖²`
    pub residual_sq: f64,
    /// `trace(K C(λx, λξ))`, when requested.
    pub trace_kc: Option<f64>,
    /// The stacked matrix was numerically singular; `y` is the
    /// minimum-norm solution.
    pub rank_deficient: bool,
}

impl ProjectedProblem {
    /// Assembles the snapshot. `k1`, `k2` share their row count, `l` is
    /// square of the width of `k1` and `rwz` square of the width of `k2`.
    pub fn new(k1: DMatrix<f64>, k2: DMatrix<f64>, l: DMatrix<f64>, rwz: DMatrix<f64>, beta: f64) -> Result<Self> {
        let p = k1.ncols();
        let s = k2.ncols();
        let smooth_idx = (0..p).collect();
        let sparse_idx = (p..p + s).collect();
        Self::with_order(k1, k2, l, rwz, beta, smooth_idx, sparse_idx)
    }

    fn with_order(
        k1: DMatrix<f64>,
        k2: DMatrix<f64>,
        l: DMatrix<f64>,
        rwz: DMatrix<f64>,
        beta: f64,
        smooth_idx: Vec<usize>,
        sparse_idx: Vec<usize>,
    ) -> Result<Self> {
        let rows = k1.nrows();
        check_len("projected: K₂ rows", rows, k2.nrows())?;
        check_len("projected: L rows", k1.ncols(), l.nrows())?;
        check_len("projected: L cols", k1.ncols(), l.ncols())?;
        check_len("projected: Rwz rows", k2.ncols(), rwz.nrows())?;
        check_len("projected: Rwz cols", k2.ncols(), rwz.ncols())?;
        if rows == 0 || k1.ncols() + k2.ncols() == 0 {
            return Err(Error::Degenerate("projected problem is empty"));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(param("beta", "must be finite and nonnegative"));
        }
        let mut k = DMatrix::zeros(rows, k1.ncols() + k2.ncols());
        k.columns_mut(0, k1.ncols()).copy_from(&k1);
        k.columns_mut(k1.ncols(), k2.ncols()).copy_from(&k2);
        let qr = k.qr();
        let qk = qr.q();
        let rk = qr.r();
        let mut rhs = DVector::zeros(rows);
        rhs[0] = beta;
        let c = qk.tr_mul(&rhs);
        let r0_sq = (beta * beta - c.norm_squared()).max(0.0);
        Ok(Self {
            k1,
            k2,
            l,
            rwz,
            beta,
            smooth_idx,
            sparse_idx,
            rk,
            c,
            r0_sq,
        })
    }

    /// Builds the snapshot from a decomposition and the factor of `W Z`
    /// over its sparse columns.
    pub fn from_decomposition(dec: &dyn Decomposition, wz: &WzFactor) -> Result<Self> {
        let coeffs = dec.coefficients();
        let smooth_idx = dec.column_indices(ColumnKind::Smooth);
        let sparse_idx = dec.column_indices(ColumnKind::Sparse);
        check_len("projected: Wz factor", sparse_idx.len(), wz.len())?;
        let k1 = coeffs.select_columns(smooth_idx.iter());
        let k2 = coeffs.select_columns(sparse_idx.iter());
        Self::with_order(k1, k2, dec.smooth_penalty(), wz.r(), dec.beta(), smooth_idx, sparse_idx)
    }

    pub fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }

    pub fn k2(&self) -> &DMatrix<f64> {
        &self.k2
    }

    /// `K = [K₁ K₂]`
    pub fn k(&self) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.rows(), self.n_smooth() + self.n_sparse());
        k.columns_mut(0, self.n_smooth()).copy_from(&self.k1);
        k.columns_mut(self.n_smooth(), self.n_sparse()).copy_from(&self.k2);
        k
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn rwz(&self) -> &DMatrix<f64> {
        &self.rwz
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Rows of `K`.
    pub fn rows(&self) -> usize {
        self.k1.nrows()
    }

    pub fn n_smooth(&self) -> usize {
        self.k1.ncols()
    }

    pub fn n_sparse(&self) -> usize {
        self.k2.ncols()
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_smooth() + self.n_sparse()
    }

    /// `‖K y - βe₁‖²` for coefficients in `[y⁽¹⁾; y⁽²⁾]` order.
    pub fn residual_sq(&self, y: &DVector<f64>) -> f64 {
        let mut r = self.k() * y;
        r[0] -= self.beta;
        r.norm_squared()
    }

    /// Solves the stacked least-squares problem by a dense QR factorization.
    pub fn solve(&self, lambda_x: f64, lambda_xi: f64, want_trace: bool) -> Result<ProjectedSolution> {
        for (name, v) in [("lambda_x", lambda_x), ("lambda_xi", lambda_xi)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(param(name, "must be finite and nonnegative"));
            }
        }
        let p = self.n_smooth();
        let s = self.n_sparse();
        let nk = self.rk.nrows();
        let mut m = DMatrix::zeros(nk + p + s, p + s);
        m.rows_mut(0, nk).copy_from(&self.rk);
        if p > 0 {
            m.view_mut((nk, 0), (p, p)).copy_from(&(&self.l * lambda_x));
        }
        if s > 0 {
            m.view_mut((nk + p, p), (s, s)).copy_from(&(&self.rwz * lambda_xi));
        }
        let mut rhs = DVector::zeros(nk + p + s);
        rhs.rows_mut(0, nk).copy_from(&self.c);

        let qr = m.clone().qr();
        let r = qr.r();
        let dmax = r.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let singular = dmax == 0.0 || r.diagonal().iter().any(|v| v.abs() <= RANK_TOL * dmax);

        let (y, trace_kc) = if !singular {
            let q = qr.q();
            let qtb = q.tr_mul(&rhs);
            let y = r.solve_upper_triangular(&qtb).ok_or(Error::RankDeficient)?;
            let t = want_trace.then(|| q.rows(0, nk).norm_squared());
            (y, t)
        } else {
            if lambda_x == 0.0 || lambda_xi == 0.0 {
                return Err(Error::RankDeficient);
            }
            let svd = m.svd(true, true);
            let eps = RANK_TOL * svd.singular_values.max();
            let y = svd.solve(&rhs, eps).map_err(|_| Error::RankDeficient)?;
            let t = want_trace.then(|| {
                let u = svd.u.as_ref().expect("left vectors requested");
                svd.singular_values
                    .iter()
                    .enumerate()
                    .filter(|(_, sv)| **sv > eps)
                    .map(|(j, _)| u.view((0, j), (nk, 1)).norm_squared())
                    .sum()
            });
            (y, t)
        };
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("projected solution"));
        }
        let d = &self.rk * &y - &self.c;
        Ok(ProjectedSolution {
            residual_sq: d.norm_squared() + self.r0_sq,
            y,
            trace_kc,
            rank_deficient: singular,
        })
    }

    /// Scatters `[y⁽¹⁾; y⁽²⁾]` into the column order of `Ẑ`.
    pub fn to_column_order(&self, y: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_coeffs()];
        for (j, i) in self.smooth_idx.iter().enumerate() {
            out[*i] = y[j];
        }
        for (j, i) in self.sparse_idx.iter().enumerate() {
            out[*i] = y[self.n_smooth() + j];
        }
        out
    }
}

/// `y` minimizing the stacked problem.
pub fn solve_projected(p: &ProjectedProblem, lambda_x: f64, lambda_xi: f64) -> Result<DVector<f64>> {
    Ok(p.solve(lambda_x, lambda_xi, false)?.y)
}

/// Full-space iterate recovered from projected coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSolution {
    /// `x + ξ`
    pub u: Vec<f64>,
    /// Smooth part `Q V_k y⁽¹⁾`.
    pub x: Vec<f64>,
    /// Sparse part `Z y⁽²⁾`.
    pub xi: Vec<f64>,
    /// Latent smooth coordinate `V_k y⁽¹⁾`, so that `x = Q x_latent`.
    pub x_latent: Vec<f64>,
    /// Coefficients in `Ẑ` column order.
    pub y: Vec<f64>,
}

/// Lifts `[y⁽¹⁾; y⁽²⁾]` through the columns of `Ẑ`.
pub fn lift(y: &DVector<f64>, p: &ProjectedProblem, dec: &dyn Decomposition) -> Result<LiftedSolution> {
    check_len("lift: coefficients", dec.zhat().len(), y.len())?;
    check_len("lift: snapshot", p.n_coeffs(), y.len())?;
    let n = dec.dim();
    let yz = p.to_column_order(y);
    let mut x = vec![0.0; n];
    let mut xi = vec![0.0; n];
    for ((z, kind), c) in dec.zhat().iter().zip(dec.kinds()).zip(&yz) {
        match kind {
            ColumnKind::Smooth => axpy(*c, z, &mut x),
            ColumnKind::Sparse => axpy(*c, z, &mut xi),
        }
    }
    let mut x_latent = vec![0.0; n];
    for (v, c) in dec.smooth_latent().iter().zip(y.iter()) {
        axpy(*c, v, &mut x_latent);
    }
    let u = x.iter().zip(&xi).map(|(a, b)| a + b).collect();
    Ok(LiftedSolution {
        u,
        x,
        xi,
        x_latent,
        y: yz,
    })
}

/// Both sides of one norm identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormPair {
    pub full: f64,
    pub projected: f64,
}

impl NormPair {
    /// `|full - projected| / max(|full|, floor)`
    pub fn rel_gap(&self, floor: f64) -> f64 {
        libm::fabs(self.full - self.projected) / libm::fmax(libm::fabs(self.full), floor)
    }
}

/// Full-space versus projected evaluation of the three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    /// `‖AẐy - b‖²_{R⁻¹}` vs `‖Ky - βe₁‖²`
    pub residual: NormPair,
    /// `‖V_k y⁽¹⁾‖²_Q` vs `‖L y⁽¹⁾‖²`
    pub smooth: NormPair,
    /// `‖W Z y⁽²⁾‖²` vs `‖Rwz y⁽²⁾‖²`
    pub sparse: NormPair,
}

impl EquivalenceReport {
    pub fn max_rel_gap(&self, floor: f64) -> f64 {
        self.residual
            .rel_gap(floor)
            .max(self.smooth.rel_gap(floor))
            .max(self.sparse.rel_gap(floor))
    }
}

/// Evaluates each term of the projected objective both densely in the full
/// space and through the small matrices. Diagnostic; costs one `A`, one `Q`
/// and one `R⁻¹` product.
#[allow(clippy::too_many_arguments)]
pub fn projected_equivalence_check(
    p: &ProjectedProblem,
    dec: &dyn Decomposition,
    a: &dyn LinearOperator,
    q: &dyn SpdOperator,
    rinv: &dyn SpdOperator,
    b: &[f64],
    weights: &DiagonalWeights,
    y: &DVector<f64>,
) -> Result<EquivalenceReport> {
    let lifted = lift(y, p, dec)?;
    let mut r = a.matvec(&lifted.u);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= bi);
    let full_res = dot(&r, &rinv.matvec(&r));

    let y1 = y.rows(0, p.n_smooth()).into_owned();
    let y2 = y.rows(p.n_smooth(), p.n_sparse()).into_owned();
    let full_smooth = dot(&lifted.x_latent, &q.matvec(&lifted.x_latent));
    let wxi = weights.apply(&lifted.xi);
    Ok(EquivalenceReport {
        residual: NormPair {
            full: full_res,
            projected: p.residual_sq(y),
        },
        smooth: NormPair {
            full: full_smooth,
            projected: (p.l() * y1).norm_squared(),
        },
        sparse: NormPair {
            full: dot(&wxi, &wxi),
            projected: (p.rwz() * y2).norm_squared(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn single_unit_column_identity_weights() {
        let w = DiagonalWeights::identity(3);
        let f = update_qr_wz(None, &w, &[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(f.r(), dm(1, 1, &[1.0]));
    }

    #[test]
    fn orthonormal_columns_scaled_weights() {
        let w = DiagonalWeights::from_diagonal(vec![2.0; 3], 1.0).unwrap();
        let z = [vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let f = update_qr_wz(None, &w, &z).unwrap();
        assert!((f.r() - DMatrix::identity(2, 2) * 2.0).norm() < 1e-15);
    }

    #[test]
    fn append_then_refactor() {
        let w1 = DiagonalWeights::from_diagonal(vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let w2 = DiagonalWeights::from_diagonal(vec![3.0, 1.0, 1.0], 1.0).unwrap();
        let z = [vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]];
        let mut f = WzFactor::new();
        assert!(f.update(&w1, &z[..1]).unwrap());
        assert!(!f.update(&w1, &z).unwrap());
        let mut fresh = WzFactor::new();
        fresh.update(&w1, &z).unwrap();
        assert!((f.r() - fresh.r()).norm() < 1e-15);
        assert!(f.update(&w2, &z).unwrap());
    }

    #[test]
    fn dependent_columns_are_flagged() {
        let w = DiagonalWeights::identity(2);
        let f = update_qr_wz(None, &w, &[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(f.rank_deficient());
        assert!(f.r()[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn identity_system_without_regularization() {
        let k1 = DMatrix::identity(4, 2);
        let mut k2 = DMatrix::zeros(4, 2);
        k2[(2, 0)] = 1.0;
        k2[(3, 1)] = 1.0;
        let p = ProjectedProblem::new(k1, k2, DMatrix::identity(2, 2), DMatrix::identity(2, 2), 3.0).unwrap();
        let y = solve_projected(&p, 0.0, 0.0).unwrap();
        assert!((y - DVector::from_vec(vec![3.0, 0.0, 0.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn scalar_tikhonov() {
        let p = ProjectedProblem::new(
            dm(2, 1, &[1.0, 0.0]),
            DMatrix::zeros(2, 0),
            dm(1, 1, &[1.0]),
            DMatrix::zeros(0, 0),
            1.0,
        )
        .unwrap();
        for lam in [0.1, 1.0, 3.0] {
            let sol = p.solve(lam, 1.0, true).unwrap();
            let expect = 1.0 / (1.0 + lam * lam);
            assert!((sol.y[0] - expect).abs() < 1e-14);
            let res = (1.0 - expect) * (1.0 - expect);
            assert!((sol.residual_sq - res).abs() < 1e-14);
            // K C = 1/(1+λ²) in the first entry only.
            assert!((sol.trace_kc.unwrap() - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_lambda_with_rank_deficient_k_errors() {
        let p = ProjectedProblem::new(
            dm(2, 1, &[1.0, 0.0]),
            dm(2, 1, &[1.0, 0.0]),
            dm(1, 1, &[1.0]),
            dm(1, 1, &[1.0]),
            1.0,
        )
        .unwrap();
        assert!(matches!(p.solve(0.0, 0.0, false), Err(Error::RankDeficient)));
        assert!(p.solve(0.5, 0.5, true).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = ProjectedProblem::new(
            dm(2, 1, &[1.0, 0.0]),
            DMatrix::zeros(3, 0),
            dm(1, 1, &[1.0]),
            DMatrix::zeros(0, 0),
            1.0,
        );
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
