//! Augmented flexible Arnoldi process.
//!
//! Builds `A Ẑ = V̂ Ĥ` where `Ẑ = [Qv₁, z₁, Qv₂, z₂, …]` interleaves
//! covariance-preconditioned columns `Qv_j` and reweighting-preconditioned
//! columns `z_j = W_j⁻¹ v̂`, and `V̂` is `R⁻¹`-orthonormal. The vectors
//! `V_k = [v₁ … v_k]` feeding the smooth columns are additionally
//! `Q`-orthonormalized as `V_k = Ṽ_k H̃` so that `‖V_k y‖_Q = ‖H̃ y‖₂`.
//!
//! Each family follows its own chain: the smooth chain expands `A Qv_k` into
//! `v_{k+1}`, the sparse chain preconditions the vector produced by its own
//! previous step (starting from `v₁`). A candidate that breaks down is not
//! added to `V̂`; its `Ẑ` column and the in-span coefficients are kept, so
//! `A Ẑ = V̂ Ĥ` continues to hold exactly.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::basis::{
    ragged_to_dense, select_columns, ColumnKind, Decomposition, KrylovConfig, OpCounts, StepOutcome, WeightedBasis,
};
use crate::error::{check_len, Error, Result};
use crate::irls::DiagonalWeights;
use crate::operators::{norm_from_form, LinearOperator, SpdOperator};
use crate::vector::dot;

pub struct AfArnoldi<'a> {
    a: &'a dyn LinearOperator,
    q: &'a dyn SpdOperator,
    rinv: &'a dyn SpdOperator,
    cfg: KrylovConfig,
    beta: f64,
    /// `V̂` with `R⁻¹ V̂`.
    vhat: WeightedBasis,
    zhat: Vec<Vec<f64>>,
    kinds: Vec<ColumnKind>,
    hcols: Vec<Vec<f64>>,
    /// `v₁, v₂, …` of the smooth chain, including a pending `v_{k+1}`.
    smooth_sources: Vec<Vec<f64>>,
    /// `Ṽ` with `Q Ṽ`.
    vtilde: WeightedBasis,
    htilde_cols: Vec<Vec<f64>>,
    /// `Q v_{k+1}`, appended to `Ẑ` by the next smooth step.
    pending_smooth: Option<Vec<f64>>,
    sparse_source: usize,
    skipped: Vec<usize>,
    counts: OpCounts,
}

impl<'a> AfArnoldi<'a> {
    /// Normalizes `b` in the `R⁻¹` norm and, when the smooth family is
    /// enabled, adds `ẑ₁ = Qv₁`.
    pub fn init(
        a: &'a dyn LinearOperator,
        q: &'a dyn SpdOperator,
        rinv: &'a dyn SpdOperator,
        b: &[f64],
        cfg: KrylovConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if a.rows() != a.cols() {
            return Err(Error::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let n = a.rows();
        check_len("arnoldi: b", n, b.len())?;
        check_len("arnoldi: Q", n, q.dim())?;
        check_len("arnoldi: R⁻¹", n, rinv.dim())?;
        let rb = rinv.matvec(b);
        let beta = norm_from_form(dot(b, &rb), dot(b, b))?;
        if beta == 0.0 {
            return Err(Error::Degenerate("right-hand side is zero"));
        }
        let mut vhat = WeightedBasis::new();
        let v1: Vec<f64> = b.iter().map(|x| x / beta).collect();
        let out = vhat.orthogonalize(v1.clone(), rb.iter().map(|x| x / beta).collect(), 1, 0.0);
        debug_assert!(out.norm.is_some());

        let mut state = Self {
            a,
            q,
            rinv,
            cfg,
            beta,
            vhat,
            zhat: Vec::new(),
            kinds: Vec::new(),
            hcols: Vec::new(),
            smooth_sources: Vec::new(),
            vtilde: WeightedBasis::new(),
            htilde_cols: Vec::new(),
            pending_smooth: None,
            sparse_source: 0,
            skipped: Vec::new(),
            counts: OpCounts::default(),
        };
        if cfg.smooth {
            state.register_smooth_source(v1)?;
        }
        Ok(state)
    }

    fn passes(&self) -> usize {
        if self.cfg.reorthogonalize {
            2
        } else {
            1
        }
    }

    /// Computes `Q v` once, `Q`-orthogonalizes `v` against `Ṽ` and stores
    /// `Qv` as the pending smooth column.
    fn register_smooth_source(&mut self, v: Vec<f64>) -> Result<()> {
        let qv = self.q.matvec(&v);
        self.counts.q += 1;
        let out = self.vtilde.orthogonalize(v.clone(), qv.clone(), self.passes(), 0.0);
        if out.norm.is_none() {
            return Err(Error::NotSpd { value: dot(&v, &qv) });
        }
        self.htilde_cols.push(out.column());
        self.smooth_sources.push(v);
        self.pending_smooth = Some(qv);
        Ok(())
    }

    /// Applies `A` to `z`, orthogonalizes in the `R⁻¹` inner product and
    /// records the `Ĥ` column. Returns the new basis index when accepted.
    fn extend_with(&mut self, z: Vec<f64>, kind: ColumnKind) -> Option<usize> {
        let w = self.a.matvec(&z);
        self.counts.a += 1;
        let rw = self.rinv.matvec(&w);
        let passes = self.passes();
        let out = self.vhat.orthogonalize(w, rw, passes, self.cfg.breakdown_tol);
        self.zhat.push(z);
        self.kinds.push(kind);
        self.hcols.push(out.column());
        if out.norm.is_some() {
            Some(self.vhat.len() - 1)
        } else {
            self.skipped.push(self.zhat.len() - 1);
            None
        }
    }

    /// Smooth step: adds the pending `Qv_k` to `Ẑ`, expands `A Qv_k` into
    /// `v_{k+1}` and prepares `Qv_{k+1}` (one `A` and one `Q` product).
    pub fn expand_q_column(&mut self) -> Result<StepOutcome> {
        let Some(z) = self.pending_smooth.take() else {
            return Ok(StepOutcome::Exhausted);
        };
        match self.extend_with(z, ColumnKind::Smooth) {
            Some(idx) => {
                let v = self.vhat.cols()[idx].clone();
                self.register_smooth_source(v)?;
                Ok(StepOutcome::Added)
            }
            None => Ok(StepOutcome::Pruned),
        }
    }

    /// Sparse step: `z = W⁻¹ v̂_src`, `w = A z`.
    pub fn expand_w_column(&mut self, weights: &DiagonalWeights) -> Result<StepOutcome> {
        if !self.cfg.sparse {
            return Err(Error::Config("sparse columns are disabled".into()));
        }
        check_len("arnoldi: weights", self.a.cols(), weights.len())?;
        if let Some(i) = weights.values().iter().position(|w| !(*w > 0.0)) {
            return Err(Error::Weight { index: i });
        }
        let z = weights.apply_inverse(&self.vhat.cols()[self.sparse_source]);
        match self.extend_with(z, ColumnKind::Sparse) {
            Some(idx) => {
                self.sparse_source = idx;
                Ok(StepOutcome::Added)
            }
            None => Ok(StepOutcome::Pruned),
        }
    }

    /// `Qv_{k+1}` awaiting its image (`ẑ₁ = Qv₁` right after `init`).
    pub fn pending_smooth_column(&self) -> Option<&[f64]> {
        self.pending_smooth.as_deref()
    }

    pub fn config(&self) -> &KrylovConfig {
        &self.cfg
    }

    /// `Ẑ` column indices whose image produced no new basis vector.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    pub fn vhat(&self) -> &[Vec<f64>] {
        self.vhat.cols()
    }

    /// Number of smooth columns currently in `Ẑ`.
    pub fn smooth_count(&self) -> usize {
        self.kinds().iter().filter(|k| **k == ColumnKind::Smooth).count()
    }

    /// `V_k`: the smooth-chain vectors whose `Q` images are in `Ẑ`.
    pub fn smooth_basis(&self) -> &[Vec<f64>] {
        &self.smooth_sources[..self.smooth_count()]
    }

    /// `Ṽ_k`
    pub fn vtilde(&self) -> &[Vec<f64>] {
        &self.vtilde.cols()[..self.smooth_count()]
    }

    /// `H̃_{k,k}` (upper triangular).
    pub fn htilde(&self) -> DMatrix<f64> {
        let k = self.smooth_count();
        ragged_to_dense(&self.htilde_cols[..k], k)
    }

    /// `Ĥ` with one row per basis vector and one column per `Ẑ` column.
    pub fn hhat(&self) -> DMatrix<f64> {
        ragged_to_dense(&self.hcols, self.vhat.len())
    }

    /// Column-parity split of `Ĥ` into smooth (`H⁽¹⁾`) and sparse (`H⁽²⁾`) parts.
    pub fn split_h(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = self.hhat();
        (
            select_columns(&h, self.kinds(), ColumnKind::Smooth),
            select_columns(&h, self.kinds(), ColumnKind::Sparse),
        )
    }

    /// Sparse columns `Z_{k-1}` of `Ẑ`.
    pub fn sparse_columns(&self) -> Vec<Vec<f64>> {
        self.zhat()
            .iter()
            .zip(self.kinds())
            .filter(|(_, k)| **k == ColumnKind::Sparse)
            .map(|(z, _)| z.clone())
            .collect()
    }
}

impl Decomposition for AfArnoldi<'_> {
    fn beta(&self) -> f64 {
        self.beta
    }

    fn coefficients(&self) -> DMatrix<f64> {
        self.hhat()
    }

    fn smooth_penalty(&self) -> DMatrix<f64> {
        self.htilde()
    }

    fn smooth_latent(&self) -> Vec<Vec<f64>> {
        self.smooth_basis().to_vec()
    }

    fn zhat(&self) -> &[Vec<f64>] {
        &self.zhat
    }

    fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    fn counts(&self) -> OpCounts {
        self.counts
    }

    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn left_dim(&self) -> usize {
        self.a.rows()
    }

    fn basis_len(&self) -> usize {
        self.vhat.len()
    }
}
