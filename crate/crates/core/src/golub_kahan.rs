//! Augmented flexible Golub–Kahan process.
//!
//! Maintains the paired partial decompositions
//!
//! ```text
//! A Ẑ          = Û M̂      (Û  R⁻¹-orthonormal)
//! Aᵀ R⁻¹ Û_fed = V̂ T̂      (V̂  Q-orthonormal, T̂ upper triangular)
//! ```
//!
//! Every left vector `û_j` is fed once through `AᵀR⁻¹`, in order. Within a
//! round the first new right vector comes from the image of the last smooth
//! column and sources the next smooth column `Q v̂`; the last one comes from
//! the image of the last sparse column and sources the next `W⁻¹ v̂`. Each
//! family thus follows its own chain, as in the Arnoldi variant.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::basis::{
    ragged_to_dense, select_columns, ColumnKind, Decomposition, KrylovConfig, OpCounts, StepOutcome, WeightedBasis,
};
use crate::error::{check_len, Error, Result};
use crate::irls::DiagonalWeights;
use crate::operators::{norm_from_form, LinearOperator, SpdOperator};
use crate::vector::dot;

pub struct AfGolubKahan<'a> {
    a: &'a dyn LinearOperator,
    q: &'a dyn SpdOperator,
    rinv: &'a dyn SpdOperator,
    cfg: KrylovConfig,
    beta: f64,
    uhat: WeightedBasis,
    vhat: WeightedBasis,
    zhat: Vec<Vec<f64>>,
    kinds: Vec<ColumnKind>,
    mcols: Vec<Vec<f64>>,
    tcols: Vec<Vec<f64>>,
    fed: usize,
    source: Option<usize>,
    sparse_source: Option<usize>,
    smooth_done: bool,
    smooth_sources: Vec<usize>,
    skipped: Vec<usize>,
    skipped_right: Vec<usize>,
    counts: OpCounts,
}

impl<'a> AfGolubKahan<'a> {
    /// `û₁ = b/‖b‖_{R⁻¹}`, `v̂₁ ∝ AᵀR⁻¹û₁` and, with the smooth family
    /// enabled, `ẑ₁ = Qv̂₁` with its image `û₂`.
    pub fn init(
        a: &'a dyn LinearOperator,
        q: &'a dyn SpdOperator,
        rinv: &'a dyn SpdOperator,
        b: &[f64],
        cfg: KrylovConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !a.has_transpose() {
            return Err(Error::MissingTranspose);
        }
        check_len("golub-kahan: b", a.rows(), b.len())?;
        check_len("golub-kahan: Q", a.cols(), q.dim())?;
        check_len("golub-kahan: R⁻¹", a.rows(), rinv.dim())?;
        let rb = rinv.matvec(b);
        let beta = norm_from_form(dot(b, &rb), dot(b, b))?;
        if beta == 0.0 {
            return Err(Error::Degenerate("right-hand side is zero"));
        }
        let mut uhat = WeightedBasis::new();
        uhat.orthogonalize(
            b.iter().map(|x| x / beta).collect(),
            rb.iter().map(|x| x / beta).collect(),
            1,
            0.0,
        );
        let mut state = Self {
            a,
            q,
            rinv,
            cfg,
            beta,
            uhat,
            vhat: WeightedBasis::new(),
            zhat: Vec::new(),
            kinds: Vec::new(),
            mcols: Vec::new(),
            tcols: Vec::new(),
            fed: 0,
            source: None,
            sparse_source: None,
            smooth_done: false,
            smooth_sources: Vec::new(),
            skipped: Vec::new(),
            skipped_right: Vec::new(),
            counts: OpCounts::default(),
        };
        if cfg.smooth {
            state.expand_smooth()?;
        } else {
            state.feed_pending()?;
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

    /// Feeds every left vector not yet mapped through `AᵀR⁻¹`. The first
    /// accepted right vector sources the next smooth column, the last one the
    /// next sparse column.
    pub fn feed_pending(&mut self) -> Result<StepOutcome> {
        if self.fed == self.uhat.len() {
            return Ok(StepOutcome::Exhausted);
        }
        let mut first = None;
        let mut last = None;
        while self.fed < self.uhat.len() {
            let ru = self.uhat.mcols()[self.fed].clone();
            let v = self.a.rmatvec(&ru)?;
            self.counts.at += 1;
            let qv = self.q.matvec(&v);
            self.counts.q += 1;
            let passes = self.passes();
            let out = self.vhat.orthogonalize(v, qv, passes, self.cfg.breakdown_tol);
            self.tcols.push(out.column());
            if out.norm.is_some() {
                if first.is_none() {
                    first = Some(self.vhat.len() - 1);
                }
                last = Some(self.vhat.len() - 1);
            } else {
                self.skipped_right.push(self.fed);
            }
            self.fed += 1;
        }
        match first {
            Some(idx) => {
                self.source = Some(idx);
                self.sparse_source = last;
                self.smooth_done = false;
                Ok(StepOutcome::Added)
            }
            None => Ok(StepOutcome::Pruned),
        }
    }

    fn extend_with(&mut self, z: Vec<f64>, kind: ColumnKind) -> StepOutcome {
        let u = self.a.matvec(&z);
        self.counts.a += 1;
        let ru = self.rinv.matvec(&u);
        let passes = self.passes();
        let out = self.uhat.orthogonalize(u, ru, passes, self.cfg.breakdown_tol);
        self.zhat.push(z);
        self.kinds.push(kind);
        self.mcols.push(out.column());
        if out.norm.is_some() {
            StepOutcome::Added
        } else {
            self.skipped.push(self.zhat.len() - 1);
            StepOutcome::Pruned
        }
    }

    /// Adds the smooth column `Q v̂_src` and its image. `Qv̂` is kept from the
    /// normalization, so no extra `Q` product is needed.
    pub fn push_smooth_column(&mut self) -> Result<StepOutcome> {
        if !self.cfg.smooth {
            return Err(Error::Config("smooth columns are disabled".into()));
        }
        let Some(src) = self.source.filter(|_| !self.smooth_done) else {
            return Ok(StepOutcome::Exhausted);
        };
        self.smooth_done = true;
        self.smooth_sources.push(src);
        let z = self.vhat.mcols()[src].clone();
        Ok(self.extend_with(z, ColumnKind::Smooth))
    }

    /// Feeds pending left vectors, then adds the smooth column.
    pub fn expand_smooth(&mut self) -> Result<StepOutcome> {
        self.feed_pending()?;
        self.push_smooth_column()
    }

    /// Adds the sparse column `W⁻¹ v̂_src` and its image.
    pub fn expand_sparse(&mut self, weights: &DiagonalWeights) -> Result<StepOutcome> {
        if !self.cfg.sparse {
            return Err(Error::Config("sparse columns are disabled".into()));
        }
        check_len("golub-kahan: weights", self.a.cols(), weights.len())?;
        if let Some(i) = weights.values().iter().position(|w| !(*w > 0.0)) {
            return Err(Error::Weight { index: i });
        }
        let Some(src) = self.sparse_source else {
            return Ok(StepOutcome::Exhausted);
        };
        let z = weights.apply_inverse(&self.vhat.cols()[src]);
        Ok(self.extend_with(z, ColumnKind::Sparse))
    }

    /// One full step: the sparse column of the current iteration followed by
    /// the right vectors and smooth column of the next.
    pub fn expand(&mut self, weights: &DiagonalWeights) -> Result<(StepOutcome, StepOutcome)> {
        let sparse = self.expand_sparse(weights)?;
        let smooth = self.expand_smooth()?;
        Ok((sparse, smooth))
    }

    pub fn config(&self) -> &KrylovConfig {
        &self.cfg
    }

    /// `Ẑ` column indices whose image produced no new left vector.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    /// Left vectors whose `AᵀR⁻¹` image produced no new right vector.
    pub fn skipped_right(&self) -> &[usize] {
        &self.skipped_right
    }

    pub fn uhat(&self) -> &[Vec<f64>] {
        self.uhat.cols()
    }

    pub fn vhat(&self) -> &[Vec<f64>] {
        self.vhat.cols()
    }

    /// Number of left vectors already mapped through `AᵀR⁻¹`.
    pub fn fed(&self) -> usize {
        self.fed
    }

    /// `M̂`: one row per left vector, one column per `Ẑ` column.
    pub fn mhat(&self) -> DMatrix<f64> {
        ragged_to_dense(&self.mcols, self.uhat.len())
    }

    /// `T̂`: one row per right vector, one column per fed left vector.
    pub fn that(&self) -> DMatrix<f64> {
        ragged_to_dense(&self.tcols, self.vhat.len())
    }

    pub fn split_m(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.mhat();
        (
            select_columns(&m, &self.kinds, ColumnKind::Smooth),
            select_columns(&m, &self.kinds, ColumnKind::Sparse),
        )
    }

    /// `V_k`: right vectors whose `Q` images are the smooth columns of `Ẑ`.
    pub fn smooth_basis(&self) -> Vec<Vec<f64>> {
        self.smooth_sources
            .iter()
            .map(|i| self.vhat.cols()[*i].clone())
            .collect()
    }

    pub fn sparse_columns(&self) -> Vec<Vec<f64>> {
        self.zhat
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == ColumnKind::Sparse)
            .map(|(z, _)| z.clone())
            .collect()
    }
}

impl Decomposition for AfGolubKahan<'_> {
    fn beta(&self) -> f64 {
        self.beta
    }

    fn coefficients(&self) -> DMatrix<f64> {
        self.mhat()
    }

    fn smooth_penalty(&self) -> DMatrix<f64> {
        DMatrix::identity(self.smooth_sources.len(), self.smooth_sources.len())
    }

    fn smooth_latent(&self) -> Vec<Vec<f64>> {
        self.smooth_basis()
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
        self.uhat.len()
    }

    fn saturated(&self) -> bool {
        self.uhat.len() >= self.a.rows() || self.vhat.len() >= self.a.cols()
    }
}
