//! AF-GMRES and AF-LSQR drivers and their single-prior baselines.
//!
//! Iteration `k` of the augmented methods:
//!
//! 1. add the smooth column (`Qv_k`, or `Qv̂` in the Golub–Kahan case),
//! 2. assemble the projected problem, choose `(λx, λξ)`, solve and lift,
//! 3. recompute the weights from the new iterate,
//! 4. add the sparse column `W_k⁻¹ v̂`,
//! 5. evaluate `Ĝ(k)` and test for stopping.
//!
//! The sparse penalty of iteration `k` always uses the most recent weights,
//! which are also the weights of the most recent sparse column. Baselines
//! disable one of the two column families.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::arnoldi::AfArnoldi;
use crate::basis::{Decomposition, KrylovConfig, OpCounts};
use crate::error::{check_len, param, Error, Result};
use crate::golub_kahan::AfGolubKahan;
use crate::irls::{compute_weights, eval_phi, DiagonalWeights, ObjectiveSpec};
use crate::operators::{assemble_dense, assemble_dense_spd, LinearOperator, SpdOperator};
use crate::projected::{lift, ProjectedProblem, WzFactor};
use crate::regparam::{
    dp_target, gcv_flattening, gcv_stop_value, select_dp, select_optimal, select_wgcv, RegParams, Selection,
    SelectionConfig, SelectionMethod,
};
use crate::vector::{norm2, sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    AfGmres,
    AfLsqr,
    /// Smooth columns only, Arnoldi.
    HybridGmres,
    /// Sparse columns only, Arnoldi.
    FgmresL1,
    /// Smooth columns only, Golub–Kahan.
    HybridLsqrQ,
    /// Sparse columns only, Golub–Kahan.
    FlsqrL1,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::AfGmres,
        Method::AfLsqr,
        Method::HybridGmres,
        Method::FgmresL1,
        Method::HybridLsqrQ,
        Method::FlsqrL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AfGmres => "af_gmres",
            Method::AfLsqr => "af_lsqr",
            Method::HybridGmres => "hybrid_gmres",
            Method::FgmresL1 => "fgmres_l1",
            Method::HybridLsqrQ => "hybrid_lsqr_q",
            Method::FlsqrL1 => "flsqr_l1",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn golub_kahan(self) -> bool {
        matches!(self, Method::AfLsqr | Method::HybridLsqrQ | Method::FlsqrL1)
    }

    pub fn smooth(self) -> bool {
        !matches!(self, Method::FgmresL1 | Method::FlsqrL1)
    }

    pub fn sparse(self) -> bool {
        !matches!(self, Method::HybridGmres | Method::HybridLsqrQ)
    }
}

/// Source of the first weights `W₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightInit {
    /// `W₁ = W̃(u₁)`, from the first reconstruction.
    #[default]
    FirstReconstruction,
    /// `W₁ = W̃(ξ₁)`, tangent to the objective at the first iterate.
    SparseIterate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub maxit: usize,
    /// Smoothing parameter of the weights.
    pub tau: f64,
    pub selection: SelectionConfig,
    /// Tolerance of the GCV flattening test; `None` runs to `maxit`.
    pub stop_tol: Option<f64>,
    /// Overrides the selection with the same pair at every iteration.
    pub fixed_params: Option<RegParams>,
    pub reorthogonalize: bool,
    pub breakdown_tol: f64,
    pub weight_init: WeightInit,
    /// Switch to full-space majorization steps once the basis saturates.
    pub saturation_steps: bool,
    /// Check for infinite or NaN iterates after each step.
    pub finite_checks: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::AfGmres,
            maxit: 50,
            tau: 1e-3,
            selection: SelectionConfig::default(),
            stop_tol: Some(0.02),
            fixed_params: None,
            reorthogonalize: true,
            breakdown_tol: 1e-12,
            weight_init: WeightInit::FirstReconstruction,
            saturation_steps: true,
            finite_checks: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.maxit == 0 {
            return Err(param("maxit", "must be at least 1"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(param("tau", "must be positive and finite"));
        }
        if let Some(t) = self.stop_tol {
            if !(t.is_finite() && t > 0.0) {
                return Err(param("stop_tol", "must be positive and finite"));
            }
        }
        if let Some(p) = self.fixed_params {
            RegParams::new(p.lambda_x, p.lambda_xi)?;
        } else {
            self.selection.validate()?;
        }
        self.krylov().validate()
    }

    fn krylov(&self) -> KrylovConfig {
        KrylovConfig {
            reorthogonalize: self.reorthogonalize,
            breakdown_tol: self.breakdown_tol,
            smooth: self.method.smooth(),
            sparse: self.method.sparse(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GcvFlat,
    Maxit,
    Stagnation,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::GcvFlat => "gcv_flat",
            StopReason::Maxit => "maxit",
            StopReason::Stagnation => "stagnation",
        }
    }
}

/// Known solution of a synthetic problem.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub u: &'a [f64],
    pub x: &'a [f64],
    pub xi: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterTrace {
    pub k: usize,
    /// Zero for the parameter of a disabled family.
    pub lambda_x: f64,
    pub lambda_xi: f64,
    pub rel_error_u: Option<f64>,
    pub rel_error_x: Option<f64>,
    pub rel_error_xi: Option<f64>,
    /// `φ(x_k, ξ_k)` at this iteration's parameters.
    pub phi_value: f64,
    /// `‖K y - βe₁‖`, which equals `‖A u_k - b‖_{R⁻¹}`.
    pub projected_residual: f64,
    /// `Ĝ(k)`; NaN for full-space steps.
    pub gcv_value: f64,
    /// Cumulative operator applications.
    pub counts: OpCounts,
    /// Selection diagnostics (`None` with fixed parameters).
    pub selection: Option<Selection>,
    /// This iterate came from a full-space step.
    pub full_space: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    /// Latent smooth coordinate with `x = Q x_latent`.
    pub x_latent: Vec<f64>,
    pub trace: Vec<IterTrace>,
    pub stop_reason: StopReason,
    pub operator_counts: OpCounts,
    /// Weights after the last update.
    pub weights: Option<DiagonalWeights>,
    pub method: Method,
}

impl SolveResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

enum Engine<'a> {
    Arnoldi(AfArnoldi<'a>),
    Gk(AfGolubKahan<'a>),
}

impl<'a> Engine<'a> {
    fn dec(&self) -> &dyn Decomposition {
        match self {
            Engine::Arnoldi(s) => s,
            Engine::Gk(s) => s,
        }
    }

    /// Expansion preceding the solve of iteration `k`.
    fn leading(&mut self, k: usize, smooth: bool, w: &DiagonalWeights) -> Result<()> {
        match self {
            Engine::Arnoldi(s) => {
                if smooth {
                    s.expand_q_column()?;
                } else {
                    s.expand_w_column(w)?;
                }
            }
            Engine::Gk(s) => {
                if smooth {
                    if k > 1 {
                        s.expand_smooth()?;
                    }
                } else {
                    s.feed_pending()?;
                    s.expand_sparse(w)?;
                }
            }
        }
        Ok(())
    }

    fn trailing(&mut self, w: &DiagonalWeights) -> Result<()> {
        match self {
            Engine::Arnoldi(s) => s.expand_w_column(w).map(|_| ()),
            Engine::Gk(s) => s.expand_sparse(w).map(|_| ()),
        }
    }
}

/// Dense operators for full-space steps on tiny problems.
struct DenseCache {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

struct Iterate {
    u: Vec<f64>,
    x: Vec<f64>,
    xi: Vec<f64>,
    x_latent: Vec<f64>,
}

fn rel_err(v: &[f64], t: &[f64]) -> Option<f64> {
    let nt = norm2(t);
    (nt > 0.0).then(|| norm2(&sub(v, t)) / nt)
}

/// Minimizes the quadratic majorant over the whole space:
///
/// ```text
/// [QGQ + λx²Q   QG        ] [x']   [Q Aᵀ R⁻¹ b]
/// [GQ           G + λξ²W² ] [ξ ] = [  Aᵀ R⁻¹ b]     G = Aᵀ R⁻¹ A
/// ```
fn full_space_step(d: &DenseCache, b: &[f64], w: &DiagonalWeights, params: RegParams) -> Result<Iterate> {
    let n = d.a.ncols();
    let rb = &d.r * DVector::from_column_slice(b);
    let atr = d.a.tr_mul(&d.r);
    let g = &atr * &d.a;
    let gq = &g * &d.q;
    let qgq = &d.q * &gq;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n))
        .copy_from(&(qgq + &d.q * params.lambda_x.powi(2)));
    m.view_mut((0, n), (n, n)).copy_from(&gq.transpose());
    m.view_mut((n, 0), (n, n)).copy_from(&gq);
    let mut lower = g.clone();
    for (i, wi) in w.values().iter().enumerate() {
        lower[(i, i)] += params.lambda_xi.powi(2) * wi * wi;
    }
    m.view_mut((n, n), (n, n)).copy_from(&lower);
    let atrb = d.a.tr_mul(&rb);
    let mut rhs = DVector::zeros(2 * n);
    rhs.rows_mut(0, n).copy_from(&(&d.q * &atrb));
    rhs.rows_mut(n, n).copy_from(&atrb);
    let sol = match m.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            let svd = m.svd(true, true);
            let eps = 1e-14 * svd.singular_values.max();
            svd.solve(&rhs, eps).map_err(|_| Error::RankDeficient)?
        }
    };
    let x_latent: Vec<f64> = sol.rows(0, n).iter().copied().collect();
    let xi: Vec<f64> = sol.rows(n, n).iter().copied().collect();
    let x: Vec<f64> = (&d.q * DVector::from_column_slice(&x_latent)).iter().copied().collect();
    let u = x.iter().zip(&xi).map(|(a, b)| a + b).collect();
    Ok(Iterate { u, x, xi, x_latent })
}

/// Runs `cfg.method`. `truth` fills the error columns of the trace and is
/// required by optimal selection.
pub fn solve(
    a: &dyn LinearOperator,
    q: &dyn SpdOperator,
    rinv: &dyn SpdOperator,
    b: &[f64],
    cfg: &SolverConfig,
    truth: Option<Truth<'_>>,
) -> Result<SolveResult> {
    cfg.validate()?;
    if let Some(t) = truth {
        check_len("truth u", a.cols(), t.u.len())?;
        check_len("truth x", a.cols(), t.x.len())?;
        check_len("truth xi", a.cols(), t.xi.len())?;
    }
    let method = cfg.method;
    let (smooth, sparse) = (method.smooth(), method.sparse());
    if cfg.fixed_params.is_none() && cfg.selection.method == SelectionMethod::Optimal && truth.is_none() {
        return Err(Error::Capability("optimal selection needs the true solution"));
    }
    let kcfg = cfg.krylov();
    let mut engine = if method.golub_kahan() {
        Engine::Gk(AfGolubKahan::init(a, q, rinv, b, kcfg)?)
    } else {
        Engine::Arnoldi(AfArnoldi::init(a, q, rinv, b, kcfg)?)
    };
    let n = a.cols();
    let m = a.rows();

    let mut weights = DiagonalWeights::identity(n);
    let mut have_weights = !smooth;
    let mut wz = WzFactor::new();
    let mut trace: Vec<IterTrace> = Vec::new();
    let mut gcv_hist: Vec<f64> = Vec::new();
    let mut current: Option<Iterate> = None;
    let mut dense: Option<DenseCache> = None;
    let mut extra = OpCounts::default();
    let mut last_basis = 0usize;
    let mut stop = StopReason::Maxit;

    for k in 1..=cfg.maxit {
        let saturated = engine.dec().saturated() && current.is_some();
        let full_space = saturated && cfg.saturation_steps && smooth && sparse;
        if !saturated {
            engine.leading(k, smooth, &weights)?;
        }
        let basis_now = engine.dec().basis_len();
        // A saturated basis still moves with the weights unless there are none.
        let frozen = if saturated {
            !sparse
        } else {
            k > 1 && basis_now == last_basis
        };
        if frozen {
            stop = StopReason::Stagnation;
            break;
        }
        last_basis = basis_now;

        let (it, params, selection, residual, gcv) = if full_space {
            let d = match dense.take() {
                Some(d) => d,
                None => {
                    extra.a += n;
                    extra.q += n;
                    DenseCache {
                        a: assemble_dense(a),
                        q: assemble_dense_spd(q),
                        r: assemble_dense_spd(rinv),
                    }
                }
            };
            let params = cfg
                .fixed_params
                .or_else(|| {
                    trace.last().map(|t| RegParams {
                        lambda_x: t.lambda_x,
                        lambda_xi: t.lambda_xi,
                    })
                })
                .ok_or(Error::Degenerate("no parameters for full-space step"))?;
            let it = full_space_step(&d, b, &weights, params)?;
            let mut r = a.matvec(&it.u);
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= bi);
            let res = crate::vector::dot(&r, &rinv.matvec(&r)).max(0.0);
            dense = Some(d);
            (it, params, None, libm::sqrt(res), f64::NAN)
        } else {
            let dec = engine.dec();
            if sparse {
                let zs = dec
                    .column_indices(crate::basis::ColumnKind::Sparse)
                    .into_iter()
                    .map(|i| dec.zhat()[i].clone())
                    .collect::<Vec<_>>();
                wz.update(&weights, &zs)?;
            }
            let p = ProjectedProblem::from_decomposition(dec, &wz)?;
            let (params, selection) = choose(&p, dec, k, m, n, cfg, truth)?;
            let eff = RegParams {
                lambda_x: if smooth { params.lambda_x } else { 1.0 },
                lambda_xi: if sparse { params.lambda_xi } else { 1.0 },
            };
            let sol = p.solve(eff.lambda_x, eff.lambda_xi, false)?;
            let l = lift(&sol.y, &p, dec)?;
            let gcv = gcv_stop_value(&p, eff, k).unwrap_or(f64::NAN);
            let it = Iterate {
                u: l.u,
                x: l.x,
                xi: l.xi,
                x_latent: l.x_latent,
            };
            (it, params, selection, libm::sqrt(sol.residual_sq), gcv)
        };
        if cfg.finite_checks && !it.u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("iterate"));
        }

        let phi_spec = ObjectiveSpec::new(
            a,
            q,
            rinv,
            b,
            if smooth { params.lambda_x } else { 0.0 },
            if sparse { params.lambda_xi } else { 0.0 },
            cfg.tau,
        )?;
        let phi_value = eval_phi(&phi_spec, &it.x_latent, &it.xi)?;

        let counts = {
            let c = engine.dec().counts();
            OpCounts {
                a: c.a + extra.a,
                at: c.at + extra.at,
                q: c.q + extra.q,
            }
        };
        trace.push(IterTrace {
            k,
            lambda_x: if smooth { params.lambda_x } else { 0.0 },
            lambda_xi: if sparse { params.lambda_xi } else { 0.0 },
            rel_error_u: truth.and_then(|t| rel_err(&it.u, t.u)),
            rel_error_x: truth.and_then(|t| rel_err(&it.x, t.x)),
            rel_error_xi: truth.and_then(|t| rel_err(&it.xi, t.xi)),
            phi_value,
            projected_residual: residual,
            gcv_value: gcv,
            counts,
            selection,
            full_space,
        });

        if sparse {
            let source: &[f64] = if !have_weights && smooth && cfg.weight_init == WeightInit::FirstReconstruction {
                &it.u
            } else {
                &it.xi
            };
            weights = compute_weights(source, cfg.tau)?;
            have_weights = true;
            if smooth && !engine.dec().saturated() {
                engine.trailing(&weights)?;
            }
        }
        current = Some(it);

        if !full_space {
            gcv_hist.push(gcv);
            if let (Some(tol), Some(change)) = (cfg.stop_tol, gcv_flattening(&gcv_hist)) {
                if change <= tol {
                    stop = StopReason::GcvFlat;
                    break;
                }
            }
        }
    }

    let it = current.ok_or(Error::Degenerate("no iterate computed"))?;
    let counts = trace.last().map(|t| t.counts).unwrap_or_default();
    Ok(SolveResult {
        u: it.u,
        x: it.x,
        xi: it.xi,
        x_latent: it.x_latent,
        trace,
        stop_reason: stop,
        operator_counts: counts,
        weights: sparse.then_some(weights),
        method,
    })
}

fn choose(
    p: &ProjectedProblem,
    dec: &dyn Decomposition,
    k: usize,
    m: usize,
    n: usize,
    cfg: &SolverConfig,
    truth: Option<Truth<'_>>,
) -> Result<(RegParams, Option<Selection>)> {
    if let Some(f) = cfg.fixed_params {
        return Ok((f, None));
    }
    let sel = &cfg.selection;
    let s = match sel.method {
        SelectionMethod::Fixed => {
            return Ok((sel.fixed.ok_or_else(|| param("fixed", "missing"))?, None));
        }
        SelectionMethod::Optimal => select_optimal(p, dec, truth.map(|t| t.u), sel)?,
        SelectionMethod::Dp => select_dp(p, dp_target(sel, m, n)?, sel)?,
        SelectionMethod::Wgcv => select_wgcv(p, k, m, sel)?,
    };
    Ok((s.params, Some(s)))
}

/// AF-GMRES: Arnoldi basis with both column families.
pub fn af_gmres(
    a: &dyn LinearOperator,
    q: &dyn SpdOperator,
    rinv: &dyn SpdOperator,
    b: &[f64],
    cfg: &SolverConfig,
    truth: Option<Truth<'_>>,
) -> Result<SolveResult> {
    solve(
        a,
        q,
        rinv,
        b,
        &SolverConfig {
            method: Method::AfGmres,
            ..cfg.clone()
        },
        truth,
    )
}

/// AF-LSQR: Golub–Kahan basis with both column families.
pub fn af_lsqr(
    a: &dyn LinearOperator,
    q: &dyn SpdOperator,
    rinv: &dyn SpdOperator,
    b: &[f64],
    cfg: &SolverConfig,
    truth: Option<Truth<'_>>,
) -> Result<SolveResult> {
    solve(
        a,
        q,
        rinv,
        b,
        &SolverConfig {
            method: Method::AfLsqr,
            ..cfg.clone()
        },
        truth,
    )
}

/// One of the single-family methods.
pub fn baseline(
    method: Method,
    a: &dyn LinearOperator,
    q: &dyn SpdOperator,
    rinv: &dyn SpdOperator,
    b: &[f64],
    cfg: &SolverConfig,
    truth: Option<Truth<'_>>,
) -> Result<SolveResult> {
    if method.smooth() && method.sparse() {
        return Err(Error::Config(String::from("baseline needs a single-family method")));
    }
    solve(a, q, rinv, b, &SolverConfig { method, ..cfg.clone() }, truth)
}
