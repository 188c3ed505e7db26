//! Choice of `(λx, λξ)` for each projected problem and the iteration-indexed
//! GCV function used for stopping. All searches run over `log₁₀ λ`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::{columns_to_dense, ColumnKind, Decomposition};
use crate::error::{check_len, param, Error, Result};
use crate::projected::ProjectedProblem;

/// Smallest parameter value the searches may return.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    pub lambda_x: f64,
    pub lambda_xi: f64,
}

impl RegParams {
    pub fn new(lambda_x: f64, lambda_xi: f64) -> Result<Self> {
        for (name, v) in [("lambda_x", lambda_x), ("lambda_xi", lambda_xi)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(param(name, "must be positive and finite"));
            }
        }
        Ok(Self { lambda_x, lambda_xi })
    }

    fn from_log(p: [f64; 2]) -> Self {
        Self {
            lambda_x: libm::pow(10.0, p[0]).max(LAMBDA_FLOOR),
            lambda_xi: libm::pow(10.0, p[1]).max(LAMBDA_FLOOR),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    /// Minimize the error against a known truth.
    Optimal,
    /// Discrepancy principle.
    Dp,
    /// Weighted generalized cross validation.
    Wgcv,
    /// Use `SelectionConfig::fixed` at every iteration.
    Fixed,
}

/// Which dimension multiplies `σ²` in the discrepancy target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DpDimension {
    /// Number of data points `m`.
    #[default]
    Data,
    /// Number of unknowns `n`.
    Unknowns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    /// Noise standard deviation, required by the discrepancy principle.
    pub noise_sigma: Option<f64>,
    /// Safety factor of the discrepancy target.
    pub tau_dp: f64,
    pub dp_dimension: DpDimension,
    pub fixed: Option<RegParams>,
    pub search: MinimizeConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            method: SelectionMethod::Dp,
            noise_sigma: None,
            tau_dp: 1.1,
            dp_dimension: DpDimension::Data,
            fixed: None,
            search: MinimizeConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_dp >= 1.0 && self.tau_dp.is_finite()) {
            return Err(param("tau_dp", "must be at least 1"));
        }
        if let Some(s) = self.noise_sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(param("noise_sigma", "must be positive and finite"));
            }
        }
        match self.method {
            SelectionMethod::Dp if self.noise_sigma.is_none() => {
                return Err(param("noise_sigma", "required by the discrepancy principle"))
            }
            SelectionMethod::Fixed if self.fixed.is_none() => {
                return Err(param("fixed", "required by fixed selection"))
            }
            _ => {}
        }
        self.search.validate()
    }
}

/// Options of the two-dimensional search.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeConfig {
    /// Box for both coordinates.
    pub bounds: (f64, f64),
    pub init_guess: [f64; 2],
    pub max_evals: usize,
    /// Points per axis of the seeding grid (0 or 1 disables it).
    pub seed_grid: usize,
    /// Simplex size below which the search stops.
    pub xtol: f64,
    /// Relative spread of simplex values below which the search stops.
    pub ftol: f64,
    /// Refine with BFGS on finite-difference gradients.
    pub quasi_newton: bool,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            bounds: (-10.0, 2.0),
            init_guess: [-0.5, -0.5],
            max_evals: 400,
            seed_grid: 9,
            xtol: 1e-6,
            ftol: 1e-12,
            quasi_newton: false,
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(param("log_bounds", "need finite lo < hi"));
        }
        if self.max_evals < 3 {
            return Err(param("max_evals", "must be at least 3"));
        }
        if !self.init_guess.iter().all(|v| v.is_finite()) {
            return Err(param("init_guess", "must be finite"));
        }
        Ok(())
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        let (lo, hi) = self.bounds;
        [p[0].clamp(lo, hi), p[1].clamp(lo, hi)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub point: [f64; 2],
    pub value: f64,
    pub evals: usize,
    /// The evaluation budget ran out before convergence.
    pub exhausted: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
    best: ([f64; 2], f64),
}

impl<F: FnMut([f64; 2]) -> f64> Counted<F> {
    fn eval(&mut self, p: [f64; 2]) -> f64 {
        self.evals += 1;
        let v = (self.f)(p);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if v < self.best.1 {
            self.best = (p, v);
        }
        v
    }
}

/// Minimizes `f` over the box: a coarse seeding grid, Nelder–Mead from the
/// best seed, and an optional quasi-Newton polish. Non-finite values are
/// treated as `+∞`.
pub fn minimize_2d<F: FnMut([f64; 2]) -> f64>(f: F, cfg: &MinimizeConfig) -> Minimum {
    let mut c = Counted {
        f,
        evals: 0,
        best: (cfg.clamp(cfg.init_guess), f64::INFINITY),
    };
    let start = cfg.clamp(cfg.init_guess);
    c.eval(start);
    let (lo, hi) = cfg.bounds;
    if cfg.seed_grid >= 2 {
        let g = cfg.seed_grid;
        let step = (hi - lo) / (g - 1) as f64;
        'grid: for i in 0..g {
            for j in 0..g {
                if c.evals + 3 >= cfg.max_evals {
                    break 'grid;
                }
                c.eval([lo + i as f64 * step, lo + j as f64 * step]);
            }
        }
    }
    let span = hi - lo;
    let grid_step = if cfg.seed_grid >= 2 {
        span / (cfg.seed_grid - 1) as f64
    } else {
        span / 8.0
    };
    let mut exhausted = false;
    // Two Nelder-Mead passes; the second restarts around the first result to
    // escape a collapsed simplex.
    for pass in 0..2 {
        let scale = if pass == 0 { 0.5 * grid_step } else { 0.05 * grid_step };
        let x0 = c.best.0;
        exhausted = nelder_mead(&mut c, x0, scale, cfg);
        if exhausted {
            break;
        }
    }
    if cfg.quasi_newton && !exhausted {
        exhausted = bfgs(&mut c, cfg);
    }
    Minimum {
        point: c.best.0,
        value: c.best.1,
        evals: c.evals,
        exhausted,
    }
}

fn nelder_mead<F: FnMut([f64; 2]) -> f64>(c: &mut Counted<F>, x0: [f64; 2], scale: f64, cfg: &MinimizeConfig) -> bool {
    let hi = cfg.bounds.1;
    let off = |v: f64| if v + scale <= hi { v + scale } else { v - scale };
    let mut s = [x0, cfg.clamp([off(x0[0]), x0[1]]), cfg.clamp([x0[0], off(x0[1])])];
    let mut fv = [c.best.1, 0.0, 0.0];
    if x0 != c.best.0 || !fv[0].is_finite() {
        fv[0] = c.eval(s[0]);
    }
    fv[1] = c.eval(s[1]);
    fv[2] = c.eval(s[2]);
    loop {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|a, b| fv[*a].total_cmp(&fv[*b]));
        s = [s[idx[0]], s[idx[1]], s[idx[2]]];
        fv = [fv[idx[0]], fv[idx[1]], fv[idx[2]]];

        let size = (0..2)
            .map(|d| libm::fabs(s[1][d] - s[0][d]).max(libm::fabs(s[2][d] - s[0][d])))
            .fold(0.0, f64::max);
        let spread = libm::fabs(fv[2] - fv[0]);
        if fv[2].is_finite() && size <= cfg.xtol && spread <= cfg.ftol * (libm::fabs(fv[0]) + 1e-300) {
            return false;
        }
        if size <= cfg.xtol * 1e-3 {
            return false;
        }
        if c.evals + 2 > cfg.max_evals {
            return true;
        }
        let cen = [(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0];
        let along = |t: f64| cfg.clamp([cen[0] + t * (s[2][0] - cen[0]), cen[1] + t * (s[2][1] - cen[1])]);
        let xr = along(-1.0);
        let fr = c.eval(xr);
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = c.eval(xe);
            if fe < fr {
                s[2] = xe;
                fv[2] = fe;
            } else {
                s[2] = xr;
                fv[2] = fr;
            }
            continue;
        }
        if fr < fv[1] {
            s[2] = xr;
            fv[2] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[2] {
            let x = along(-0.5);
            (x, c.eval(x))
        } else {
            let x = along(0.5);
            (x, c.eval(x))
        };
        if fc < fv[2].min(fr) {
            s[2] = xc;
            fv[2] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        if c.evals + 2 > cfg.max_evals {
            return true;
        }
        for i in 1..3 {
            s[i] = [(s[0][0] + s[i][0]) / 2.0, (s[0][1] + s[i][1]) / 2.0];
            fv[i] = c.eval(s[i]);
        }
    }
}

fn bfgs<F: FnMut([f64; 2]) -> f64>(c: &mut Counted<F>, cfg: &MinimizeConfig) -> bool {
    const H: f64 = 1e-5;
    let grad = |c: &mut Counted<F>, x: [f64; 2]| -> Option<[f64; 2]> {
        let mut g = [0.0; 2];
        for d in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += H;
            xm[d] -= H;
            let (fp, fm) = (c.eval(cfg.clamp(xp)), c.eval(cfg.clamp(xm)));
            let h = cfg.clamp(xp)[d] - cfg.clamp(xm)[d];
            if !(fp.is_finite() && fm.is_finite()) || h == 0.0 {
                return None;
            }
            g[d] = (fp - fm) / h;
        }
        Some(g)
    };
    let mut x = c.best.0;
    let mut fx = c.best.1;
    let mut hinv = [[1.0, 0.0], [0.0, 1.0]];
    let Some(mut g) = grad(c, x) else {
        return false;
    };
    for _ in 0..50 {
        if c.evals + 8 > cfg.max_evals {
            return true;
        }
        let d = [
            -(hinv[0][0] * g[0] + hinv[0][1] * g[1]),
            -(hinv[1][0] * g[0] + hinv[1][1] * g[1]),
        ];
        let slope = d[0] * g[0] + d[1] * g[1];
        if !(slope < 0.0) {
            return false;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 && c.evals < cfg.max_evals {
            let xn = cfg.clamp([x[0] + t * d[0], x[1] + t * d[1]]);
            let fnew = c.eval(xn);
            if fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            return false;
        };
        let Some(gn) = grad(c, xn) else {
            return false;
        };
        let sv = [xn[0] - x[0], xn[1] - x[1]];
        let yv = [gn[0] - g[0], gn[1] - g[1]];
        let sy = sv[0] * yv[0] + sv[1] * yv[1];
        if sy > 1e-300 {
            let hy = [
                hinv[0][0] * yv[0] + hinv[0][1] * yv[1],
                hinv[1][0] * yv[0] + hinv[1][1] * yv[1],
            ];
            let yhy = yv[0] * hy[0] + yv[1] * hy[1];
            for i in 0..2 {
                for j in 0..2 {
                    hinv[i][j] += (sy + yhy) * sv[i] * sv[j] / (sy * sy) - (hy[i] * sv[j] + sv[i] * hy[j]) / sy;
                }
            }
        }
        let moved = libm::fabs(sv[0]).max(libm::fabs(sv[1]));
        x = xn;
        fx = fnew;
        g = gn;
        if moved <= cfg.xtol {
            return false;
        }
    }
    false
}

/// Outcome of one selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub params: RegParams,
    /// Criterion value at `params`.
    pub objective: f64,
    pub evals: usize,
    /// Some coordinate sits on the search bounds.
    pub at_bound: bool,
    /// The evaluation budget ran out.
    pub exhausted: bool,
    /// The discrepancy target could not be met inside the bounds.
    pub unattainable: bool,
}

impl Selection {
    fn from_min(m: Minimum, cfg: &MinimizeConfig) -> Self {
        let (lo, hi) = cfg.bounds;
        let at_bound = m.point.iter().any(|v| *v <= lo || *v >= hi);
        Self {
            params: RegParams::from_log(m.point),
            objective: m.value,
            evals: m.evals,
            at_bound,
            exhausted: m.exhausted,
            unattainable: false,
        }
    }
}

fn residual_at(p: &ProjectedProblem, x: [f64; 2]) -> f64 {
    let r = RegParams::from_log(x);
    p.solve(r.lambda_x, r.lambda_xi, false)
        .map(|s| s.residual_sq)
        .unwrap_or(f64::NAN)
}

/// Minimizes `‖u_k(λ) - u_true‖²` using the Gram matrix of `Ẑ`.
pub fn select_optimal(
    p: &ProjectedProblem,
    dec: &dyn Decomposition,
    u_true: Option<&[f64]>,
    cfg: &SelectionConfig,
) -> Result<Selection> {
    let u_true = u_true.ok_or(Error::Capability("optimal selection needs the true solution"))?;
    check_len("optimal: truth", dec.dim(), u_true.len())?;
    let mut order = dec.column_indices(ColumnKind::Smooth);
    order.extend(dec.column_indices(ColumnKind::Sparse));
    let cols: Vec<Vec<f64>> = order.iter().map(|i| dec.zhat()[*i].clone()).collect();
    let z = columns_to_dense(&cols, dec.dim());
    let gram = z.tr_mul(&z);
    let t = DVector::from_column_slice(u_true);
    let zt = z.tr_mul(&t);
    let tt = t.norm_squared();
    let err = |y: &DVector<f64>| (y.dot(&(&gram * y)) - 2.0 * y.dot(&zt) + tt).max(0.0);
    let m = minimize_2d(
        |x| {
            let r = RegParams::from_log(x);
            p.solve(r.lambda_x, r.lambda_xi, false)
                .map(|s| err(&s.y))
                .unwrap_or(f64::NAN)
        },
        &cfg.search,
    );
    Ok(Selection::from_min(m, &cfg.search))
}

/// Target `τ_dp · d · σ²` of the discrepancy principle.
pub fn dp_target(cfg: &SelectionConfig, data_len: usize, unknowns: usize) -> Result<f64> {
    let sigma = cfg
        .noise_sigma
        .ok_or_else(|| param("noise_sigma", "required by the discrepancy principle"))?;
    let d = match cfg.dp_dimension {
        DpDimension::Data => data_len,
        DpDimension::Unknowns => unknowns,
    };
    Ok(cfg.tau_dp * d as f64 * sigma * sigma)
}

/// Matches the projected residual to the discrepancy target.
///
/// After the 2D search the point is refined by bisection along the diagonal
/// `(1, 1)`, on which the residual is nondecreasing.
pub fn select_dp(p: &ProjectedProblem, target: f64, cfg: &SelectionConfig) -> Result<Selection> {
    if !(target.is_finite() && target >= 0.0) {
        return Err(param("dp target", "must be finite and nonnegative"));
    }
    let (lo, hi) = cfg.search.bounds;
    // The residual is nondecreasing in each parameter, so an unreachable
    // target is settled by the two corners of the box.
    for (corner, below) in [(lo, false), (hi, true)] {
        let f = residual_at(p, [corner, corner]) - target;
        if f.is_finite() && (f >= 0.0) != below && f != 0.0 {
            return Ok(Selection {
                params: RegParams::from_log([corner, corner]),
                objective: libm::fabs(f),
                evals: 1,
                at_bound: true,
                exhausted: false,
                unattainable: true,
            });
        }
    }
    // Every point of a whole curve meets the target. A local search from the
    // initial guess picks the one nearest to it instead of a grid-dependent one.
    let search = MinimizeConfig {
        seed_grid: 0,
        ..cfg.search
    };
    let m = minimize_2d(|x| libm::fabs(residual_at(p, x) - target), &search);
    let mut sel = Selection::from_min(m, &search);
    let x0 = m.point;
    // Diagonal segment through x0 inside the box.
    let t_lo = lo - x0[0].min(x0[1]);
    let t_hi = hi - x0[0].max(x0[1]);
    let at = |t: f64| [x0[0] + t, x0[1] + t];
    let f_lo = residual_at(p, at(t_lo)) - target;
    let f_hi = residual_at(p, at(t_hi)) - target;
    sel.evals += 2;
    if !(f_lo.is_finite() && f_hi.is_finite()) {
        return Ok(sel);
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        // Unreachable along the diagonal: keep whichever end is closer.
        let (t, f) = if f_lo > 0.0 { (t_lo, f_lo) } else { (t_hi, f_hi) };
        if libm::fabs(f) < sel.objective {
            sel = Selection {
                params: RegParams::from_log(at(t)),
                objective: libm::fabs(f),
                at_bound: true,
                ..sel
            };
        }
        sel.unattainable = sel.objective > 1e-2 * target.max(f64::MIN_POSITIVE);
        return Ok(sel);
    }
    let (mut a, mut b) = (t_lo, t_hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= 1e-13 * (1.0 + libm::fabs(mid)) {
            break;
        }
        let f = residual_at(p, at(mid)) - target;
        sel.evals += 1;
        if f.is_nan() {
            break;
        }
        if f < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let t = 0.5 * (a + b);
    let f = libm::fabs(residual_at(p, at(t)) - target);
    if f <= sel.objective {
        let pt = at(t);
        sel.params = RegParams::from_log(pt);
        sel.objective = f;
        sel.at_bound = pt.iter().any(|v| *v <= lo || *v >= hi);
    }
    Ok(sel)
}

/// `‖Ky - βe₁‖² / (rows - ω trace(KC))²`, `+∞` when the denominator vanishes.
pub fn wgcv_value(p: &ProjectedProblem, params: RegParams, omega: f64) -> Result<f64> {
    let s = p.solve(params.lambda_x, params.lambda_xi, true)?;
    let den = p.rows() as f64 - omega * s.trace_kc.unwrap_or(0.0);
    Ok(gcv_ratio(s.residual_sq, den))
}

fn gcv_ratio(num: f64, den: f64) -> f64 {
    if libm::fabs(den) <= 1e-12 {
        f64::INFINITY
    } else {
        num / (den * den)
    }
}

/// Minimizes the weighted GCV function with `ω = k/m`.
pub fn select_wgcv(p: &ProjectedProblem, k: usize, data_len: usize, cfg: &SelectionConfig) -> Result<Selection> {
    if data_len == 0 {
        return Err(param("data_len", "must be positive"));
    }
    let omega = k as f64 / data_len as f64;
    let m = minimize_2d(
        |x| wgcv_value(p, RegParams::from_log(x), omega).unwrap_or(f64::NAN),
        &cfg.search,
    );
    Ok(Selection::from_min(m, &cfg.search))
}

/// `Ĝ(k) = k ‖Ky - βe₁‖² / (rows - trace(KC))²`
pub fn gcv_stop_value(p: &ProjectedProblem, params: RegParams, k: usize) -> Result<f64> {
    let s = p.solve(params.lambda_x, params.lambda_xi, true)?;
    let den = p.rows() as f64 - s.trace_kc.unwrap_or(0.0);
    Ok(k as f64 * gcv_ratio(s.residual_sq, den))
}

/// Relative change `|Ĝ(k) - Ĝ(k-1)| / max(Ĝ(1), ε)`.
pub fn gcv_flattening(history: &[f64]) -> Option<f64> {
    let n = history.len();
    if n < 2 {
        return None;
    }
    let (cur, prev) = (history[n - 1], history[n - 2]);
    if !(cur.is_finite() && prev.is_finite()) {
        return None;
    }
    let first = history.iter().copied().find(|v| v.is_finite()).unwrap_or(0.0);
    Some(libm::fabs(cur - prev) / first.max(f64::EPSILON))
}

/// Stacked regularized matrix used only for dense cross-checks.
pub fn stacked_matrix(p: &ProjectedProblem, params: RegParams) -> DMatrix<f64> {
    let (rows, s1, s2) = (p.rows(), p.n_smooth(), p.n_sparse());
    let mut m = DMatrix::zeros(rows + s1 + s2, s1 + s2);
    m.rows_mut(0, rows).copy_from(&p.k());
    m.view_mut((rows, 0), (s1, s1)).copy_from(&(p.l() * params.lambda_x));
    m.view_mut((rows + s1, s1), (s2, s2))
        .copy_from(&(p.rwz() * params.lambda_xi));
    m
}
