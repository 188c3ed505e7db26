//! Reweighting of the sparse term: smoothed ℓ1 weights, the smoothed
//! objective `φ` and its quadratic tangent majorants `φ_k`.
//!
//! With `s = ξ_{k-1}` and `w_i = (s_i² + τ²)^{-1/4}`,
//!
//! ```text
//! φ(x, ξ)   = ‖AQx + Aξ - b‖²_{R⁻¹} + λx²‖x‖²_Q + λξ² Σ 2√(ξ_i² + τ²)
//! φ_k(x, ξ) = ‖AQx + Aξ - b‖²_{R⁻¹} + λx²‖x‖²_Q + λξ² ‖W_k ξ‖² + c_k
//! c_k       = λξ² Σ (2√(s_i² + τ²) - s_i² / √(s_i² + τ²))
//! ```
//!
//! `x` is the latent smooth coordinate: the smooth image is `Qx`.

use alloc::vec::Vec;

use crate::error::{check_len, param, Error, Result};
use crate::operators::{LinearOperator, SpdOperator};
use crate::vector::{all_finite, dot};

/// Diagonal of `W̃^{(τ)}(ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalWeights {
    w: Vec<f64>,
    tau: f64,
}

impl DiagonalWeights {
    /// All-ones weights (no reweighting yet).
    pub fn identity(n: usize) -> Self {
        Self {
            w: alloc::vec![1.0; n],
            tau: 1.0,
        }
    }

    /// Arbitrary positive diagonal; `tau` is recorded but not used.
    pub fn from_diagonal(w: Vec<f64>, tau: f64) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Weight { index: i });
        }
        Ok(Self { w, tau })
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `W v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.w.iter().zip(v).map(|(w, x)| w * x).collect()
    }

    /// `W⁻¹ v`
    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        self.w.iter().zip(v).map(|(w, x)| x / w).collect()
    }
}

/// `w_i = (ξ_i² + τ²)^{-1/4}`
pub fn compute_weights(xi: &[f64], tau: f64) -> Result<DiagonalWeights> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(param("tau", "must be positive and finite"));
    }
    if !all_finite(xi) {
        return Err(Error::NonFinite("weights input"));
    }
    let t2 = tau * tau;
    let w = xi.iter().map(|x| 1.0 / libm::sqrt(libm::sqrt(x * x + t2))).collect();
    Ok(DiagonalWeights { w, tau })
}

/// `Σ 2√(ξ_i² + τ²)`, the smoothed ℓ1 term of `φ`.
pub fn smoothed_l1(xi: &[f64], tau: f64) -> f64 {
    let t2 = tau * tau;
    xi.iter().map(|x| 2.0 * libm::sqrt(x * x + t2)).sum()
}

/// Operators, data and parameters defining `φ`.
#[derive(Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub a: &'a dyn LinearOperator,
    pub q: &'a dyn SpdOperator,
    pub rinv: &'a dyn SpdOperator,
    pub b: &'a [f64],
    pub lambda_x: f64,
    pub lambda_xi: f64,
    pub tau: f64,
}

impl<'a> ObjectiveSpec<'a> {
    pub fn new(
        a: &'a dyn LinearOperator,
        q: &'a dyn SpdOperator,
        rinv: &'a dyn SpdOperator,
        b: &'a [f64],
        lambda_x: f64,
        lambda_xi: f64,
        tau: f64,
    ) -> Result<Self> {
        check_len("objective: Q vs A columns", a.cols(), q.dim())?;
        check_len("objective: R⁻¹ vs A rows", a.rows(), rinv.dim())?;
        check_len("objective: b vs A rows", a.rows(), b.len())?;
        if !(lambda_x >= 0.0 && lambda_x.is_finite()) {
            return Err(param("lambda_x", "must be nonnegative and finite"));
        }
        if !(lambda_xi >= 0.0 && lambda_xi.is_finite()) {
            return Err(param("lambda_xi", "must be nonnegative and finite"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(param("tau", "must be positive and finite"));
        }
        Ok(Self {
            a,
            q,
            rinv,
            b,
            lambda_x,
            lambda_xi,
            tau,
        })
    }

    /// Data misfit and smooth penalty: `‖AQx + Aξ - b‖²_{R⁻¹} + λx²‖x‖²_Q`.
    fn quadratic_part(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        check_len("objective: x", self.a.cols(), x.len())?;
        check_len("objective: xi", self.a.cols(), xi.len())?;
        if !all_finite(x) || !all_finite(xi) {
            return Err(Error::NonFinite("objective input"));
        }
        let qx = self.q.matvec(x);
        let u: Vec<f64> = qx.iter().zip(xi).map(|(a, b)| a + b).collect();
        let mut r = self.a.matvec(&u);
        r.iter_mut().zip(self.b).for_each(|(ri, bi)| *ri -= bi);
        let misfit = dot(&r, &self.rinv.matvec(&r));
        let smooth = dot(x, &qx);
        Ok(misfit + self.lambda_x * self.lambda_x * smooth)
    }
}

/// `φ(x, ξ)`
pub fn eval_phi(spec: &ObjectiveSpec<'_>, x: &[f64], xi: &[f64]) -> Result<f64> {
    let quad = spec.quadratic_part(x, xi)?;
    let v = quad + spec.lambda_xi * spec.lambda_xi * smoothed_l1(xi, spec.tau);
    if !v.is_finite() {
        return Err(Error::NonFinite("objective value"));
    }
    Ok(v)
}

/// `c_k / λξ²` for the majorant built at `ξ_prev`.
pub fn majorant_offset(xi_prev: &[f64], tau: f64) -> f64 {
    let t2 = tau * tau;
    xi_prev
        .iter()
        .map(|s| {
            let h = libm::sqrt(s * s + t2);
            2.0 * h - s * s / h
        })
        .sum()
}

/// `φ_k(x, ξ)` for the majorant tangent at `ξ_prev`, whose weights are `w_prev`.
pub fn eval_phi_k(
    spec: &ObjectiveSpec<'_>,
    w_prev: &DiagonalWeights,
    xi_prev: &[f64],
    x: &[f64],
    xi: &[f64],
) -> Result<f64> {
    check_len("phi_k: xi_prev", spec.a.cols(), xi_prev.len())?;
    check_len("phi_k: weights", spec.a.cols(), w_prev.len())?;
    let expected = compute_weights(xi_prev, spec.tau)?;
    let consistent = expected
        .values()
        .iter()
        .zip(w_prev.values())
        .all(|(a, b)| libm::fabs(a - b) <= 1e-12 * libm::fabs(*a));
    if !consistent {
        return Err(Error::Contract("weights do not match xi_prev and tau"));
    }
    let quad = spec.quadratic_part(x, xi)?;
    let wxi = w_prev.apply(xi);
    let l2 = spec.lambda_xi * spec.lambda_xi;
    Ok(quad + l2 * (dot(&wxi, &wxi) + majorant_offset(xi_prev, spec.tau)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DenseMatrix, DiagonalSpd};
    use alloc::vec;

    #[test]
    fn weights_at_zero_and_direct_value() {
        let w = compute_weights(&[0.0, 0.0], 0.1).unwrap();
        for v in w.values() {
            assert!((v - 10f64.sqrt()).abs() < 1e-14);
        }
        let w = compute_weights(&[3.0], 4.0).unwrap();
        assert!((w.values()[0] - 1.0 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weights_reject_bad_tau() {
        assert!(compute_weights(&[1.0], 0.0).is_err());
        assert!(compute_weights(&[1.0], -1.0).is_err());
        assert!(compute_weights(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn weights_bounded_by_inverse_sqrt_tau() {
        let tau: f64 = 0.25;
        let w = compute_weights(&[0.0, 1e-3, -2.0, 7.0], tau).unwrap();
        let cap = 1.0 / tau.sqrt();
        assert_eq!(w.values()[0], cap);
        assert!(w.values()[1..].iter().all(|v| *v < cap && *v > 0.0));
    }

    #[test]
    fn phi_of_zero_is_smoothing_floor() {
        let a = DenseMatrix::identity(3);
        let q = DiagonalSpd::identity(3);
        let r = DiagonalSpd::identity(3);
        let b = [0.0; 3];
        let tau = 1e-3;
        let spec = ObjectiveSpec::new(&a, &q, &r, &b, 0.7, 1.3, tau).unwrap();
        let z = [0.0; 3];
        let v = eval_phi(&spec, &z, &z).unwrap();
        assert!((v - 1.3 * 1.3 * 2.0 * 3.0 * tau).abs() < 1e-15);
    }

    #[test]
    fn phi_identity_example() {
        let a = DenseMatrix::identity(2);
        let q = DiagonalSpd::identity(2);
        let r = DiagonalSpd::identity(2);
        let b = [0.0; 2];
        let spec = ObjectiveSpec::new(&a, &q, &r, &b, 1.0, 0.0, 0.1).unwrap();
        let v = eval_phi(&spec, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn phi_k_closed_form_at_zero_prev() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let q = DiagonalSpd::new(vec![2.0, 0.5]).unwrap();
        let r = DiagonalSpd::identity(2);
        let b = [1.0, -1.0];
        let tau = 0.01;
        let spec = ObjectiveSpec::new(&a, &q, &r, &b, 0.3, 0.8, tau).unwrap();
        let prev = [0.0, 0.0];
        let w = compute_weights(&prev, tau).unwrap();
        assert!((majorant_offset(&prev, tau) - 2.0 * 2.0 * tau).abs() < 1e-16);
        let x = [0.2, -0.1];
        let xi = [0.5, 0.25];
        let got = eval_phi_k(&spec, &w, &prev, &x, &xi).unwrap();
        let quad = spec.quadratic_part(&x, &xi).unwrap();
        let want = quad + 0.64 * ((0.25 + 0.0625) / tau + 4.0 * tau);
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn phi_k_rejects_mismatched_weights() {
        let a = DenseMatrix::identity(2);
        let q = DiagonalSpd::identity(2);
        let r = DiagonalSpd::identity(2);
        let b = [1.0, 1.0];
        let spec = ObjectiveSpec::new(&a, &q, &r, &b, 1.0, 1.0, 0.1).unwrap();
        let w = compute_weights(&[1.0, 2.0], 0.1).unwrap();
        let res = eval_phi_k(&spec, &w, &[0.0, 0.0], &[0.0; 2], &[0.0; 2]);
        assert_eq!(res, Err(Error::Contract("weights do not match xi_prev and tau")));
    }

    #[test]
    fn objective_rejects_dimension_mismatch() {
        let a = DenseMatrix::identity(2);
        let q = DiagonalSpd::identity(3);
        let r = DiagonalSpd::identity(2);
        let b = [1.0, 1.0];
        assert!(ObjectiveSpec::new(&a, &q, &r, &b, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn phi_rejects_non_finite() {
        let a = DenseMatrix::identity(2);
        let q = DiagonalSpd::identity(2);
        let r = DiagonalSpd::identity(2);
        let b = [1.0, 1.0];
        let spec = ObjectiveSpec::new(&a, &q, &r, &b, 1.0, 1.0, 0.1).unwrap();
        assert!(eval_phi(&spec, &[f64::NAN, 0.0], &[0.0, 0.0]).is_err());
    }
}
