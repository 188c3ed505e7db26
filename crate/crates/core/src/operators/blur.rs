//! Two-dimensional Gaussian blur on a square pixel grid.

use alloc::vec;
use alloc::vec::Vec;

use super::LinearOperator;
use crate::error::{param, Result};

/// Treatment of pixels outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Pixels outside the image are zero.
    #[default]
    Zero,
    /// Half-sample symmetric reflection across the image border.
    Reflexive,
}

/// Convolution with a normalized, truncated Gaussian point spread function.
///
/// Pixels are stored row-major (`index = row * side + col`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlur {
    side: usize,
    radius: usize,
    psf: Vec<f64>,
    boundary: Boundary,
}

/// Builds a blur with PSF radius `ceil(3 sigma)` (at least one pixel).
pub fn gaussian_blur_operator(image_side: usize, psf_sigma: f64, boundary: Boundary) -> Result<GaussianBlur> {
    let radius = (libm::ceil(3.0 * psf_sigma) as usize).max(1);
    GaussianBlur::new(image_side, psf_sigma, radius, boundary)
}

impl GaussianBlur {
    pub fn new(side: usize, sigma: f64, radius: usize, boundary: Boundary) -> Result<Self> {
        if side < 2 {
            return Err(param("image_side", "must be at least 2"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(param("psf_sigma", "must be positive and finite"));
        }
        let width = 2 * radius + 1;
        let mut psf = vec![0.0; width * width];
        let denom = 2.0 * sigma * sigma;
        for p in 0..width {
            for q in 0..width {
                let dp = p as f64 - radius as f64;
                let dq = q as f64 - radius as f64;
                psf[p * width + q] = libm::exp(-(dp * dp + dq * dq) / denom);
            }
        }
        let total: f64 = psf.iter().sum();
        psf.iter_mut().for_each(|v| *v /= total);
        Ok(Self {
            side,
            radius,
            psf,
            boundary,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// PSF weights, row-major on a `(2r+1) x (2r+1)` stencil centered at `(r, r)`.
    pub fn psf(&self) -> &[f64] {
        &self.psf
    }

    fn source_index(&self, k: isize) -> Option<usize> {
        let s = self.side as isize;
        match self.boundary {
            Boundary::Zero => (0..s).contains(&k).then_some(k as usize),
            Boundary::Reflexive => {
                let mut k = k;
                while !(0..s).contains(&k) {
                    k = if k < 0 { -k - 1 } else { 2 * s - k - 1 };
                }
                Some(k as usize)
            }
        }
    }

    /// Calls `visit(out_pixel, src_pixel, weight)` for every stencil tap of the
    /// convolution `out[i,j] = sum psf[p,q] x[i-p, j-q]`.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize, f64)) {
        let r = self.radius as isize;
        let width = 2 * self.radius + 1;
        for i in 0..self.side {
            for j in 0..self.side {
                let out = i * self.side + j;
                for p in -r..=r {
                    let Some(si) = self.source_index(i as isize - p) else {
                        continue;
                    };
                    for q in -r..=r {
                        let Some(sj) = self.source_index(j as isize - q) else {
                            continue;
                        };
                        let w = self.psf[(p + r) as usize * width + (q + r) as usize];
                        visit(out, si * self.side + sj, w);
                    }
                }
            }
        }
    }
}

impl LinearOperator for GaussianBlur {
    fn rows(&self) -> usize {
        self.side * self.side
    }
    fn cols(&self) -> usize {
        self.side * self.side
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each_tap(|o, s, w| out[o] += w * x[s]);
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each_tap(|o, s, w| out[s] += w * y[o]);
        Ok(())
    }
    fn has_transpose(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::assemble_dense;

    #[test]
    fn tiny_sigma_is_identity() {
        let op = gaussian_blur_operator(5, 1e-3, Boundary::Zero).unwrap();
        let x: Vec<f64> = (0..25).map(|i| i as f64 * 0.5 - 3.0).collect();
        assert_eq!(op.matvec(&x), x);
    }

    #[test]
    fn reflexive_preserves_constants() {
        let op = gaussian_blur_operator(6, 1.3, Boundary::Reflexive).unwrap();
        let y = op.matvec(&[2.5; 36]);
        for v in y {
            assert!((v - 2.5).abs() < 1e-13);
        }
    }

    #[test]
    fn psf_sums_to_one() {
        let op = gaussian_blur_operator(4, 1.0, Boundary::Zero).unwrap();
        assert!((op.psf().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(op.radius(), 3);
    }

    #[test]
    fn matches_explicit_convolution_matrix() {
        // dense oracle: entry (out, src) = psf at offset (out - src), zero outside
        let side = 4usize;
        let sigma = 1.0;
        let r = 3isize;
        let mut raw = [[0.0f64; 7]; 7];
        let mut total = 0.0;
        for p in -r..=r {
            for q in -r..=r {
                let v = (-((p * p + q * q) as f64) / (2.0 * sigma * sigma)).exp();
                raw[(p + r) as usize][(q + r) as usize] = v;
                total += v;
            }
        }
        let op = gaussian_blur_operator(side, sigma, Boundary::Zero).unwrap();
        let dense = assemble_dense(&op);
        for oi in 0..side as isize {
            for oj in 0..side as isize {
                for si in 0..side as isize {
                    for sj in 0..side as isize {
                        let (p, q) = (oi - si, oj - sj);
                        let expected = if p.abs() <= r && q.abs() <= r {
                            raw[(p + r) as usize][(q + r) as usize] / total
                        } else {
                            0.0
                        };
                        let got = dense[((oi * 4 + oj) as usize, (si * 4 + sj) as usize)];
                        assert!((got - expected).abs() < 1e-15);
                    }
                }
            }
        }
        // symmetric PSF with zero boundary: A is symmetric
        assert!((&dense - dense.transpose()).amax() < 1e-16);
    }

    #[test]
    fn transpose_matches_dense_transpose_for_both_boundaries() {
        for boundary in [Boundary::Zero, Boundary::Reflexive] {
            let op = GaussianBlur::new(5, 0.8, 2, boundary).unwrap();
            let dense = assemble_dense(&op);
            let y: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let got = op.rmatvec(&y).unwrap();
            let want = dense.transpose() * nalgebra::DVector::from_column_slice(&y);
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gaussian_blur_operator(1, 1.0, Boundary::Zero).is_err());
        assert!(gaussian_blur_operator(4, 0.0, Boundary::Zero).is_err());
        assert!(gaussian_blur_operator(4, f64::NAN, Boundary::Zero).is_err());
    }
}
