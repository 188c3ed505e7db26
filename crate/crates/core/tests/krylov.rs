use augkrylov_core::arnoldi::AfArnoldi;
use augkrylov_core::basis::{columns_to_dense, Decomposition, KrylovConfig};
use augkrylov_core::golub_kahan::AfGolubKahan;
use augkrylov_core::irls::DiagonalWeights;
use augkrylov_core::operators::{
    build_matern_covariance, gaussian_blur_operator, grid_coords_1d, grid_coords_2d, Boundary, DenseMatrix, DenseSpd,
    DiagonalSpd, Matern, MaternSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dense(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix {
    let s = 1.0 / (m as f64).sqrt();
    let data: Vec<f64> = gaussian(rng, m * n).iter().map(|x| x * s).collect();
    DenseMatrix::from_row_slice(m, n, &data)
}

fn matern_q(n: usize) -> DenseSpd {
    build_matern_covariance(&MaternSpec::new(Matern::new(1.5, 0.2, 1.0).unwrap(), grid_coords_1d(n))).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> DiagonalWeights {
    DiagonalWeights::from_diagonal((0..n).map(|_| rng.random_range(0.2..5.0)).collect(), 1e-3).unwrap()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(f64::MIN_POSITIVE)
}

fn orth_gap(v: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v - DMatrix::identity(v.ncols(), v.ncols())).amax()
}

/// Sine of the largest principal angle between the column spans.
fn span_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let resid = &qa - &qb * (qb.transpose() * &qa);
    resid.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn krylov(op: &DMatrix<f64>, start: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let mut cols = vec![start.clone()];
    for _ in 1..k {
        let next = op * cols.last().unwrap();
        cols.push(next.normalize());
    }
    DMatrix::from_columns(&cols)
}

#[test]
fn arnoldi_identities_hold_after_every_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [12, 30, 64] {
        let a = dense(&mut rng, n, n);
        let q = matern_q(n);
        let rinv = DiagonalSpd::new((0..n).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap();
        let b = gaussian(&mut rng, n);
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(rinv.diagonal()));
        let mut d = AfArnoldi::init(&a, &q, &rinv, &b, KrylovConfig::default()).unwrap();
        for step in 0..16 {
            if step % 2 == 0 {
                d.expand_q_column().unwrap();
            } else {
                d.expand_w_column(&weights(&mut rng, n)).unwrap();
            }
            let z = columns_to_dense(d.zhat(), n);
            let v = columns_to_dense(d.vhat(), n);
            let vt = columns_to_dense(d.vtilde(), n);
            let vk = columns_to_dense(d.smooth_basis(), n);
            assert!(rel(&(a.matrix() * &z), &(&v * d.hhat())) <= 1e-10, "n={n} step={step}");
            assert!(rel(&vk, &(&vt * d.htilde())) <= 1e-10);
            assert!(orth_gap(&v, &r) <= 1e-10);
            assert!(orth_gap(&vt, q.matrix()) <= 1e-10);
        }
    }
}

#[test]
fn golub_kahan_identities_hold_after_every_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (m, n) in [(12, 12), (40, 25), (64, 64)] {
        let a = dense(&mut rng, m, n);
        let q = matern_q(n);
        let rinv = DiagonalSpd::new((0..m).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap();
        let b = gaussian(&mut rng, m);
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(rinv.diagonal()));
        let mut d = AfGolubKahan::init(&a, &q, &rinv, &b, KrylovConfig::default()).unwrap();
        for step in 0..8 {
            d.expand(&weights(&mut rng, n)).unwrap();
            let z = columns_to_dense(d.zhat(), n);
            let u = columns_to_dense(d.uhat(), m);
            let v = columns_to_dense(d.vhat(), n);
            let fed = u.columns(0, d.fed()).into_owned();
            let at = a.matrix().transpose();
            assert!(rel(&(a.matrix() * &z), &(&u * d.mhat())) <= 1e-10, "m={m} step={step}");
            assert!(rel(&(at * &r * &fed), &(&v * d.that())) <= 1e-10);
            assert!(orth_gap(&u, &r) <= 1e-10);
            assert!(orth_gap(&v, q.matrix()) <= 1e-10);
        }
    }
}

#[test]
fn reorthogonalized_blur_basis_stays_orthonormal() {
    let side = 12;
    let n = side * side;
    let a = gaussian_blur_operator(side, 1.5, Boundary::Zero).unwrap();
    let q = build_matern_covariance(&MaternSpec::new(
        Matern::new(2.5, 0.3, 1.0).unwrap(),
        grid_coords_2d(side),
    ))
    .unwrap();
    let rinv = DiagonalSpd::identity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let b = gaussian(&mut rng, n);
    let mut d = AfArnoldi::init(&a, &q, &rinv, &b, KrylovConfig::default()).unwrap();
    for _ in 0..30 {
        d.expand_q_column().unwrap();
        d.expand_w_column(&weights(&mut rng, n)).unwrap();
    }
    let v = columns_to_dense(d.vhat(), n);
    assert!(orth_gap(&v, &DMatrix::identity(n, n)) <= 1e-12);
}

#[test]
fn smooth_arnoldi_with_identity_prior_spans_krylov_space() {
    let n = 30;
    let k = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = dense(&mut rng, n, n);
    let b = gaussian(&mut rng, n);
    let id = DiagonalSpd::identity(n);
    let cfg = KrylovConfig {
        sparse: false,
        ..KrylovConfig::default()
    };
    let mut d = AfArnoldi::init(&a, &id, &id, &b, cfg).unwrap();
    for _ in 0..k {
        d.expand_q_column().unwrap();
    }
    let z = columns_to_dense(d.zhat(), n);
    assert_eq!(z.ncols(), k);
    let kry = krylov(a.matrix(), &DVector::from_column_slice(&b).normalize(), k);
    assert!(span_gap(&z, &kry) <= 1e-8);
}

#[test]
fn smooth_golub_kahan_with_identity_prior_spans_normal_krylov_space() {
    let (m, n) = (40, 25);
    let k = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a = dense(&mut rng, m, n);
    let b = gaussian(&mut rng, m);
    let cfg = KrylovConfig {
        sparse: false,
        ..KrylovConfig::default()
    };
    let (q, rinv) = (DiagonalSpd::identity(n), DiagonalSpd::identity(m));
    let mut d = AfGolubKahan::init(&a, &q, &rinv, &b, cfg).unwrap();
    while d.zhat().len() < k {
        d.expand_smooth().unwrap();
    }
    let z = columns_to_dense(d.zhat(), n);
    let at = a.matrix().transpose();
    let start = (&at * DVector::from_column_slice(&b)).normalize();
    let kry = krylov(&(&at * a.matrix()), &start, k);
    assert!(span_gap(&z, &kry) <= 1e-8);
}

#[test]
fn basis_columns_are_nested() {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let a = dense(&mut rng, n, n);
    let q = matern_q(n);
    let id = DiagonalSpd::identity(n);
    let b = gaussian(&mut rng, n);
    let mut d = AfArnoldi::init(&a, &q, &id, &b, KrylovConfig::default()).unwrap();
    let mut prev: Vec<Vec<f64>> = Vec::new();
    for _ in 0..6 {
        d.expand_q_column().unwrap();
        d.expand_w_column(&weights(&mut rng, n)).unwrap();
        assert_eq!(&d.zhat()[..prev.len()], &prev[..]);
        prev = d.zhat().to_vec();
    }
}
