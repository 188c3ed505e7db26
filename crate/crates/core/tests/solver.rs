use augkrylov_core::problems::{generate, ProblemConfig};
use augkrylov_core::regparam::{RegParams, SelectionMethod};
use augkrylov_core::solver::{solve, Method, SolverConfig, StopReason};
use augkrylov_core::vector::norm2;

const METHODS: [Method; 6] = [
    Method::AfGmres,
    Method::AfLsqr,
    Method::HybridGmres,
    Method::FgmresL1,
    Method::HybridLsqrQ,
    Method::FlsqrL1,
];

fn config(method: Method, sigma: f64) -> SolverConfig {
    let mut cfg = SolverConfig {
        method,
        maxit: 10,
        ..SolverConfig::default()
    };
    cfg.selection.noise_sigma = Some(sigma);
    cfg
}

#[test]
fn problem_generation_is_seeded_and_noise_is_exact() {
    let cfg = ProblemConfig::deblur(12, 1.0, 0.05, 9);
    let a = generate(&cfg, None).unwrap();
    let b = generate(&cfg, None).unwrap();
    assert_eq!(a.b, b.b);
    assert_eq!(a.u_true, b.u_true);
    let other = generate(
        &ProblemConfig {
            seed: 10,
            ..cfg.clone()
        },
        None,
    )
    .unwrap();
    assert_ne!(a.u_true, other.u_true);

    let e: Vec<f64> = a.b.iter().zip(&a.b_exact).map(|(x, y)| x - y).collect();
    let ratio = norm2(&e) / norm2(&a.b_exact);
    assert!((ratio - 0.05).abs() <= 1e-12, "{ratio}");
    for i in 0..a.u_true.len() {
        assert_eq!(a.u_true[i], a.x_true[i] + a.xi_true[i]);
    }
    assert_eq!(a.xi_true.iter().filter(|v| **v != 0.0).count(), cfg.speckles());
}

#[test]
fn every_method_returns_consistent_parts_and_trace() {
    let p = generate(&ProblemConfig::deblur(12, 1.0, 0.02, 4), None).unwrap();
    for method in METHODS {
        let r = solve(
            p.a.as_ref(),
            &p.q,
            &p.rinv,
            &p.b,
            &config(method, p.noise_sigma),
            Some(p.truth()),
        )
        .unwrap();
        assert!(r.iterations() >= 1 && r.iterations() <= 10, "{method:?}");
        for i in 0..r.u.len() {
            assert!((r.u[i] - r.x[i] - r.xi[i]).abs() <= 1e-12 * (1.0 + r.u[i].abs()));
        }
        for (i, t) in r.trace.iter().enumerate() {
            assert_eq!(t.k, i + 1);
            assert!(t.rel_error_u.unwrap().is_finite());
        }
        let counts = r.trace.last().unwrap().counts;
        assert_eq!(counts, r.operator_counts);
        if r.stop_reason == StopReason::Maxit {
            assert_eq!(r.iterations(), 10);
        }
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let p = generate(&ProblemConfig::deblur(12, 1.0, 0.02, 5), None).unwrap();
    for method in [Method::AfGmres, Method::AfLsqr] {
        let mut cfg = config(method, p.noise_sigma);
        cfg.selection.method = SelectionMethod::Wgcv;
        let a = solve(p.a.as_ref(), &p.q, &p.rinv, &p.b, &cfg, Some(p.truth())).unwrap();
        let b = solve(p.a.as_ref(), &p.q, &p.rinv, &p.b, &cfg, Some(p.truth())).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn fixed_parameters_are_reported_per_iteration() {
    let p = generate(&ProblemConfig::random_projection(8, 0.02, 6), None).unwrap();
    let mut cfg = config(Method::AfLsqr, p.noise_sigma);
    cfg.fixed_params = Some(RegParams::new(0.3, 0.05).unwrap());
    cfg.stop_tol = None;
    let r = solve(p.a.as_ref(), &p.q, &p.rinv, &p.b, &cfg, None).unwrap();
    assert_eq!(r.iterations(), 10);
    for t in &r.trace {
        assert_eq!((t.lambda_x, t.lambda_xi), (0.3, 0.05));
        assert!(t.rel_error_u.is_none() && t.selection.is_none());
    }
}

#[test]
fn more_noise_does_not_help() {
    let mut errs = Vec::new();
    for level in [0.005, 0.05] {
        let p = generate(&ProblemConfig::deblur(16, 1.0, level, 8), None).unwrap();
        let mut cfg = config(Method::AfGmres, p.noise_sigma);
        cfg.selection.method = SelectionMethod::Optimal;
        let r = solve(p.a.as_ref(), &p.q, &p.rinv, &p.b, &cfg, Some(p.truth())).unwrap();
        errs.push(r.trace.last().unwrap().rel_error_u.unwrap());
    }
    assert!(errs[0] <= errs[1], "{errs:?}");
}
