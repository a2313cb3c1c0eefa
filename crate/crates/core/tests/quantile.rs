use cqdr::quantile::{
    build_multi_index_set, check_loss, extract_gradient, fit_local_quantile, KernelSpec, LocalFitSpec, QuantileProblem,
    SolverConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest objective over all vertices of the problem: coefficient vectors
/// interpolating `d` of the rows exactly. A weighted check-loss minimum is
/// always attained at one of them.
fn vertex_minimum(design: &[f64], y: &[f64], w: &[f64], d: usize, tau: f64) -> f64 {
    let n = y.len();
    let objective = |c: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let fit: f64 = (0..d).map(|k| design[i * d + k] * c[k]).sum();
                w[i] * check_loss(y[i] - fit, tau)
            })
            .sum()
    };
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..d).collect();
    loop {
        let a = DMatrix::from_fn(d, d, |r, k| design[subset[r] * d + k]);
        let b = nalgebra::DVector::from_iterator(d, subset.iter().map(|&i| y[i]));
        if a.determinant().abs() > 1e-10 {
            if let Some(c) = a.lu().solve(&b) {
                best = best.min(objective(c.as_slice()));
            }
        }
        // Next subset in lexicographic order.
        let mut k = d;
        while k > 0 && subset[k - 1] == n - d + k - 1 {
            k -= 1;
        }
        if k == 0 {
            break;
        }
        subset[k - 1] += 1;
        for m in k..d {
            subset[m] = subset[m - 1] + 1;
        }
    }
    best
}

proptest! {
    #[test]
    fn check_loss_nonnegative_and_convex(s in -50.0..50.0f64, t in -50.0..50.0f64, lam in 0.0..1.0f64, tau in 0.01..0.99f64) {
        prop_assert!(check_loss(s, tau) >= 0.0);
        prop_assert_eq!(check_loss(0.0, tau), 0.0);
        let mid = check_loss(lam * s + (1.0 - lam) * t, tau);
        let chord = lam * check_loss(s, tau) + (1.0 - lam) * check_loss(t, tau);
        prop_assert!(mid <= chord + 1e-12 * (1.0 + chord));
    }

    #[test]
    fn check_loss_branches(s in 0.0..100.0f64, tau in 0.01..0.99f64) {
        prop_assert!((check_loss(s, tau) - 2.0 * tau * s).abs() <= 1e-12 * (1.0 + s));
        prop_assert!((check_loss(-s, tau) - 2.0 * (1.0 - tau) * s).abs() <= 1e-12 * (1.0 + s));
    }

    /// General small problems against exhaustive vertex enumeration.
    #[test]
    fn solver_matches_vertex_enumeration(seed in 0u64..10_000, n in 3usize..9, d in 1usize..4, tau in 0.05..0.95f64) {
        prop_assume!(n > d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design: Vec<f64> = (0..n * d).map(|k| if k % d == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) }).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sol = QuantileProblem::new(&design, &y, &w, d, tau).unwrap().solve(None, &SolverConfig::default()).unwrap();
        let oracle = vertex_minimum(&design, &y, &w, d, tau);
        prop_assert!((sol.objective - oracle).abs() <= 1e-9 * (1.0 + oracle), "solver {} oracle {}", sol.objective, oracle);
    }

    #[test]
    fn weight_scaling_keeps_minimizer(seed in 0u64..10_000, scale in 1.0..100.0f64, tau in 0.1..0.9f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let x: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] - 0.5 * x[(i, 1)] + rng.gen_range(-0.3..0.3)).collect();
        let set = build_multi_index_set(2, 1);
        let spec = |h_kernel| LocalFitSpec {
            tau, h_design: 1.0, h_kernel, set: &set, kernel_directions: None,
            kernel: KernelSpec::UNIFORM, solver: SolverConfig::default(),
        };
        // A uniform kernel at bandwidth h has weight 1/h; rescaling h with
        // every point inside the window rescales all weights together.
        let s = scale;
        let a = fit_local_quantile(&x, &y, &[0.0, 0.0], &spec(2.0)).unwrap();
        let b = fit_local_quantile(&x, &y, &[0.0, 0.0], &spec(2.0 * s)).unwrap();
        let ratio = a.objective / b.objective;
        prop_assert!((ratio - s).abs() <= 1e-8 * ratio);
        // The loss is piecewise linear, so a non-unique minimizer can show up
        // as a different vertex; compare objectives at the other argmin.
        let prob_obj = |c: &[f64]| -> f64 {
            (0..n).map(|i| check_loss(y[i] - c[0] - c[1] * x[(i, 0)] - c[2] * x[(i, 1)], tau)).sum::<f64>()
        };
        let oa = prob_obj(&a.coeffs);
        let ob = prob_obj(&b.coeffs);
        prop_assert!((oa - ob).abs() <= 1e-9 * (1.0 + oa));
    }

    #[test]
    fn translation_equivariance(seed in 0u64..10_000, shift in -100.0..100.0f64, tau in 0.1..0.9f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let x: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| (2.0 * x[(i, 0)]).sin() + rng.gen_range(-0.5..0.5f64)).collect();
        let y2: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let set = build_multi_index_set(1, 1);
        let spec = LocalFitSpec {
            tau, h_design: 0.8, h_kernel: 0.8, set: &set, kernel_directions: None,
            kernel: KernelSpec::EPANECHNIKOV, solver: SolverConfig::default(),
        };
        let a = fit_local_quantile(&x, &y, &[0.1], &spec).unwrap();
        let b = fit_local_quantile(&x, &y2, &[0.1], &spec).unwrap();
        prop_assert!((b.coeffs[0] - a.coeffs[0] - shift).abs() <= 1e-8 * (1.0 + shift.abs()));
        prop_assert!((b.coeffs[1] - a.coeffs[1]).abs() <= 1e-8);
    }
}

#[test]
fn local_constant_windows_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = build_multi_index_set(1, 0);
    for _ in 0..200 {
        let n = rng.gen_range(1..=7);
        let x: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let tau = rng.gen_range(0.05..0.95);
        let spec = LocalFitSpec {
            tau,
            h_design: 1.5,
            h_kernel: 1.5,
            set: &set,
            kernel_directions: None,
            kernel: KernelSpec::EPANECHNIKOV,
            solver: SolverConfig::default(),
        };
        let fit = fit_local_quantile(&x, &y, &[0.0], &spec).unwrap();
        let w: Vec<f64> = (0..n).map(|i| 0.75 * (1.0 - (x[(i, 0)] / 1.5).powi(2)) / 1.5).collect();
        let brute = y
            .iter()
            .map(|&c| (0..n).map(|i| w[i] * check_loss(y[i] - c, tau)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!((fit.objective - brute).abs() <= 1e-9, "{} vs {}", fit.objective, brute);
    }
}

#[test]
fn exact_linear_data_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let p = rng.gen_range(1..=3);
        let n = 30;
        let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| 0.7 + (0..p).map(|k| beta[k] * x[(i, k)]).sum::<f64>()).collect();
        let set = build_multi_index_set(p, 1);
        let h = rng.gen_range(0.5..2.0);
        let spec = LocalFitSpec {
            tau: rng.gen_range(0.1..0.9),
            h_design: h,
            h_kernel: 2.5,
            set: &set,
            kernel_directions: None,
            kernel: KernelSpec::EPANECHNIKOV,
            solver: SolverConfig::default(),
        };
        let center: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let fit = fit_local_quantile(&x, &y, &center, &spec).unwrap();
        let g = extract_gradient(&fit, &set).unwrap();
        for k in 0..p {
            assert!((g[k] - beta[k]).abs() <= 1e-6, "{g:?} vs {beta:?}");
        }
    }
}
