use nalgebra::DVector;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use snrmom::generators::gen_gaussian_design;
use snrmom::matrix_stats::{ar1_matrix, gram};
use snrmom::random_effects::{heteroskedastic_components, homoskedastic_components};
use snrmom::rng::from_seed;
use snrmom::{estimate_fixed, estimate_random, spectral_moments, Matrix, SymMatrix};

fn rel_close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    let scale = b.abs().max().max(1e-300);
    (a - b).abs().max() <= tol * scale
}

fn data(seed: u64, n: usize, p: usize, q: usize) -> (Matrix, Matrix) {
    let mut rng = from_seed(seed);
    let x = gen_gaussian_design(n, p, None, &mut rng).unwrap();
    let b = gen_gaussian_design(p, q, None, &mut rng).unwrap() / (p as f64).sqrt();
    let e = gen_gaussian_design(n, q, None, &mut rng).unwrap();
    (x.clone(), x * b + e)
}

fn shape() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 4usize..40, 1usize..30, 1usize..5)
}

fn rows_permuted(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)])
}

/// `I − 2vvᵀ/‖v‖²`
fn householder(dim: usize, seed: u64) -> Matrix {
    let mut rng = from_seed(seed);
    let v = gen_gaussian_design(dim, 1, None, &mut rng).unwrap();
    let v = DVector::from_column_slice(v.as_slice());
    Matrix::identity(dim, dim) - (&v * v.transpose()) * (2.0 / v.norm_squared())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_additivity((seed, n, p, q) in shape()) {
        let (x, y) = data(seed, n, p, q);
        let est = estimate_fixed(&x, &y).unwrap();
        let lhs = est.wb_hat.as_matrix() + est.sigma_e_hat.as_matrix();
        prop_assert!(rel_close(&lhs, &(y.transpose() * &y / n as f64), 1e-10));
        prop_assert!((est.rho2 - est.wb_hat.trace() / q as f64).abs() <= 1e-12 * est.rho2.abs().max(1.0));
        prop_assert!((est.r2 - est.rho2 / (est.rho2 + est.sigma2)).abs() <= 1e-12);
    }

    #[test]
    fn random_additivity((seed, n, p, q) in shape()) {
        let (x, y) = data(seed, n, p, q);
        prop_assume!(n != p);
        if let Ok(est) = estimate_random(&x, &y) {
            let lhs = est.sigma_b_hat.as_matrix() * est.moments.g1 + est.sigma_e_hat.as_matrix();
            prop_assert!(rel_close(&lhs, &(y.transpose() * &y / n as f64), 1e-10));
        }
    }

    #[test]
    fn fixed_scale_equivariance((seed, n, p, q) in shape(), ci in 0usize..3) {
        let c = [0.1, 3.0, 10.0][ci];
        let (x, y) = data(seed, n, p, q);
        let a = estimate_fixed(&x, &y).unwrap();
        let b = estimate_fixed(&x, &(&y * c)).unwrap();
        prop_assert!(rel_close(b.wb_hat.as_matrix(), &(a.wb_hat.as_matrix() * (c * c)), 1e-12));
        prop_assert!(rel_close(b.sigma_e_hat.as_matrix(), &(a.sigma_e_hat.as_matrix() * (c * c)), 1e-12));
        prop_assert!((b.r2 - a.r2).abs() <= 1e-12 * a.r2.abs().max(1.0));
    }

    #[test]
    fn random_scale_equivariance((seed, n, p, q) in shape(), ci in 0usize..3) {
        let c = [0.1, 3.0, 10.0][ci];
        let (x, y) = data(seed, n, p, q);
        prop_assume!(n != p);
        if let (Ok(a), Ok(b)) = (estimate_random(&x, &y), estimate_random(&x, &(&y * c))) {
            prop_assert!(rel_close(b.sigma_e_hat.as_matrix(), &(a.sigma_e_hat.as_matrix() * (c * c)), 1e-10));
            prop_assert!((b.r2 - a.r2).abs() <= 1e-10 * a.r2.abs().max(1.0));
        }
    }

    #[test]
    fn joint_row_permutation_invariance((seed, n, p, q) in shape()) {
        let (x, y) = data(seed, n, p, q);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut from_seed(seed ^ 0x5eed));
        let (xp, yp) = (rows_permuted(&x, &perm), rows_permuted(&y, &perm));
        let a = estimate_fixed(&x, &y).unwrap();
        let b = estimate_fixed(&xp, &yp).unwrap();
        prop_assert!(rel_close(b.wb_hat.as_matrix(), a.wb_hat.as_matrix(), 1e-12));
        prop_assert!((b.r2 - a.r2).abs() <= 1e-12 * a.r2.abs().max(1.0));
        if let (Ok(a), Ok(b)) = (estimate_random(&x, &y), estimate_random(&xp, &yp)) {
            prop_assert!((b.r2 - a.r2).abs() <= 1e-10 * a.r2.abs().max(1.0));
        }
    }

    #[test]
    fn spectral_moments_rotation_invariant((seed, n, p, _q) in shape()) {
        let (x, _) = data(seed, n, p, 1);
        let m = spectral_moments(&x);
        for rotated in [householder(n, seed ^ 1) * &x, &x * householder(p, seed ^ 2)] {
            let r = spectral_moments(&rotated);
            for (a, b) in [(m.g1, r.g1), (m.g2, r.g2), (m.g3, r.g3), (m.g4, r.g4)] {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn spectral_moments_match_direct_traces((seed, n, p, _q) in shape()) {
        let (x, _) = data(seed, n, p, 1);
        let m = spectral_moments(&x);
        let s = gram(&x).into_matrix() / n as f64;
        let mut pow = s.clone();
        for (k, g) in [m.g1, m.g2, m.g3, m.g4].into_iter().enumerate() {
            let direct = pow.trace() / p as f64;
            prop_assert!((g - direct).abs() <= 1e-9 * direct.abs().max(1.0), "g{} {} vs {}", k + 1, g, direct);
            pow = &pow * &s;
        }
    }

    #[test]
    fn zero_kappa_reduces_exactly(seed in any::<u64>(), q in 1usize..6) {
        let (x, _) = data(seed, 60, 25, 1);
        let m = spectral_moments(&x);
        let sb = ar1_matrix(q, 0.8).unwrap();
        let se = ar1_matrix(q, 0.3).unwrap().scale(0.5);
        let homo = homoskedastic_components(&m, &sb, &se, q).unwrap();
        let het = heteroskedastic_components(&m, &sb, &se, q, 0.0).unwrap();
        prop_assert!((homo.v11 - het.v11).abs() <= 1e-15 * homo.v11.abs());
        prop_assert_eq!(homo.v12, het.v12);
        prop_assert_eq!(homo.v22, het.v22);
    }

    #[test]
    fn response_rotation_leaves_r2((seed, n, p, q) in shape()) {
        let (x, y) = data(seed, n, p, q);
        let h = householder(q, seed ^ 3);
        let a = estimate_fixed(&x, &y).unwrap();
        let b = estimate_fixed(&x, &(&y * &h)).unwrap();
        let rotated = h.transpose() * a.wb_hat.as_matrix() * &h;
        prop_assert!(rel_close(b.wb_hat.as_matrix(), &rotated, 1e-10));
        prop_assert!((b.r2 - a.r2).abs() <= 1e-10 * a.r2.abs().max(1.0));
    }
}

#[test]
fn sym_matrix_serde_round_trip() {
    let s = ar1_matrix(3, 0.5).unwrap();
    let json = serde_json::to_string(&s).unwrap();
    let back: SymMatrix = serde_json::from_str(&json).unwrap();
    assert_eq!(s, back);
}
