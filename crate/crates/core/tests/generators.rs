use snrmom::generators::{
    eta_of, gen_coeff_dense, gen_coeff_random, gen_gaussian_design, gen_noise, gen_snp_design, gen_t7_design,
    sample_half_normal_nu, snp_genotypes,
};
use snrmom::matrix_stats::{ar1_matrix, gram};
use snrmom::rng::from_seed;
use snrmom::{
    simulate_dataset, CoeffKind, DesignCov, DesignKind, HeteroCorrection, Matrix, ModelKind, NoiseModel, NoiseSpec,
    ScenarioConfig, SymMatrix,
};

fn sample_cov(x: &Matrix) -> Matrix {
    gram(x).into_matrix() / x.nrows() as f64
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).abs().max()
}

fn config(model: ModelKind, coeff: CoeffKind, noise: NoiseSpec) -> ScenarioConfig {
    ScenarioConfig {
        id: "test".into(),
        model,
        n: 80,
        p: 40,
        q: 4,
        design: DesignKind::Gaussian,
        design_cov: DesignCov::Identity,
        coeff,
        rho2: 1.0,
        sigma2: 0.5,
        noise,
        hetero_correction: HeteroCorrection::None,
        groups: None,
        reps: 1,
        level: 0.95,
        master_seed: 99,
    }
}

#[test]
fn gaussian_design_moments() {
    let x = gen_gaussian_design(10_000, 5, None, &mut from_seed(1)).unwrap();
    for col in x.column_iter() {
        assert!(col.mean().abs() < 4.0 / 100.0);
    }
    let sigma = ar1_matrix(3, 0.5).unwrap();
    let x = gen_gaussian_design(100_000, 3, Some(&sigma), &mut from_seed(2)).unwrap();
    assert!(max_abs_diff(&sample_cov(&x), sigma.as_matrix()) < 0.02);
    assert_eq!(x, gen_gaussian_design(100_000, 3, Some(&sigma), &mut from_seed(2)).unwrap());
}

#[test]
fn indefinite_design_covariance_rejected() {
    let bad = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 2.0 });
    assert!(gen_gaussian_design(5, 2, Some(&bad), &mut from_seed(1)).is_err());
}

#[test]
fn snp_frequencies_at_half() {
    let g = snp_genotypes(100_000, 0.5, &mut from_seed(3));
    let freq = |v: u8| g.iter().filter(|&&x| x == v).count() as f64 / 1e5;
    assert!((freq(0) - 0.25).abs() < 0.01);
    assert!((freq(1) - 0.5).abs() < 0.01);
    assert!((freq(2) - 0.25).abs() < 0.01);
    let a = gen_snp_design(50, 4, &mut from_seed(4)).unwrap();
    assert_eq!(a, gen_snp_design(50, 4, &mut from_seed(4)).unwrap());
}

#[test]
fn t7_variance_and_kurtosis() {
    let z = gen_t7_design(1_000_000, 1, None, &mut from_seed(5)).unwrap();
    let n = z.len() as f64;
    let mean = z.mean();
    let m2 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = z.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    assert!((m2 - 1.0).abs() < 0.01, "variance {m2}");
    assert!(m4 / (m2 * m2) > 3.0);
    assert_eq!(z, gen_t7_design(1_000_000, 1, None, &mut from_seed(5)).unwrap());
}

#[test]
fn dense_coefficients() {
    let sb = ar1_matrix(4, 0.8).unwrap();
    let b = gen_coeff_dense(30, 4, &sb, 1.7, &mut from_seed(6)).unwrap();
    assert!((b.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.7).abs() < 1e-12);
    assert_eq!(b, gen_coeff_dense(30, 4, &sb, 1.7, &mut from_seed(6)).unwrap());

    // Before rescaling: E[tr(BᵀB)/q] = tr(Σ_b)/q = 1.
    let mut rng = from_seed(7);
    let draws: Vec<f64> = (0..1000)
        .map(|_| gen_coeff_random(30, 4, &sb, &mut rng).unwrap().iter().map(|v| v * v).sum::<f64>() / 4.0)
        .collect();
    let mean = draws.iter().sum::<f64>() / 1000.0;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd / 1000f64.sqrt(), "{mean}");
}

#[test]
fn random_coefficients_wishart_mean() {
    let sb = ar1_matrix(3, 0.8).unwrap();
    let mut rng = from_seed(8);
    let k = 10_000;
    let mut sum = Matrix::zeros(3, 3);
    let mut sumsq = Matrix::zeros(3, 3);
    for _ in 0..k {
        let btb = gram(&gen_coeff_random(50, 3, &sb, &mut rng).unwrap()).into_matrix();
        sumsq += btb.component_mul(&btb);
        sum += btb;
    }
    let kf = k as f64;
    for i in 0..3 {
        for j in 0..3 {
            let m = sum[(i, j)] / kf;
            let se = ((sumsq[(i, j)] / kf - m * m) / kf).sqrt();
            assert!((m - sb[(i, j)]).abs() < 4.0 * se, "({i},{j}) {m} vs {}", sb[(i, j)]);
        }
    }
    let zero = gen_coeff_random(5, 2, &SymMatrix::zeros(2), &mut rng).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));
}

#[test]
fn homoskedastic_noise_covariance() {
    let model = NoiseModel::Homoskedastic { sigma_e: SymMatrix::identity(3) };
    let e = gen_noise(100_000, &model, &mut from_seed(9)).unwrap();
    assert!(max_abs_diff(&sample_cov(&e), &Matrix::identity(3, 3)) < 0.02);
}

#[test]
fn unit_nu_matches_homoskedastic() {
    let s = ar1_matrix(3, 0.4).unwrap();
    let homo = gen_noise(50, &NoiseModel::Homoskedastic { sigma_e: s.clone() }, &mut from_seed(10)).unwrap();
    let unit = NoiseModel::ScalarHetero { sigma_e: s, nu: vec![1.0; 50] };
    assert_eq!(homo, gen_noise(50, &unit, &mut from_seed(10)).unwrap());
    assert_eq!(eta_of(&[1.0; 50]), 0.0);
    assert_eq!(unit.kappa_tot(50).unwrap(), 0.0);
}

#[test]
fn half_normal_eta() {
    let nu = sample_half_normal_nu(100_000, &mut from_seed(11));
    let eta = eta_of(&nu);
    assert!((eta - (std::f64::consts::FRAC_PI_2 - 1.0)).abs() < 0.03, "{eta}");
}

#[test]
fn scalar_noise_row_scales() {
    // Σᵢ = νᵢ I: rows with large ν have proportionally larger variance.
    let nu: Vec<f64> = (0..20_000).map(|i| if i % 2 == 0 { 0.5 } else { 1.5 }).collect();
    let model = NoiseModel::ScalarHetero { sigma_e: SymMatrix::identity(2), nu };
    let e = gen_noise(20_000, &model, &mut from_seed(12)).unwrap();
    let var = |parity: usize| {
        let rows: Vec<f64> = (0..20_000).filter(|i| i % 2 == parity).map(|i| e[(i, 0)] * e[(i, 0)]).collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    assert!((var(0) - 0.5).abs() < 0.03);
    assert!((var(1) - 1.5).abs() < 0.08);
}

#[test]
fn simulate_dataset_contracts() {
    let cfg = config(ModelKind::Fixed, CoeffKind::Sparse, NoiseSpec::Homoskedastic);
    let a = simulate_dataset(&cfg, 3, 42).unwrap();
    let b = simulate_dataset(&cfg, 3, 42).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert!((a.truth.r2 - 2.0 / 3.0).abs() < 1e-12);
    let other = simulate_dataset(&cfg, 4, 42).unwrap();
    assert_ne!(a.x, other.x);

    let zero = ScenarioConfig { sigma2: 0.0, ..cfg };
    let d = simulate_dataset(&zero, 0, 42).unwrap();
    assert_eq!(d.y, &d.x * &d.truth.b);
}

#[test]
fn frozen_structure_and_truths() {
    let cfg = config(ModelKind::Fixed, CoeffKind::DenseFixed, NoiseSpec::Homoskedastic);
    let a = simulate_dataset(&cfg, 0, 5).unwrap();
    let b = simulate_dataset(&cfg, 1, 5).unwrap();
    assert_eq!(a.truth.b, b.truth.b);
    assert_eq!(a.truth.sigma_e_bar, b.truth.sigma_e_bar);
    assert!((a.truth.rho2 - a.truth.b.iter().map(|v| v * v).sum::<f64>() / 4.0).abs() < 1e-10);

    let cfg = config(ModelKind::Random, CoeffKind::Random, NoiseSpec::ScalarHalfNormal);
    let a = simulate_dataset(&cfg, 0, 5).unwrap();
    let b = simulate_dataset(&cfg, 1, 5).unwrap();
    assert_ne!(a.truth.b, b.truth.b);
    let sb = a.truth.sigma_b.as_ref().unwrap();
    assert!((a.truth.rho2 - sb.trace() / 4.0).abs() < 1e-10);
    assert!((a.truth.sigma2 - 0.5).abs() < 1e-10);
    let direct = a.truth.noise.kappa_tot_direct(80).unwrap();
    assert!((a.truth.kappa_tot - direct).abs() < 1e-10 * direct);
    assert!(a.truth.kappa_tot > 0.0);

    let groups = NoiseSpec::Subgroup { sizes: vec![30, 50], eta_enabled: false };
    let cfg = config(ModelKind::Random, CoeffKind::Random, groups);
    let d = simulate_dataset(&cfg, 0, 5).unwrap();
    assert!((d.truth.sigma_e_bar.trace() / 4.0 - 0.5).abs() < 1e-10);
    let direct = d.truth.noise.kappa_tot_direct(80).unwrap();
    assert!((d.truth.kappa_tot - direct).abs() < 1e-10 * direct.max(1e-12));
}

#[test]
fn ar1_design_in_scenarios() {
    let cfg = ScenarioConfig {
        design: DesignKind::Snp,
        design_cov: DesignCov::Ar1(0.5),
        ..config(ModelKind::Random, CoeffKind::Random, NoiseSpec::Homoskedastic)
    };
    let d = simulate_dataset(&cfg, 0, 1).unwrap();
    assert_eq!(d.x.shape(), (80, 40));
    let t7 = ScenarioConfig { design: DesignKind::T7, ..cfg };
    assert_eq!(simulate_dataset(&t7, 0, 1).unwrap().x.shape(), (80, 40));
}
