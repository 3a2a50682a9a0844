use std::fs;

use snrmom::generators::gen_gaussian_design;
use snrmom::io::{parse_group_spec, parse_matrix, parse_scenario_str};
use snrmom::rng::from_seed;
use snrmom::{
    parse_scenario, read_matrix, run_estimate, write_matrix, DesignCov, EstimateOptions, HeteroCorrection, Matrix,
    ModelKind, NoiseSpec, SnrError,
};

#[test]
fn matrix_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut m = gen_gaussian_design(50, 7, None, &mut from_seed(1)).unwrap();
    m[(0, 0)] = 1e-300;
    m[(1, 1)] = -123456789.125;
    m[(2, 2)] = f64::MIN_POSITIVE;
    write_matrix(&path, &m).unwrap();
    let back = read_matrix(&path).unwrap();
    assert_eq!(back.shape(), (50, 7));
    for (a, b) in m.iter().zip(back.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn parse_errors_locate_the_token() {
    match parse_matrix("1,2\n3,abc\n") {
        Err(SnrError::Parse { line, column, token }) => {
            assert_eq!((line, column), (2, 2));
            assert_eq!(token, "abc");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(parse_matrix("1,2\n3\n"), Err(SnrError::RaggedRows { line: 2, expected: 2, found: 1 })));
    assert!(parse_matrix("\n\n").is_err());
    assert_eq!(parse_matrix("1, 2\n\n3,4\n").unwrap(), Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
}

#[test]
fn scenario_files_in_repository_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "conf") {
            let cfg = parse_scenario(&path).unwrap();
            assert_eq!(cfg.reps, 500, "{}", path.display());
            assert!((cfg.truth_r2() - 2.0 / 3.0).abs() < 1e-12);
            count += 1;
        }
    }
    assert_eq!(count, 6);
}

#[test]
fn scenario_id_defaults_to_file_stem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("my-run.conf");
    fs::write(
        &path,
        "model = random\nn = 200\np = 100\nq = 3\ndesign = snp\ndesign_cov = ar1(0.5)\ncoeff = random\n\
         rho2 = 1\nsigma2 = 0.5\nnoise = scalar\nhetero_correction = scalar\nreps = 10\nseed = 4\n",
    )
    .unwrap();
    let cfg = parse_scenario(&path).unwrap();
    assert_eq!(cfg.id, "my-run");
    assert_eq!(cfg.design_cov, DesignCov::Ar1(0.5));
    assert_eq!(cfg.noise, NoiseSpec::ScalarHalfNormal);
    assert_eq!(cfg.hetero_correction, HeteroCorrection::Scalar);
    assert_eq!(cfg.level, 0.95);
}

#[test]
fn scenario_rejects_bad_values() {
    let base = "model = fixed\nn = 20\np = 10\nq = 2\ndesign = gaussian\ncoeff = sparse\nrho2 = 1\n\
                sigma2 = 0.5\nnoise = homoskedastic\nreps = 5\nseed = 1\n";
    assert!(parse_scenario_str(base).is_ok());
    for (bad, key) in [
        ("coeff = sparse", "coeff = random"),
        ("n = 20", "n = twenty"),
        ("noise = homoskedastic", "noise = loud"),
        ("seed = 1", "seed = 1\nseed = 2"),
    ] {
        let text = base.replace(bad, key);
        assert!(matches!(parse_scenario_str(&text), Err(SnrError::Config(_))), "{key}");
    }
}

#[test]
fn group_specs() {
    assert_eq!(parse_group_spec("3", 10).unwrap(), vec![4, 3, 3]);
    assert_eq!(parse_group_spec("2,8", 10).unwrap(), vec![2, 8]);
    assert!(parse_group_spec("2,7", 10).is_err());
    assert!(parse_group_spec("0", 10).is_err());
}

#[test]
fn estimate_runs_end_to_end_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = from_seed(2);
    let x = gen_gaussian_design(120, 40, None, &mut rng).unwrap();
    let b = gen_gaussian_design(40, 3, None, &mut rng).unwrap() / 40f64.sqrt();
    let y = &x * b + gen_gaussian_design(120, 3, None, &mut rng).unwrap();
    write_matrix(dir.path().join("x.csv"), &x).unwrap();
    write_matrix(dir.path().join("y.csv"), &y).unwrap();
    let xr = read_matrix(dir.path().join("x.csv")).unwrap();
    let yr = read_matrix(dir.path().join("y.csv")).unwrap();
    for model in [ModelKind::Fixed, ModelKind::Random] {
        let opts = EstimateOptions { model, ..Default::default() };
        assert_eq!(run_estimate(&x, &y, &opts).unwrap(), run_estimate(&xr, &yr, &opts).unwrap());
    }
    let sub = EstimateOptions {
        model: ModelKind::Random,
        hetero: HeteroCorrection::Subgroup,
        groups: Some(vec![60, 60]),
        ..Default::default()
    };
    let r = run_estimate(&x, &y, &sub).unwrap();
    assert!(r.hetero.unwrap().kappa_tot_hat >= 0.0);
    let exact = EstimateOptions { exact_se: true, ..Default::default() };
    assert!(run_estimate(&x, &y, &exact).unwrap().se > 0.0);
}
