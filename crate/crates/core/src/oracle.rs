//! Brute-force Monte Carlo checks of the moment identities and variance
//! formulas the estimators rely on.
//!
//! Draws are split into fixed-size chunks, each with its own derived stream,
//! and chunk sums are reduced in chunk order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnrError};
use crate::fixed_effects::{estimate_fixed, fixed_variance_components};
use crate::generators::{gen_noise, random_rows, NoiseModel, NoiseSpec, Simulator};
use crate::inference::VarianceComponents;
use crate::matrix_stats::{
    ar1_matrix, cross_products, gram, spectral_moments, sym_factor, Matrix, SpectralMoments, SymMatrix,
};
use crate::montecarlo::{CoeffKind, DesignCov, DesignKind, HeteroCorrection, ModelKind, ScenarioConfig};
use crate::random_effects::{heteroskedastic_components, homoskedastic_components, RandomEffectsEstimate};
use crate::rng::{derive, Stream};

/// Default relative tolerance floor.
pub const DEFAULT_REL_TOL: f64 = 0.02;
/// Default relative tolerance for the variance-formula oracle.
pub const VARIANCE_REL_TOL: f64 = 0.15;

const CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    pub mc_se: f64,
    pub draws: usize,
    pub rel_tol: f64,
    /// `|empirical − analytic| ≤ max(4·mc_se, rel_tol·|analytic|)`
    pub pass: bool,
    /// False for control checks that are supposed to fail.
    pub expect_pass: bool,
}

impl OracleReport {
    pub fn evaluate(
        name: impl Into<String>,
        analytic: f64,
        empirical: f64,
        mc_se: f64,
        draws: usize,
        rel_tol: f64,
    ) -> Self {
        let bound = (4.0 * mc_se).max(rel_tol * analytic.abs());
        OracleReport {
            name: name.into(),
            analytic,
            empirical,
            mc_se,
            draws,
            rel_tol,
            pass: (empirical - analytic).abs() <= bound,
            expect_pass: true,
        }
    }

    /// The report matches its expectation.
    pub fn ok(&self) -> bool {
        self.pass == self.expect_pass
    }

    pub fn relative_error(&self) -> f64 {
        (self.empirical - self.analytic) / self.analytic.abs()
    }
}

/// Mean and standard error of the mean of each statistic.
#[derive(Debug, Clone)]
struct MeanStats {
    mean: Vec<f64>,
    se: Vec<f64>,
    count: usize,
}

/// Runs `draws` evaluations of `f`, which writes `k` statistics per draw.
fn mc_means<F>(draws: usize, seed: u64, k: usize, f: F) -> MeanStats
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = derive(seed, c as u64, Stream::Oracle);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut sum = vec![0.0; k];
            let mut sumsq = vec![0.0; k];
            let mut buf = vec![0.0; k];
            for _ in 0..len {
                f(&mut rng, &mut buf);
                for i in 0..k {
                    sum[i] += buf[i];
                    sumsq[i] += buf[i] * buf[i];
                }
            }
            (sum, sumsq)
        })
        .collect();
    let mut sum = vec![0.0; k];
    let mut sumsq = vec![0.0; k];
    for (s, ss) in partial {
        for i in 0..k {
            sum[i] += s[i];
            sumsq[i] += ss[i];
        }
    }
    let nf = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let se = (0..k)
        .map(|i| {
            let var = ((sumsq[i] - nf * mean[i] * mean[i]) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();
    MeanStats { mean, se, count: draws }
}

/// Exact moments of quadratic forms in `W ~ Wishart(n, I_p)`, as integer
/// polynomials in `(n, p)`.
pub mod wishart {
    /// `E[βᵀWβ] = c‖β‖²`
    pub fn quad1(n: i128, _p: i128) -> i128 {
        n
    }

    /// `E[tr(W)·βᵀWβ] = c‖β‖²`
    pub fn trace_quad(n: i128, p: i128) -> i128 {
        p * n * n + 2 * n
    }

    /// `E[βᵀW²β] = c‖β‖²`
    pub fn quad2(n: i128, p: i128) -> i128 {
        n * (n + p + 1)
    }

    /// `E[βᵀW³β] = c‖β‖²`
    pub fn quad3(n: i128, p: i128) -> i128 {
        n * n * n + 3 * n * n * p + 3 * n * n + n * p * p + 3 * n * p + 4 * n
    }

    /// `E[αᵀWα·βᵀWβ] = a(αᵀβ)² + b‖α‖²‖β‖²`, returned as `(a, b)`.
    pub fn cross11(n: i128, _p: i128) -> (i128, i128) {
        (2 * n, n * n)
    }

    /// `E[αᵀWα·βᵀW²β]` as `(a, b)`.
    pub fn cross12(n: i128, p: i128) -> (i128, i128) {
        (4 * n * n + 2 * n * p + 4 * n, n * n * n + n * n * p + n * n + 2 * n)
    }

    /// `E[αᵀW²α·βᵀW²β]` as `(a, b)`.
    pub fn cross22(n: i128, p: i128) -> (i128, i128) {
        (
            8 * n * n * n + 10 * n * n * p + 20 * n * n + 2 * n * p * p + 10 * n * p + 20 * n,
            n * n * n * n
                + 2 * n * n * n * p
                + 2 * n * n * n
                + n * n * p * p
                + 2 * n * n * p
                + 11 * n * n
                + 6 * n * p
                + 10 * n,
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compares Monte Carlo averages over `W = XᵀX`, `X ~ N(0,1)^{n×p}`, with the
/// seven quadratic-form identities.
pub fn wishart_moment_oracle(
    n: usize,
    p: usize,
    alpha: &[f64],
    beta: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<OracleReport>> {
    if draws < 1000 {
        return Err(SnrError::InvalidParameter(format!("wishart oracle needs >= 1000 draws, got {draws}")));
    }
    if alpha.len() != p || beta.len() != p {
        return Err(SnrError::DimensionMismatch {
            context: "alpha/beta length",
            expected: p,
            actual: alpha.len().min(beta.len()),
        });
    }
    if n == 0 || p == 0 {
        return Err(SnrError::InvalidParameter("n and p must be positive".into()));
    }
    let a = nalgebra::DVector::from_column_slice(alpha);
    let b = nalgebra::DVector::from_column_slice(beta);
    let stats = mc_means(draws, seed, 7, |rng, out| {
        let x = Matrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let w = gram(&x).into_matrix();
        let wa = &w * &a;
        let wb = &w * &b;
        let awa = a.dot(&wa);
        let bwb = b.dot(&wb);
        let aw2a = wa.norm_squared();
        let bw2b = wb.norm_squared();
        out[0] = bwb;
        out[1] = w.trace() * bwb;
        out[2] = bw2b;
        out[3] = wb.dot(&(&w * &wb));
        out[4] = awa * bwb;
        out[5] = awa * bw2b;
        out[6] = aw2a * bw2b;
    });

    let (ni, pi) = (n as i128, p as i128);
    let b2 = dot(beta, beta);
    let a2 = dot(alpha, alpha);
    let ab = dot(alpha, beta);
    let cross = |(c1, c2): (i128, i128)| c1 as f64 * ab * ab + c2 as f64 * a2 * b2;
    let analytic = [
        ("E[b'Wb]", wishart::quad1(ni, pi) as f64 * b2),
        ("E[tr(W) b'Wb]", wishart::trace_quad(ni, pi) as f64 * b2),
        ("E[b'W^2b]", wishart::quad2(ni, pi) as f64 * b2),
        ("E[b'W^3b]", wishart::quad3(ni, pi) as f64 * b2),
        ("E[a'Wa b'Wb]", cross(wishart::cross11(ni, pi))),
        ("E[a'Wa b'W^2b]", cross(wishart::cross12(ni, pi))),
        ("E[a'W^2a b'W^2b]", cross(wishart::cross22(ni, pi))),
    ];
    Ok(analytic
        .iter()
        .enumerate()
        .map(|(i, &(name, ana))| {
            OracleReport::evaluate(name, ana, stats.mean[i], stats.se[i], stats.count, DEFAULT_REL_TOL)
        })
        .collect())
}

fn upper_pairs(q: usize) -> Vec<(usize, usize)> {
    (0..q).flat_map(|k| (k..q).map(move |l| (k, l))).collect()
}

/// Conditional on a fixed `X`, compares Monte Carlo means of `YᵀY/n` and
/// `YᵀXXᵀY/n²` over fresh `(B, E)` with their conditional expectations:
/// `Σ̄_e + (tr(S_n)/p)Σ_b` and `(1/n²)Σᵢ‖xᵢ‖²Σᵢ + (tr(S_n²)/p)Σ_b`.
pub fn conditional_moment_oracle(
    x: &Matrix,
    sigma_b: &SymMatrix,
    noise: &NoiseModel,
    draws: usize,
    seed: u64,
) -> Result<Vec<OracleReport>> {
    if draws < 1000 {
        return Err(SnrError::InvalidParameter(format!("conditional oracle needs >= 1000 draws, got {draws}")));
    }
    let (n, p, q) = (x.nrows(), x.ncols(), sigma_b.dim());
    if noise.q() != q {
        return Err(SnrError::DimensionMismatch { context: "noise model dimension", expected: q, actual: noise.q() });
    }
    let row_cov = noise.row_covariances(n)?;
    let lb = sym_factor(sigma_b)?;
    let pairs = upper_pairs(q);
    let m = pairs.len();
    let (nf, pf) = (n as f64, p as f64);
    let xt = x.transpose();

    let stats = mc_means(draws, seed, 2 * m, |rng, out| {
        let b = random_rows(p, q, &lb, rng);
        let e = gen_noise(n, noise, rng).expect("validated noise model");
        let y = x * b + e;
        let yty = y.transpose() * &y;
        let xty = &xt * &y;
        let second = xty.transpose() * &xty;
        for (i, &(k, l)) in pairs.iter().enumerate() {
            out[i] = yty[(k, l)] / nf;
            out[m + i] = second[(k, l)] / (nf * nf);
        }
    });

    let xtx = gram(x);
    let t1 = xtx.trace() / (nf * pf);
    let t2 = xtx.frobenius_sq() / (nf * nf * pf);
    let sbar = noise.sigma_bar(n)?;
    let row_norms: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
    let mut lambda = Matrix::zeros(q, q);
    for (s, w) in row_cov.iter().zip(&row_norms) {
        lambda += s.as_matrix() * *w;
    }
    lambda /= nf * nf;

    let mut reports = Vec::with_capacity(2 * m);
    for (i, &(k, l)) in pairs.iter().enumerate() {
        let ana = sbar[(k, l)] + t1 * sigma_b[(k, l)];
        reports.push(OracleReport::evaluate(
            format!("E[Y'Y/n]({k},{l})"),
            ana,
            stats.mean[i],
            stats.se[i],
            draws,
            DEFAULT_REL_TOL,
        ));
    }
    for (i, &(k, l)) in pairs.iter().enumerate() {
        let ana = lambda[(k, l)] + t2 * sigma_b[(k, l)];
        reports.push(OracleReport::evaluate(
            format!("E[Y'XX'Y/n^2]({k},{l})"),
            ana,
            stats.mean[m + i],
            stats.se[m + i],
            draws,
            DEFAULT_REL_TOL,
        ));
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy)]
struct VarianceDraw {
    sigma2: f64,
    rho2: f64,
    g: [f64; 4],
    kappa: f64,
}

/// Empirical covariance of `√n(σ̂², ρ̂²)` over `reps` replications of `config`
/// against `V` evaluated at the true parameters, with the default 15% band.
pub fn variance_formula_oracle(config: &ScenarioConfig, reps: usize) -> Result<Vec<OracleReport>> {
    variance_formula_oracle_with_tol(config, reps, VARIANCE_REL_TOL)
}

pub fn variance_formula_oracle_with_tol(
    config: &ScenarioConfig,
    reps: usize,
    rel_tol: f64,
) -> Result<Vec<OracleReport>> {
    if reps < 500 {
        return Err(SnrError::InvalidParameter(format!("variance oracle needs >= 500 reps, got {reps}")));
    }
    let cfg = ScenarioConfig { reps, ..config.clone() };
    let sim = Simulator::new(&cfg)?;
    let draws: Vec<VarianceDraw> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = sim.dataset(rep)?;
            let cp = cross_products(&data.x, &data.y)?;
            match cfg.model {
                ModelKind::Fixed => {
                    let est = estimate_fixed(&data.x, &data.y)?;
                    Ok(VarianceDraw { sigma2: est.sigma2, rho2: est.rho2, g: [0.0; 4], kappa: 0.0 })
                }
                ModelKind::Random => {
                    let m = spectral_moments(&data.x);
                    let est = RandomEffectsEstimate::from_parts(&cp, m)?;
                    Ok(VarianceDraw {
                        sigma2: est.sigma2,
                        rho2: est.rho2,
                        g: [m.g1, m.g2, m.g3, m.g4],
                        kappa: data.truth.kappa_tot,
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let truth = sim.dataset(0)?.truth;
    let k = draws.len() as f64;
    let nf = cfg.n as f64;
    let mean = |f: &dyn Fn(&VarianceDraw) -> f64| draws.iter().map(f).sum::<f64>() / k;
    let ms = mean(&|d| d.sigma2);
    let mr = mean(&|d| d.rho2);

    // Per-replication contributions to each covariance entry; their spread gives the MC SE.
    let entry = |f: &dyn Fn(&VarianceDraw) -> f64| -> (f64, f64) {
        let u: Vec<f64> = draws.iter().map(f).collect();
        let mu = u.iter().sum::<f64>() / k;
        let var = u.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1.0);
        (mu * k / (k - 1.0), (var / k).sqrt())
    };
    let e11 = entry(&|d| nf * (d.sigma2 - ms).powi(2));
    let e22 = entry(&|d| nf * (d.rho2 - mr).powi(2));
    let e12 = entry(&|d| nf * (d.sigma2 - ms) * (d.rho2 - mr));

    let q = cfg.q;
    let mut control = None;
    let v: VarianceComponents = match cfg.model {
        ModelKind::Fixed => {
            let sigma = match cfg.design_cov {
                DesignCov::Identity => None,
                DesignCov::Ar1(phi) => Some(ar1_matrix(cfg.p, phi)?.into_matrix()),
            };
            let b = &truth.b;
            let wb = match sigma {
                Some(s) => b.transpose() * s * b,
                None => b.transpose() * b,
            };
            fixed_variance_components(cfg.n, cfg.p, q, &SymMatrix::from_matrix(wb)?, &truth.sigma_e_bar)?
        }
        ModelKind::Random => {
            let g = [0, 1, 2, 3].map(|i| mean(&|d| d.g[i]));
            let m = SpectralMoments::from_moments(g, cfg.n, cfg.p);
            let sb = truth.sigma_b.as_ref().expect("random effects truth");
            let kappa = mean(&|d| d.kappa);
            if kappa > 0.0 {
                control = Some(homoskedastic_components(&m, sb, &truth.sigma_e_bar, q)?.v11);
            }
            heteroskedastic_components(&m, sb, &truth.sigma_e_bar, q, kappa)?
        }
    };

    let count = draws.len();
    let mut out = vec![
        OracleReport::evaluate("V11", v.v11, e11.0, e11.1, count, rel_tol),
        OracleReport::evaluate("V22", v.v22, e22.0, e22.1, count, rel_tol),
        OracleReport::evaluate("V12", v.v12, e12.0, e12.1, count, rel_tol),
    ];
    if let Some(v11) = control {
        out.push(OracleReport {
            expect_pass: false,
            ..OracleReport::evaluate("V11 without kappa_tot", v11, e11.0, e11.1, count, rel_tol)
        });
    }
    Ok(out)
}

/// Standard suites used by the `oracle` command.
pub mod suites {
    use super::*;
    use crate::generators::{make_sigma_e, sample_half_normal_nu};

    pub const WISHART_DRAWS: usize = 200_000;
    pub const CONDITIONAL_DRAWS: usize = 10_000;
    pub const VARIANCE_REPS: usize = 2000;

    pub fn wishart(draws: usize, seed: u64) -> Result<Vec<OracleReport>> {
        let alpha = [1.0, 0.0, 0.0, 0.0, 0.0];
        let beta = [0.6, 0.8, 0.0, 0.0, 0.0];
        wishart_moment_oracle(20, 5, &alpha, &beta, draws, seed)
    }

    /// Fixed Gaussian `X` (n=50, p=20), `Σ_b = ar1(3, 0.8)`, scalar
    /// heterogeneity with known `ν`.
    pub fn conditional(draws: usize, seed: u64) -> Result<Vec<OracleReport>> {
        let (n, p, q) = (50, 20, 3);
        let mut rng = derive(seed, 0, Stream::Structure);
        let x = Matrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let sigma_e = make_sigma_e(q, 0.5, 0.5, &mut rng)?;
        let nu = sample_half_normal_nu(n, &mut rng);
        let noise = NoiseModel::ScalarHetero { sigma_e, nu };
        conditional_moment_oracle(&x, &ar1_matrix(q, 0.8)?, &noise, draws, seed)
    }

    fn base(id: &str, model: ModelKind, n: usize, p: usize, q: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            id: id.into(),
            model,
            n,
            p,
            q,
            design: DesignKind::Gaussian,
            design_cov: DesignCov::Identity,
            coeff: if model == ModelKind::Fixed { CoeffKind::Sparse } else { CoeffKind::Random },
            rho2: 1.0,
            sigma2: 0.5,
            noise: NoiseSpec::Homoskedastic,
            hetero_correction: HeteroCorrection::None,
            groups: None,
            reps: VARIANCE_REPS,
            level: 0.95,
            master_seed: seed,
        }
    }

    pub fn variance_fixed_config(seed: u64) -> ScenarioConfig {
        base("variance-fixed", ModelKind::Fixed, 300, 300, 5, seed)
    }

    pub fn variance_random_config(seed: u64) -> ScenarioConfig {
        base("variance-random", ModelKind::Random, 500, 250, 10, seed)
    }

    /// Scalar heterogeneity strong enough for the `κ_tot` term to matter.
    pub fn variance_hetero_config(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            rho2: 0.2,
            sigma2: 1.0,
            noise: NoiseSpec::ScalarHalfNormal,
            ..base("variance-hetero", ModelKind::Random, 1000, 100, 10, seed)
        }
    }

    pub fn variance(reps: usize, seed: u64) -> Result<Vec<OracleReport>> {
        let mut out = Vec::new();
        for cfg in [variance_fixed_config(seed), variance_random_config(seed), variance_hetero_config(seed)] {
            for mut r in variance_formula_oracle(&cfg, reps)? {
                r.name = format!("{}: {}", cfg.id, r.name);
                out.push(r);
            }
        }
        Ok(out)
    }
}
