//! Synthetic designs, coefficient matrices and noise models for the
//! simulation study.
//!
//! Generators take an explicit `Rng`; scenario-level randomness goes through
//! [`Simulator`], which derives one stream per `(replication, purpose)` from
//! the scenario's master seed (see [`crate::rng`]).

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnrError};
use crate::matrix_stats::{ar1_matrix, sym_factor, Matrix, SymMatrix};
use crate::montecarlo::{CoeffKind, DesignCov, DesignKind, ModelKind, ScenarioConfig};
use crate::rng::{derive, Stream};

/// AR(1) parameter of the coefficient covariance `Σ_b`.
pub const SIGMA_B_PHI: f64 = 0.8;
/// AR(1) parameter of the noise correlation.
pub const SIGMA_E_PHI: f64 = 0.5;
/// Per-group noise correlations are drawn from `Unif[0.2, 0.6]`.
pub const GROUP_PHI_RANGE: (f64, f64) = (0.2, 0.6);
/// Coefficient decay `B_ij ∝ 0.8^|i−j|` in the sparse design.
pub const SPARSE_DECAY: f64 = 0.8;

const SNP_MAX_ATTEMPTS: usize = 100;

fn check_psd_dim(s: &SymMatrix, p: usize) -> Result<()> {
    if s.dim() != p {
        return Err(SnrError::DimensionMismatch { context: "covariance dimension", expected: p, actual: s.dim() });
    }
    Ok(())
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_iterator(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)))
}

/// `Z Lᵀ`, giving rows with covariance `LLᵀ`.
fn correlate(z: Matrix, factor: Option<&Matrix>) -> Matrix {
    match factor {
        Some(l) => z * l.transpose(),
        None => z,
    }
}

/// Lower factor of the design covariance, `None` for the identity.
pub fn design_factor(p: usize, cov: DesignCov) -> Result<Option<Matrix>> {
    match cov {
        DesignCov::Identity => Ok(None),
        DesignCov::Ar1(phi) => Ok(Some(sym_factor(&ar1_matrix(p, phi)?)?)),
    }
}

/// i.i.d. `N(0,1)` entries, right-multiplied by `Lᵀ` when `sigma = LLᵀ` is given.
pub fn gen_gaussian_design<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    sigma: Option<&SymMatrix>,
    rng: &mut R,
) -> Result<Matrix> {
    let factor = sigma.map(|s| check_psd_dim(s, p).and_then(|_| sym_factor(s))).transpose()?;
    Ok(correlate(standard_normal_matrix(n, p, rng), factor.as_ref()))
}

/// Raw genotypes in `{0,1,2}` with probabilities `(1−f)², 2f(1−f), f²`.
pub fn snp_genotypes<R: Rng + ?Sized>(n: usize, freq: f64, rng: &mut R) -> Vec<u8> {
    let p0 = (1.0 - freq) * (1.0 - freq);
    let p1 = p0 + 2.0 * freq * (1.0 - freq);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < p0 {
                0
            } else if u < p1 {
                1
            } else {
                2
            }
        })
        .collect()
}

/// Centers and scales to mean 0, variance 1 (divisor n). `None` if constant.
fn standardize(values: &[u8]) -> Option<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return None;
    }
    let sd = var.sqrt();
    Some(values.iter().map(|&v| (v as f64 - mean) / sd).collect())
}

/// Standardized genotype design: per column `f_j ~ Unif[0.05, 0.5]`, genotypes
/// drawn as above, then standardized. Constant columns are redrawn.
pub fn gen_snp_design<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<Matrix> {
    if n < 2 {
        return Err(SnrError::InvalidParameter(format!("SNP design needs n >= 2, got {n}")));
    }
    let mut data = Vec::with_capacity(n * p);
    for j in 0..p {
        let mut column = None;
        for _ in 0..SNP_MAX_ATTEMPTS {
            let f = rng.random_range(0.05..=0.5);
            if let Some(c) = standardize(&snp_genotypes(n, f, rng)) {
                column = Some(c);
                break;
            }
        }
        match column {
            Some(c) => data.extend(c),
            None => {
                return Err(SnrError::GenerationFailed(format!(
                    "SNP column {j} constant after {SNP_MAX_ATTEMPTS} attempts"
                )))
            }
        }
    }
    Ok(Matrix::from_vec(n, p, data))
}

/// Student-t(7) entries scaled to unit variance, then `Z Lᵀ`.
pub fn gen_t7_design<R: Rng + ?Sized>(n: usize, p: usize, sigma: Option<&SymMatrix>, rng: &mut R) -> Result<Matrix> {
    let factor = sigma.map(|s| check_psd_dim(s, p).and_then(|_| sym_factor(s))).transpose()?;
    Ok(correlate(t7_matrix(n, p, rng), factor.as_ref()))
}

fn t7_matrix<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Matrix {
    let t = StudentT::new(7.0).expect("valid dof");
    let scale = (5.0f64 / 7.0).sqrt();
    Matrix::from_iterator(n, p, (0..n * p).map(|_| t.sample(rng) * scale))
}

/// `B_ij = c·0.8^|i−j|` with `c` chosen so `tr(BᵀB)/q = rho2`.
pub fn gen_coeff_sparse(p: usize, q: usize, rho2: f64) -> Result<Matrix> {
    if !(rho2 > 0.0) {
        return Err(SnrError::InvalidParameter(format!("rho2 must be > 0, got {rho2}")));
    }
    let b = Matrix::from_fn(p, q, |i, j| SPARSE_DECAY.powi(i.abs_diff(j) as i32));
    Ok(rescale_to_rho2(b, rho2))
}

fn rescale_to_rho2(b: Matrix, rho2: f64) -> Matrix {
    let q = b.ncols() as f64;
    let ss: f64 = b.iter().map(|v| v * v).sum();
    b * (rho2 * q / ss).sqrt()
}

/// Rows i.i.d. `N(0, Σ_b/p)`.
pub fn gen_coeff_random<R: Rng + ?Sized>(p: usize, q: usize, sigma_b: &SymMatrix, rng: &mut R) -> Result<Matrix> {
    check_psd_dim(sigma_b, q)?;
    let l = sym_factor(sigma_b)?;
    Ok(random_rows(p, q, &l, rng))
}

pub(crate) fn random_rows<R: Rng + ?Sized>(p: usize, q: usize, factor: &Matrix, rng: &mut R) -> Matrix {
    standard_normal_matrix(p, q, rng) * factor.transpose() * (1.0 / (p as f64).sqrt())
}

/// Rows i.i.d. `N(0, Σ_b/p)`, then rescaled so `tr(BᵀB)/q = rho2`.
pub fn gen_coeff_dense<R: Rng + ?Sized>(
    p: usize,
    q: usize,
    sigma_b: &SymMatrix,
    rho2: f64,
    rng: &mut R,
) -> Result<Matrix> {
    if !(rho2 > 0.0) {
        return Err(SnrError::InvalidParameter(format!("rho2 must be > 0, got {rho2}")));
    }
    let b = gen_coeff_random(p, q, sigma_b, rng)?;
    Ok(rescale_to_rho2(b, rho2))
}

/// Random permutation of `(1, 2^−½, …, q^−½)`.
pub fn gamma_diagonal<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Vec<f64> {
    let mut g: Vec<f64> = (1..=q).map(|k| 1.0 / (k as f64).sqrt()).collect();
    g.shuffle(rng);
    g
}

/// `Σ_e ∝ Γ^{½} (phi^|i−j|) Γ^{½}` scaled to `tr(Σ_e)/q = sigma2`.
pub fn sigma_e_from_gamma(gamma: &[f64], sigma2: f64, phi: f64) -> Result<SymMatrix> {
    if !(sigma2 > 0.0) {
        return Err(SnrError::InvalidParameter(format!("sigma2 must be > 0, got {sigma2}")));
    }
    let q = gamma.len();
    let m = ar1_matrix(q, phi)?;
    let raw = SymMatrix::from_fn(q, |i, j| gamma[i].sqrt() * m[(i, j)] * gamma[j].sqrt());
    Ok(raw.scale(q as f64 * sigma2 / raw.trace()))
}

pub fn make_sigma_e<R: Rng + ?Sized>(q: usize, sigma2: f64, phi: f64, rng: &mut R) -> Result<SymMatrix> {
    let gamma = gamma_diagonal(q, rng);
    sigma_e_from_gamma(&gamma, sigma2, phi)
}

/// Half-normal heterogeneity weights `ν_i ∝ |w_i|`, `w_i ~ N(0, 9)`,
/// normalized in-sample so `Σν_i = n`.
pub fn sample_half_normal_nu<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut nu: Vec<f64> = (0..n).map(|_| (3.0 * rng.sample::<f64, _>(StandardNormal)).abs()).collect();
    let total: f64 = nu.iter().sum();
    let theta = n as f64 / total;
    for v in &mut nu {
        *v *= theta;
    }
    nu
}

/// `(1/n)Σ(ν_i − 1)²`.
pub fn eta_of(nu: &[f64]) -> f64 {
    nu.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / nu.len() as f64
}

/// One block of rows sharing a base covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGroup {
    pub size: usize,
    pub sigma_e: SymMatrix,
    /// Within-group scalar heterogeneity, if enabled (mean 1 within the group).
    pub nu: Option<Vec<f64>>,
}

/// Concrete row covariances `Σ_i` of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    Homoskedastic {
        sigma_e: SymMatrix,
    },
    /// `Σ_i = ν_i Σ_e`.
    ScalarHetero {
        sigma_e: SymMatrix,
        nu: Vec<f64>,
    },
    /// Contiguous row blocks.
    Subgroup {
        groups: Vec<NoiseGroup>,
    },
}

impl NoiseModel {
    pub fn q(&self) -> usize {
        match self {
            NoiseModel::Homoskedastic { sigma_e } | NoiseModel::ScalarHetero { sigma_e, .. } => sigma_e.dim(),
            NoiseModel::Subgroup { groups } => groups[0].sigma_e.dim(),
        }
    }

    /// Per-row `(block, scale)` with `Σ_i = scale · block`.
    fn row_layout(&self, n: usize) -> Result<Vec<(&SymMatrix, f64)>> {
        let out: Vec<(&SymMatrix, f64)> = match self {
            NoiseModel::Homoskedastic { sigma_e } => vec![(sigma_e, 1.0); n],
            NoiseModel::ScalarHetero { sigma_e, nu } => nu.iter().map(|&v| (sigma_e, v)).collect(),
            NoiseModel::Subgroup { groups } => groups
                .iter()
                .flat_map(|g| (0..g.size).map(move |i| (&g.sigma_e, g.nu.as_ref().map_or(1.0, |nu| nu[i]))))
                .collect(),
        };
        if out.len() != n {
            return Err(SnrError::DimensionMismatch { context: "noise model rows", expected: n, actual: out.len() });
        }
        Ok(out)
    }

    /// `Σ_i` for every row.
    pub fn row_covariances(&self, n: usize) -> Result<Vec<SymMatrix>> {
        Ok(self.row_layout(n)?.into_iter().map(|(s, c)| s.scale(c)).collect())
    }

    /// `Σ̄_e = (1/n)ΣΣ_i`.
    pub fn sigma_bar(&self, n: usize) -> Result<SymMatrix> {
        let rows = self.row_layout(n)?;
        let q = self.q();
        let mut acc = Matrix::zeros(q, q);
        for (s, c) in rows {
            acc += s.as_matrix() * c;
        }
        SymMatrix::from_matrix(acc / n as f64)
    }

    /// `κ_tot` from the structured closed forms.
    pub fn kappa_tot(&self, n: usize) -> Result<f64> {
        match self {
            NoiseModel::Homoskedastic { .. } => Ok(0.0),
            NoiseModel::ScalarHetero { sigma_e, nu } => {
                if nu.len() != n {
                    return Err(SnrError::DimensionMismatch { context: "nu length", expected: n, actual: nu.len() });
                }
                let mean = nu.iter().sum::<f64>() / n as f64;
                let spread = nu.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                Ok(spread * sigma_e.frobenius_sq())
            }
            NoiseModel::Subgroup { groups } => {
                let bar = self.sigma_bar(n)?;
                let mut k = 0.0;
                for g in groups {
                    let r = g.size as f64 / n as f64;
                    k += r * (&g.sigma_e - &bar).frobenius_sq();
                    if let Some(nu) = &g.nu {
                        k += r * eta_of(nu) * g.sigma_e.frobenius_sq();
                    }
                }
                Ok(k)
            }
        }
    }

    /// `κ_tot = Σ_kl (1/n) Σ_i (σ_{i,kl} − σ̄_kl)²`, evaluated row by row.
    pub fn kappa_tot_direct(&self, n: usize) -> Result<f64> {
        let bar = self.sigma_bar(n)?;
        let rows = self.row_covariances(n)?;
        Ok(rows.iter().map(|s| (s - &bar).frobenius_sq()).sum::<f64>() / n as f64)
    }
}

/// Noise draw with `e_i ~ N(0, Σ_i)`.
pub fn gen_noise<R: Rng + ?Sized>(n: usize, model: &NoiseModel, rng: &mut R) -> Result<Matrix> {
    let q = model.q();
    let mut e = standard_normal_matrix(n, q, rng);
    let mut apply = |start: usize, len: usize, sigma: &SymMatrix| -> Result<()> {
        let l = sym_factor(sigma)?;
        let block = e.rows(start, len) * l.transpose();
        e.rows_mut(start, len).copy_from(&block);
        Ok(())
    };
    match model {
        NoiseModel::Homoskedastic { sigma_e } | NoiseModel::ScalarHetero { sigma_e, .. } => apply(0, n, sigma_e)?,
        NoiseModel::Subgroup { groups } => {
            let mut start = 0;
            for g in groups {
                if start + g.size > n {
                    return Err(SnrError::DimensionMismatch {
                        context: "group sizes",
                        expected: n,
                        actual: start + g.size,
                    });
                }
                apply(start, g.size, &g.sigma_e)?;
                start += g.size;
            }
        }
    }
    let scales: Vec<f64> = model.row_layout(n)?.iter().map(|&(_, c)| c.sqrt()).collect();
    if scales.iter().any(|&s| s != 1.0) {
        let sv = DVector::from_vec(scales);
        for mut col in e.column_iter_mut() {
            col.component_mul_assign(&sv);
        }
    }
    Ok(e)
}

/// Scenario-level noise structure, instantiated per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    Homoskedastic,
    /// Half-normal `ν_i`, resampled each replication.
    ScalarHalfNormal,
    /// Contiguous groups with AR(1) parameters drawn from [`GROUP_PHI_RANGE`].
    Subgroup {
        sizes: Vec<usize>,
        eta_enabled: bool,
    },
}

/// True parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub b: Matrix,
    pub rho2: f64,
    pub sigma2: f64,
    pub r2: f64,
    /// Set under random effects.
    pub sigma_b: Option<SymMatrix>,
    pub sigma_e_bar: SymMatrix,
    pub noise: NoiseModel,
    pub kappa_tot: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub truth: GroundTruth,
}

/// Scenario structure shared by all replications: design factor, frozen
/// coefficients, noise covariances.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScenarioConfig,
    design_factor: Option<Matrix>,
    sigma_b: SymMatrix,
    sigma_b_factor: Matrix,
    frozen_b: Option<Matrix>,
    /// Homoskedastic/scalar base covariance, or one per subgroup.
    noise_blocks: Vec<SymMatrix>,
}

impl Simulator {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (p, q) = (config.p, config.q);
        let seed = config.master_seed;
        let design_factor = design_factor(p, config.design_cov)?;
        let sigma_b = ar1_matrix(q, SIGMA_B_PHI)?.scale(config.rho2);
        let sigma_b_factor = sym_factor(&sigma_b)?;

        let frozen_b = match config.coeff {
            CoeffKind::Sparse => Some(gen_coeff_sparse(p, q, config.rho2)?),
            CoeffKind::DenseFixed => {
                let mut rng = derive(seed, 1, Stream::Structure);
                let base = ar1_matrix(q, SIGMA_B_PHI)?;
                Some(gen_coeff_dense(p, q, &base, config.rho2, &mut rng)?)
            }
            CoeffKind::Random => None,
        };

        let gamma = gamma_diagonal(q, &mut derive(seed, 0, Stream::Structure));
        let noise_blocks = if config.sigma2 == 0.0 {
            vec![SymMatrix::zeros(q)]
        } else {
            match &config.noise {
                NoiseSpec::Homoskedastic | NoiseSpec::ScalarHalfNormal => {
                    vec![sigma_e_from_gamma(&gamma, config.sigma2, SIGMA_E_PHI)?]
                }
                NoiseSpec::Subgroup { sizes, .. } => {
                    let mut rng = derive(seed, 2, Stream::Structure);
                    let (lo, hi) = GROUP_PHI_RANGE;
                    sizes
                        .iter()
                        .map(|_| sigma_e_from_gamma(&gamma, config.sigma2, rng.random_range(lo..hi)))
                        .collect::<Result<Vec<_>>>()?
                }
            }
        };
        Ok(Simulator { config: config.clone(), design_factor, sigma_b, sigma_b_factor, frozen_b, noise_blocks })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn design<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Matrix> {
        let (n, p) = (self.config.n, self.config.p);
        let z = match self.config.design {
            DesignKind::Gaussian => standard_normal_matrix(n, p, rng),
            DesignKind::Snp => gen_snp_design(n, p, rng)?,
            DesignKind::T7 => t7_matrix(n, p, rng),
        };
        Ok(correlate(z, self.design_factor.as_ref()))
    }

    fn noise_model<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseModel {
        let n = self.config.n;
        match &self.config.noise {
            NoiseSpec::Homoskedastic => NoiseModel::Homoskedastic { sigma_e: self.noise_blocks[0].clone() },
            NoiseSpec::ScalarHalfNormal => {
                NoiseModel::ScalarHetero { sigma_e: self.noise_blocks[0].clone(), nu: sample_half_normal_nu(n, rng) }
            }
            NoiseSpec::Subgroup { sizes, eta_enabled } => NoiseModel::Subgroup {
                groups: sizes
                    .iter()
                    .zip(&self.noise_blocks)
                    .map(|(&size, s)| NoiseGroup {
                        size,
                        sigma_e: s.clone(),
                        nu: eta_enabled.then(|| sample_half_normal_nu(size, rng)),
                    })
                    .collect(),
            },
        }
    }

    /// Replication `rep`: a deterministic function of the scenario and `rep`.
    pub fn dataset(&self, rep: u64) -> Result<Dataset> {
        let cfg = &self.config;
        let seed = cfg.master_seed;
        let x = self.design(&mut derive(seed, rep, Stream::Design))?;
        let b = match &self.frozen_b {
            Some(b) => b.clone(),
            None => random_rows(cfg.p, cfg.q, &self.sigma_b_factor, &mut derive(seed, rep, Stream::Coefficients)),
        };
        let noise = self.noise_model(&mut derive(seed, rep, Stream::Heterogeneity));
        let e = gen_noise(cfg.n, &noise, &mut derive(seed, rep, Stream::Noise))?;
        let y = &x * &b + e;

        let q = cfg.q as f64;
        let (rho2, sigma_b) = match cfg.model {
            ModelKind::Fixed => (b.iter().map(|v| v * v).sum::<f64>() / q, None),
            ModelKind::Random => (self.sigma_b.trace() / q, Some(self.sigma_b.clone())),
        };
        let sigma_e_bar = noise.sigma_bar(cfg.n)?;
        let sigma2 = sigma_e_bar.trace() / q;
        let kappa_tot = noise.kappa_tot(cfg.n)?;
        let truth = GroundTruth { b, rho2, sigma2, r2: rho2 / (rho2 + sigma2), sigma_b, sigma_e_bar, noise, kappa_tot };
        Ok(Dataset { x, y, truth })
    }
}

/// One replication of `config` under `master_seed`.
pub fn simulate_dataset(config: &ScenarioConfig, rep_index: u64, master_seed: u64) -> Result<Dataset> {
    let cfg = ScenarioConfig { master_seed, ..config.clone() };
    Simulator::new(&cfg)?.dataset(rep_index)
}
