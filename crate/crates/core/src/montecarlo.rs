//! Scenario-driven Monte Carlo engine reproducing the simulation tables:
//! mean `r̂²`, empirical SE, average plug-in SE and interval coverage.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnrError};
use crate::fixed_effects::estimate_fixed;
use crate::generators::{NoiseSpec, Simulator};
use crate::inference::{check_level, normal_quantile};
use crate::random_effects::{estimate_eta, estimate_random, kappa_scalar, kappa_subgroup, split_groups};
use crate::VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Gaussian,
    Snp,
    T7,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignCov {
    Identity,
    Ar1(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffKind {
    Sparse,
    DenseFixed,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeteroCorrection {
    None,
    Scalar,
    Subgroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub design: DesignKind,
    pub design_cov: DesignCov,
    pub coeff: CoeffKind,
    pub rho2: f64,
    pub sigma2: f64,
    pub noise: NoiseSpec,
    pub hetero_correction: HeteroCorrection,
    /// Row blocks for the subgroup correction when the noise itself is not
    /// subgroup-structured.
    pub groups: Option<Vec<usize>>,
    pub reps: usize,
    pub level: f64,
    pub master_seed: u64,
}

/// Splits `n` rows into `m` contiguous blocks, the first `n % m` one larger.
pub fn even_groups(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(SnrError::Config(format!("groups: cannot split {n} rows into {m} groups")));
    }
    Ok((0..m).map(|i| n / m + usize::from(i < n % m)).collect())
}

impl ScenarioConfig {
    pub fn truth_r2(&self) -> f64 {
        self.rho2 / (self.rho2 + self.sigma2)
    }

    /// Block sizes used by the subgroup correction.
    pub fn correction_groups(&self) -> Option<&[usize]> {
        match &self.noise {
            NoiseSpec::Subgroup { sizes, .. } => Some(sizes),
            _ => self.groups.as_deref(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SnrError::Config(msg));
        if self.reps == 0 {
            return bad("reps: must be >= 1".into());
        }
        if check_level(self.level).is_err() {
            return bad(format!("level: must lie in (0, 1), got {}", self.level));
        }
        if self.n < 2 || self.p == 0 || self.q == 0 {
            return bad(format!("n, p, q: need n >= 2, p >= 1, q >= 1 (got {}, {}, {})", self.n, self.p, self.q));
        }
        if !(self.rho2 >= 0.0 && self.rho2.is_finite()) || !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad("rho2, sigma2: must be finite and >= 0".into());
        }
        if self.rho2 + self.sigma2 == 0.0 {
            return bad("rho2, sigma2: cannot both be zero".into());
        }
        if self.coeff != CoeffKind::Random && self.rho2 == 0.0 {
            return bad("rho2: must be > 0 for sparse or dense_fixed coefficients".into());
        }
        if let DesignCov::Ar1(phi) = self.design_cov {
            if !(phi.abs() < 1.0) {
                return bad(format!("design_cov: ar1 parameter must lie in (-1, 1), got {phi}"));
            }
        }
        match (self.model, self.coeff) {
            (ModelKind::Fixed, CoeffKind::Random) => {
                return bad("coeff: random coefficients need model = random".into())
            }
            (ModelKind::Random, CoeffKind::Sparse | CoeffKind::DenseFixed) => {
                return bad("coeff: model = random needs coeff = random".into())
            }
            _ => {}
        }
        if self.model == ModelKind::Fixed && self.hetero_correction != HeteroCorrection::None {
            return bad("hetero_correction: only available for model = random".into());
        }
        if let NoiseSpec::Subgroup { sizes, .. } = &self.noise {
            check_sizes(sizes, self.n)?;
        }
        if let Some(g) = &self.groups {
            check_sizes(g, self.n)?;
        }
        if self.hetero_correction == HeteroCorrection::Subgroup && self.correction_groups().is_none() {
            return bad("groups: required for hetero_correction = subgroup".into());
        }
        Ok(())
    }

    /// Consistent but unusual combinations, reported alongside the results.
    pub fn notes(&self) -> Vec<String> {
        let mut out = Vec::new();
        match (self.hetero_correction, &self.noise) {
            (HeteroCorrection::Subgroup, NoiseSpec::Homoskedastic | NoiseSpec::ScalarHalfNormal) => {
                out.push("subgroup correction applied to noise without subgroup structure".into())
            }
            (HeteroCorrection::Scalar, NoiseSpec::Homoskedastic) => {
                out.push("scalar correction applied to homoskedastic noise".into())
            }
            (HeteroCorrection::None, NoiseSpec::ScalarHalfNormal | NoiseSpec::Subgroup { .. })
                if self.model == ModelKind::Random =>
            {
                out.push("heteroskedastic noise without correction".into())
            }
            _ => {}
        }
        out
    }
}

fn check_sizes(sizes: &[usize], n: usize) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(SnrError::Config("groups: sizes must be positive".into()));
    }
    let total: usize = sizes.iter().sum();
    if total != n {
        return Err(SnrError::Config(format!("groups: sizes sum to {total}, expected n = {n}")));
    }
    Ok(())
}

/// Outcome of one successful replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub r2_hat: f64,
    pub se_hat: f64,
    pub ci: [f64; 2],
    pub rho2_hat: f64,
    pub sigma2_hat: f64,
    /// Clamped `η̂` when a heterogeneity correction ran.
    pub eta_hat: Option<f64>,
}

impl RepRecord {
    /// Same draw with the Wald interval rebuilt at `level`.
    pub fn with_level(&self, level: f64) -> RepRecord {
        let half = normal_quantile(0.5 * (1.0 + level)) * self.se_hat;
        RepRecord { ci: [self.r2_hat - half, self.r2_hat + half], ..*self }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci[0] <= value && value <= self.ci[1]
    }
}

/// Summary of a Monte Carlo study: mean, spread, average SE and coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub mean_r2: f64,
    /// Sample SD of `r̂²` (divisor k−1); NaN (serialized as null) for k = 1.
    pub emp_se: f64,
    pub avg_se_hat: f64,
    pub coverage: f64,
    pub covered: usize,
    pub reps_used: usize,
    pub reps_failed: usize,
    pub mean_eta_hat: Option<f64>,
    pub truth_r2: f64,
    pub level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_rep: Option<Vec<RepRecord>>,
}

/// Order-independent sum.
fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

pub fn summarize(per_rep: &[RepRecord], truth_r2: f64, level: f64) -> Result<McSummary> {
    if per_rep.is_empty() {
        return Err(SnrError::EmptyInput("no successful replications to summarize"));
    }
    check_level(level)?;
    let k = per_rep.len();
    let kf = k as f64;
    let mean_r2 = sorted_sum(per_rep.iter().map(|r| r.r2_hat).collect()) / kf;
    let emp_se = if k > 1 {
        (sorted_sum(per_rep.iter().map(|r| (r.r2_hat - mean_r2).powi(2)).collect()) / (kf - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let avg_se_hat = sorted_sum(per_rep.iter().map(|r| r.se_hat).collect()) / kf;
    let covered = per_rep.iter().filter(|r| r.covers(truth_r2)).count();
    let etas: Vec<f64> = per_rep.iter().filter_map(|r| r.eta_hat).collect();
    let mean_eta_hat = (!etas.is_empty()).then(|| {
        let m = etas.len() as f64;
        sorted_sum(etas) / m
    });
    Ok(McSummary {
        mean_r2,
        emp_se,
        avg_se_hat,
        coverage: covered as f64 / kf,
        covered,
        reps_used: k,
        reps_failed: 0,
        mean_eta_hat,
        truth_r2,
        level,
        per_rep: None,
    })
}

/// Errors that mark a replication as failed rather than aborting the run.
fn is_rep_failure(e: &SnrError) -> bool {
    match e {
        SnrError::SingularMomentSystem { .. } | SnrError::DegenerateResponse => true,
        SnrError::Group { source, .. } => is_rep_failure(source),
        _ => false,
    }
}

/// Simulates, estimates and builds the interval for replication `rep`.
pub fn run_replication(sim: &Simulator, rep: u64) -> Result<RepRecord> {
    let cfg = sim.config();
    let data = sim.dataset(rep)?;
    let (x, y) = (&data.x, &data.y);
    let (est_r2, rho2_hat, sigma2_hat, av, eta_hat) = match cfg.model {
        ModelKind::Fixed => {
            let est = estimate_fixed(x, y)?;
            let av = est.asymptotic_variance(cfg.level)?;
            (est.r2, est.rho2, est.sigma2, av, None)
        }
        ModelKind::Random => {
            let est = estimate_random(x, y)?;
            let (kappa, eta) = match cfg.hetero_correction {
                HeteroCorrection::None => (0.0, None),
                HeteroCorrection::Scalar => {
                    let eta = estimate_eta(x, y, &est)?;
                    (kappa_scalar(eta.eta, &est.sigma_e_hat), Some(eta.eta))
                }
                HeteroCorrection::Subgroup => {
                    let sizes = cfg.correction_groups().expect("validated");
                    let h = kappa_subgroup(&split_groups(x, y, sizes)?)?;
                    (h.kappa_tot_hat, Some(h.eta_hat))
                }
            };
            let av = est.asymptotic_variance(kappa, cfg.level)?;
            (est.r2, est.rho2, est.sigma2, av, eta)
        }
    };
    Ok(RepRecord { rep, r2_hat: est_r2, se_hat: av.se_r2, ci: [av.ci_low, av.ci_high], rho2_hat, sigma2_hat, eta_hat })
}

/// Runs all replications in parallel; results are reduced in replication
/// order, so the summary does not depend on the worker count.
pub fn run_scenario(config: &ScenarioConfig) -> Result<McSummary> {
    let sim = Simulator::new(config)?;
    let outcomes: Vec<Result<RepRecord>> =
        (0..config.reps as u64).into_par_iter().map(|rep| run_replication(&sim, rep)).collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(e) if is_rep_failure(&e) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() {
        return Err(SnrError::EmptyInput("every replication failed"));
    }
    let mut summary = summarize(&records, config.truth_r2(), config.level)?;
    summary.reps_failed = failed;
    summary.per_rep = Some(records);
    Ok(summary)
}

/// Summary plus the scenario it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub summary: McSummary,
    pub notes: Vec<String>,
    pub seed: u64,
    pub version: String,
}

impl ScenarioReport {
    pub fn new(config: &ScenarioConfig, summary: McSummary) -> Self {
        ScenarioReport {
            scenario: config.id.clone(),
            config: config.clone(),
            summary,
            notes: config.notes(),
            seed: config.master_seed,
            version: VERSION.to_string(),
        }
    }

    pub const CSV_HEADER: &'static str =
        "scenario,n,p,mean,emp_se_x100,avg_se_x100,coverage_pct,reps_failed,seed,version";

    /// One CSV row matching `CSV_HEADER`.
    pub fn csv_row(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let emp = if s.emp_se.is_nan() { "NA".to_string() } else { format!("{:.3}", 100.0 * s.emp_se) };
        write!(
            out,
            "{},{},{},{:.4},{},{:.3},{:.1},{},{},{}",
            self.scenario,
            self.config.n,
            self.config.p,
            s.mean_r2,
            emp,
            100.0 * s.avg_se_hat,
            100.0 * s.coverage,
            s.reps_failed,
            self.seed,
            self.version
        )
        .expect("write to String");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rec(r2: f64, lo: f64, hi: f64) -> RepRecord {
        RepRecord {
            rep: 0,
            r2_hat: r2,
            se_hat: (hi - lo) / 4.0,
            ci: [lo, hi],
            rho2_hat: 0.0,
            sigma2_hat: 0.0,
            eta_hat: None,
        }
    }

    #[test]
    fn summarize_hand_example() {
        let s = summarize(&[rec(0.6, 0.5, 0.7), rec(0.7, 0.65, 0.75)], 0.667, 0.95).unwrap();
        assert_relative_eq!(s.mean_r2, 0.65, epsilon = 1e-15);
        assert_relative_eq!(s.emp_se, 0.070_710_678, epsilon = 1e-8);
        assert_eq!(s.coverage, 1.0);
    }

    #[test]
    fn summarize_single_rep_and_empty() {
        let s = summarize(&[rec(0.6, 0.5, 0.7)], 0.667, 0.95).unwrap();
        assert_eq!(s.coverage, 1.0);
        assert!(s.emp_se.is_nan());
        assert!(matches!(summarize(&[], 0.5, 0.95), Err(SnrError::EmptyInput(_))));
    }

    #[test]
    fn summarize_order_independent() {
        let recs: Vec<RepRecord> =
            (0..50).map(|i| rec(0.5 + 0.01 * (i as f64).sin(), 0.4 + 0.003 * i as f64, 0.8)).collect();
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(summarize(&recs, 0.6, 0.95).unwrap(), summarize(&rev, 0.6, 0.95).unwrap());
    }

    #[test]
    fn even_group_split() {
        assert_eq!(even_groups(10, 3).unwrap(), vec![4, 3, 3]);
        assert_eq!(even_groups(2000, 10).unwrap(), vec![200; 10]);
        assert!(even_groups(3, 0).is_err());
    }
}
