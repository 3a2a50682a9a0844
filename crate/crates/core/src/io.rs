//! Matrix files, scenario files and result records.
//!
//! Matrices are headerless comma-separated decimal text, one row per line.
//! Scenario files are `key = value` lines with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnrError};
use crate::fixed_effects::estimate_fixed;
use crate::generators::NoiseSpec;
use crate::inference::{clamp_unit, AsymptoticVariance};
use crate::matrix_stats::Matrix;
use crate::montecarlo::{even_groups, CoeffKind, DesignCov, DesignKind, HeteroCorrection, ModelKind, ScenarioConfig};
use crate::random_effects::{estimate_eta, estimate_random, kappa_scalar, kappa_subgroup, split_groups};
use crate::VERSION;

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, tok)| {
                let tok = tok.trim();
                tok.parse::<f64>().map_err(|_| SnrError::Parse {
                    line: line_no,
                    column: col + 1,
                    token: tok.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(SnrError::RaggedRows { line: line_no, expected: w, found: row.len() })
            }
            _ => {}
        }
        rows.push(row);
    }
    let ncols = width.ok_or(SnrError::EmptyInput("matrix file has no rows"))?;
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    parse_matrix(&fs::read_to_string(path)?)
}

/// 17 significant digits, enough to round-trip every `f64`.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("write to String");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    Ok(fs::write(path, format_matrix(m))?)
}

const REQUIRED_KEYS: [&str; 11] =
    ["model", "n", "p", "q", "design", "coeff", "rho2", "sigma2", "noise", "reps", "seed"];
const OPTIONAL_KEYS: [&str; 6] = ["id", "design_cov", "level", "hetero_correction", "groups", "group_eta"];

fn config_err(key: &str, msg: impl std::fmt::Display) -> SnrError {
    SnrError::Config(format!("{key}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config_err(key, format!("cannot parse {v:?}")))
}

fn parse_design_cov(v: &str) -> Result<DesignCov> {
    if v == "identity" {
        return Ok(DesignCov::Identity);
    }
    let inner = v
        .strip_prefix("ar1(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| config_err("design_cov", format!("expected identity or ar1(phi), got {v:?}")))?;
    Ok(DesignCov::Ar1(parse_num("design_cov", inner.trim())?))
}

fn parse_groups(v: &str, n: usize) -> Result<Vec<usize>> {
    let parts: Vec<usize> = v.split(',').map(|s| parse_num("groups", s.trim())).collect::<Result<_>>()?;
    if parts.len() == 1 {
        return even_groups(n, parts[0]);
    }
    let total: usize = parts.iter().sum();
    if parts.contains(&0) || total != n {
        return Err(config_err("groups", format!("positive sizes summing to n = {n} required, got {v:?}")));
    }
    Ok(parts)
}

/// Group sizes from a comma list; a single integer `M` means `M` even blocks.
pub fn parse_group_spec(spec: &str, n: usize) -> Result<Vec<usize>> {
    parse_groups(spec, n)
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(name, _)| *name == v).map(|&(_, t)| t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        config_err(key, format!("expected one of {}, got {v:?}", names.join("|")))
    })
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig> {
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| SnrError::Config(format!("line {}: expected key = value", idx + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !REQUIRED_KEYS.contains(&k) && !OPTIONAL_KEYS.contains(&k) {
            return Err(config_err(k, "unknown key"));
        }
        if kv.insert(k.to_string(), v.to_string()).is_some() {
            return Err(config_err(k, "duplicate key"));
        }
    }
    for key in REQUIRED_KEYS {
        if !kv.contains_key(key) {
            return Err(config_err(key, "missing required key"));
        }
    }
    let get = |k: &str| kv.get(k).map(String::as_str);
    let req = |k: &str| kv[k].as_str();

    let model = choice("model", req("model"), &[("fixed", ModelKind::Fixed), ("random", ModelKind::Random)])?;
    let n: usize = parse_num("n", req("n"))?;
    let design = choice(
        "design",
        req("design"),
        &[("gaussian", DesignKind::Gaussian), ("snp", DesignKind::Snp), ("t7", DesignKind::T7)],
    )?;
    let coeff = choice(
        "coeff",
        req("coeff"),
        &[("sparse", CoeffKind::Sparse), ("dense_fixed", CoeffKind::DenseFixed), ("random", CoeffKind::Random)],
    )?;
    let hetero_correction = match get("hetero_correction") {
        None => HeteroCorrection::None,
        Some(v) => choice(
            "hetero_correction",
            v,
            &[
                ("none", HeteroCorrection::None),
                ("scalar", HeteroCorrection::Scalar),
                ("subgroup", HeteroCorrection::Subgroup),
            ],
        )?,
    };
    let groups = get("groups").map(|v| parse_groups(v, n)).transpose()?;
    let eta_enabled = match get("group_eta") {
        None => false,
        Some(v) => choice("group_eta", v, &[("true", true), ("false", false)])?,
    };
    let noise_kind = choice("noise", req("noise"), &[("homoskedastic", 0), ("scalar", 1), ("subgroup", 2)])?;
    let (noise, groups) = match noise_kind {
        0 => (NoiseSpec::Homoskedastic, groups),
        1 => (NoiseSpec::ScalarHalfNormal, groups),
        _ => {
            let sizes = groups.ok_or_else(|| config_err("groups", "required for noise = subgroup"))?;
            (NoiseSpec::Subgroup { sizes, eta_enabled }, None)
        }
    };

    let config = ScenarioConfig {
        id: get("id").unwrap_or("scenario").to_string(),
        model,
        n,
        p: parse_num("p", req("p"))?,
        q: parse_num("q", req("q"))?,
        design,
        design_cov: get("design_cov").map(parse_design_cov).transpose()?.unwrap_or(DesignCov::Identity),
        coeff,
        rho2: parse_num("rho2", req("rho2"))?,
        sigma2: parse_num("sigma2", req("sigma2"))?,
        noise,
        hetero_correction,
        groups,
        reps: parse_num("reps", req("reps"))?,
        level: get("level").map(|v| parse_num("level", v)).transpose()?.unwrap_or(0.95),
        master_seed: parse_num("seed", req("seed"))?,
    };
    config.validate()?;
    Ok(config)
}

/// Parses a scenario file; `id` defaults to the file stem.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut cfg = parse_scenario_str(&text)?;
    if !text.lines().any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("id")) {
        if let Some(stem) = path.file_stem() {
            cfg.id = stem.to_string_lossy().into_owned();
        }
    }
    Ok(cfg)
}

/// Options of a single estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub model: ModelKind,
    pub hetero: HeteroCorrection,
    pub groups: Option<Vec<usize>>,
    pub level: f64,
    pub clamp: bool,
    pub exact_se: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            model: ModelKind::Fixed,
            hetero: HeteroCorrection::None,
            groups: None,
            level: 0.95,
            clamp: false,
            exact_se: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub variance_floored: bool,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroSummary {
    pub correction: HeteroCorrection,
    pub eta_hat: f64,
    pub kappa_tot_hat: f64,
}

/// Output record of the `estimate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub rho2: f64,
    pub sigma2: f64,
    pub r2: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub flags: Flags,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2_clamped: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_clamped: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hetero: Option<HeteroSummary>,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<String>,
}

impl RunResult {
    pub const CSV_HEADER: &'static str =
        "model,n,p,q,rho2,sigma2,r2,se,ci_low,ci_high,level,variance_floored,clamped,version";

    pub fn csv_row(&self) -> String {
        let model = match self.model {
            ModelKind::Fixed => "fixed",
            ModelKind::Random => "random",
        };
        let (r2, ci) = match (self.r2_clamped, self.ci_clamped) {
            (Some(r), Some(c)) => (r, c),
            _ => (self.r2, self.ci),
        };
        format!(
            "{model},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{},{}",
            self.n,
            self.p,
            self.q,
            self.rho2,
            self.sigma2,
            r2,
            self.se,
            ci[0],
            ci[1],
            self.level,
            self.flags.variance_floored,
            self.flags.clamped,
            self.version
        )
    }
}

/// Estimates `r²` with its standard error and interval from `X` and `Y`.
pub fn run_estimate(x: &Matrix, y: &Matrix, opts: &EstimateOptions) -> Result<RunResult> {
    let (n, p, q) = (x.nrows(), x.ncols(), y.ncols());
    let (rho2, sigma2, r2, av, hetero): (f64, f64, f64, AsymptoticVariance, Option<HeteroSummary>) = match opts.model {
        ModelKind::Fixed => {
            if opts.hetero != HeteroCorrection::None {
                return Err(SnrError::Config("hetero: corrections apply to the random effects model only".into()));
            }
            let est = estimate_fixed(x, y)?;
            let av = if opts.exact_se { est.exact_variance(opts.level)? } else { est.asymptotic_variance(opts.level)? };
            (est.rho2, est.sigma2, est.r2, av, None)
        }
        ModelKind::Random => {
            if opts.exact_se {
                return Err(SnrError::Config("exact-se: only available for the fixed effects model".into()));
            }
            let est = estimate_random(x, y)?;
            let hetero = match opts.hetero {
                HeteroCorrection::None => None,
                HeteroCorrection::Scalar => {
                    let eta = estimate_eta(x, y, &est)?;
                    Some(HeteroSummary {
                        correction: HeteroCorrection::Scalar,
                        eta_hat: eta.eta,
                        kappa_tot_hat: kappa_scalar(eta.eta, &est.sigma_e_hat),
                    })
                }
                HeteroCorrection::Subgroup => {
                    let sizes = opts
                        .groups
                        .as_ref()
                        .ok_or_else(|| SnrError::Config("groups: required for the subgroup correction".into()))?;
                    let total: usize = sizes.iter().sum();
                    if total != n || sizes.contains(&0) {
                        return Err(SnrError::Config(format!(
                            "groups: positive sizes summing to n = {n} required, got sum {total}"
                        )));
                    }
                    let h = kappa_subgroup(&split_groups(x, y, sizes)?)?;
                    Some(HeteroSummary {
                        correction: HeteroCorrection::Subgroup,
                        eta_hat: h.eta_hat,
                        kappa_tot_hat: h.kappa_tot_hat,
                    })
                }
            };
            let kappa = hetero.map_or(0.0, |h| h.kappa_tot_hat);
            let av = est.asymptotic_variance(kappa, opts.level)?;
            (est.rho2, est.sigma2, est.r2, av, hetero)
        }
    };
    let (r2_clamped, ci_clamped, clamped) = if opts.clamp {
        let c = clamp_unit(r2, av.ci_low, av.ci_high);
        (Some(c.r2), Some([c.ci_low, c.ci_high]), c.clamped)
    } else {
        (None, None, false)
    };
    Ok(RunResult {
        model: opts.model,
        n,
        p,
        q,
        rho2,
        sigma2,
        r2,
        se: av.se_r2,
        ci: [av.ci_low, av.ci_high],
        level: opts.level,
        flags: Flags { variance_floored: av.variance_floored, clamped },
        r2_clamped,
        ci_clamped,
        hetero,
        seed: None,
        version: VERSION.to_string(),
        inputs: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXED_SPARSE: &str = "\
# fixed effects, sparse B
model = fixed
n = 400
p = 100
q = 20
design = gaussian
coeff = sparse
rho2 = 1
sigma2 = 0.5
noise = homoskedastic
reps = 500
seed = 1
";

    #[test]
    fn parses_small_matrix() {
        let m = parse_matrix("1,2\n3,4\n").unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let m = parse_matrix("1e-3, -2.5E2\n").unwrap();
        assert_eq!(m[(0, 1)], -250.0);
    }

    #[test]
    fn ragged_and_bad_tokens() {
        assert!(matches!(parse_matrix("1,2\n3\n"), Err(SnrError::RaggedRows { line: 2, expected: 2, found: 1 })));
        match parse_matrix("1,2\n3,x4\n") {
            Err(SnrError::Parse { line, column, token }) => assert_eq!((line, column, token.as_str()), (2, 2, "x4")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_matrix("\n"), Err(SnrError::EmptyInput(_))));
    }

    #[test]
    fn standard_scenario() {
        let c = parse_scenario_str(FIXED_SPARSE).unwrap();
        assert_eq!(c.rho2, 1.0);
        assert_eq!(c.sigma2, 0.5);
        assert!((c.truth_r2() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.level, 0.95);
        assert_eq!(c.hetero_correction, HeteroCorrection::None);
    }

    #[test]
    fn missing_and_unknown_keys() {
        let missing = FIXED_SPARSE.replace("reps = 500\n", "");
        match parse_scenario_str(&missing) {
            Err(SnrError::Config(msg)) => assert!(msg.starts_with("reps"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let typo = format!("{FIXED_SPARSE}levle = 0.95\n");
        match parse_scenario_str(&typo) {
            Err(SnrError::Config(msg)) => assert!(msg.starts_with("levle") && msg.contains("unknown"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subgroup_scenario() {
        let text = FIXED_SPARSE
            .replace("model = fixed", "model = random")
            .replace("coeff = sparse", "coeff = random")
            .replace(
                "noise = homoskedastic",
                "noise = subgroup\ngroups = 10\nhetero_correction = subgroup\ndesign_cov = ar1(0.5)",
            );
        let c = parse_scenario_str(&text).unwrap();
        assert_eq!(c.noise, NoiseSpec::Subgroup { sizes: vec![40; 10], eta_enabled: false });
        assert_eq!(c.design_cov, DesignCov::Ar1(0.5));
        let bad = text.replace("hetero_correction = subgroup", "hetero_correction = subgrp");
        assert!(matches!(parse_scenario_str(&bad), Err(SnrError::Config(_))));
    }

    #[test]
    fn hetero_on_fixed_is_config_error() {
        let text = format!("{FIXED_SPARSE}hetero_correction = scalar\n");
        assert!(matches!(parse_scenario_str(&text), Err(SnrError::Config(_))));
    }
}
