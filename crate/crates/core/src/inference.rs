//! Delta-method standard errors and Wald intervals for `r̂²`, shared by the
//! fixed- and random-effects estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SnrError};

/// Plug-in `σ_r²` values below this are floored to it.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Entries of the 2×2 limiting covariance of `√n (σ̂² − σ², ρ̂² − ρ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub v11: f64,
    pub v12: f64,
    pub v22: f64,
}

/// Asymptotic variance of `r̂²` with the resulting standard error and interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVariance {
    pub v11: f64,
    pub v12: f64,
    pub v22: f64,
    /// `σ_r²`, after flooring.
    pub sigma_r2: f64,
    /// `sqrt(σ_r²/n)`
    pub se_r2: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    /// The raw plug-in `σ_r²` was below [`VARIANCE_FLOOR`].
    pub variance_floored: bool,
}

impl AsymptoticVariance {
    /// Applies the delta method for `r² = ρ²/(ρ²+σ²)` to `v` and builds the
    /// Wald interval `r̂² ± z·se` at `level`.
    pub fn from_components(
        v: VarianceComponents,
        n: usize,
        rho2: f64,
        sigma2: f64,
        r2: f64,
        level: f64,
    ) -> Result<Self> {
        check_level(level)?;
        let total = rho2 + sigma2;
        if total == 0.0 || !total.is_finite() {
            return Err(SnrError::InvalidParameter("rho2 + sigma2 must be finite and nonzero".into()));
        }
        if n == 0 {
            return Err(SnrError::InvalidParameter("n must be positive".into()));
        }
        let t4 = total.powi(4);
        let raw = (rho2 * rho2 * v.v11 + sigma2 * sigma2 * v.v22 - 2.0 * rho2 * sigma2 * v.v12) / t4;
        let variance_floored = !(raw >= VARIANCE_FLOOR);
        let sigma_r2 = if variance_floored { VARIANCE_FLOOR } else { raw };
        let se_r2 = (sigma_r2 / n as f64).sqrt();
        let half = normal_quantile(0.5 * (1.0 + level)) * se_r2;
        Ok(AsymptoticVariance {
            v11: v.v11,
            v12: v.v12,
            v22: v.v22,
            sigma_r2,
            se_r2,
            ci_low: r2 - half,
            ci_high: r2 + half,
            level,
            variance_floored,
        })
    }

    pub fn components(&self) -> VarianceComponents {
        VarianceComponents { v11: self.v11, v12: self.v12, v22: self.v22 }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(SnrError::InvalidParameter(format!("level must lie in (0, 1), got {level}")))
    }
}

/// Standard normal quantile.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

/// `r̂²` and its interval intersected with `[0, 1]`; the flag reports
/// whether anything moved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamped {
    pub r2: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub clamped: bool,
}

pub fn clamp_unit(r2: f64, ci_low: f64, ci_high: f64) -> Clamped {
    let c = |v: f64| v.clamp(0.0, 1.0);
    let out = Clamped { r2: c(r2), ci_low: c(ci_low), ci_high: c(ci_high), clamped: false };
    Clamped { clamped: out.r2 != r2 || out.ci_low != ci_low || out.ci_high != ci_high, ..out }
}
