//! Method-of-moments estimation of `r²` when the coefficient matrix is a
//! fixed unknown and the design has i.i.d. standard Gaussian rows.
//!
//! With `W_b = BᵀB`, the two observable quadratic forms satisfy
//! `E[YᵀY/n] = W_b + Σ_e` and `E[YᵀXXᵀY/n²] = ((p+n+1)/n) W_b + (p/n) Σ_e`;
//! solving that linear system gives unbiased estimates of `W_b` and `Σ_e`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnrError};
use crate::inference::{AsymptoticVariance, VarianceComponents};
use crate::matrix_stats::{cross_products, CrossProducts, Matrix, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectsEstimate {
    /// Estimate of `BᵀB`.
    pub wb_hat: SymMatrix,
    pub sigma_e_hat: SymMatrix,
    pub rho2: f64,
    pub sigma2: f64,
    pub r2: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

pub fn estimate_fixed(x: &Matrix, y: &Matrix) -> Result<FixedEffectsEstimate> {
    let cp = cross_products(x, y)?;
    FixedEffectsEstimate::from_cross_products(&cp, x.nrows(), x.ncols())
}

impl FixedEffectsEstimate {
    pub fn from_cross_products(cp: &CrossProducts, n: usize, p: usize) -> Result<Self> {
        if n < 2 {
            return Err(SnrError::InvalidParameter(format!("fixed-effects estimation needs n >= 2, got {n}")));
        }
        let (nf, pf) = (n as f64, p as f64);
        let c = 1.0 / (nf * (nf + 1.0));
        let wb = SymMatrix::from_matrix(cp.yty.as_matrix() * (-pf * c) + cp.ytxxty.as_matrix() * c)?;
        let se = SymMatrix::from_matrix(cp.yty.as_matrix() * ((pf + nf + 1.0) * c) - cp.ytxxty.as_matrix() * c)?;
        let q = wb.dim();
        let rho2 = wb.trace() / q as f64;
        let sigma2 = se.trace() / q as f64;
        let total = rho2 + sigma2;
        if total == 0.0 {
            return Err(SnrError::DegenerateResponse);
        }
        Ok(FixedEffectsEstimate { wb_hat: wb, sigma_e_hat: se, rho2, sigma2, r2: rho2 / total, n, p, q })
    }

    /// Plug-in asymptotic variance at `level`.
    pub fn asymptotic_variance(&self, level: f64) -> Result<AsymptoticVariance> {
        asymptotic_variance_fixed(
            self.n,
            self.p,
            self.q,
            &self.wb_hat,
            &self.sigma_e_hat,
            self.rho2,
            self.sigma2,
            self.r2,
            level,
        )
    }

    /// Plug-in variance using the exact finite-sample covariance of `(σ̂², ρ̂²)`.
    pub fn exact_variance(&self, level: f64) -> Result<AsymptoticVariance> {
        let ex = exact_covariance_fixed(self.n, self.p, self.q, &self.wb_hat, &self.sigma_e_hat)?;
        AsymptoticVariance::from_components(
            ex.scaled_components(self.n),
            self.n,
            self.rho2,
            self.sigma2,
            self.r2,
            level,
        )
    }
}

fn check_dims(q: usize, wb: &SymMatrix, sigma_e: &SymMatrix) -> Result<()> {
    for m in [wb, sigma_e] {
        if m.dim() != q {
            return Err(SnrError::DimensionMismatch {
                context: "covariance plug-in must be q x q",
                expected: q,
                actual: m.dim(),
            });
        }
    }
    if q == 0 {
        return Err(SnrError::InvalidParameter("q must be positive".into()));
    }
    Ok(())
}

/// Leading-order `V` for the fixed-effects estimator.
pub fn fixed_variance_components(
    n: usize,
    p: usize,
    q: usize,
    wb: &SymMatrix,
    sigma_e: &SymMatrix,
) -> Result<VarianceComponents> {
    check_dims(q, wb, sigma_e)?;
    let (nf, pf, qf) = (n as f64, p as f64, q as f64);
    let wf = wb.frobenius_sq();
    let ew = sigma_e.trace_product(wb);
    let ee = sigma_e.frobenius_sq();
    let c = 2.0 / (qf * qf * (nf + 1.0) * (nf + 1.0));
    let nn = nf * nf;
    let np = nf * pf;
    Ok(VarianceComponents {
        v11: c * ((nn + np) * wf + 2.0 * np * ew + (nn + np) * ee),
        v22: c * ((4.0 * nn + np) * wf + (2.0 * nn + 2.0 * np) * ew + np * ee),
        v12: -c * ((2.0 * nn + np) * wf + 2.0 * np * ew + np * ee),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn asymptotic_variance_fixed(
    n: usize,
    p: usize,
    q: usize,
    wb: &SymMatrix,
    sigma_e: &SymMatrix,
    rho2: f64,
    sigma2: f64,
    r2: f64,
    level: f64,
) -> Result<AsymptoticVariance> {
    if n == 0 {
        return Err(SnrError::InvalidParameter("n must be positive".into()));
    }
    let v = fixed_variance_components(n, p, q, wb, sigma_e)?;
    AsymptoticVariance::from_components(v, n, rho2, sigma2, r2, level)
}

/// Finite-sample covariance of `(σ̂², ρ̂²)` including lower-order terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactCovariance {
    pub var_sigma2: f64,
    pub var_rho2: f64,
    pub cov: f64,
}

impl ExactCovariance {
    /// `n·Var`, on the scale of [`VarianceComponents`].
    pub fn scaled_components(&self, n: usize) -> VarianceComponents {
        let nf = n as f64;
        VarianceComponents { v11: nf * self.var_sigma2, v22: nf * self.var_rho2, v12: nf * self.cov }
    }
}

/// Exact finite-sample covariance of `(σ̂², ρ̂²)` under Gaussian design.
///
/// `‖B‖_F⁴ = tr(W_b)²`, `‖BᵀB‖_F² = ‖W_b‖_F²`, and the per-response
/// noise/signal interaction is evaluated as `tr(Σ_e W_b)`, the only
/// rotation-invariant reading (it equals `Σᵢ (Σ_e)ᵢᵢ (W_b)ᵢᵢ` whenever either
/// matrix is diagonal).
pub fn exact_covariance_fixed(
    n: usize,
    p: usize,
    q: usize,
    wb: &SymMatrix,
    sigma_e: &SymMatrix,
) -> Result<ExactCovariance> {
    check_dims(q, wb, sigma_e)?;
    if n == 0 {
        return Err(SnrError::InvalidParameter("n must be positive".into()));
    }
    let (n, p, qf) = (n as f64, p as f64, q as f64);
    let wf = wb.frobenius_sq();
    let b4 = wb.trace() * wb.trace();
    let cross = sigma_e.trace_product(wb);
    let b_tr = wb.trace() * sigma_e.trace();
    let ee = sigma_e.frobenius_sq();
    let tr2 = sigma_e.trace() * sigma_e.trace();
    let c = 2.0 / (qf * qf * (n + 1.0) * (n + 1.0) * n);

    let var_sigma2 = c
        * ((n * n + n * p - 2.0 * n + 2.0 * p + 9.0) * wf
            + (9.0 * n + 1.0) * b4
            + (2.0 * p * n + 2.0 * p + 2.0 * n + 6.0) * cross
            + (2.0 * n + 2.0 * p + 2.0) * b_tr
            + (n * n + n * p + 2.0 * n + p + 1.0) * ee
            + p * tr2);
    let var_rho2 = c
        * ((4.0 * n * n + n * p + 2.0 * n + 2.0 * p + 10.0) * wf
            + (13.0 * n + 5.0) * b4
            + (2.0 * n * n + 2.0 * p * n + 6.0 * n + 2.0 * p + 8.0) * cross
            + (4.0 * n + 2.0 * p + 4.0) * b_tr
            + (p * n + p) * ee
            + p * tr2);
    let cov = -c
        * ((2.0 * n * n + n * p - n + 2.0 * p + 9.0) * wf
            + (11.0 * n + 3.0) * b4
            + (2.0 * n * p + 2.0 * n + 2.0 * p + 6.0) * cross
            + (3.0 * n + 2.0 * p + 3.0) * b_tr
            + (p * n + p) * ee
            + p * tr2);
    Ok(ExactCovariance { var_sigma2, var_rho2, cov })
}
