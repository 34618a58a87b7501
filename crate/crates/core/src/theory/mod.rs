//! Limiting mean, variance, leverage and Sharpe ratio of the ridge timing
//! strategy `π̂ = β̂′x_t`, for isotropic and general covariances.

mod general;
mod iid;
mod latent;

pub use general::{expected_return_general, h_kernel, misspecification_terms, variance_general, GeneralContext, GeneralTerms, HKernel};
pub use iid::{expected_return_iid, f_iid, moments_iid, sharpe_iid, variance_iid, IidTerms};
pub use latent::latent_g;

use crate::error::{domain, validation, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// In-sample and out-of-sample loadings of the observed (β) and unobserved (θ) features.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftGeometry {
    pub beta_is: DVector<f64>,
    pub beta_oos: DVector<f64>,
    pub theta_is: DVector<f64>,
    pub theta_oos: DVector<f64>,
}

impl DriftGeometry {
    pub fn new(beta_is: DVector<f64>, beta_oos: DVector<f64>, theta_is: DVector<f64>, theta_oos: DVector<f64>) -> Result<Self> {
        if beta_is.len() != beta_oos.len() || theta_is.len() != theta_oos.len() {
            return Err(validation("in-sample and out-of-sample loadings differ in length"));
        }
        Ok(DriftGeometry {
            beta_is,
            beta_oos,
            theta_is,
            theta_oos,
        })
    }

    /// Observed loadings only (`q = 0`).
    pub fn well_specified(beta_is: DVector<f64>, beta_oos: DVector<f64>) -> Result<Self> {
        Self::new(beta_is, beta_oos, DVector::zeros(0), DVector::zeros(0))
    }

    /// `β_is = p^{−1/2}·1`, `θ_is = s·q^{−1/2}·1`, out-of-sample loadings scaled by `k`.
    pub fn proportional(p: usize, q: usize, k: f64, theta_scale: f64) -> Self {
        let b = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        let t = if q > 0 {
            DVector::from_element(q, theta_scale / (q as f64).sqrt())
        } else {
            DVector::zeros(0)
        };
        DriftGeometry {
            beta_oos: &b * k,
            theta_oos: &t * k,
            beta_is: b,
            theta_is: t,
        }
    }

    pub fn inner(&self) -> f64 {
        self.beta_is.dot(&self.beta_oos)
    }

    pub fn hadamard_norm(&self) -> f64 {
        self.beta_is.component_mul(&self.beta_oos).norm_squared()
    }

    pub fn s_is(&self) -> f64 {
        self.beta_is.norm_squared() + self.theta_is.norm_squared()
    }

    pub fn s_oos(&self) -> f64 {
        self.beta_oos.norm_squared() + self.theta_oos.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    Ridge { z: f64 },
    Ridgeless,
}

impl Regime {
    pub fn from_z(z: f64) -> Self {
        if z == 0.0 {
            Regime::Ridgeless
        } else {
            Regime::Ridge { z }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyMoments {
    pub mean: f64,
    pub variance: f64,
    /// `E[π̂²]`.
    pub leverage: f64,
    /// Coefficient of `m4 − 3` in the variance.
    pub kurtosis_term: f64,
    pub sharpe: f64,
    pub regime: Regime,
}

impl StrategyMoments {
    pub(crate) fn assemble(mean: f64, variance: f64, leverage: f64, kurtosis_term: f64, z: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(domain(format!("strategy variance {variance} is not positive")));
        }
        Ok(StrategyMoments {
            mean,
            variance,
            leverage,
            kurtosis_term,
            sharpe: mean / variance.sqrt(),
            regime: Regime::from_z(z),
        })
    }

    pub fn vol(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Both routes to the same quantity must agree; the check is kept in release
/// builds because a mismatch means a transcription bug, not noise.
pub(crate) fn dual_path(what: &str, a: f64, b: f64, tol: f64) -> Result<()> {
    if rel_gap(a, b) > tol && (a - b).abs() > 1e-13 {
        return Err(crate::error::Error::Numerical(format!("{what}: paths disagree ({a} vs {b})")));
    }
    Ok(())
}

/// Limiting prediction risk `E[(x′(β̂ − β_oos) − w′θ_oos)²]` of the min-norm
/// fit under drift (isotropic features, `c ≠ 1`). The noise of the
/// out-of-sample return itself is not included.
pub fn prediction_risk(sigma2: f64, geom: &DriftGeometry, c: f64) -> Result<f64> {
    if c == 1.0 || !(c > 0.0) {
        return Err(domain(format!("prediction risk undefined at c = {c}")));
    }
    let noise = sigma2 + geom.theta_is.norm_squared();
    let drift = (&geom.beta_oos - &geom.beta_is).norm_squared();
    let unobs = geom.theta_oos.norm_squared();
    Ok(if c < 1.0 {
        noise * c / (1.0 - c) + drift + unobs
    } else {
        noise / (c - 1.0) + drift / c + (1.0 - 1.0 / c) * geom.beta_oos.norm_squared() + unobs
    })
}

/// Whether drift lowers the expected return relative to no drift:
/// `⟨β_oos − β_is, β_is⟩ < 0`.
pub fn drift_hurts(geom: &DriftGeometry) -> bool {
    let delta = &geom.beta_oos - &geom.beta_is;
    let by_inner = delta.dot(&geom.beta_is) < 0.0;
    let by_norms = geom.beta_oos.norm_squared() - geom.beta_is.norm_squared() < delta.norm_squared();
    debug_assert_eq!(by_inner, by_norms, "drift criteria disagree");
    by_inner
}

/// Expected return when `β_oos = W β_is`. For symmetric `W` the value is
/// assembled from the eigenpairs `(ξₖ, vₖ)` as `f Σ ξₖ cos²(β_is, vₖ) ‖β_is‖²`.
pub fn linear_drift_return(z: f64, cphi: f64, beta_is: &DVector<f64>, w: &DMatrix<f64>) -> Result<f64> {
    let p = beta_is.len();
    if w.nrows() != p || w.ncols() != p {
        return Err(validation(format!("W must be {p}×{p}")));
    }
    let f = f_iid(z, cphi)?;
    let nb = beta_is.norm_squared();
    let scale = w.abs().max().max(f64::MIN_POSITIVE);
    if nb == 0.0 || (w - w.transpose()).abs().max() > 1e-12 * scale {
        return Ok(f * beta_is.dot(&(w * beta_is)));
    }
    let se = SymmetricEigen::new(w.clone());
    let mut acc = 0.0;
    for k in 0..p {
        let cos = se.eigenvectors.column(k).dot(beta_is) / nb.sqrt();
        acc += se.eigenvalues[k] * cos * cos;
    }
    Ok(f * acc * nb)
}
