use super::{dual_path, DriftGeometry, StrategyMoments};
use crate::error::{domain, Result};
use crate::stieltjes::{kappa_iid, m_closed_iid, m_prime_iid, solve_s0, SpectralMeasure};
use serde::Serialize;

/// Scalar ingredients of the isotropic formulas at one `(z, cφ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IidTerms {
    /// Return shrinkage `f(z; cφ)`.
    pub f: f64,
    /// Bias coefficient of the leverage, `1 − 2zm + z²m′` in the limit.
    pub b: f64,
    /// Noise coefficient of the leverage.
    pub h: f64,
}

fn check_cphi(z: f64, cphi: f64) -> Result<()> {
    if !(cphi > 0.0 && cphi.is_finite()) {
        return Err(domain(format!("cφ = {cphi} must be positive")));
    }
    if !(z >= 0.0 && z.is_finite()) {
        return Err(domain(format!("z = {z} must be ≥ 0")));
    }
    if z == 0.0 && cphi == 1.0 {
        return Err(domain("ridgeless formulas diverge at cφ = 1"));
    }
    Ok(())
}

/// `f(z; c) = 1 − z/(z(1 + c m) + 1 − c)`, and `1 − (c−1)/c·1{c>1}` at `z = 0`.
pub fn f_iid(z: f64, cphi: f64) -> Result<f64> {
    check_cphi(z, cphi)?;
    if z == 0.0 {
        return Ok(if cphi > 1.0 { 1.0 / cphi } else { 1.0 });
    }
    let kappa = kappa_iid(z, cphi);
    Ok(kappa / (kappa + z))
}

impl IidTerms {
    /// Raw resolvent-trace route: `b = 1 − 2zm + z²m′`, `H = cφ(m − zm′)`;
    /// ridgeless values through `s₀`.
    fn traces(z: f64, cphi: f64) -> Result<Self> {
        if z == 0.0 {
            if cphi < 1.0 {
                return Ok(IidTerms {
                    f: 1.0,
                    b: 1.0,
                    h: cphi / (1.0 - cphi),
                });
            }
            let s0 = solve_s0(cphi, &SpectralMeasure::delta(1.0))?.value;
            let g = cphi * s0;
            return Ok(IidTerms {
                f: g / (1.0 + g),
                b: (g * g + g) / (1.0 + g).powi(2),
                h: g,
            });
        }
        let m = m_closed_iid(z, cphi);
        let mp = m_prime_iid(z, cphi, m);
        Ok(IidTerms {
            f: 1.0 - z / (z * (1.0 + cphi * m) + 1.0 - cphi),
            b: 1.0 - 2.0 * z * m + z * z * mp,
            h: cphi * (m - z * mp),
        })
    }

    /// Closed route through the companion root `κ`: with `D = (κ+z)² + cφz`,
    /// `m₁ = κ/D`, `b = (κ² + cφz²m₁)/(κ+z)²` and `H = cφκ/D`; explicit
    /// ridgeless limits.
    fn closed(z: f64, cphi: f64) -> Result<Self> {
        if z == 0.0 {
            return Ok(if cphi < 1.0 {
                IidTerms {
                    f: 1.0,
                    b: 1.0,
                    h: cphi / (1.0 - cphi),
                }
            } else {
                IidTerms {
                    f: 1.0 / cphi,
                    b: 1.0 / cphi,
                    h: 1.0 / (cphi - 1.0),
                }
            });
        }
        let kappa = kappa_iid(z, cphi);
        let d = (kappa + z).powi(2) + cphi * z;
        let m1 = kappa / d;
        Ok(IidTerms {
            f: kappa / (kappa + z),
            b: (kappa * kappa + cphi * z * z * m1) / (kappa + z).powi(2),
            h: cphi * kappa / d,
        })
    }

    pub fn new(z: f64, cphi: f64) -> Result<Self> {
        check_cphi(z, cphi)?;
        let a = Self::traces(z, cphi)?;
        let b = Self::closed(z, cphi)?;
        // The trace route subtracts O(1/z) terms; the allowed gap scales with that cancellation.
        let (cond_f, cond_b, cond_h) = if z > 0.0 {
            let m = m_closed_iid(z, cphi);
            let mp = m_prime_iid(z, cphi, m);
            let den = z * (1.0 + cphi * m);
            (
                (den + (1.0 - cphi).abs()) / (den + 1.0 - cphi).abs(),
                (1.0 + 2.0 * z * m + z * z * mp) / b.b.abs(),
                (m + z * mp) / (m - z * mp).abs(),
            )
        } else {
            (1.0, 1.0, 1.0)
        };
        dual_path("f", a.f, b.f, 1e-9 + 1e-13 * cond_f)?;
        dual_path("leverage bias coefficient", a.b, b.b, 1e-9 + 1e-13 * cond_b)?;
        dual_path("leverage noise coefficient", a.h, b.h, 1e-9 + 1e-13 * cond_h)?;
        Ok(b)
    }
}

pub fn expected_return_iid(z: f64, cphi: f64, geom: &DriftGeometry) -> Result<f64> {
    Ok(f_iid(z, cphi)? * geom.inner())
}

/// Mean, variance, leverage and Sharpe for isotropic features and unobserved
/// features independent of the observed ones.
pub fn moments_iid(z: f64, cphi: f64, geom: &DriftGeometry, m4: f64) -> Result<StrategyMoments> {
    if !(m4 >= 1.0) {
        return Err(domain(format!("m4 = {m4} must be ≥ 1")));
    }
    let t = IidTerms::new(z, cphi)?;
    if t.f < 1e-12 {
        return Err(domain(format!("f = {} is below 1e-12; the Sharpe ratio is not resolved", t.f)));
    }
    let mean = t.f * geom.inner();
    let leverage = t.b * geom.beta_is.norm_squared() + (1.0 + geom.theta_is.norm_squared()) * t.h;
    let kurt = t.b * geom.hadamard_norm();

    // Second moment E[π̂²r²] = (1 + S_oos)L + 2E² + (m4 − 3)K, minus the squared mean.
    let second = (1.0 + geom.s_oos()) * leverage + 2.0 * mean * mean + (m4 - 3.0) * kurt;
    let from_second = second - mean * mean;
    let variance = (1.0 + geom.s_oos()) * leverage + mean * mean + (m4 - 3.0) * kurt;
    dual_path("variance", from_second, variance, 1e-10)?;
    if variance < 0.0 {
        return Err(crate::error::Error::Numerical(format!("negative variance {variance}")));
    }
    StrategyMoments::assemble(mean, variance, leverage, kurt, z)
}

/// `(variance, leverage)`.
pub fn variance_iid(z: f64, cphi: f64, geom: &DriftGeometry, m4: f64) -> Result<(f64, f64)> {
    let m = moments_iid(z, cphi, geom, m4)?;
    Ok((m.variance, m.leverage))
}

pub fn sharpe_iid(z: f64, cphi: f64, geom: &DriftGeometry, m4: f64) -> Result<f64> {
    Ok(moments_iid(z, cphi, geom, m4)?.sharpe)
}
