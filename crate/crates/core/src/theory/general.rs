//! General-covariance formulas. Everything is expressed through
//! `ω_u = Σ_x^{1/2}β_u + P′Σ_w^{1/2}θ_u` and spectral measures of `Σ_x`.

use super::{dual_path, StrategyMoments};
use crate::dgp::{Mixing, ModelSpec};
use crate::error::{domain, Error, Result};
use crate::spectra::{CovarianceSpec, EigenSystem, SpectralMeasure};
use crate::stieltjes::{s0_prime, solve_kappa, solve_s0};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

const MAX_DENSE_P: usize = 2000;

/// `h(λ)`: `1 − z/(λ(cφzm + 1 − cφ) + z)` for ridge, `1 − 1{cφ>1}/(1 + λcφs₀)` ridgeless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HKernel {
    Ridge { z: f64, kappa: f64 },
    /// `g = cφ s₀`.
    RidgelessOver { g: f64 },
    RidgelessUnder,
}

impl HKernel {
    pub fn new(z: f64, cphi: f64, mu: &SpectralMeasure) -> Result<Self> {
        if z > 0.0 {
            Ok(HKernel::Ridge {
                z,
                kappa: solve_kappa(z, cphi, mu)?.value,
            })
        } else if z == 0.0 {
            if cphi == 1.0 {
                return Err(domain("ridgeless kernel diverges at cφ = 1"));
            }
            if cphi > 1.0 {
                Ok(HKernel::RidgelessOver {
                    g: cphi * solve_s0(cphi, mu)?.value,
                })
            } else {
                Ok(HKernel::RidgelessUnder)
            }
        } else {
            Err(domain(format!("z = {z} must be ≥ 0")))
        }
    }

    pub fn eval(&self, lambda: f64) -> Result<f64> {
        let d = match *self {
            HKernel::Ridge { z, kappa } => {
                let d = lambda * kappa + z;
                if d <= 0.0 {
                    return Err(Error::Singularity(format!("h denominator {d} at λ = {lambda}")));
                }
                return Ok(1.0 - z / d);
            }
            HKernel::RidgelessOver { g } => 1.0 + lambda * g,
            HKernel::RidgelessUnder => return Ok(1.0),
        };
        if d <= 0.0 {
            return Err(Error::Singularity(format!("h denominator {d} at λ = {lambda}")));
        }
        Ok(1.0 - 1.0 / d)
    }
}

pub fn h_kernel(lambda: f64, z: f64, cphi: f64, mu: &SpectralMeasure) -> Result<f64> {
    HKernel::new(z, cphi, mu)?.eval(lambda)
}

/// `(1 − cφ + cφz²m′, m₁)` from `T₁ = ∫λ/(z+κλ)²` and `T₂ = ∫λ²/(z+κλ)²`:
/// differentiating the fixed point gives `κ/(1 + cφzT₁)` and `κT₂/(1 + cφzT₁)`,
/// neither of which cancels as `z → 0`.
fn noise_factors(z: f64, cphi: f64, kappa: f64, t1: f64, t2: f64) -> (f64, f64) {
    let den = 1.0 + cphi * z * t1;
    (kappa / den, kappa * t2 / den)
}

/// All intermediate quantities of the general formulas at one ridge level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralTerms {
    pub mean: f64,
    /// Well-specified part `‖β_is‖‖β_oos‖∫λh dζ_d`.
    pub w: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub leverage: f64,
    pub noise: f64,
    pub kurtosis_term: f64,
    pub variance: f64,
}

/// Precomputed eigensystem and loading vectors of a [`ModelSpec`], reused
/// across ridge levels.
#[derive(Debug, Clone)]
pub struct GeneralContext {
    pub cphi: f64,
    eig: EigenSystem,
    mu: SpectralMeasure,
    sigma: DMatrix<f64>,
    beta_is: DVector<f64>,
    beta_oos: DVector<f64>,
    a_is: DVector<f64>,
    a_oos: DVector<f64>,
    pub omega_is: DVector<f64>,
    pub omega_oos: DVector<f64>,
    /// `θ′Σ_wθ` of unobserved features independent of `x` (zero when mixed).
    extra_is: f64,
    extra_oos: f64,
}

/// `‖u‖‖v‖ ∫ f dvesd(u, v)`, zero when either vector vanishes.
fn cross(eig: &EigenSystem, u: &DVector<f64>, v: &DVector<f64>, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let nu_ = eig.vesd(u, v)?;
    let mut acc = 0.0;
    for &(l, w) in nu_.atoms() {
        let val = f(l)?;
        acc += w * val;
    }
    Ok(nu * nv * acc)
}

/// `∫ λ dϖ` with `ϖ` the VESD of `ω` against the eigensystem of `A`.
fn varpi_mean(a: &DMatrix<f64>, omega: &DVector<f64>) -> Result<f64> {
    let eig = CovarianceSpec::Dense(a.clone()).eigen()?;
    eig.vesd_density(omega)?.integrate(|l| l)
}

impl GeneralContext {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if spec.p > MAX_DENSE_P {
            return Err(domain(format!("p = {} exceeds the dense limit {MAX_DENSE_P}", spec.p)));
        }
        let eig = spec.sigma_x.eigen()?;
        let mu = if spec.sigma_x.is_identity() {
            SpectralMeasure::delta(1.0)
        } else {
            eig.esd()?
        };
        let sx = eig.apply(f64::sqrt);
        let g = &spec.geometry;
        let (mut a_is, mut a_oos) = (DVector::zeros(spec.p), DVector::zeros(spec.p));
        let (mut extra_is, mut extra_oos) = (0.0, 0.0);
        if spec.q > 0 {
            match &spec.mixing {
                Mixing::Latent(pm) => {
                    let sw = spec.sigma_w.sqrt()?;
                    a_is = pm.tr_mul(&(&sw * &g.theta_is));
                    a_oos = pm.tr_mul(&(&sw * &g.theta_oos));
                }
                Mixing::Independent => {
                    let w = spec.sigma_w.matrix();
                    extra_is = g.theta_is.dot(&(&w * &g.theta_is));
                    extra_oos = g.theta_oos.dot(&(&w * &g.theta_oos));
                }
            }
        }
        let omega_is = &sx * &g.beta_is + &a_is;
        let omega_oos = &sx * &g.beta_oos + &a_oos;
        Ok(GeneralContext {
            cphi: spec.cphi(),
            sigma: spec.sigma_x.matrix(),
            eig,
            mu,
            beta_is: g.beta_is.clone(),
            beta_oos: g.beta_oos.clone(),
            a_is,
            a_oos,
            omega_is,
            omega_oos,
            extra_is,
            extra_oos,
        })
    }

    pub fn with_cphi(mut self, cphi: f64) -> Self {
        self.cphi = cphi;
        self
    }

    pub fn measure(&self) -> &SpectralMeasure {
        &self.mu
    }

    pub fn kernel(&self, z: f64) -> Result<HKernel> {
        HKernel::new(z, self.cphi, &self.mu)
    }

    /// `‖ω_is‖‖ω_oos‖ ∫ h dι_d`.
    pub fn expected_return(&self, z: f64) -> Result<f64> {
        let k = self.kernel(z)?;
        cross(&self.eig, &self.omega_is, &self.omega_oos, |l| k.eval(l))
    }

    /// `(W, J₁, J₂, J₃)` with `W + J₁ + J₂ + J₃` the expected return.
    pub fn return_parts(&self, z: f64) -> Result<(f64, f64, f64, f64)> {
        let k = self.kernel(z)?;
        let w = cross(&self.eig, &self.beta_is, &self.beta_oos, |l| Ok(l * k.eval(l)?))?;
        let j1 = cross(&self.eig, &self.beta_oos, &self.a_is, |l| Ok(l.sqrt() * k.eval(l)?))?;
        let j2 = cross(&self.eig, &self.a_is, &self.a_oos, |l| k.eval(l))?;
        let j3 = cross(&self.eig, &self.beta_is, &self.a_oos, |l| Ok(l.sqrt() * k.eval(l)?))?;
        Ok((w, j1, j2, j3))
    }

    /// Evaluate the mean, leverage, kurtosis term and variance through the
    /// spectral measures, and again with dense resolvent matrices; the two
    /// routes are required to agree.
    pub fn terms(&self, z: f64, m4: f64) -> Result<GeneralTerms> {
        if !(m4 >= 1.0) {
            return Err(domain(format!("m4 = {m4} must be ≥ 1")));
        }
        let spectral = self.spectral_route(z, m4)?;
        let dense = self.dense_route(z, m4)?;
        dual_path("general mean", spectral.mean, dense.0, 1e-7)?;
        dual_path("general leverage", spectral.leverage, dense.1, 1e-7)?;
        dual_path("general kurtosis term", spectral.kurtosis_term, dense.2, 1e-6)?;
        dual_path("general variance", spectral.variance, dense.3, 1e-7)?;
        let (w, j1, j2, j3) = self.return_parts(z)?;
        dual_path("return decomposition", w + j1 + j2 + j3, spectral.mean, 1e-8)?;
        Ok(GeneralTerms { w, j1, j2, j3, ..spectral })
    }

    pub fn moments(&self, z: f64, m4: f64) -> Result<StrategyMoments> {
        let t = self.terms(z, m4)?;
        if t.variance < 0.0 {
            return Err(Error::Numerical(format!("negative variance {}", t.variance)));
        }
        StrategyMoments::assemble(t.mean, t.variance, t.leverage, t.kurtosis_term, z)
    }

    fn spectral_route(&self, z: f64, m4: f64) -> Result<GeneralTerms> {
        let g = self.cphi;
        let k = self.kernel(z)?;
        let mean = cross(&self.eig, &self.omega_is, &self.omega_oos, |l| k.eval(l))?;
        let nis2 = self.omega_is.norm_squared();
        let d2 = DMatrix::from_diagonal(&self.omega_oos.map(|v| v * v));

        // Leverage: bias kernel against ι_is plus the noise integral against μ;
        // K through the ϖ measures of Assumption-10 type matrices.
        let (bias_kernel, noise, a1, a2, c2): (Box<dyn Fn(f64) -> f64>, f64, DMatrix<f64>, DMatrix<f64>, f64) = match k {
            HKernel::Ridge { z, kappa } => {
                let t1 = self.mu.integrate(|l| l / (z + l * kappa).powi(2))?;
                let t2 = self.mu.integrate(|l| (l / (z + l * kappa)).powi(2))?;
                let (n_factor, m1v) = noise_factors(z, g, kappa, t1, t2);
                let c2 = g * z * z * m1v;
                let noise = g * n_factor * t2;
                let imz = self.eig.apply(|l| l * kappa / (z + l * kappa));
                let q = self.eig.apply(|l| 1.0 / (z + l * kappa));
                let a1 = &imz * &d2 * &imz;
                let a2 = &q * &d2 * &q;
                (
                    Box::new(move |l: f64| (c2 + (l * kappa).powi(2)) / (z + l * kappa).powi(2)),
                    noise,
                    a1,
                    a2,
                    c2,
                )
            }
            HKernel::RidgelessOver { g: gs0 } => {
                let s0 = gs0 / g;
                let st = s0 * s0_prime(g, &self.mu, s0)?;
                let c2 = g * st;
                let imq = self.eig.apply(|l| gs0 * l / (1.0 + gs0 * l));
                let q0 = self.eig.apply(|l| 1.0 / (1.0 + gs0 * l));
                let a1 = &imq * &d2 * &imq;
                let a2 = &q0 * &d2 * &q0;
                (
                    Box::new(move |l: f64| ((gs0 * l).powi(2) + c2) / (1.0 + gs0 * l).powi(2)),
                    c2,
                    a1,
                    a2,
                    c2,
                )
            }
            HKernel::RidgelessUnder => {
                let p = self.eig.dim();
                (Box::new(|_| 1.0), g / (1.0 - g), d2, DMatrix::zeros(p, p), 0.0)
            }
        };
        let bias = if nis2 > 0.0 {
            nis2 * self.eig.vesd_density(&self.omega_is)?.integrate(&bias_kernel)?
        } else {
            0.0
        };
        let leverage = bias + (1.0 + self.extra_is) * noise;
        let kurt = if nis2 > 0.0 {
            nis2 * (varpi_mean(&a1, &self.omega_is)? + if c2 != 0.0 { c2 * varpi_mean(&a2, &self.omega_is)? } else { 0.0 })
        } else {
            0.0
        };
        let oos = 1.0 + self.omega_oos.norm_squared() + self.extra_oos;
        let variance = oos * leverage + mean * mean + (m4 - 3.0) * kurt;
        Ok(GeneralTerms {
            mean,
            w: 0.0,
            j1: 0.0,
            j2: 0.0,
            j3: 0.0,
            leverage,
            noise,
            kurtosis_term: kurt,
            variance,
        })
    }

    /// `(mean, leverage, K, variance)` from dense inverses in the original
    /// basis; the variance is the second moment minus the squared mean.
    fn dense_route(&self, z: f64, m4: f64) -> Result<(f64, f64, f64, f64)> {
        let g = self.cphi;
        let p = self.sigma.nrows();
        let id = DMatrix::<f64>::identity(p, p);
        let invert = |a: DMatrix<f64>| -> Result<DMatrix<f64>> {
            Cholesky::new(a)
                .map(|c| c.inverse())
                .ok_or_else(|| Error::Numerical("resolvent matrix is not positive definite".into()))
        };
        // (I − zQ, zQ, c₂, noise) with c₂ multiplying (zQ)².
        let (imz, zq, c2, noise) = match self.kernel(z)? {
            HKernel::Ridge { z, kappa } => {
                let q = invert(&id * z + &self.sigma * kappa)?;
                let sq = &self.sigma * &q;
                let t1 = (&sq * &q).trace() / p as f64;
                let t2 = (&sq * &sq).trace() / p as f64;
                let (n_factor, m1v) = noise_factors(z, g, kappa, t1, t2);
                let noise = g * n_factor * t2;
                let zq = q * z;
                (&id - &zq, zq, g * m1v, noise)
            }
            HKernel::RidgelessOver { g: gs0 } => {
                let q0 = invert(&id + &self.sigma * gs0)?;
                let sq = &self.sigma * &q0;
                let num = (&sq * &sq).trace();
                let den = (&sq * &q0).trace();
                let st = (gs0 / g) * num / den;
                (&id - &q0, q0, g * st, g * st)
            }
            HKernel::RidgelessUnder => (id.clone(), DMatrix::zeros(p, p), 0.0, g / (1.0 - g)),
        };
        let mean = self.omega_oos.dot(&(&imz * &self.omega_is));
        let u = &imz * &self.omega_is;
        let v = &zq * &self.omega_is;
        let leverage = u.norm_squared() + c2 * v.norm_squared() + (1.0 + self.extra_is) * noise;
        let kurt = u.component_mul(&self.omega_oos).norm_squared() + c2 * v.component_mul(&self.omega_oos).norm_squared();
        let oos = 1.0 + self.omega_oos.norm_squared() + self.extra_oos;
        let second = oos * leverage + 2.0 * mean * mean + (m4 - 3.0) * kurt;
        Ok((mean, leverage, kurt, second - mean * mean))
    }
}

pub fn expected_return_general(z: f64, cphi: f64, spec: &ModelSpec) -> Result<f64> {
    GeneralContext::new(spec)?.with_cphi(cphi).expected_return(z)
}

pub fn misspecification_terms(z: f64, cphi: f64, spec: &ModelSpec) -> Result<(f64, f64, f64)> {
    let (_, j1, j2, j3) = GeneralContext::new(spec)?.with_cphi(cphi).return_parts(z)?;
    Ok((j1, j2, j3))
}

/// `(variance, leverage, kurtosis_term)`.
pub fn variance_general(z: f64, cphi: f64, spec: &ModelSpec, m4: f64) -> Result<(f64, f64, f64)> {
    let t = GeneralContext::new(spec)?.with_cphi(cphi).terms(z, m4)?;
    Ok((t.variance, t.leverage, t.kurtosis_term))
}
