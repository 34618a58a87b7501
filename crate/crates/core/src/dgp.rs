//! Simulated training samples, ridge and min-norm fits, and realised strategy returns.

use crate::error::{validation, Error, Result};
use crate::rng::{fill_normal, stream_rng};
use crate::spectra::CovarianceSpec;
use crate::theory::DriftGeometry;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LatentDist {
    Gaussian,
    /// Symmetric three-point law on `{−√m4, 0, √m4}` with `P(±√m4) = 1/(2 m4)`:
    /// unit variance and fourth moment `m4 ≥ 1` (`m4 = 1` is Rademacher).
    Discrete { m4: f64 },
}

impl LatentDist {
    pub fn m4(&self) -> f64 {
        match self {
            LatentDist::Gaussian => 3.0,
            LatentDist::Discrete { m4 } => *m4,
        }
    }

    pub fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match *self {
            LatentDist::Gaussian => fill_normal(rng, out),
            LatentDist::Discrete { m4 } => {
                let a = m4.sqrt();
                let p = 1.0 / m4;
                for v in out {
                    let u: f64 = rng.random();
                    *v = if u < 0.5 * p {
                        a
                    } else if u < p {
                        -a
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

/// How the unobserved features relate to the observed ones.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixing {
    /// `w = Σ_w^{1/2} u` with `u` independent of `x`.
    Independent,
    /// `x = Σ_x^{1/2} z`, `w = Σ_w^{1/2} P z` for a q×p matrix `P`.
    Latent(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub z: f64,
    pub sigma_x: CovarianceSpec,
    pub sigma_w: CovarianceSpec,
    pub mixing: Mixing,
    pub geometry: DriftGeometry,
    pub latent: LatentDist,
    pub seed: u64,
}

impl ModelSpec {
    /// Isotropic spec with independent unobserved features and Gaussian latents.
    pub fn isotropic(n: usize, geometry: DriftGeometry, z: f64, seed: u64) -> Self {
        let (p, q) = (geometry.beta_is.len(), geometry.theta_is.len());
        ModelSpec {
            n,
            p,
            q,
            z,
            sigma_x: CovarianceSpec::Identity(p),
            sigma_w: CovarianceSpec::Identity(q),
            mixing: Mixing::Independent,
            geometry,
            latent: LatentDist::Gaussian,
            seed,
        }
    }

    pub fn cphi(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn c(&self) -> f64 {
        (self.p + self.q) as f64 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if self.n == 0 || self.p == 0 {
            return Err(validation("n and p must be positive"));
        }
        if g.beta_is.len() != self.p || g.beta_oos.len() != self.p {
            return Err(validation(format!("β vectors must have length p = {}", self.p)));
        }
        if g.theta_is.len() != self.q || g.theta_oos.len() != self.q {
            return Err(validation(format!("θ vectors must have length q = {}", self.q)));
        }
        if self.sigma_x.dim() != self.p || self.sigma_w.dim() != self.q {
            return Err(validation("covariance dimensions do not match (p, q)"));
        }
        if let Mixing::Latent(pm) = &self.mixing {
            if pm.nrows() != self.q || pm.ncols() != self.p {
                return Err(validation(format!("P must be {}×{}", self.q, self.p)));
            }
        }
        if !(self.z >= 0.0) {
            return Err(validation(format!("z = {} must be ≥ 0", self.z)));
        }
        if let LatentDist::Discrete { m4 } = self.latent {
            if !(m4 >= 1.0 && m4.is_finite()) {
                return Err(validation(format!("m4 = {m4} must be ≥ 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_next: DVector<f64>,
    pub w_next: DVector<f64>,
    pub r_next: f64,
}

/// Stream identifiers inside one draw.
pub(crate) mod streams {
    pub const TRAIN_Z: u64 = 0;
    pub const TRAIN_U: u64 = 1;
    pub const TRAIN_E: u64 = 2;
    pub const NEXT_Z: u64 = 3;
    pub const NEXT_U: u64 = 4;
    pub const NEXT_E: u64 = 5;
}

pub(crate) fn latent_matrix(spec: &ModelSpec, draw: u64, stream: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut rng = stream_rng(spec.seed, draw, stream);
    let mut buf = vec![0.0; rows * cols];
    spec.latent.fill(&mut rng, &mut buf);
    DMatrix::from_vec(rows, cols, buf)
}

pub(crate) fn noise(seed: u64, draw: u64, stream: u64, len: usize) -> DVector<f64> {
    let mut rng = stream_rng(seed, draw, stream);
    let mut buf = vec![0.0; len];
    fill_normal(&mut rng, &mut buf);
    DVector::from_vec(buf)
}

/// Draw number 0 of the spec's seed.
pub fn sample(spec: &ModelSpec) -> Result<Sample> {
    sample_draw(spec, 0)
}

pub fn sample_draw(spec: &ModelSpec, draw: u64) -> Result<Sample> {
    spec.validate()?;
    let (n, p, q) = (spec.n, spec.p, spec.q);
    let g = &spec.geometry;
    let sx = spec.sigma_x.sqrt()?;
    let sw = spec.sigma_w.sqrt()?;
    let zt = latent_matrix(spec, draw, streams::TRAIN_Z, n, p);
    let zn = latent_matrix(spec, draw, streams::NEXT_Z, p, 1).column(0).into_owned();
    let x = &zt * &sx;
    let x_next = &sx * &zn;
    let (w, w_next) = match &spec.mixing {
        Mixing::Independent => {
            let ut = latent_matrix(spec, draw, streams::TRAIN_U, n, q);
            let un = latent_matrix(spec, draw, streams::NEXT_U, q, 1).column(0).into_owned();
            (&ut * &sw, &sw * un)
        }
        Mixing::Latent(pm) => (&zt * pm.transpose() * &sw, &sw * (pm * &zn)),
    };
    let e = noise(spec.seed, draw, streams::TRAIN_E, n);
    let e_next = noise(spec.seed, draw, streams::NEXT_E, 1)[0];
    let y = &x * &g.beta_is + &w * &g.theta_is + e;
    let r_next = x_next.dot(&g.beta_oos) + w_next.dot(&g.theta_oos) + e_next;
    Ok(Sample {
        x,
        w,
        y,
        x_next,
        w_next,
        r_next,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverTag {
    Primal,
    Dual,
    PseudoInverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub beta_hat: DVector<f64>,
    pub solver: SolverTag,
    pub seed: Option<u64>,
}

fn check_finite(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(validation(format!("X has {} rows but y has {}", x.nrows(), y.len())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(validation("non-finite entries in X or y"));
    }
    Ok(())
}

/// `β̂ = (X′X + nzI)⁻¹ X′y`, solved on the smaller Gram matrix.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, z: f64) -> Result<FittedModel> {
    check_finite(x, y)?;
    if !(z > 0.0 && z.is_finite()) {
        return Err(validation(format!("ridge needs z > 0, got {z}")));
    }
    RidgeFamily::new(x, y).fit(z)
}

/// Minimum-norm least squares through the SVD pseudo-inverse.
pub fn fit_ridgeless(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FittedModel> {
    check_finite(x, y)?;
    pinv_fit(x, y)
}

fn pinv_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FittedModel> {
    let svd = SVD::new(x.clone(), true, true);
    let smax = svd.singular_values.max();
    let eps = smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    let beta_hat = svd.solve(y, eps).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(FittedModel {
        beta_hat,
        solver: SolverTag::PseudoInverse,
        seed: None,
    })
}

pub fn strategy_return(beta_hat: &DVector<f64>, x_next: &DVector<f64>, r_next: f64) -> f64 {
    beta_hat.dot(x_next) * r_next
}

/// One training sample fitted along a path of ridge levels: the smaller Gram
/// matrix is formed once and factorised per level.
pub struct RidgeFamily<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    dual: bool,
    gram: DMatrix<f64>,
    xty: Option<DVector<f64>>,
}

impl<'a> RidgeFamily<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Self {
        let dual = x.ncols() > x.nrows();
        let (gram, xty) = if dual {
            (x * x.transpose(), None)
        } else {
            (x.tr_mul(x), Some(x.tr_mul(y)))
        };
        RidgeFamily { x, y, dual, gram, xty }
    }

    /// Ridge fit at level `z`; `z = 0` gives the min-norm fit.
    pub fn fit(&self, z: f64) -> Result<FittedModel> {
        let n = self.x.nrows() as f64;
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += n * z;
        }
        let Some(chol) = Cholesky::<f64, Dyn>::new(a) else {
            if z == 0.0 {
                return pinv_fit(self.x, self.y);
            }
            return Err(Error::Numerical(format!("ridge system not positive definite at z = {z}")));
        };
        // A numerically singular Gram at z = 0 is handed to the SVD path.
        if z == 0.0 {
            let d = chol.l_dirty().diagonal();
            let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo <= 1e-7 * hi {
                return pinv_fit(self.x, self.y);
            }
        }
        let (beta_hat, solver) = if self.dual {
            (self.x.tr_mul(&chol.solve(self.y)), SolverTag::Dual)
        } else {
            (chol.solve(self.xty.as_ref().unwrap()), SolverTag::Primal)
        };
        Ok(FittedModel {
            beta_hat,
            solver,
            seed: None,
        })
    }
}
