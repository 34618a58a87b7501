//! Covariance structures, their eigensystems, and the (vector-weighted)
//! spectral distributions consumed by the general-covariance formulas.

use crate::dgp::{Mixing, ModelSpec};
use crate::error::{validation, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use crate::stieltjes::{MeasureKind, SpectralMeasure};

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    Identity(usize),
    /// `Σᵢⱼ = ρ^|i−j|`.
    Autoregressive { p: usize, rho: f64 },
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Sorted in decreasing order.
    pub values: DVector<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl CovarianceSpec {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::Identity(p) => *p,
            CovarianceSpec::Autoregressive { p, .. } => *p,
            CovarianceSpec::Dense(m) => m.nrows(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, CovarianceSpec::Identity(_))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            CovarianceSpec::Identity(p) => DMatrix::identity(*p, *p),
            CovarianceSpec::Autoregressive { p, rho } => {
                DMatrix::from_fn(*p, *p, |i, j| rho.powi((i as i32 - j as i32).abs()))
            }
            CovarianceSpec::Dense(m) => m.clone(),
        }
    }

    pub fn eigen(&self) -> Result<EigenSystem> {
        let p = self.dim();
        if p == 0 {
            return Err(validation("covariance of dimension 0"));
        }
        if let CovarianceSpec::Identity(_) = self {
            return Ok(EigenSystem {
                values: DVector::from_element(p, 1.0),
                vectors: DMatrix::identity(p, p),
            });
        }
        if let CovarianceSpec::Autoregressive { rho, .. } = self {
            if !(rho.abs() < 1.0) {
                return Err(validation(format!("AR coefficient {rho} is not in (−1, 1)")));
            }
        }
        let m = self.matrix();
        if m.ncols() != p || m.iter().any(|v| !v.is_finite()) {
            return Err(validation("covariance must be a finite square matrix"));
        }
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        if (&m - m.transpose()).abs().max() > 1e-12 * scale {
            return Err(validation("covariance is not symmetric"));
        }
        let se = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
        let top = se.eigenvalues[order[0]].abs().max(f64::MIN_POSITIVE);
        let mut values = DVector::zeros(p);
        let mut vectors = DMatrix::zeros(p, p);
        for (k, &i) in order.iter().enumerate() {
            let l = se.eigenvalues[i];
            if l < -1e-10 * top {
                return Err(validation(format!("covariance is not PSD (eigenvalue {l})")));
            }
            values[k] = l.max(0.0);
            vectors.set_column(k, &se.eigenvectors.column(i));
        }
        Ok(EigenSystem { values, vectors })
    }

    /// Symmetric square root `Σ^{1/2}`.
    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        if let CovarianceSpec::Identity(p) = self {
            return Ok(DMatrix::identity(*p, *p));
        }
        Ok(self.eigen()?.apply(f64::sqrt))
    }
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V g(Λ) Vᵀ`.
    pub fn apply(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= g(self.values[k]);
        }
        scaled * self.vectors.transpose()
    }

    /// Uniform-weight ESD.
    pub fn esd(&self) -> Result<SpectralMeasure> {
        let w = 1.0 / self.dim() as f64;
        SpectralMeasure::density(self.values.iter().map(|&l| (l, w)).collect())
    }

    /// Atoms `(λᵢ, ⟨u,vᵢ⟩⟨vᵢ,v⟩/(‖u‖‖v‖))`.
    pub fn vesd(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<SpectralMeasure> {
        let p = self.dim();
        if u.len() != p || v.len() != p {
            return Err(validation(format!("vector length {} / {} does not match dimension {p}", u.len(), v.len())));
        }
        let (nu, nv) = (u.norm(), v.norm());
        if nu == 0.0 || nv == 0.0 {
            return Err(validation("VESD of a zero vector"));
        }
        let pu = self.vectors.tr_mul(u);
        let pv = self.vectors.tr_mul(v);
        let atoms = (0..p)
            .map(|i| (self.values[i], pu[i] * pv[i] / (nu * nv)))
            .collect();
        SpectralMeasure::signed(atoms)
    }

    /// `vesd(u, u)` re-tagged as a density.
    pub fn vesd_density(&self, u: &DVector<f64>) -> Result<SpectralMeasure> {
        self.vesd(u, u)?.into_density(1e-9)
    }
}

pub fn esd(sigma: &CovarianceSpec) -> Result<SpectralMeasure> {
    if let CovarianceSpec::Identity(_) = sigma {
        return Ok(SpectralMeasure::delta(1.0));
    }
    sigma.eigen()?.esd()
}

pub fn vesd(sigma: &CovarianceSpec, u: &DVector<f64>, v: &DVector<f64>) -> Result<SpectralMeasure> {
    sigma.eigen()?.vesd(u, v)
}

/// The two-atom spectrum `Υδ_{1+Υ⁻¹} + (1 − Υ)δ₁` of the latent-space model,
/// built analytically.
pub fn latent_measure(upsilon: f64) -> Result<SpectralMeasure> {
    if !(upsilon > 0.0 && upsilon < 1.0) {
        return Err(crate::error::domain(format!("Υ = {upsilon} is not in (0, 1)")));
    }
    SpectralMeasure::density(vec![(1.0 + 1.0 / upsilon, upsilon), (1.0, 1.0 - upsilon)])
}

/// `ω_u = Σ_x^{1/2} β_u + P′ Σ_w^{1/2} θ_u` for `u ∈ {is, oos}`. With
/// independent unobserved features `P = 0` and ω reduces to `Σ_x^{1/2} β`.
pub fn omega_vectors(spec: &ModelSpec) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.validate()?;
    let g = &spec.geometry;
    let sx = spec.sigma_x.sqrt()?;
    let mut is = &sx * &g.beta_is;
    let mut oos = &sx * &g.beta_oos;
    if let Mixing::Latent(pm) = &spec.mixing {
        if spec.q > 0 {
            let sw = spec.sigma_w.sqrt()?;
            is += pm.tr_mul(&(&sw * &g.theta_is));
            oos += pm.tr_mul(&(&sw * &g.theta_oos));
        }
    }
    Ok((is, oos))
}

/// `P` with `Pᵢⱼ = δᵢⱼ` (q×p).
pub fn diagonal_mixing(q: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(q, p, |i, j| if i == j { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_esd_is_single_atom() {
        let mu = esd(&CovarianceSpec::Identity(5)).unwrap();
        assert_eq!(mu.atoms(), &[(1.0, 1.0)]);
        let mu = CovarianceSpec::Dense(DMatrix::identity(5, 5)).eigen().unwrap().esd().unwrap();
        assert_eq!(mu.atoms().len(), 1);
        assert!((mu.atoms()[0].1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ar2_esd_and_cross_vesd() {
        let s = CovarianceSpec::Autoregressive { p: 2, rho: 0.9 };
        let mu = esd(&s).unwrap();
        assert!((mu.atoms()[0].0 - 1.9).abs() < 1e-12 && (mu.atoms()[1].0 - 0.1).abs() < 1e-12);
        assert!((mu.atoms()[0].1 - 0.5).abs() < 1e-12);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        let x = vesd(&s, &e1, &e2).unwrap();
        assert!((x.atoms()[0].1 - 0.5).abs() < 1e-12);
        assert!((x.atoms()[1].1 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_esd() {
        let s = CovarianceSpec::Dense(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 1.0, 1.0])));
        let mu = esd(&s).unwrap();
        assert_eq!(mu.atoms(), &[(2.0, 0.5), (1.0, 0.5)]);
    }

    #[test]
    fn rejects_bad_covariances() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CovarianceSpec::Dense(asym).eigen().is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(esd(&CovarianceSpec::Dense(indefinite)).is_err());
        let s = CovarianceSpec::Identity(3);
        assert!(vesd(&s, &DVector::zeros(3), &DVector::from_element(3, 1.0)).is_err());
    }

    #[test]
    fn identity_vesd_is_cosine() {
        let s = CovarianceSpec::Identity(3);
        let u = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        let mu = vesd(&s, &u, &v).unwrap();
        assert_eq!(mu.atoms().len(), 1);
        assert!((mu.atoms()[0].1 - u.dot(&v) / (u.norm() * v.norm())).abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let s = CovarianceSpec::Autoregressive { p: 20, rho: 0.9 };
        let r = s.sqrt().unwrap();
        assert!((&r * &r - s.matrix()).abs().max() < 1e-12);
    }
}
