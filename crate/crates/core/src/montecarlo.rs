//! Monte-Carlo harness: simulate the timing strategy over a grid of drift
//! scenarios and ridge levels and set the sample moments against theory.

use crate::dgp::{latent_matrix, noise, streams, LatentDist, Mixing, ModelSpec, RidgeFamily};
use crate::error::{validation, Result};
use crate::rng::{fill_normal, stream_rng};
use crate::spectra::{diagonal_mixing, CovarianceSpec};
use crate::theory::{moments_iid, DriftGeometry, GeneralContext, StrategyMoments};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// One out-of-sample loading configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub k: f64,
    pub beta_oos: DVector<f64>,
    pub theta_oos: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub experiment: String,
    /// Supplies n, p, q, covariances, mixing, latent law, seed and the
    /// in-sample loadings; its out-of-sample loadings are ignored.
    pub template: ModelSpec,
    pub scenarios: Vec<Scenario>,
    /// Ridge levels; `0` is the min-norm fit.
    pub z_list: Vec<f64>,
    pub draws: usize,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub experiment: String,
    pub k: f64,
    pub z: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub mc_vol: f64,
    pub mc_sharpe: f64,
    pub th_mean: f64,
    pub th_vol: f64,
    pub th_sharpe: f64,
    #[serde(skip)]
    pub mc_vol_se: f64,
    #[serde(skip)]
    pub mc_sharpe_se: f64,
    /// Draw average of `E[π̂ r | training sample]`.
    #[serde(skip)]
    pub cond_mean: f64,
    #[serde(skip)]
    pub cond_se: f64,
    #[serde(skip)]
    pub draws: usize,
    #[serde(skip)]
    pub theory_error: Option<String>,
}

impl GridPoint {
    pub fn rel_gap_mean(&self) -> f64 {
        (self.mc_mean - self.th_mean).abs() / self.th_mean.abs()
    }
    pub fn rel_gap_vol(&self) -> f64 {
        (self.mc_vol - self.th_vol).abs() / self.th_vol.abs()
    }
    pub fn rel_gap_sharpe(&self) -> f64 {
        (self.mc_sharpe - self.th_sharpe).abs() / self.th_sharpe.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub points: Vec<GridPoint>,
}

impl SimulationResult {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Streaming mean and variance (Welford), updated in draw order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }
    fn var(&self) -> f64 {
        if self.n > 1.0 {
            self.m2 / (self.n - 1.0)
        } else {
            f64::NAN
        }
    }
    fn std(&self) -> f64 {
        self.var().sqrt()
    }
}

/// `1` repeated `round(fraction·p)` times then `0.1`, normalised to unit length.
pub fn concentrated_vector(p: usize, fraction: f64) -> Result<DVector<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(validation(format!("fraction {fraction} is not in (0, 1]")));
    }
    let ones = (fraction * p as f64).round() as usize;
    if ones == 0 {
        return Err(validation(format!("p = {p} is too small for fraction {fraction}")));
    }
    let v = DVector::from_fn(p, |i, _| if i < ones { 1.0 } else { 0.1 });
    Ok(&v / v.norm())
}

/// Geometry with `β_is = β_oos` equal to [`concentrated_vector`].
pub fn concentrated_geometry(p: usize, fraction: f64) -> Result<DriftGeometry> {
    let v = concentrated_vector(p, fraction)?;
    DriftGeometry::well_specified(v.clone(), v)
}

pub const PROPORTIONAL_K: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const CONCENTRATED_K: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Loadings {
    Proportional,
    Concentrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Covariance {
    Isotropic,
    /// AR(0.9) for both feature blocks, unobserved features mixed in through `P`.
    Autoregressive,
}

/// Panel of the simulation protocol: `n` samples, `p` observed and `q`
/// unobserved features, unit signal in each block.
pub fn panel(n: usize, p: usize, q: usize, loadings: Loadings, cov: Covariance, z_list: &[f64], draws: usize, seed: u64) -> Result<ExperimentGrid> {
    let unit = |len: usize| DVector::from_element(len, 1.0 / (len.max(1) as f64).sqrt());
    let (beta_is, theta_is, scenarios) = match loadings {
        Loadings::Proportional => {
            let (b, t) = (unit(p), if q > 0 { unit(q) } else { DVector::zeros(0) });
            let sc = PROPORTIONAL_K
                .iter()
                .map(|&k| Scenario {
                    k,
                    beta_oos: &b * k,
                    theta_oos: &t * k,
                })
                .collect();
            (b, t, sc)
        }
        Loadings::Concentrated => {
            let conc = |len: usize, f: f64| -> Result<DVector<f64>> {
                if len == 0 {
                    Ok(DVector::zeros(0))
                } else {
                    concentrated_vector(len, f)
                }
            };
            let b = conc(p, 0.5)?;
            let t = conc(q, 0.5)?;
            let mut sc = Vec::new();
            for &k in &CONCENTRATED_K {
                sc.push(Scenario {
                    k,
                    beta_oos: conc(p, 0.5 / k)?,
                    theta_oos: conc(q, 0.5 / k)?,
                });
            }
            (b, t, sc)
        }
    };
    let (sigma_x, sigma_w, mixing) = match cov {
        Covariance::Isotropic => (CovarianceSpec::Identity(p), CovarianceSpec::Identity(q), Mixing::Independent),
        Covariance::Autoregressive => (
            CovarianceSpec::Autoregressive { p, rho: 0.9 },
            CovarianceSpec::Autoregressive { p: q, rho: 0.9 },
            Mixing::Latent(diagonal_mixing(q, p)),
        ),
    };
    let geometry = DriftGeometry::new(beta_is.clone(), beta_is, theta_is.clone(), theta_is)?;
    let template = ModelSpec {
        n,
        p,
        q,
        z: z_list.first().copied().unwrap_or(0.0),
        sigma_x,
        sigma_w,
        mixing,
        geometry,
        latent: LatentDist::Gaussian,
        seed,
    };
    let tag = |l: Loadings| match l {
        Loadings::Proportional => "prop",
        Loadings::Concentrated => "conc",
    };
    let ctag = match cov {
        Covariance::Isotropic => "iid",
        Covariance::Autoregressive => "ar",
    };
    Ok(ExperimentGrid {
        experiment: format!("{ctag}-{}-p{p}-q{q}", tag(loadings)),
        template,
        scenarios,
        z_list: z_list.to_vec(),
        draws,
        batches: 100,
    })
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        self.template.validate()?;
        if self.draws == 0 {
            return Err(validation("draw count must be ≥ 1"));
        }
        if self.z_list.is_empty() || self.scenarios.is_empty() {
            return Err(validation("empty ridge or scenario list"));
        }
        if self.z_list.iter().any(|z| !(*z >= 0.0 && z.is_finite())) {
            return Err(validation("ridge levels must be finite and ≥ 0"));
        }
        for s in &self.scenarios {
            if !s.k.is_finite() || s.beta_oos.len() != self.template.p || s.theta_oos.len() != self.template.q {
                return Err(validation(format!("scenario k = {} has inconsistent loadings", s.k)));
            }
        }
        Ok(())
    }

    pub fn scenario_spec(&self, s: &Scenario) -> ModelSpec {
        let mut spec = self.template.clone();
        spec.geometry.beta_oos = s.beta_oos.clone();
        spec.geometry.theta_oos = s.theta_oos.clone();
        spec
    }
}

/// Theory for one scenario: isotropic closed forms when they apply, the
/// general-covariance formulas otherwise.
pub fn theory_moments(spec: &ModelSpec, z: f64) -> Result<StrategyMoments> {
    let m4 = spec.latent.m4();
    let isotropic_w = spec.q == 0 || (spec.sigma_w.is_identity() && spec.mixing == Mixing::Independent);
    if spec.sigma_x.is_identity() && isotropic_w {
        moments_iid(z, spec.cphi(), &spec.geometry, m4)
    } else {
        GeneralContext::new(spec)?.moments(z, m4)
    }
}

/// Per-grid constants shared by all draws.
struct Prepared {
    sx: Option<DMatrix<f64>>,
    /// `y` loading on the latent rows beyond `Xβ_is` (mixed case).
    a_is: Option<DVector<f64>>,
    /// Independent unobserved block: `Σ_w^{1/2}θ_is` and the out-of-sample columns.
    w_is: Option<DVector<f64>>,
    w_oos: Option<DMatrix<f64>>,
    /// Gaussian shortcut: `R` with `u′B ~ ξ′R`.
    w_oos_factor: Option<DMatrix<f64>>,
    /// Out-of-sample loadings on the latent vector `z_t`, one column per scenario.
    omega_oos: DMatrix<f64>,
    /// `E[x_t r_k] = Σ_x^{1/2} ω_oos,k`, one column per scenario.
    cond: DMatrix<f64>,
}

fn prepare(grid: &ExperimentGrid) -> Result<Prepared> {
    let t = &grid.template;
    let g = &t.geometry;
    let ks = grid.scenarios.len();
    let sx_full = t.sigma_x.sqrt()?;
    let sx = (!t.sigma_x.is_identity()).then(|| sx_full.clone());
    let mut omega_oos = DMatrix::zeros(t.p, ks);
    for (j, s) in grid.scenarios.iter().enumerate() {
        omega_oos.set_column(j, &(&sx_full * &s.beta_oos));
    }
    let (mut a_is, mut w_is, mut w_oos, mut w_oos_factor) = (None, None, None, None);
    if t.q > 0 {
        let swm = t.sigma_w.sqrt()?;
        match &t.mixing {
            Mixing::Latent(pm) => {
                a_is = Some(pm.tr_mul(&(&swm * &g.theta_is)));
                for (j, s) in grid.scenarios.iter().enumerate() {
                    let extra = pm.tr_mul(&(&swm * &s.theta_oos));
                    let col = omega_oos.column(j) + extra;
                    omega_oos.set_column(j, &col);
                }
            }
            Mixing::Independent => {
                w_is = Some(&swm * &g.theta_is);
                let mut b = DMatrix::zeros(t.q, ks);
                for (j, s) in grid.scenarios.iter().enumerate() {
                    b.set_column(j, &(&swm * &s.theta_oos));
                }
                if t.latent == LatentDist::Gaussian {
                    w_oos_factor = Some(b.clone().qr().r());
                }
                w_oos = Some(b);
            }
        }
    }
    let cond = &sx_full * &omega_oos;
    Ok(Prepared {
        sx,
        a_is,
        w_is,
        w_oos,
        w_oos_factor,
        omega_oos,
        cond,
    })
}

/// Realised returns then conditional means, laid out `[z][scenario]`.
fn simulate_draw(grid: &ExperimentGrid, prep: &Prepared, draw: u64) -> Result<Vec<f64>> {
    let t = &grid.template;
    let (n, p, q) = (t.n, t.p, t.q);
    let ks = grid.scenarios.len();
    let zt = latent_matrix(t, draw, streams::TRAIN_Z, n, p);
    let zn = latent_matrix(t, draw, streams::NEXT_Z, p, 1).column(0).into_owned();
    let (x, x_next) = match &prep.sx {
        Some(sx) => (&zt * sx, sx * &zn),
        None => (zt.clone(), zn.clone()),
    };
    let mut y = &x * &t.geometry.beta_is + noise(t.seed, draw, streams::TRAIN_E, n);
    if let Some(a) = &prep.a_is {
        y += &zt * a;
    }
    // Out-of-sample returns for every scenario: latent part plus unobserved part plus noise.
    let e_next = noise(t.seed, draw, streams::NEXT_E, 1)[0];
    let mut r = prep.omega_oos.tr_mul(&zn).add_scalar(e_next);
    if let Some(wi) = &prep.w_is {
        if let Some(factor) = &prep.w_oos_factor {
            let mut rng = stream_rng(t.seed, draw, streams::TRAIN_U);
            let mut buf = vec![0.0; n];
            fill_normal(&mut rng, &mut buf);
            y += DVector::from_vec(buf) * wi.norm();
            let xi = noise(t.seed, draw, streams::NEXT_U, factor.nrows());
            r += factor.tr_mul(&xi);
        } else {
            let ut = latent_matrix(t, draw, streams::TRAIN_U, n, q);
            y += &ut * wi;
            let un = latent_matrix(t, draw, streams::NEXT_U, q, 1).column(0).into_owned();
            r += prep.w_oos.as_ref().unwrap().tr_mul(&un);
        }
    }
    let fam = RidgeFamily::new(&x, &y);
    let nz = grid.z_list.len();
    let mut out = vec![0.0; 2 * nz * ks];
    for (iz, &z) in grid.z_list.iter().enumerate() {
        let beta = fam.fit(z)?.beta_hat;
        let pos = beta.dot(&x_next);
        let cm = prep.cond.tr_mul(&beta);
        for k in 0..ks {
            out[iz * ks + k] = pos * r[k];
            out[nz * ks + iz * ks + k] = cm[k];
        }
    }
    Ok(out)
}

const CHUNK: usize = 2048;

pub fn run_grid(grid: &ExperimentGrid) -> Result<SimulationResult> {
    grid.validate()?;
    let prep = prepare(grid)?;
    let ks = grid.scenarios.len();
    let nz = grid.z_list.len();
    let npts = nz * ks;
    let batches = grid.batches.min(grid.draws / 2).max(1);
    let per_batch = grid.draws.div_ceil(batches);
    let mut total = vec![Moments::default(); npts];
    let mut cond = vec![Moments::default(); npts];
    let mut batch_acc: Vec<Vec<Moments>> = vec![vec![Moments::default(); npts]; batches];

    let mut start = 0;
    while start < grid.draws {
        let end = (start + CHUNK).min(grid.draws);
        let rows: Vec<Result<Vec<f64>>> = (start..end).into_par_iter().map(|d| simulate_draw(grid, &prep, d as u64)).collect();
        for (offset, row) in rows.into_iter().enumerate() {
            let row = row?;
            let b = ((start + offset) / per_batch).min(batches - 1);
            for i in 0..npts {
                total[i].push(row[i]);
                batch_acc[b][i].push(row[i]);
                cond[i].push(row[npts + i]);
            }
        }
        start = end;
    }

    let mut points = Vec::with_capacity(npts);
    for (iz, &z) in grid.z_list.iter().enumerate() {
        for (k, sc) in grid.scenarios.iter().enumerate() {
            let i = iz * ks + k;
            let tot = total[i];
            let spread = |f: &dyn Fn(&Moments) -> f64| {
                let mut m = Moments::default();
                for b in batch_acc.iter().filter(|b| b[i].n > 1.0) {
                    m.push(f(&b[i]));
                }
                m.std() / m.n.sqrt()
            };
            let (th, err) = match theory_moments(&grid.scenario_spec(sc), z) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let n = tot.n;
            points.push(GridPoint {
                experiment: grid.experiment.clone(),
                k: sc.k,
                z,
                n: grid.template.n,
                p: grid.template.p,
                q: grid.template.q,
                mc_mean: tot.mean,
                mc_se: tot.std() / n.sqrt(),
                mc_vol: tot.std(),
                mc_sharpe: tot.mean / tot.std(),
                th_mean: th.map_or(f64::NAN, |m| m.mean),
                th_vol: th.map_or(f64::NAN, |m| m.vol()),
                th_sharpe: th.map_or(f64::NAN, |m| m.sharpe),
                mc_vol_se: spread(&|m: &Moments| m.std()),
                mc_sharpe_se: spread(&|m: &Moments| m.mean / m.std()),
                cond_mean: cond[i].mean,
                cond_se: cond[i].std() / n.sqrt(),
                draws: grid.draws,
                theory_error: err,
            });
        }
    }
    Ok(SimulationResult { points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub z: f64,
    pub theory: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub gap: f64,
    /// Rao-Blackwellised estimate `E[π̂r | sample]` and its gap to theory.
    pub cond_mean: f64,
    pub cond_se: f64,
    pub cond_gap: f64,
}

/// Gap between the limiting mean return and its finite-`n` Monte-Carlo value,
/// holding `p/n = cφ` and `(p+q)/n = c` fixed with no drift.
pub fn convergence_scan(cphi: f64, c: f64, z: f64, n_list: &[usize], draws: usize, seed: u64) -> Result<Vec<ConvergenceRow>> {
    if c < cphi {
        return Err(validation("total complexity c must be ≥ cφ"));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let p = (cphi * n as f64).round() as usize;
        let q = (c * n as f64).round() as usize - p;
        let mut grid = panel(n, p, q, Loadings::Proportional, Covariance::Isotropic, &[z], draws, seed)?;
        grid.scenarios.retain(|s| s.k == 1.0);
        grid.experiment = format!("convergence-n{n}");
        let pt = run_grid(&grid)?.points.remove(0);
        rows.push(ConvergenceRow {
            n,
            p,
            q,
            z,
            theory: pt.th_mean,
            mc_mean: pt.mc_mean,
            mc_se: pt.mc_se,
            gap: (pt.mc_mean - pt.th_mean).abs(),
            cond_mean: pt.cond_mean,
            cond_se: pt.cond_se,
            cond_gap: (pt.cond_mean - pt.th_mean).abs(),
        });
    }
    Ok(rows)
}
