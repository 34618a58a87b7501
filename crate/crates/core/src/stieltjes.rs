//! Scalar fixed points behind the limiting resolvent: `m(−z; c, μ)`, the
//! ridgeless companion `s₀(c, μ)` and the derived transforms `m′`, `m₁`, `s₀′`.
//!
//! All measures are discrete. The equation solved by [`solve_m`] is
//!
//! ```text
//! m = ∫ dμ(λ) / (λ(1 − c + c z m) + z)
//! ```

use crate::error::{domain, validation, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureKind {
    /// Non-negative weights summing to one, support in `[0, ∞)`.
    Density,
    /// Arbitrary real weights (cross-VESDs such as ζ_d).
    Signed,
}

/// Discrete measure `Σ wᵢ δ_{λᵢ}`; atoms are kept sorted by decreasing λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    atoms: Vec<(f64, f64)>,
    kind: MeasureKind,
}

const MERGE_RTOL: f64 = 1e-12;
const DENSITY_TOL: f64 = 1e-12;

impl SpectralMeasure {
    pub fn delta(lambda: f64) -> Self {
        SpectralMeasure {
            atoms: vec![(lambda, 1.0)],
            kind: MeasureKind::Density,
        }
    }

    pub fn density(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let mu = Self::build(atoms, MeasureKind::Density)?;
        for &(l, w) in &mu.atoms {
            if l < 0.0 {
                return Err(validation(format!("density atom at negative λ = {l}")));
            }
            if w < 0.0 {
                return Err(validation(format!("negative density weight {w} at λ = {l}")));
            }
        }
        let total = mu.total_weight();
        if (total - 1.0).abs() > DENSITY_TOL {
            return Err(validation(format!("density weights sum to {total}, not 1")));
        }
        Ok(mu)
    }

    pub fn signed(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::build(atoms, MeasureKind::Signed)
    }

    fn build(mut atoms: Vec<(f64, f64)>, kind: MeasureKind) -> Result<Self> {
        if atoms.is_empty() {
            return Err(validation("measure has no atoms"));
        }
        if let Some(&(l, w)) = atoms.iter().find(|(l, w)| !l.is_finite() || !w.is_finite()) {
            return Err(validation(format!("non-finite atom ({l}, {w})")));
        }
        atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (l, w) in atoms {
            match merged.last_mut() {
                Some(last) if (last.0 - l).abs() <= MERGE_RTOL * last.0.abs().max(l.abs()) => {
                    last.1 += w;
                }
                _ => merged.push((l, w)),
            }
        }
        Ok(SpectralMeasure { atoms: merged, kind })
    }

    /// Re-tag a signed measure as a density, renormalising away rounding of
    /// order `tol` in the total weight.
    pub fn into_density(self, tol: f64) -> Result<Self> {
        let total = self.total_weight();
        if (total - 1.0).abs() > tol {
            return Err(validation(format!("weights sum to {total}, not 1")));
        }
        if let Some(&(l, w)) = self.atoms.iter().find(|a| a.1 < -tol || a.0 < 0.0) {
            return Err(validation(format!("atom ({l}, {w}) is not admissible in a density")));
        }
        let atoms = self
            .atoms
            .into_iter()
            .map(|(l, w)| (l, w.max(0.0) / total))
            .collect();
        Self::density(atoms)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn is_density(&self) -> bool {
        self.kind == MeasureKind::Density
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn max_lambda(&self) -> f64 {
        self.atoms.first().map(|a| a.0).unwrap_or(0.0)
    }

    /// `Σ wᵢ f(λᵢ)`; a non-finite integrand value is reported with its atom.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for &(l, w) in &self.atoms {
            let v = f(l);
            if !v.is_finite() {
                return Err(Error::Singularity(format!("integrand is {v} at atom λ = {l}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformResult {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Separation constant: `c ∈ [τ, 1/τ]` and `|c − 1| ≥ τ` for s₀.
    pub tau: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: 1e-3,
            tol: 1e-12,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

fn check_density(mu: &SpectralMeasure) -> Result<()> {
    if !mu.is_density() {
        return Err(validation("solvers accept density measures only"));
    }
    Ok(())
}

/// Closed form of `m(−z; c, δ₁)` on the positive branch.
pub fn m_closed_iid(z: f64, c: f64) -> f64 {
    let a = c - 1.0 - z;
    let disc = (a * a + 4.0 * c * z).sqrt();
    if a >= 0.0 {
        (a + disc) / (2.0 * c * z)
    } else {
        // Rationalised to avoid cancellation in a + disc.
        2.0 / (disc - a)
    }
}

/// `κ(z; c) = 1 − c + c z m(−z; c, δ₁)`, from the companion quadratic
/// `κ² + (c − 1 + z)κ − z = 0`, so that small `z` loses no digits.
pub fn kappa_iid(z: f64, c: f64) -> f64 {
    let a = c - 1.0 + z;
    let disc = (a * a + 4.0 * z).sqrt();
    if a >= 0.0 {
        2.0 * z / (disc + a)
    } else {
        0.5 * (disc - a)
    }
}

/// `m′(−z; c, δ₁) = (1 + c m)/((κ + z)² + c z)` with `κ = 1 − c + c z m`.
pub fn m_prime_iid(z: f64, c: f64, m: f64) -> f64 {
    let kappa = 1.0 - c + c * z * m;
    (1.0 + c * m) / ((kappa + z).powi(2) + c * z)
}

/// `m₁(−z; cφ, δ₁) = κ / ((κ + z)² + cφ z)`.
pub fn m1_iid(z: f64, cphi: f64, m: f64) -> f64 {
    let kappa = 1.0 - cphi + cphi * z * m;
    kappa / ((kappa + z).powi(2) + cphi * z)
}

/// Fixed-point map `Φ(m)`; `None` when some denominator is not positive.
fn phi(m: f64, z: f64, c: f64, mu: &SpectralMeasure) -> Option<f64> {
    let kappa = 1.0 - c + c * z * m;
    let mut acc = 0.0;
    for &(l, w) in mu.atoms() {
        let d = l * kappa + z;
        if d <= 0.0 {
            return None;
        }
        acc += w / d;
    }
    Some(acc)
}

pub fn solve_m(z: f64, c: f64, mu: &SpectralMeasure) -> Result<TransformResult> {
    solve_m_with(z, c, mu, &SolverConfig::default())
}

pub fn solve_m_with(z: f64, c: f64, mu: &SpectralMeasure, cfg: &SolverConfig) -> Result<TransformResult> {
    check_density(mu)?;
    if !(z > 0.0 && z.is_finite()) {
        return Err(domain(format!("solve_m needs z > 0, got {z}")));
    }
    if !(c >= cfg.tau && c <= 1.0 / cfg.tau) {
        return Err(domain(format!("complexity c = {c} outside [{}, {}]", cfg.tau, 1.0 / cfg.tau)));
    }
    let accept = |m: f64, r: f64| r <= cfg.tol * m.abs();

    // Damped iteration; abandoned for bisection when it leaves the domain or stalls.
    let mut m = 1.0 / (1.0 + z);
    let mut checkpoint = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let Some(fm) = phi(m, z, c, mu) else { break };
        let r = (fm - m).abs();
        if accept(m, r) {
            return Ok(TransformResult {
                value: m,
                residual: r,
                iterations: it,
            });
        }
        if it % 50 == 0 {
            if r > 0.5 * checkpoint {
                break;
            }
            checkpoint = r;
        }
        m = (1.0 - cfg.damping) * m + cfg.damping * fm;
    }
    bisect_m(z, c, mu, cfg)
}

fn bisect_m(z: f64, c: f64, mu: &SpectralMeasure, cfg: &SolverConfig) -> Result<TransformResult> {
    // F(m) = Φ(m) − m decreases strictly wherever Φ is defined; Φ blows up at the
    // lower edge and F(1/z) ≤ 0, so the root is bracketed and unique.
    let lmax = mu.max_lambda();
    let mut lo = if c > 1.0 && lmax > 0.0 {
        ((c - 1.0 - z / lmax) / (c * z)).max(0.0)
    } else {
        0.0
    };
    let mut hi = 1.0 / z;
    let f = |m: f64| phi(m, z, c, mu).map(|v| v - m).unwrap_or(f64::INFINITY);
    let mut best = (hi, f(hi).abs());
    for it in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.is_finite() && fm.abs() < best.1 {
            best = (mid, fm.abs());
        }
        if fm.is_finite() && fm.abs() <= cfg.tol * mid {
            return Ok(TransformResult {
                value: mid,
                residual: fm.abs(),
                iterations: it,
            });
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            // Bracket exhausted at machine precision: accept the better end.
            let fh = f(hi).abs();
            let (v, r) = if fh < best.1 { (hi, fh) } else { best };
            if r <= 1e3 * cfg.tol * v {
                return Ok(TransformResult {
                    value: v,
                    residual: r,
                    iterations: it,
                });
            }
            break;
        }
    }
    Err(Error::Solver {
        what: format!("m(−z) at z = {z}, c = {c}"),
        iterations: cfg.max_iter,
        residual: best.1,
    })
}

pub fn solve_s0(c: f64, mu: &SpectralMeasure) -> Result<TransformResult> {
    solve_s0_with(c, mu, &SolverConfig::default())
}

pub fn solve_s0_with(c: f64, mu: &SpectralMeasure, cfg: &SolverConfig) -> Result<TransformResult> {
    check_density(mu)?;
    if !(c > 1.0) || (c - 1.0).abs() < cfg.tau || !c.is_finite() {
        return Err(domain(format!("s₀ requires c > 1 with |c − 1| ≥ {}, got c = {c}", cfg.tau)));
    }
    let target = 1.0 - 1.0 / c;
    let g = |s: f64| {
        mu.atoms()
            .iter()
            .map(|&(l, w)| w / (1.0 + l * c * s))
            .sum::<f64>()
            - target
    };
    let mut hi = 1.0;
    let mut grow = 0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return Err(domain("s₀ equation has no root (too much mass at λ = 0)"));
        }
    }
    let mut lo = 0.0;
    for it in 0..400 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(TransformResult {
                value: mid,
                residual: gm.abs(),
                iterations: grow + it,
            });
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Solver {
        what: format!("s₀ at c = {c}"),
        iterations: 400 + grow,
        residual: g(0.5 * (lo + hi)).abs(),
    })
}

/// `κ = 1 − c + c z m(−z)` as the root of the decreasing map
/// `G(κ) = 1 − κ − c ∫ κλ/(z + κλ) dμ` on `(0, 1)`. Solving for `κ` directly
/// keeps full relative precision as `z → 0`, where `1 − c + czm` cancels.
pub fn solve_kappa(z: f64, c: f64, mu: &SpectralMeasure) -> Result<TransformResult> {
    check_density(mu)?;
    if !(z > 0.0 && z.is_finite()) {
        return Err(domain(format!("solve_kappa needs z > 0, got {z}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(domain(format!("complexity c = {c} must be positive")));
    }
    let g = |k: f64| {
        let s: f64 = mu.atoms().iter().map(|&(l, w)| w * k * l / (z + k * l)).sum();
        1.0 - k - c * s
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut it = 0;
    while hi - lo > 2.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        it += 1;
        if it > 4000 {
            return Err(Error::Solver {
                what: format!("κ at z = {z}, c = {c}"),
                iterations: it,
                residual: g(mid).abs(),
            });
        }
    }
    let k = 0.5 * (lo + hi);
    Ok(TransformResult {
        value: k,
        residual: g(k).abs(),
        iterations: it,
    })
}

/// `m′(−z) = ∫ dF(x)/(x + z)²`, from 5-point central differences of `z ↦ m(−z)`.
pub fn m_prime(z: f64, c: f64, mu: &SpectralMeasure) -> Result<f64> {
    let h = (1e-6f64).max(1e-4 * z).min(0.25 * z);
    let m = |t: f64| solve_m(t, c, mu).map(|r| r.value);
    let d = (-m(z + 2.0 * h)? + 8.0 * m(z + h)? - 8.0 * m(z - h)? + m(z - 2.0 * h)?) / (12.0 * h);
    Ok(-d)
}

/// Ratio of spectral integrals defining `m₁(−z; cφ, μ)`, given `m = m(−z; cφ, μ)`.
pub fn m1(z: f64, cphi: f64, mu: &SpectralMeasure, m: f64) -> Result<f64> {
    let kappa = 1.0 - cphi + cphi * z * m;
    let num = mu.integrate(|l| l * l * kappa / (l * kappa + z).powi(2))?;
    let den = 1.0 + cphi * z * mu.integrate(|l| l / (l * kappa + z).powi(2))?;
    if den.abs() < 1e-300 {
        return Err(Error::Singularity("m₁ denominator vanishes".into()));
    }
    Ok(num / den)
}

/// `s₀′ = ∫ λ²/(1 + cφ s₀ λ)² dμ / ∫ λ/(1 + cφ s₀ λ)² dμ`.
pub fn s0_prime(cphi: f64, mu: &SpectralMeasure, s0: f64) -> Result<f64> {
    let num = mu.integrate(|l| l * l / (1.0 + cphi * s0 * l).powi(2))?;
    let den = mu.integrate(|l| l / (1.0 + cphi * s0 * l).powi(2))?;
    if den <= 0.0 {
        return Err(Error::Singularity(format!("s₀′ denominator is {den}")));
    }
    Ok(num / den)
}
