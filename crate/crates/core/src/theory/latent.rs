use crate::error::{domain, Result};
use crate::spectra::latent_measure;
use crate::stieltjes::{solve_kappa, solve_s0};

/// Return coefficient `g(z; c, Υ)` of the latent-space model `x = Wz + u`,
/// `W′W = Υ⁻¹I_d`, so that the expected return is `g⟨θ_is, θ_oos⟩`.
pub fn latent_g(z: f64, c: f64, upsilon: f64) -> Result<f64> {
    let mu = latent_measure(upsilon)?;
    let top = 1.0 + 1.0 / upsilon;
    let scale = 1.0 / (1.0 + upsilon);
    if z > 0.0 {
        let kappa = solve_kappa(z, c, &mu)?.value;
        Ok(scale * (1.0 - z / (top * kappa + z)))
    } else if z == 0.0 {
        if c == 1.0 {
            return Err(domain("ridgeless latent return diverges at c = 1"));
        }
        if c < 1.0 {
            return Ok(scale);
        }
        let s0 = solve_s0(c, &mu)?.value;
        Ok(scale * (1.0 - 1.0 / (1.0 + top * c * s0)))
    } else {
        Err(domain(format!("z = {z} must be ≥ 0")))
    }
}
