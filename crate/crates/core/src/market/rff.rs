//! Random Fourier features of the standardised signals.

use crate::error::{validation, Result};
use crate::rng::{child_seed, fill_normal, stream_rng};
use nalgebra::{DMatrix, DVector};

/// `p/2` standard normal projection vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RffWeights {
    pub w: DMatrix<f64>,
}

impl RffWeights {
    /// Weights of RFF draw `draw` under `seed`; each draw has its own stream.
    pub fn draw(seed: u64, draw: u64, p: usize, d: usize) -> Result<Self> {
        if p == 0 || p % 2 != 0 {
            return Err(validation(format!("feature count p = {p} must be positive and even")));
        }
        let mut rng = stream_rng(child_seed(seed, draw), 0, 0);
        let mut data = vec![0.0; p / 2 * d];
        fill_normal(&mut rng, &mut data);
        Ok(RffWeights {
            w: DMatrix::from_row_slice(p / 2, d, &data),
        })
    }

    pub fn p(&self) -> usize {
        2 * self.w.nrows()
    }
}

/// `S = p^{-1/2} (sin γw₁′G, cos γw₁′G, sin γw₂′G, …)`.
pub fn rff(g: &DVector<f64>, gamma: f64, weights: &RffWeights) -> DVector<f64> {
    let proj = &weights.w * g;
    let mut out = DVector::zeros(weights.p());
    fill_features(proj.as_slice(), gamma, out.as_mut_slice());
    out
}

/// Write the interleaved sin/cos features of projections `proj` into `out`.
pub(crate) fn fill_features(proj: &[f64], gamma: f64, out: &mut [f64]) {
    let scale = 1.0 / (out.len() as f64).sqrt();
    for (i, a) in proj.iter().enumerate() {
        let (s, c) = (gamma * a).sin_cos();
        out[2 * i] = s * scale;
        out[2 * i + 1] = c * scale;
    }
}
