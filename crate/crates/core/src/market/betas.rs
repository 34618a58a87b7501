//! Rolling OLS predictive regressions.

use super::panel::{MacroPanel, PREDICTORS};
use crate::error::{domain, validation, Result};
use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub const DEFAULT_EXCLUSIONS: [&str; 4] = ["lty", "dp", "dy", "tms"];
const RIDGE_FALLBACK: f64 = 1e-8;

/// Coefficient paths, one row per month. Column 0 is the intercept; the
/// others follow `names[1..]`. Regressors are standardised within each
/// window, so slopes are per one-standard-deviation move.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaPath {
    pub names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub coefficients: Vec<Vec<f64>>,
    /// Months where the design was singular and the ridge fallback was used.
    pub ridge_fallback: Vec<bool>,
}

/// Regress `r_{τ+1}` on the kept predictors and `lags` lagged returns over
/// rows `t−window+1..=t`, for every `t` with a full window.
pub fn rolling_betas(panel: &MacroPanel, window: usize, exclusions: &[&str], lags: usize) -> Result<BetaPath> {
    for e in exclusions {
        if !PREDICTORS.contains(e) {
            return Err(validation(format!("unknown predictor '{e}' in exclusion list")));
        }
    }
    if panel.lags.first().map_or(0, Vec::len) < lags {
        return Err(validation(format!("panel carries fewer than {lags} lagged returns")));
    }
    let keep: Vec<usize> = (0..PREDICTORS.len()).filter(|&k| !exclusions.contains(&PREDICTORS[k])).collect();
    let k = keep.len() + lags;
    if window <= k + 1 {
        return Err(validation(format!("window {window} is too short for {} coefficients", k + 1)));
    }
    if panel.len() < window {
        return Err(domain(format!("panel has {} rows, fewer than the {window}-month window", panel.len())));
    }
    let row = |t: usize| -> Vec<f64> {
        keep.iter()
            .map(|&i| panel.predictors[t][i])
            .chain((0..lags).map(|j| panel.lags[t][j]))
            .collect()
    };
    let mut names = vec!["const".to_string()];
    names.extend(keep.iter().map(|&i| PREDICTORS[i].to_string()));
    names.extend((1..=lags).map(|j| format!("lag{j}")));

    let mut out = BetaPath {
        names,
        dates: Vec::new(),
        coefficients: Vec::new(),
        ridge_fallback: Vec::new(),
    };
    for t in window - 1..panel.len() {
        let rows: Vec<Vec<f64>> = (t + 1 - window..=t).map(row).collect();
        let y = DVector::from_fn(window, |i, _| panel.target[t + 1 - window + i]);
        let mut x = DMatrix::zeros(window, k + 1);
        for c in 0..k {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / window as f64;
            let sd = (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (window as f64 - 1.0)).sqrt();
            for (i, r) in rows.iter().enumerate() {
                x[(i, c + 1)] = if sd > 0.0 { (r[c] - mean) / sd } else { 0.0 };
            }
        }
        x.column_mut(0).fill(1.0);
        let (beta, fallback) = ols(&x, &y);
        out.dates.push(panel.dates[t]);
        out.coefficients.push(beta.iter().copied().collect());
        out.ridge_fallback.push(fallback);
    }
    Ok(out)
}

/// Least squares through the normal equations; a singular or badly
/// conditioned design gets `n·1e-8` added to the diagonal.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let eig = xtx.clone().symmetric_eigen();
    let top = eig.eigenvalues.max();
    let low = eig.eigenvalues.min();
    if low > top * 1e-12 {
        if let Some(ch) = xtx.clone().cholesky() {
            return (ch.solve(&xty), false);
        }
    }
    let mut reg = xtx;
    let n = x.nrows() as f64;
    for i in 0..reg.nrows() {
        reg[(i, i)] += n * RIDGE_FALLBACK;
    }
    let beta = match reg.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => reg.pseudo_inverse(0.0).expect("pseudo-inverse of a symmetric matrix") * xty,
    };
    (beta, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let (b, fb) = ols(&x, &y);
        assert!(!fb);
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_uses_fallback() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (b, fb) = ols(&x, &y);
        assert!(fb);
        assert!((b[0] - 2.0).abs() < 1e-6 && b[1].abs() < 1e-12);
    }
}
