#![allow(dead_code)]

use chrono::{Months, NaiveDate};
use drift_timing::market::{MacroPanel, RAW_COLUMNS};
use drift_timing::rng::{fill_normal, stream_rng};
use std::fmt::Write as _;

/// Monthly panel starting January 1900 with AR(1) predictors and returns
/// `r_{t+1} = mu + load·x_{t,0} + sd·ε`.
pub fn synthetic_panel(months: usize, seed: u64, load: f64, lags: usize) -> MacroPanel {
    let total = months + lags;
    let mut rng = stream_rng(seed, 0, 0);
    let mut shocks = vec![0.0; total * 15];
    fill_normal(&mut rng, &mut shocks);
    let mut x = [0.0f64; 14];
    let mut preds = Vec::with_capacity(total);
    let mut rets = Vec::with_capacity(total);
    for t in 0..total {
        for k in 0..14 {
            x[k] = 0.95 * x[k] + 0.3 * shocks[t * 15 + k] + 0.01 * k as f64;
        }
        preds.push(x);
        rets.push(0.006 + load * x[0] + 0.045 * shocks[t * 15 + 14]);
    }
    let start = NaiveDate::from_ymd_opt(1900, 1, 1).unwrap();
    let mut panel = MacroPanel {
        dates: Vec::new(),
        predictors: Vec::new(),
        target: Vec::new(),
        lags: Vec::new(),
        imputed: Vec::new(),
    };
    // rets[t] is the return realised one month after row t.
    for t in lags..total {
        panel.dates.push(start.checked_add_months(Months::new((t - lags) as u32)).unwrap());
        panel.predictors.push(preds[t]);
        panel.target.push(rets[t]);
        panel.lags.push((1..=lags).map(|j| rets[t - j]).collect());
        panel.imputed.push(false);
    }
    panel
}

/// Goyal-format CSV with `rows` consecutive months from January 1950.
/// Column `rename` (if any) is written under a different header.
pub fn goyal_csv(rows: usize, seed: u64, rename: Option<(&str, &str)>) -> String {
    let mut rng = stream_rng(seed, 0, 1);
    let mut z = vec![0.0; rows * 16];
    fill_normal(&mut rng, &mut z);
    let header: Vec<String> = RAW_COLUMNS
        .iter()
        .map(|c| match rename {
            Some((from, to)) if from == *c => to.to_string(),
            _ => c.to_string(),
        })
        .collect();
    let mut out = header.join(",") + "\n";
    let mut index = 100.0f64;
    for t in 0..rows {
        let e = |k: usize| z[t * 16 + k];
        index *= 1.0 + 0.01 + 0.04 * e(0);
        let year = 1950 + t / 12;
        let month = t % 12 + 1;
        let vals = [
            index,
            3.0 + 0.1 * e(1),
            6.0 + 0.2 * e(2),
            0.5 + 0.05 * e(3),
            0.04 + 0.005 * e(4),
            0.06 + 0.003 * e(5),
            0.07 + 0.003 * e(6),
            0.05 + 0.004 * e(7),
            0.01 + 0.01 * e(8),
            0.003 + 0.0005 * e(9),
            0.002 + 0.003 * e(10),
            0.004 + 0.02 * e(11),
            0.005 + 0.02 * e(12),
            0.002 + 0.001 * e(13).abs(),
            0.009 + 0.045 * e(14),
        ];
        let _ = write!(out, "{year}{month:02}");
        for v in vals {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Like [`synthetic_panel`] but the loading on the first predictor flips sign
/// with probability `flip` each month, so the predictive relation drifts.
pub fn drifting_panel(months: usize, seed: u64, load: f64, flip: f64) -> MacroPanel {
    let mut panel = synthetic_panel(months, seed, 0.0, 1);
    let mut rng = stream_rng(seed, 1, 0);
    let mut eps = vec![0.0; months];
    fill_normal(&mut rng, &mut eps);
    let mut u = stream_rng(seed, 2, 0);
    let mut sign = 1.0;
    for t in 0..months {
        if rand::Rng::random::<f64>(&mut u) < flip {
            sign = -sign;
        }
        panel.target[t] = 0.006 + sign * load * panel.predictors[t][0] + 0.045 * eps[t];
    }
    for t in 1..months {
        panel.lags[t][0] = panel.target[t - 1];
    }
    panel
}
