//! Bandwidth selection: hindsight and feasible choices of `γ`.

use super::backtest::BacktestResult;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeRow {
    pub period: String,
    pub scheme: String,
    pub z: f64,
    #[serde(rename = "return")]
    pub value: f64,
    /// The `γ` used; `None` for the `γ`-average and for full-sample rows.
    pub gamma: Option<f64>,
}

/// Per sub-period and `z`: the hindsight return is the best period mean over
/// `γ`; the feasible return uses the `γ` that was best in the preceding
/// period (the `γ`-average in the first one). Full-sample rows average the
/// sub-period values.
pub fn bandwidth_schemes(result: &BacktestResult) -> Vec<SchemeRow> {
    let mut zs: Vec<f64> = Vec::new();
    for a in &result.aggregates {
        if a.gamma.is_some() && !zs.contains(&a.z) {
            zs.push(a.z);
        }
    }
    let mut rows = Vec::new();
    for &z in &zs {
        let mut prev_best: Option<f64> = None;
        let mut feasible = Vec::new();
        let mut hindsight = Vec::new();
        for period in &result.periods {
            let by_gamma: Vec<(f64, f64)> = result
                .aggregates
                .iter()
                .filter(|a| &a.period == period && a.z == z)
                .filter_map(|a| a.gamma.map(|g| (g, a.mean_return)))
                .collect();
            if by_gamma.is_empty() {
                continue;
            }
            let (best_g, best_v) = by_gamma
                .iter()
                .copied()
                .fold((f64::NAN, f64::NEG_INFINITY), |acc, (g, v)| if v > acc.1 { (g, v) } else { acc });
            let (fg, fv) = match prev_best {
                None => (None, by_gamma.iter().map(|x| x.1).sum::<f64>() / by_gamma.len() as f64),
                Some(g) => {
                    let v = by_gamma.iter().find(|x| x.0 == g).map(|x| x.1).unwrap_or(f64::NAN);
                    (Some(g), v)
                }
            };
            rows.push(SchemeRow {
                period: period.clone(),
                scheme: "feasible".into(),
                z,
                value: fv,
                gamma: fg,
            });
            rows.push(SchemeRow {
                period: period.clone(),
                scheme: "hindsight".into(),
                z,
                value: best_v,
                gamma: Some(best_g),
            });
            feasible.push(fv);
            hindsight.push(best_v);
            prev_best = Some(best_g);
        }
        for (scheme, vals) in [("feasible", feasible), ("hindsight", hindsight)] {
            if !vals.is_empty() {
                rows.push(SchemeRow {
                    period: result.full_period.clone(),
                    scheme: scheme.into(),
                    z,
                    value: vals.iter().sum::<f64>() / vals.len() as f64,
                    gamma: None,
                });
            }
        }
    }
    rows
}
