//! Monthly macro panel in the Goyal–Welch layout.

use crate::error::{domain, validation, Error, Result};
use chrono::{Datelike, Months, NaiveDate};
use nalgebra::DVector;
use std::collections::HashMap;
use std::path::Path;

/// Names of the 14 predictors, in panel column order.
pub const PREDICTORS: [&str; 14] = [
    "dp", "dy", "ep", "de", "svar", "bm", "ntis", "tbl", "lty", "ltr", "tms", "dfy", "dfr", "infl",
];

/// Raw columns of the 2023 monthly file that the predictors are built from.
pub const RAW_COLUMNS: [&str; 16] = [
    "yyyymm", "Index", "D12", "E12", "b/m", "tbl", "AAA", "BAA", "lty", "ntis", "Rfree", "infl", "ltr", "corpr", "svar", "CRSP_SPvw",
];

/// Row `t` holds the predictors observed at the end of month `t`, the target
/// excess return of month `t + 1`, and lagged excess returns
/// `lag_j = r_{t+1−j}` for `j = 1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroPanel {
    pub dates: Vec<NaiveDate>,
    pub predictors: Vec<[f64; 14]>,
    pub target: Vec<f64>,
    pub lags: Vec<Vec<f64>>,
    /// `true` where some predictor was carried forward.
    pub imputed: Vec<bool>,
}

/// Mapping from canonical column names to the names used in a given file.
pub type ColumnMap = HashMap<String, String>;

pub fn read_column_map(path: &Path) -> Result<ColumnMap> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("column map {}: {e}", path.display())))
}

fn parse_value(s: &str) -> Option<f64> {
    let t = s.trim().replace(',', "");
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_yyyymm(s: &str) -> Result<NaiveDate> {
    let v: u32 = s.trim().parse().map_err(|_| validation(format!("bad yyyymm '{s}'")))?;
    NaiveDate::from_ymd_opt((v / 100) as i32, v % 100, 1).ok_or_else(|| validation(format!("bad yyyymm '{s}'")))
}

fn next_month(d: NaiveDate) -> NaiveDate {
    d.checked_add_months(Months::new(1)).expect("date overflow")
}

/// Raw monthly observations keyed by canonical column name.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub dates: Vec<NaiveDate>,
    pub columns: HashMap<String, Vec<Option<f64>>>,
}

pub fn read_raw(path: &Path, map: &ColumnMap) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let lookup = |canon: &str| -> Option<usize> {
        let name = map.get(canon).map(String::as_str).unwrap_or(canon);
        headers.iter().position(|h| h.trim() == name)
    };
    let missing: Vec<&str> = RAW_COLUMNS.iter().copied().filter(|c| lookup(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing required columns: {}", missing.join(", "))));
    }
    let idx: Vec<usize> = RAW_COLUMNS.iter().map(|c| lookup(c).unwrap()).collect();
    let mut dates = Vec::new();
    let mut columns: HashMap<String, Vec<Option<f64>>> = RAW_COLUMNS[1..].iter().map(|c| (c.to_string(), Vec::new())).collect();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let date = parse_yyyymm(field(idx[0]))?;
        if let Some(&prev) = dates.last() {
            if date != next_month(prev) {
                return Err(validation(format!("dates are not consecutive months: {prev} then {date}")));
            }
        }
        dates.push(date);
        for (k, name) in RAW_COLUMNS.iter().enumerate().skip(1) {
            columns.get_mut(*name).unwrap().push(parse_value(field(idx[k])));
        }
    }
    if dates.is_empty() {
        return Err(validation("data file has no rows"));
    }
    Ok(RawTable { dates, columns })
}

/// Derive the predictors, targets and lagged returns from raw columns.
///
/// Inflation enters with a one-month publication lag. Missing predictor
/// values are carried forward; rows before every predictor and the required
/// lags are available are dropped, as is the final month (no target).
pub fn build_panel(raw: &RawTable, lags: usize) -> Result<MacroPanel> {
    let col = |name: &str| &raw.columns[name];
    let t_len = raw.dates.len();
    let get = |name: &str, t: usize| col(name)[t];
    let logdiff = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some(a.ln() - b.ln()),
        _ => None,
    };
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    let excess: Vec<Option<f64>> = (0..t_len).map(|t| diff(get("CRSP_SPvw", t), get("Rfree", t))).collect();

    let mut raw_preds: Vec<[Option<f64>; 14]> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let prev_index = if t > 0 { get("Index", t - 1) } else { None };
        raw_preds.push([
            logdiff(get("D12", t), get("Index", t)),
            logdiff(get("D12", t), prev_index),
            logdiff(get("E12", t), get("Index", t)),
            logdiff(get("D12", t), get("E12", t)),
            get("svar", t),
            get("b/m", t),
            get("ntis", t),
            get("tbl", t),
            get("lty", t),
            get("ltr", t),
            diff(get("lty", t), get("tbl", t)),
            diff(get("BAA", t), get("AAA", t)),
            diff(get("corpr", t), get("ltr", t)),
            if t > 0 { get("infl", t - 1) } else { None },
        ]);
    }

    let mut last: [Option<f64>; 14] = [None; 14];
    let mut filled = Vec::with_capacity(t_len);
    let mut imputed = Vec::with_capacity(t_len);
    for row in &raw_preds {
        let mut any = false;
        for k in 0..14 {
            match row[k] {
                Some(v) => last[k] = Some(v),
                None => any |= last[k].is_some(),
            }
        }
        filled.push(last);
        imputed.push(any);
    }

    let mut panel = MacroPanel {
        dates: Vec::new(),
        predictors: Vec::new(),
        target: Vec::new(),
        lags: Vec::new(),
        imputed: Vec::new(),
    };
    for t in 0..t_len.saturating_sub(1) {
        let Some(target) = excess[t + 1] else { continue };
        if filled[t].iter().any(Option::is_none) || t + 1 < lags {
            continue;
        }
        let lag_vals: Option<Vec<f64>> = (1..=lags).map(|j| excess[t + 1 - j]).collect();
        let Some(lag_vals) = lag_vals else { continue };
        if let Some(&prev) = panel.dates.last() {
            if raw.dates[t] != next_month(prev) {
                return Err(validation(format!("gap in usable rows between {prev} and {}", raw.dates[t])));
            }
        }
        panel.dates.push(raw.dates[t]);
        panel.predictors.push(filled[t].map(|v| v.unwrap()));
        panel.target.push(target);
        panel.lags.push(lag_vals);
        panel.imputed.push(imputed[t]);
    }
    if panel.dates.is_empty() {
        return Err(validation("no usable rows after alignment"));
    }
    Ok(panel)
}

pub fn load_panel(path: &Path, map: &ColumnMap, lags: usize) -> Result<MacroPanel> {
    if !path.exists() {
        return Err(Error::Io(format!(
            "data file {} not found; expected the monthly Goyal–Welch CSV with columns {}",
            path.display(),
            RAW_COLUMNS.join(", ")
        )));
    }
    build_panel(&read_raw(path, map)?, lags)
}

impl MacroPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Date on which the target of row `t` is realised.
    pub fn target_date(&self, t: usize) -> NaiveDate {
        next_month(self.dates[t])
    }

    /// The 15 raw signals of row `t`: predictors then the latest excess return.
    pub fn signals(&self, t: usize) -> [f64; 15] {
        let mut out = [0.0; 15];
        out[..14].copy_from_slice(&self.predictors[t]);
        out[14] = self.lags[t][0];
        out
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let months = (date.year() - first.year()) * 12 + date.month() as i32 - first.month() as i32;
        (months >= 0 && (months as usize) < self.len()).then_some(months as usize)
    }
}

/// Expanding-window z-scores with no look-ahead.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub burn_in: usize,
}

impl Default for Standardizer {
    fn default() -> Self {
        Standardizer { burn_in: 36 }
    }
}

impl Standardizer {
    /// Standardise `rows[t]` with the mean and sample std of `rows[0..=t]`.
    /// A zero-variance history falls back to unit scale.
    pub fn at(&self, rows: &[Vec<f64>], t: usize) -> Result<DVector<f64>> {
        if t + 1 < self.burn_in {
            return Err(domain(format!("row {t} has fewer than {} months of history", self.burn_in)));
        }
        let d = rows[t].len();
        let n = (t + 1) as f64;
        let mut out = DVector::zeros(d);
        for k in 0..d {
            let mean = rows[..=t].iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows[..=t].iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            out[k] = scaled(rows[t][k], mean, var);
        }
        Ok(out)
    }

    /// All rows at once; entries before the burn-in are `None`.
    pub fn all(&self, rows: &[Vec<f64>]) -> Vec<Option<DVector<f64>>> {
        let Some(d) = rows.first().map(Vec::len) else { return Vec::new() };
        let mut sum = vec![0.0; d];
        let mut out = Vec::with_capacity(rows.len());
        for (t, row) in rows.iter().enumerate() {
            for k in 0..d {
                sum[k] += row[k];
            }
            if t + 1 < self.burn_in {
                out.push(None);
                continue;
            }
            let n = (t + 1) as f64;
            let mut v = DVector::zeros(d);
            for k in 0..d {
                let mean = sum[k] / n;
                let var = rows[..=t].iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                v[k] = scaled(row[k], mean, var);
            }
            out.push(Some(v));
        }
        out
    }
}

fn scaled(x: f64, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        x - mean
    } else {
        (x - mean) / sd
    }
}

/// Standardised 15-signal vectors `G_t` of every row (`None` during burn-in).
pub fn standardized_signals(panel: &MacroPanel, std: &Standardizer) -> Vec<Option<DVector<f64>>> {
    let rows: Vec<Vec<f64>> = (0..panel.len()).map(|t| panel.signals(t).to_vec()).collect();
    std.all(&rows)
}

pub fn standardize(panel: &MacroPanel, t: usize) -> Result<DVector<f64>> {
    if t >= panel.len() {
        return Err(validation(format!("row {t} is outside the panel")));
    }
    let rows: Vec<Vec<f64>> = (0..=t).map(|s| panel.signals(s).to_vec()).collect();
    Standardizer::default().at(&rows, t)
}
