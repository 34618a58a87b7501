//! Rolling ridge timing backtest on random Fourier features.
//!
//! Every month the ridge fit on the trailing `n` months is evaluated in its
//! dual form, `π_t = k_t′(nzI + K)⁻¹R`, with `K` the Gram matrix of the
//! window's features and `k_t` their inner products with `S_t`.

use super::panel::{standardized_signals, MacroPanel, Standardizer};
use super::rff::{fill_features, RffWeights};
use crate::error::{domain, validation, Result};
use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Months whose strategy return is realised in `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn years(first: i32, last: i32) -> Self {
        Period {
            label: format!("{first}-{last}"),
            start: NaiveDate::from_ymd_opt(first, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(last, 12, 1).unwrap(),
        }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }
}

/// Six 15-year blocks covering 1930–2019.
pub fn default_periods() -> Vec<Period> {
    (0..6).map(|k| Period::years(1930 + 15 * k, 1944 + 15 * k)).collect()
}

/// The span of all periods, used for the full-sample aggregates.
pub fn full_period(periods: &[Period]) -> Period {
    let first = periods.first().expect("non-empty periods");
    let last = periods.last().expect("non-empty periods");
    Period {
        label: format!("{}-{}", first.start.year(), last.end.year()),
        start: first.start,
        end: last.end,
    }
}

/// `γ ∈ {0.1, 0.2, …, 5.0}`.
pub fn default_gammas() -> Vec<f64> {
    (1..=50).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub window: usize,
    pub p: usize,
    pub gammas: Vec<f64>,
    pub zs: Vec<f64>,
    pub draws: usize,
    pub periods: Vec<Period>,
    pub seed: u64,
    pub burn_in: usize,
    pub counterfactual: bool,
    /// Keep per-draw series in the result (memory grows with draws × γ × z).
    pub keep_draws: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 12,
            p: 600,
            gammas: default_gammas(),
            zs: vec![0.01, 100.0],
            draws: 500,
            periods: default_periods(),
            seed: 0,
            burn_in: 36,
            counterfactual: false,
            keep_draws: false,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p % 2 != 0 {
            return Err(validation(format!("p = {} must be positive and even", self.p)));
        }
        if self.window == 0 {
            return Err(validation("window must be positive"));
        }
        if self.draws == 0 {
            return Err(validation("draws must be positive"));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(validation("γ grid must be non-empty, finite and ≥ 0"));
        }
        check_zs(&self.zs)?;
        check_periods(&self.periods)
    }
}

fn check_zs(zs: &[f64]) -> Result<()> {
    if zs.is_empty() || zs.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
        return Err(validation("z grid must be non-empty, finite and ≥ 0"));
    }
    Ok(())
}

fn check_periods(periods: &[Period]) -> Result<()> {
    if periods.is_empty() {
        return Err(validation("at least one period is required"));
    }
    for p in periods {
        if p.start > p.end {
            return Err(validation(format!("period {} ends before it starts", p.label)));
        }
    }
    for w in periods.windows(2) {
        if w[1].start <= w[0].end {
            return Err(validation(format!("periods {} and {} overlap or are unsorted", w[0].label, w[1].label)));
        }
    }
    Ok(())
}

/// Draw-averaged position and strategy return per month, aligned with
/// [`BacktestResult::months`]. `gamma` is `None` for the linear strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySeries {
    pub gamma: Option<f64>,
    pub z: f64,
    pub positions: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrawSeries {
    pub draw: usize,
    pub gamma: Option<f64>,
    pub z: f64,
    pub positions: Vec<f64>,
    pub returns: Vec<f64>,
}

/// `mean_return` is the period mean of the draw-averaged returns; `sharpe`
/// is the annualised Sharpe ratio `√12·mean/std` of each draw's monthly
/// returns, averaged over draws (0 when a draw's returns are constant).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub period: String,
    pub gamma: Option<f64>,
    pub z: f64,
    pub mean_return: f64,
    pub sharpe: f64,
    pub months: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualRow {
    pub period: String,
    pub gamma: f64,
    pub z: f64,
    pub real_return: f64,
    pub cf_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub date: Option<NaiveDate>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestResult {
    /// Realisation dates of the strategy returns.
    pub months: Vec<NaiveDate>,
    /// Market excess returns realised in those months.
    pub realized: Vec<f64>,
    pub series: Vec<StrategySeries>,
    pub draw_series: Vec<DrawSeries>,
    pub aggregates: Vec<Aggregate>,
    pub counterfactual: Vec<CounterfactualRow>,
    pub audit: Vec<AuditRecord>,
    pub draws: usize,
    /// Sub-period labels in order, then the full-sample label.
    pub periods: Vec<String>,
    pub full_period: String,
}

impl BacktestResult {
    pub fn aggregate(&self, period: &str, gamma: Option<f64>, z: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.period == period && a.gamma == gamma && a.z == z)
    }
}

/// Annualised Sharpe ratio of monthly returns.
pub fn annualized_sharpe(returns: &[f64]) -> f64 {
    let n = returns.len() as f64;
    if returns.len() < 2 {
        return 0.0;
    }
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return 0.0;
    }
    12f64.sqrt() * mean / var.sqrt()
}

/// Features of consecutive panel rows, stored column by column.
struct FeatureBlock {
    p: usize,
    m: usize,
    data: Vec<f64>,
}

impl FeatureBlock {
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.p..(j + 1) * self.p]
    }

    /// `gram[j][l] = S_j · S_{j−l}` for `l = 0..=n`.
    fn band_gram(&self, n: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.m * (n + 1)];
        for j in 0..self.m {
            let a = self.col(j);
            for l in 0..=n.min(j) {
                let b = self.col(j - l);
                g[j * (n + 1) + l] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        g
    }
}

/// Dual ridge positions for local rows `start..m` from the banded Gram matrix.
/// Rows whose window touches a non-finite target get `NaN`.
fn kernel_positions(gram: &[f64], n: usize, m: usize, targets: &[f64], start: usize, z: f64) -> Vec<f64> {
    let w = n + 1;
    let mut out = vec![f64::NAN; m];
    for j in start.max(n)..m {
        let r = DVector::from_fn(n, |a, _| targets[j - n + a]);
        if r.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let k = DMatrix::from_fn(n, n, |a, b| {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            gram[(j - n + hi) * w + (hi - lo)]
        });
        let kt = DVector::from_fn(n, |a, _| gram[j * w + (n - a)]);
        let alpha = ridge_solve(k, &r, n as f64 * z);
        out[j] = kt.dot(&alpha);
    }
    out
}

/// `(K + λI)⁻¹r`, or the minimum-norm solution `K⁺r` when `λ = 0` or the
/// system is numerically singular.
fn ridge_solve(mut k: DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> DVector<f64> {
    for i in 0..k.nrows() {
        k[(i, i)] += lambda;
    }
    if lambda > 0.0 {
        if let Some(ch) = k.clone().cholesky() {
            return ch.solve(r);
        }
    }
    let eig = k.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = top * f64::EPSILON * r.len() as f64;
    let proj = eig.eigenvectors.transpose() * r;
    let scaled = DVector::from_fn(r.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l.abs() > cut {
            proj[i] / l
        } else {
            0.0
        }
    });
    eig.eigenvectors * scaled
}

/// Affinely rescale `fitted` so its sample mean and standard deviation equal
/// those of `realized`.
pub fn counterfactual(fitted: &[f64], realized: &[f64]) -> Result<Vec<f64>> {
    if fitted.len() != realized.len() || fitted.len() < 2 {
        return Err(validation("counterfactual needs two equally long series of length ≥ 2"));
    }
    let (mf, sf) = mean_std(fitted);
    let (mr, sr) = mean_std(realized);
    if !(sf > 0.0) || !sf.is_finite() {
        return Err(domain("counterfactual returns have zero variance"));
    }
    let scale = sr / sf;
    let mut out: Vec<f64> = fitted.iter().map(|f| (f - mf) * scale).collect();
    // Remove the rounding residue of the centring so the mean matches to the last bit.
    let (mo, _) = mean_std(&out);
    out.iter_mut().for_each(|v| *v += mr - mo);
    Ok(out)
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Panel rows with features and their realised targets.
struct Layout {
    /// Local index of the first month with a full trailing window.
    start: usize,
    m: usize,
    signals: DMatrix<f64>,
    targets: Vec<f64>,
    months: Vec<NaiveDate>,
    audit: Vec<AuditRecord>,
}

fn layout(panel: &MacroPanel, window: usize, burn_in: usize) -> Result<Layout> {
    let g = standardized_signals(panel, &Standardizer { burn_in });
    let first = g
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| domain(format!("panel has fewer than {burn_in} months")))?;
    let m = panel.len() - first;
    if m <= window {
        return Err(domain(format!(
            "{m} standardised months do not cover a {window}-month window plus one month"
        )));
    }
    let d = g[first].as_ref().unwrap().len();
    let mut signals = DMatrix::zeros(d, m);
    for j in 0..m {
        signals.set_column(j, g[first + j].as_ref().unwrap());
    }
    let targets = panel.target[first..].to_vec();
    let months = (first + window..panel.len()).map(|t| panel.target_date(t)).collect();
    let audit = (first..first + window)
        .map(|t| AuditRecord {
            date: Some(panel.target_date(t)),
            reason: format!("fewer than {window} trailing months"),
        })
        .collect();
    Ok(Layout {
        start: window,
        m,
        signals,
        targets,
        months,
        audit,
    })
}

/// Positions and returns of one draw for one `(γ, z)` over local months `start..m`.
struct PathOut {
    positions: Vec<f64>,
    returns: Vec<f64>,
    cf_returns: Option<Vec<f64>>,
}

fn strategy_path(gram: &[f64], n: usize, lay: &Layout, z: f64) -> (Vec<f64>, Vec<f64>) {
    let pos = kernel_positions(gram, n, lay.m, &lay.targets, lay.start, z);
    let positions: Vec<f64> = pos[lay.start..].to_vec();
    let returns = positions.iter().zip(&lay.targets[lay.start..]).map(|(p, r)| p * r).collect();
    (positions, returns)
}

/// Strategy returns on the rescaled counterfactual series, `NaN` where the
/// counterfactual window is not yet available.
fn counterfactual_path(gram: &[f64], n: usize, lay: &Layout, zs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let fitted = kernel_positions(gram, n, lay.m, &lay.targets, lay.start, 0.0);
    let scaled = counterfactual(&fitted[lay.start..], &lay.targets[lay.start..])?;
    let mut cf_targets = vec![f64::NAN; lay.m];
    cf_targets[lay.start..].copy_from_slice(&scaled);
    Ok(zs
        .iter()
        .map(|&z| {
            let pos = kernel_positions(gram, n, lay.m, &cf_targets, lay.start + n, z);
            (lay.start..lay.m).map(|j| pos[j] * cf_targets[j]).collect()
        })
        .collect())
}

struct Accumulator {
    positions: Vec<Vec<f64>>,
    returns: Vec<Vec<f64>>,
    cf_returns: Vec<Vec<f64>>,
    sharpe: Vec<Vec<f64>>,
    draws: Vec<DrawSeries>,
}

fn period_masks(months: &[NaiveDate], periods: &[Period]) -> Vec<Vec<usize>> {
    periods
        .iter()
        .map(|p| (0..months.len()).filter(|&i| p.contains(months[i])).collect())
        .collect()
}

/// Run the RFF timing backtest. Draws run in parallel and are folded in
/// draw order, so results do not depend on the thread count.
pub fn timing_backtest(panel: &MacroPanel, config: &BacktestConfig) -> Result<BacktestResult> {
    config.validate()?;
    let n = config.window;
    let lay = layout(panel, n, config.burn_in)?;
    let all_periods: Vec<Period> = config
        .periods
        .iter()
        .cloned()
        .chain(std::iter::once(full_period(&config.periods)))
        .collect();
    let masks = period_masks(&lay.months, &all_periods);
    let keys: Vec<(usize, usize)> = (0..config.gammas.len())
        .flat_map(|g| (0..config.zs.len()).map(move |z| (g, z)))
        .collect();
    let len = lay.months.len();
    let mut acc = Accumulator {
        positions: vec![vec![0.0; len]; keys.len()],
        returns: vec![vec![0.0; len]; keys.len()],
        cf_returns: vec![vec![0.0; len]; keys.len()],
        sharpe: vec![vec![0.0; all_periods.len()]; keys.len()],
        draws: Vec::new(),
    };
    let d = lay.signals.nrows();

    let run_draw = |draw: usize| -> Result<Vec<PathOut>> {
        let weights = RffWeights::draw(config.seed, draw as u64, config.p, d)?;
        let proj = &weights.w * &lay.signals;
        let mut out = Vec::with_capacity(keys.len());
        let mut block = FeatureBlock {
            p: config.p,
            m: lay.m,
            data: vec![0.0; config.p * lay.m],
        };
        for &gamma in &config.gammas {
            for j in 0..lay.m {
                let col = proj.column(j);
                fill_features(col.as_slice(), gamma, &mut block.data[j * config.p..(j + 1) * config.p]);
            }
            let gram = block.band_gram(n);
            let mut cf = if config.counterfactual {
                Some(counterfactual_path(&gram, n, &lay, &config.zs)?.into_iter())
            } else {
                None
            };
            for &z in &config.zs {
                let (positions, returns) = strategy_path(&gram, n, &lay, z);
                out.push(PathOut {
                    positions,
                    returns,
                    cf_returns: cf.as_mut().map(|it| it.next().unwrap()),
                });
            }
        }
        Ok(out)
    };

    const CHUNK: usize = 32;
    let draws: Vec<usize> = (0..config.draws).collect();
    for chunk in draws.chunks(CHUNK) {
        let results: Vec<Result<Vec<PathOut>>> = chunk.par_iter().map(|&d| run_draw(d)).collect();
        for (&draw, res) in chunk.iter().zip(results) {
            for (k, path) in res?.into_iter().enumerate() {
                add(&mut acc.positions[k], &path.positions);
                add(&mut acc.returns[k], &path.returns);
                if let Some(cf) = &path.cf_returns {
                    add(&mut acc.cf_returns[k], cf);
                }
                for (pi, mask) in masks.iter().enumerate() {
                    let r: Vec<f64> = mask.iter().map(|&i| path.returns[i]).collect();
                    acc.sharpe[k][pi] += annualized_sharpe(&r);
                }
                if config.keep_draws {
                    let (g, z) = keys[k];
                    acc.draws.push(DrawSeries {
                        draw,
                        gamma: Some(config.gammas[g]),
                        z: config.zs[z],
                        positions: path.positions,
                        returns: path.returns,
                    });
                }
            }
        }
    }

    let nd = config.draws as f64;
    let mut series = Vec::with_capacity(keys.len());
    let mut aggregates = Vec::new();
    let mut cf_rows = Vec::new();
    let mut audit = lay.audit.clone();
    for (k, &(g, zi)) in keys.iter().enumerate() {
        let gamma = config.gammas[g];
        let z = config.zs[zi];
        let positions: Vec<f64> = acc.positions[k].iter().map(|v| v / nd).collect();
        let returns: Vec<f64> = acc.returns[k].iter().map(|v| v / nd).collect();
        for (pi, (period, mask)) in all_periods.iter().zip(&masks).enumerate() {
            if mask.is_empty() {
                continue;
            }
            aggregates.push(Aggregate {
                period: period.label.clone(),
                gamma: Some(gamma),
                z,
                mean_return: mask.iter().map(|&i| returns[i]).sum::<f64>() / mask.len() as f64,
                sharpe: acc.sharpe[k][pi] / nd,
                months: mask.len(),
            });
            if config.counterfactual {
                let both: Vec<usize> = mask.iter().copied().filter(|&i| i >= n).collect();
                if both.is_empty() {
                    continue;
                }
                let mean = |v: &[f64]| both.iter().map(|&i| v[i]).sum::<f64>() / both.len() as f64;
                cf_rows.push(CounterfactualRow {
                    period: period.label.clone(),
                    gamma,
                    z,
                    real_return: mean(&returns),
                    cf_return: mean(&acc.cf_returns[k]) / nd,
                });
            }
        }
        series.push(StrategySeries {
            gamma: Some(gamma),
            z,
            positions,
            returns,
        });
    }
    for (period, mask) in all_periods.iter().zip(&masks) {
        if mask.is_empty() {
            audit.push(AuditRecord {
                date: None,
                reason: format!("period {} has no backtest months", period.label),
            });
        }
    }
    if config.counterfactual {
        audit.extend((0..n.min(len)).map(|i| AuditRecord {
            date: Some(lay.months[i]),
            reason: "counterfactual window not yet available".into(),
        }));
    }
    Ok(BacktestResult {
        months: lay.months,
        realized: lay.targets[lay.start..].to_vec(),
        series,
        draw_series: acc.draws,
        aggregates,
        counterfactual: cf_rows,
        audit,
        draws: config.draws,
        periods: config.periods.iter().map(|p| p.label.clone()).collect(),
        full_period: full_period(&config.periods).label,
    })
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// The same rolling protocol on the standardised signals themselves.
pub fn linear_backtest(panel: &MacroPanel, zs: &[f64], window: usize, burn_in: usize, periods: &[Period]) -> Result<BacktestResult> {
    check_zs(zs)?;
    check_periods(periods)?;
    if window == 0 {
        return Err(validation("window must be positive"));
    }
    let lay = layout(panel, window, burn_in)?;
    let block = FeatureBlock {
        p: lay.signals.nrows(),
        m: lay.m,
        data: lay.signals.as_slice().to_vec(),
    };
    let gram = block.band_gram(window);
    let all_periods: Vec<Period> = periods.iter().cloned().chain(std::iter::once(full_period(periods))).collect();
    let masks = period_masks(&lay.months, &all_periods);
    let mut series = Vec::new();
    let mut aggregates = Vec::new();
    for &z in zs {
        let (positions, returns) = strategy_path(&gram, window, &lay, z);
        for (period, mask) in all_periods.iter().zip(&masks) {
            if mask.is_empty() {
                continue;
            }
            let r: Vec<f64> = mask.iter().map(|&i| returns[i]).collect();
            aggregates.push(Aggregate {
                period: period.label.clone(),
                gamma: None,
                z,
                mean_return: r.iter().sum::<f64>() / r.len() as f64,
                sharpe: annualized_sharpe(&r),
                months: r.len(),
            });
        }
        series.push(StrategySeries {
            gamma: None,
            z,
            positions,
            returns,
        });
    }
    Ok(BacktestResult {
        months: lay.months,
        realized: lay.targets[lay.start..].to_vec(),
        series,
        draw_series: Vec::new(),
        aggregates,
        counterfactual: Vec::new(),
        audit: lay.audit,
        draws: 1,
        periods: periods.iter().map(|p| p.label.clone()).collect(),
        full_period: full_period(periods).label,
    })
}
