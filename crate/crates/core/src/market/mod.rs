//! Empirical pipeline: macro panel, random Fourier features, the rolling
//! timing backtest, predictive betas and counterfactual returns.

mod backtest;
mod betas;
mod panel;
mod rff;
mod schemes;

pub use backtest::{
    annualized_sharpe, counterfactual, default_gammas, default_periods, full_period, linear_backtest, timing_backtest,
    Aggregate, AuditRecord, BacktestConfig, BacktestResult, CounterfactualRow, DrawSeries, Period, StrategySeries,
};
pub use betas::{rolling_betas, BetaPath, DEFAULT_EXCLUSIONS};
pub use panel::{
    build_panel, load_panel, read_column_map, read_raw, standardize, standardized_signals, ColumnMap, MacroPanel,
    RawTable, Standardizer, PREDICTORS, RAW_COLUMNS,
};
pub use rff::{rff, RffWeights};
pub use schemes::{bandwidth_schemes, SchemeRow};
