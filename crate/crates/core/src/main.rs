//! `drift-timing` command line: theory sweeps, Monte-Carlo grids and the
//! market backtest. Every run writes its outputs and a `manifest.json`.

use anyhow::{anyhow, bail, Context, Result};
use chrono::{NaiveDate, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drift_timing::market::{
    bandwidth_schemes, full_period, linear_backtest, load_panel, read_column_map, rolling_betas, timing_backtest,
    BacktestConfig, BacktestResult, Period, DEFAULT_EXCLUSIONS,
};
use drift_timing::montecarlo::{convergence_scan, panel, run_grid, Covariance, Loadings};
use drift_timing::theory::{f_iid, moments_iid, DriftGeometry};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const DATA_DIR_ENV: &str = "DRIFT_TIMING_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "drift-timing", version, about = "Ridge market timing under posterior drift")]
struct Cli {
    /// Directory for CSV/JSON outputs and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form moments over a sweep of (z, cφ, signal, k).
    Theory(TheoryArgs),
    /// Monte-Carlo grids against theory.
    Simulate(SimulateArgs),
    /// RFF timing backtest on the monthly macro panel.
    Backtest(BacktestArgs),
    /// Rerun a manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Serialize)]
struct TheoryArgs {
    /// Print and write the isotropic shrinkage f(z; cφ) for every (z, c).
    #[arg(long)]
    f_iid: bool,
    /// `sr-signal`: Sharpe curves over cφ ∈ (0, c] at fixed total complexity.
    #[arg(long)]
    figure: Option<Figure>,
    #[arg(long, value_delimiter = ',')]
    z: Vec<f64>,
    /// Total complexity (p+q)/n; with --f-iid this is cφ.
    #[arg(long, value_delimiter = ',')]
    c: Vec<f64>,
    /// cφ values for a plain grid sweep.
    #[arg(long, value_delimiter = ',')]
    cphi: Vec<f64>,
    /// In-sample signal ‖β_is‖² + ‖θ_is‖².
    #[arg(long, value_delimiter = ',', default_value = "1")]
    signals: Vec<f64>,
    /// Out-of-sample loading scale (1 = no drift).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<f64>,
    /// Grid points in cφ for --figure.
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Fourth moment of the latent noise.
    #[arg(long, default_value_t = 3.0)]
    m4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum Figure {
    SrSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum Protocol {
    /// Isotropic features, proportional loadings.
    S3Proportional,
    /// Isotropic features, concentrated loadings.
    S3Concentrated,
    /// AR(0.9) features, proportional loadings.
    AppendixAr,
    /// AR(0.9) features, concentrated loadings.
    AppendixArConcentrated,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
    /// Run the finite-n convergence scan instead of a protocol.
    #[arg(long)]
    convergence: bool,
    #[arg(long, value_delimiter = ',')]
    z: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Observed feature counts; p+q is fixed by --total.
    #[arg(long, value_delimiter = ',', default_value = "50,200,300")]
    p: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    total: usize,
    /// cφ of the convergence scan.
    #[arg(long, visible_alias = "c", default_value_t = 0.5)]
    cphi: f64,
    /// Total complexity of the convergence scan.
    #[arg(long, default_value_t = 3.0)]
    complexity: f64,
    #[arg(long, value_delimiter = ',', default_value = "40,50,60,70,80,90,100,110,120,130")]
    n_list: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
struct BacktestArgs {
    /// Monthly Goyal–Welch CSV; defaults to $DRIFT_TIMING_DATA_DIR/goyal.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON object mapping canonical column names to the file's names.
    #[arg(long)]
    column_map: Option<PathBuf>,
    /// JSON file with a full backtest configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    z: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Also backtest on counterfactual no-drift returns.
    #[arg(long)]
    counterfactual: bool,
    /// Rolling-beta window in months.
    #[arg(long, default_value_t = 180)]
    beta_window: usize,
}

#[derive(Debug, Args, Serialize)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seed: u64,
    version: String,
    started: String,
    wall_seconds: f64,
    outputs: Vec<OutputFile>,
}

/// A usage problem detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

struct Outputs {
    dir: PathBuf,
    format: Format,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: &Path, format: Format) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    fn write<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<()> {
        if matches!(self.format, Format::Csv | Format::Both) {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| anyhow!("{e}"))?;
            self.save(&format!("{stem}.csv"), &bytes)?;
        }
        if matches!(self.format, Format::Json | Format::Both) {
            let mut bytes = serde_json::to_vec_pretty(rows)?;
            bytes.push(b'\n');
            self.save(&format!("{stem}.json"), &bytes)?;
        }
        Ok(())
    }

    fn save(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use drift_timing::Error as E;
    if e.downcast_ref::<Usage>().is_some() {
        return "usage";
    }
    match e.downcast_ref::<E>() {
        Some(E::Validation(_)) => "validation",
        Some(E::Domain(_)) => "domain",
        Some(E::Solver { .. }) => "solver",
        Some(E::Singularity(_)) => "singularity",
        Some(E::Numerical(_)) => "numerical",
        Some(E::Schema(_)) => "schema",
        Some(E::Io(_)) => "io",
        None if e.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "error",
    }
}

fn emit_error(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest, &cli.out);
    }
    let started = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);
    let clock = Instant::now();
    let mut out = Outputs::new(&cli.out, cli.format)?;
    let (name, config) = match &cli.command {
        Command::Theory(a) => ("theory", cmd_theory(a, &mut out)?),
        Command::Simulate(a) => ("simulate", cmd_simulate(a, cli.seed, &mut out)?),
        Command::Backtest(a) => ("backtest", cmd_backtest(a, cli.seed, &mut out)?),
        Command::Replay(_) => unreachable!(),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        args,
        config,
        seed: cli.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        wall_seconds: clock.elapsed().as_secs_f64(),
        outputs: out.files,
    };
    let path = cli.out.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn replay(manifest: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let old: RunManifest = serde_json::from_str(&text).context("parsing manifest")?;
    let mut argv = vec!["drift-timing".to_string()];
    argv.extend(old.args.iter().cloned());
    let mut cli = Cli::try_parse_from(&argv).map_err(|e| usage(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!(usage("a replay manifest cannot replay itself"));
    }
    cli.out = out.to_path_buf();
    run(cli, old.args.clone())?;
    let fresh: RunManifest = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json"))?)?;
    let before: HashMap<&str, &str> = old.outputs.iter().map(|o| (o.file.as_str(), o.sha256.as_str())).collect();
    let mismatched: Vec<&str> = fresh
        .outputs
        .iter()
        .filter(|o| before.get(o.file.as_str()) != Some(&o.sha256.as_str()))
        .map(|o| o.file.as_str())
        .collect();
    if !mismatched.is_empty() || fresh.outputs.len() != old.outputs.len() {
        bail!("replay digests differ for: {}", mismatched.join(", "));
    }
    println!("replay reproduced {} outputs", fresh.outputs.len());
    Ok(())
}

#[derive(Serialize)]
struct FRow {
    z: f64,
    cphi: f64,
    f: f64,
}

#[derive(Serialize)]
struct TheoryRow {
    z: f64,
    c: f64,
    cphi: f64,
    signal: f64,
    k: f64,
    mean: f64,
    vol: f64,
    sharpe: f64,
    leverage: f64,
}

/// Loadings spread evenly over `p + q` coordinates with total in-sample
/// signal `signal`, out-of-sample scaled by `k`.
fn even_geometry(p: usize, q: usize, signal: f64, k: f64) -> Result<DriftGeometry> {
    let e = (signal / (p + q) as f64).sqrt();
    let b = DVector::from_element(p, e);
    let t = DVector::from_element(q, e);
    Ok(DriftGeometry::new(b.clone(), b * k, t.clone(), t * k)?)
}

fn cmd_theory(a: &TheoryArgs, out: &mut Outputs) -> Result<serde_json::Value> {
    if a.z.is_empty() {
        bail!(usage("empty sweep: pass at least one --z"));
    }
    if a.f_iid {
        if a.c.is_empty() {
            bail!(usage("empty sweep: pass at least one --c"));
        }
        let mut rows = Vec::new();
        for &z in &a.z {
            for &c in &a.c {
                let f = f_iid(z, c)?;
                println!("f(z={z}, cφ={c}) = {f}");
                rows.push(FRow { z, cphi: c, f });
            }
        }
        out.write("f_iid", &rows)?;
        return Ok(serde_json::to_value(a)?);
    }
    if a.signals.is_empty() || a.k.is_empty() {
        bail!(usage("empty sweep: --signals and --k need values"));
    }
    // Feature counts only fix the kurtosis term; use n = 1000 as reference.
    const N: f64 = 1000.0;
    let mut rows = Vec::new();
    let mut push = |z: f64, c: f64, cphi: f64, signal: f64, k: f64| -> Result<()> {
        let p = ((cphi * N).round() as usize).max(1);
        let q = ((c * N).round() as usize).saturating_sub(p);
        let m = moments_iid(z, cphi, &even_geometry(p, q, signal, k)?, a.m4)?;
        rows.push(TheoryRow {
            z,
            c,
            cphi,
            signal,
            k,
            mean: m.mean,
            vol: m.vol(),
            sharpe: m.sharpe,
            leverage: m.leverage,
        });
        Ok(())
    };
    match a.figure {
        Some(Figure::SrSignal) => {
            if a.c.is_empty() || a.points == 0 {
                bail!(usage("empty sweep: --figure sr-signal needs --c and --points > 0"));
            }
            for &z in &a.z {
                for &c in &a.c {
                    for &s in &a.signals {
                        for &k in &a.k {
                            for j in 1..=a.points {
                                let cphi = c * j as f64 / a.points as f64;
                                if z == 0.0 && cphi == 1.0 {
                                    continue;
                                }
                                push(z, c, cphi, s, k)?;
                            }
                        }
                    }
                }
            }
        }
        None => {
            if a.cphi.is_empty() {
                bail!(usage("empty sweep: pass --cphi values or --figure"));
            }
            for &z in &a.z {
                for &cphi in &a.cphi {
                    let cs = if a.c.is_empty() { vec![cphi] } else { a.c.clone() };
                    for &c in &cs {
                        if c < cphi {
                            bail!(usage(format!("total complexity c = {c} is below cφ = {cphi}")));
                        }
                        for &s in &a.signals {
                            for &k in &a.k {
                                push(z, c, cphi, s, k)?;
                            }
                        }
                    }
                }
            }
        }
    }
    out.write("theory", &rows)?;
    Ok(serde_json::to_value(a)?)
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, out: &mut Outputs) -> Result<serde_json::Value> {
    if a.z.is_empty() {
        bail!(usage("empty sweep: pass at least one --z"));
    }
    if a.convergence {
        let mut rows = Vec::new();
        for &z in &a.z {
            rows.extend(convergence_scan(a.cphi, a.complexity, z, &a.n_list, a.draws, seed)?);
        }
        out.write("convergence", &rows)?;
        return Ok(serde_json::to_value(a)?);
    }
    let protocol = a.protocol.ok_or_else(|| usage("pass --protocol or --convergence"))?;
    let (loadings, cov) = match protocol {
        Protocol::S3Proportional => (Loadings::Proportional, Covariance::Isotropic),
        Protocol::S3Concentrated => (Loadings::Concentrated, Covariance::Isotropic),
        Protocol::AppendixAr => (Loadings::Proportional, Covariance::Autoregressive),
        Protocol::AppendixArConcentrated => (Loadings::Concentrated, Covariance::Autoregressive),
    };
    for &p in &a.p {
        if p == 0 || p > a.total {
            bail!(usage(format!("p = {p} must lie in 1..={}", a.total)));
        }
        let grid = panel(a.n, p, a.total - p, loadings, cov, &a.z, a.draws, seed)?;
        let res = run_grid(&grid)?;
        out.write(&grid.experiment, &res.points)?;
    }
    Ok(serde_json::to_value(a)?)
}

#[derive(Serialize)]
struct ExpRetRow<'a> {
    period: &'a str,
    gamma: f64,
    z: f64,
    mean_monthly_return: f64,
}

#[derive(Serialize)]
struct SharpeRow<'a> {
    period: &'a str,
    gamma: f64,
    z: f64,
    sharpe: f64,
}

#[derive(Serialize)]
struct Table2Row {
    period: String,
    scheme: String,
    z: f64,
    #[serde(rename = "return")]
    value: f64,
}

#[derive(Serialize)]
struct SeriesRow {
    date: NaiveDate,
    gamma: Option<f64>,
    z: f64,
    position: f64,
    #[serde(rename = "return")]
    value: f64,
}

#[derive(Serialize)]
struct BetaRow<'a> {
    date: NaiveDate,
    predictor: &'a str,
    coefficient: f64,
    ridge_fallback: bool,
}

fn data_path(a: &BacktestArgs) -> Result<PathBuf> {
    if let Some(p) = &a.data {
        return Ok(p.clone());
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Ok(PathBuf::from(dir).join("goyal.csv")),
        None => Err(usage(format!("no data file: pass --data or set {DATA_DIR_ENV}"))),
    }
}

fn cmd_backtest(a: &BacktestArgs, seed: u64, out: &mut Outputs) -> Result<serde_json::Value> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<BacktestConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BacktestConfig::default(),
    };
    cfg.seed = seed;
    if let Some(z) = &a.z {
        cfg.zs = z.clone();
    }
    if let Some(g) = &a.gammas {
        cfg.gammas = g.clone();
    }
    if let Some(d) = a.draws {
        cfg.draws = d;
    }
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(w) = a.window {
        cfg.window = w;
    }
    cfg.counterfactual |= a.counterfactual;
    cfg.validate()?;

    let map = match &a.column_map {
        Some(p) => read_column_map(p)?,
        None => HashMap::new(),
    };
    let panel = load_panel(&data_path(a)?, &map, 6)?;
    let res = timing_backtest(&panel, &cfg)?;
    let lin = linear_backtest(&panel, &cfg.zs, cfg.window, cfg.burn_in, &cfg.periods)?;

    let expret: Vec<ExpRetRow> = res
        .aggregates
        .iter()
        .map(|g| ExpRetRow {
            period: &g.period,
            gamma: g.gamma.unwrap_or(f64::NAN),
            z: g.z,
            mean_monthly_return: g.mean_return,
        })
        .collect();
    out.write("expret", &expret)?;
    let sharpe: Vec<SharpeRow> = res
        .aggregates
        .iter()
        .map(|g| SharpeRow {
            period: &g.period,
            gamma: g.gamma.unwrap_or(f64::NAN),
            z: g.z,
            sharpe: g.sharpe,
        })
        .collect();
    out.write("sharpe", &sharpe)?;
    out.write("table2", &table2(&res, &lin, &cfg.periods))?;
    let series: Vec<SeriesRow> = res
        .series
        .iter()
        .chain(&lin.series)
        .flat_map(|s| {
            let months = if s.gamma.is_some() { &res.months } else { &lin.months };
            months.iter().enumerate().map(move |(i, &date)| SeriesRow {
                date,
                gamma: s.gamma,
                z: s.z,
                position: s.positions[i],
                value: s.returns[i],
            })
        })
        .collect();
    out.write("series", &series)?;
    if cfg.counterfactual {
        out.write("counterfactual", &res.counterfactual)?;
    }
    let mut audit = res.audit.clone();
    match rolling_betas(&panel, a.beta_window, &DEFAULT_EXCLUSIONS, 6) {
        Ok(path) => {
            let rows: Vec<BetaRow> = path
                .dates
                .iter()
                .enumerate()
                .flat_map(|(i, &date)| {
                    let fb = path.ridge_fallback[i];
                    path.names.iter().zip(&path.coefficients[i]).map(move |(name, &c)| BetaRow {
                        date,
                        predictor: name,
                        coefficient: c,
                        ridge_fallback: fb,
                    })
                })
                .collect();
            out.write("betas", &rows)?;
        }
        Err(e) => audit.push(drift_timing::market::AuditRecord {
            date: None,
            reason: format!("rolling betas skipped: {e}"),
        }),
    }
    out.write("audit", &audit)?;
    let mut config = serde_json::to_value(&cfg)?;
    config["data"] = serde_json::to_value(data_path(a)?)?;
    config["beta_window"] = a.beta_window.into();
    Ok(config)
}

/// Feasible and hindsight RFF returns plus the linear strategy per period.
fn table2(res: &BacktestResult, lin: &BacktestResult, periods: &[Period]) -> Vec<Table2Row> {
    let mut rows: Vec<Table2Row> = bandwidth_schemes(res)
        .into_iter()
        .map(|r| Table2Row {
            period: r.period,
            scheme: r.scheme,
            z: r.z,
            value: r.value,
        })
        .collect();
    let full = full_period(periods).label;
    for s in &lin.series {
        let vals: Vec<f64> = periods
            .iter()
            .filter_map(|p| lin.aggregate(&p.label, None, s.z))
            .map(|g| g.mean_return)
            .collect();
        for p in periods {
            if let Some(g) = lin.aggregate(&p.label, None, s.z) {
                rows.push(Table2Row {
                    period: p.label.clone(),
                    scheme: "linear".into(),
                    z: s.z,
                    value: g.mean_return,
                });
            }
        }
        if !vals.is_empty() {
            rows.push(Table2Row {
                period: full.clone(),
                scheme: "linear".into(),
                z: s.z,
                value: vals.iter().sum::<f64>() / vals.len() as f64,
            });
        }
    }
    rows
}
