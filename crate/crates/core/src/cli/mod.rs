//! Command-line surface. [`run`] parses arguments, executes one command and
//! returns the process exit code.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::bridge_kernel::{free_kernel, image_kernel, BridgeLaw};
use crate::error::FptError;
use crate::fpt_pipeline::{density_curve, DensityCurve};
use crate::gauge::GaugeFunctions;
use crate::level_hitting::passage_kernel;
use crate::montecarlo::{
    ks_statistic, mc_bridge_expectation, simulate_martingale_fpt, simulate_ou_fpt, CdfTable, FptSample,
};
use crate::propagator::{bridge_expectation, schrodinger_free_kernel, schrodinger_kernel};
use crate::selftest::run_suite;
use config::{Format, KernelName, Problem, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICS: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

/// Asymptotic 95% quantile factor of the one-sample K-S statistic is 1.36;
/// mc-validate uses `3 · 0.886 / √n`.
pub const KS_FACTOR: f64 = 0.886;

/// Slack added to `3·stderr` in the bridge comparison: the analytic value is
/// only resolved to this accuracy, and the MC standard error is exactly zero
/// when `β' ≡ 0`.
pub const BRIDGE_SLACK: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "fpt", version, about = "First-passage times of a martingale across a moving boundary")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply to missing sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub delta_frac: Option<f64>,
    /// Richardson extrapolation in the terminal offset (`--richardson false` to disable).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub richardson: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Density and CDF on the grid.
    Density,
    /// CDF on the grid.
    Cdf,
    /// Compare the analytic law with Monte Carlo.
    McValidate,
    /// Empirical first-passage CDF on the grid.
    Simulate,
    /// Dump a kernel on an (x, y) grid.
    Kernel,
    /// Dump the gauge functions.
    GaugeDump,
    /// Run the residual suite.
    Selftest,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Numerics(FptError),
    Io(String),
}

impl From<FptError> for CliError {
    fn from(e: FptError) -> Self {
        Self::Numerics(e)
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Numerics(_) | Self::Io(_) => EXIT_NUMERICS,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Numerics(e) => write!(f, "numerical failure: {e}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let threads = cli.threads;
    let go = move || match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fpt: {e}");
            e.code()
        }
    };
    match threads {
        None => go(),
        Some(0) => {
            eprintln!("fpt: config error: --threads must be positive");
            EXIT_CONFIG
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("fpt: cannot start thread pool: {e}");
                EXIT_NUMERICS
            }
        },
    }
}

/// Reads the config file and applies the command-line overrides.
fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if let Some(path) = &cli.output {
        cfg.output.path = Some(path.clone());
    }
    if let Some(d) = cli.delta_frac {
        cfg.propagator.delta_frac = d;
    }
    if let Some(r) = cli.richardson {
        cfg.propagator.richardson = r;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> CliResult<i32> {
    let cfg = effective_config(cli)?;
    info!("running {:?}", cli.command);
    match cli.command {
        Command::Density => cmd_density(&cfg, true),
        Command::Cdf => cmd_density(&cfg, false),
        Command::McValidate => cmd_mc_validate(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Kernel => cmd_kernel(&cfg),
        Command::GaugeDump => cmd_gauge_dump(&cfg),
        Command::Selftest => cmd_selftest(&cfg),
    }
}

fn problem(cfg: &RunConfig) -> CliResult<Problem> {
    cfg.problem().map_err(CliError::Config)
}

/// 17 significant digits, enough to round-trip an `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    config: &'a RunConfig,
}

/// Writes the payload once, at the end. CSV files get a `.meta.json`
/// companion echoing the effective configuration.
fn emit(cfg: &RunConfig, command: &str, payload: &str, format: Format) -> CliResult<()> {
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    match &cfg.output.path {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(payload.as_bytes()).map_err(|e| io(Path::new("<stdout>"), e))?;
        }
        Some(path) => {
            fs::write(path, payload).map_err(|e| io(path, e))?;
            if format == Format::Csv {
                let mut meta_path = path.clone().into_os_string();
                meta_path.push(".meta.json");
                let meta_path = PathBuf::from(meta_path);
                let meta = serde_json::to_string_pretty(&Meta { command, config: cfg }).expect("meta serializes");
                fs::write(&meta_path, meta + "\n").map_err(|e| io(&meta_path, e))?;
            }
        }
    }
    Ok(())
}

fn warning_cell(curve: &DensityCurve, i: usize) -> String {
    curve
        .point_warnings(i)
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Serialize)]
struct CurveJson<'a> {
    config: &'a RunConfig,
    s: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    density: Option<&'a [f64]>,
    cdf: &'a [f64],
    total_mass: f64,
    warnings: Vec<String>,
}

fn cmd_density(cfg: &RunConfig, with_density: bool) -> CliResult<i32> {
    let p = problem(cfg)?;
    let curve = density_curve(&p.boundary, &p.clock, &p.grid, &p.propagator)?;
    for w in &curve.warnings {
        eprintln!("fpt: warning: {w}");
    }
    let format = cfg.output.format;
    let payload = match format {
        Format::Csv => {
            let mut out = String::from(if with_density { "s,density,cdf,warnings\n" } else { "s,cdf,warnings\n" });
            for i in 0..curve.grid.len() {
                let _ = write!(out, "{},", num(curve.grid[i]));
                if with_density {
                    let _ = write!(out, "{},", num(curve.density[i]));
                }
                let _ = writeln!(out, "{},{}", num(curve.cdf[i]), warning_cell(&curve, i));
            }
            out
        }
        Format::Json => {
            let json = CurveJson {
                config: cfg,
                s: &curve.grid,
                density: with_density.then_some(&curve.density[..]),
                cdf: &curve.cdf,
                total_mass: curve.total_mass,
                warnings: curve.warnings.iter().map(|w| w.to_string()).collect(),
            };
            serde_json::to_string_pretty(&json).expect("curve serializes") + "\n"
        }
    };
    emit(cfg, if with_density { "density" } else { "cdf" }, &payload, format)?;
    Ok(EXIT_OK)
}

fn simulate_sample(cfg: &RunConfig, p: &Problem) -> CliResult<FptSample> {
    let horizon = p.grid[p.grid.len() - 1];
    let (paths, steps, seed) = (cfg.mc.paths, cfg.mc.steps, cfg.mc.seed);
    let sample = match &p.ou_level {
        Some(g) => simulate_ou_fpt(|t| g.eval(t), 0.0, paths, horizon / steps as f64, horizon, seed)?,
        None => {
            let (f, _) = p.boundary.normalized()?;
            simulate_martingale_fpt(&f, &p.clock, paths, steps, horizon, seed)?
        }
    };
    Ok(sample)
}

/// One bridge-expectation comparison.
#[derive(Debug, Clone, Serialize)]
pub struct BridgeComparison {
    pub s: f64,
    pub analytic: f64,
    pub mc: f64,
    pub stderr: f64,
    pub discrepancy: f64,
    pub discrepancy_in_stderr: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// The mc-validate report. The top-level bridge fields repeat the entry of
/// `bridge` with the largest discrepancy in standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub ks_statistic: f64,
    pub ks_threshold: f64,
    pub ks_pass: bool,
    pub bridge_s: f64,
    pub bridge_expectation_analytic: f64,
    pub bridge_expectation_mc: f64,
    pub stderr: f64,
    pub discrepancy: f64,
    pub discrepancy_in_stderr: f64,
    pub pass: bool,
    pub bridge: Vec<BridgeComparison>,
    pub n_paths: usize,
    pub n_censored: usize,
    pub curve_warnings: Vec<String>,
    pub config: RunConfig,
}

fn cmd_mc_validate(cfg: &RunConfig) -> CliResult<i32> {
    let p = problem(cfg)?;
    if cfg.mc.paths < 2 || cfg.mc.steps < 2 {
        return Err(CliError::Config("[mc]: need at least 2 paths and 2 steps".into()));
    }
    let bridge_steps = cfg.mc.bridge_steps.unwrap_or(cfg.mc.steps);
    let horizon = p.grid[p.grid.len() - 1];
    let bridge_s = cfg.mc.bridge_s.clone().unwrap_or_else(|| vec![horizon]);
    if bridge_s.is_empty() || bridge_s.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(CliError::Config("[mc]: bridge_s must be a non-empty list of positive times".into()));
    }

    let curve = density_curve(&p.boundary, &p.clock, &p.grid, &p.propagator)?;
    let table = CdfTable::new(curve.grid.clone(), curve.cdf.clone())?;
    let sample = simulate_sample(cfg, &p)?;
    let ks = ks_statistic(&sample, |t| table.eval(t))?;
    let ks_threshold = 3.0 * KS_FACTOR / (cfg.mc.paths as f64).sqrt();

    let (f, _) = p.boundary.normalized()?;
    let a = f.level();
    let mut bridge = Vec::with_capacity(bridge_s.len());
    for (k, &s) in bridge_s.iter().enumerate() {
        let analytic = bridge_expectation(&f, &p.clock, 0.0, a, s, &p.propagator)?;
        let seed = cfg.mc.seed.wrapping_add(1 + k as u64);
        let mc = mc_bridge_expectation(&f, &p.clock, a, s, cfg.mc.paths, bridge_steps, seed)?;
        let discrepancy = analytic.value - mc.mean;
        let discrepancy_in_stderr = if mc.stderr > 0.0 { discrepancy.abs() / mc.stderr } else { 0.0 };
        bridge.push(BridgeComparison {
            s,
            analytic: analytic.value,
            mc: mc.mean,
            stderr: mc.stderr,
            discrepancy,
            discrepancy_in_stderr,
            pass: discrepancy.abs() <= 3.0 * mc.stderr + BRIDGE_SLACK,
            warnings: analytic.warnings.iter().map(|w| w.to_string()).collect(),
        });
    }
    let worst = bridge
        .iter()
        .max_by(|x, y| {
            (x.discrepancy.abs() - 3.0 * x.stderr)
                .total_cmp(&(y.discrepancy.abs() - 3.0 * y.stderr))
        })
        .expect("non-empty")
        .clone();
    let ks_pass = ks < ks_threshold;
    let pass = ks_pass && bridge.iter().all(|b| b.pass);
    let report = ValidationReport {
        ks_statistic: ks,
        ks_threshold,
        ks_pass,
        bridge_s: worst.s,
        bridge_expectation_analytic: worst.analytic,
        bridge_expectation_mc: worst.mc,
        stderr: worst.stderr,
        discrepancy: worst.discrepancy,
        discrepancy_in_stderr: worst.discrepancy_in_stderr,
        pass,
        bridge,
        n_paths: sample.n_paths,
        n_censored: sample.n_censored,
        curve_warnings: curve.warnings.iter().map(|w| w.to_string()).collect(),
        config: cfg.clone(),
    };
    let payload = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(cfg, "mc-validate", &payload, Format::Json)?;
    if !pass {
        eprintln!(
            "fpt: validation failed: K-S {ks:.3e} (threshold {ks_threshold:.3e}), bridge discrepancy {:.3e} = {:.1} stderr at s = {}",
            worst.discrepancy, worst.discrepancy_in_stderr, worst.s
        );
        return Ok(EXIT_VALIDATION);
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(cfg: &RunConfig) -> CliResult<i32> {
    let p = problem(cfg)?;
    let sample = simulate_sample(cfg, &p)?;
    let mut out = String::from("s,empirical_cdf,stderr\n");
    for &s in &p.grid {
        let _ = writeln!(out, "{},{},{}", num(s), num(sample.empirical_cdf(s)), num(sample.cdf_stderr(s)));
    }
    info!("{} of {} paths censored at {}", sample.n_censored, sample.n_paths, sample.horizon);
    emit(cfg, "simulate", &out, Format::Csv)?;
    Ok(EXIT_OK)
}

fn spread(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn cmd_kernel(cfg: &RunConfig) -> CliResult<i32> {
    let k = &cfg.kernel;
    if k.nx == 0 || k.ny == 0 || !(k.x_max >= k.x_min) || !(k.y_max >= k.y_min) {
        return Err(CliError::Config("[kernel]: empty or reversed grid".into()));
    }
    let clock = cfg.build_clock().map_err(CliError::Config)?;
    let value: Box<dyn Fn(f64, f64) -> crate::Result<f64>> = match k.name {
        KernelName::Free => Box::new(|x, y| free_kernel(&clock, k.t, x, k.tau, y)),
        KernelName::Image => Box::new(|x, y| image_kernel(&clock, k.t, x, k.tau, y)),
        KernelName::Passage => Box::new(|x, y| passage_kernel(&clock, k.t, x, k.tau, y)),
        KernelName::Bridge => {
            let law = BridgeLaw::new(clock.clone(), k.x_max.max(f64::MIN_POSITIVE), k.s)?;
            Box::new(move |x, y| law.transition(k.t, x, k.tau, y))
        }
        KernelName::Schrodinger | KernelName::SchrodingerFree => {
            let p = problem(cfg)?;
            let gauge = GaugeFunctions::solve(&p.boundary, &p.clock, k.t, k.s, p.propagator.anchors, p.propagator.gauge_steps)?;
            let free = k.name == KernelName::SchrodingerFree;
            let clock = p.clock.clone();
            Box::new(move |x, y| {
                if free {
                    schrodinger_free_kernel(&gauge, &clock, k.t, x, k.tau, y)
                } else {
                    schrodinger_kernel(&gauge, &clock, k.t, x, k.tau, y).map(|v| v.value)
                }
            })
        }
    };
    let mut out = String::from("x,y,value\n");
    for x in spread(k.x_min, k.x_max, k.nx) {
        for y in spread(k.y_min, k.y_max, k.ny) {
            let _ = writeln!(out, "{},{},{}", num(x), num(y), num(value(x, y)?));
        }
    }
    emit(cfg, "kernel", &out, Format::Csv)?;
    Ok(EXIT_OK)
}

fn cmd_gauge_dump(cfg: &RunConfig) -> CliResult<i32> {
    let g = &cfg.gauge;
    if g.n < 2 || !(g.s > 0.0 && g.s.is_finite()) {
        return Err(CliError::Config("[gauge]: need n >= 2 and s > 0".into()));
    }
    let mut cfg_for_problem = cfg.clone();
    cfg_for_problem.grid.s_max = cfg_for_problem.grid.s_max.max(g.s);
    let p = problem(&cfg_for_problem)?;
    let (f, _) = p.boundary.normalized()?;
    let gauge = GaugeFunctions::solve(&f, &p.clock, 0.0, g.s, g.anchors.into(), p.propagator.gauge_steps)?;
    let mut out = String::from("t,pi,v,pi_tilde,v_tilde,action\n");
    for t in spread(0.0, g.s, g.n) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            num(t),
            num(gauge.pi(t)),
            num(gauge.v(t)),
            num(gauge.pi_tilde(t)),
            num(gauge.v_tilde(t)),
            num(gauge.action(0.0, t))
        );
    }
    emit(cfg, "gauge-dump", &out, Format::Csv)?;
    Ok(EXIT_OK)
}

fn cmd_selftest(cfg: &RunConfig) -> CliResult<i32> {
    let entries = run_suite()?;
    let mut out = String::new();
    for e in &entries {
        let _ = writeln!(out, "{e}");
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    let _ = writeln!(out, "{} checks, {failed} failed", entries.len());
    match &cfg.output.path {
        Some(_) => emit(cfg, "selftest", &out, Format::Json)?,
        None => print!("{out}"),
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERICS })
}
