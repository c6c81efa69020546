//! Command-line front end.
//!
//! Configuration is a flat `key = value` text file (`#` starts a comment line).
//! Flags and `--set key=value` override file keys; `--print-config` dumps the
//! resolved configuration in canonical form.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bounds::{certify, write_records_csv, CertifyConfig};
use crate::chain::{build_preset, ChainSpec, Preset};
use crate::engine::{
    error_budget, estimate_free_energy, sweep_window, write_budget_csv, write_steps_csv,
    write_sweep_csv, BudgetParams, BUDGET_SLACK, EngineParams, StepMethod, SweepFit,
};
use crate::error::Error;
use crate::operator::{pauli_z, set_dim_cap, SupportedOperator, DEFAULT_DIM_CAP};
use crate::oracle::{
    correlation_in, exact_log_partition, fit_correlation_length, full_state,
    transfer_matrix_log_partition, write_correlation_csv,
};
use crate::qbp::{AMethod, DysonOrder, DysonParams, QbpParams, Quadrature};
use crate::window::Window;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAP: i32 = 3;
pub const EXIT_INAPPLICABLE: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

/// Environment variable overriding the default dimension cap.
pub const CAP_ENV: &str = "GIBBS1D_CAP";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}: {}",
            self.origin, self.line, self.column, self.message
        )
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transfer {
    Auto,
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub j: f64,
    pub g: f64,
    pub delta: f64,
    pub h: f64,
    pub j1: f64,
    pub j2: f64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub beta: f64,
    pub method: StepMethod,
    pub l: usize,
    pub l1: usize,
    pub l2: usize,
    pub pad: usize,
    pub l_list: Vec<usize>,
    pub eps: Option<f64>,
    pub t_max: Option<f64>,
    pub n_t: usize,
    pub m_trotter: usize,
    pub quadrature: Quadrature,
    pub n_tau: usize,
    pub dyson_order: DysonOrder,
    pub a_method: String,
    pub term: Option<usize>,
    pub ns: usize,
    pub nk: usize,
    pub transfer: Transfer,
    pub anchor: usize,
    pub seed: u64,
    pub seeds: usize,
    pub k_list: Vec<usize>,
    pub n_min: usize,
    pub n_max: usize,
    pub tau_max: f64,
    pub tau: Option<f64>,
    pub l2_max: usize,
    pub radii_per_tau: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub bound_scale: f64,
    pub timings: bool,
    pub output: PathBuf,
    pub cap: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "tfim".into(),
            j: 1.0,
            g: 1.0,
            delta: 1.0,
            h: 0.0,
            j1: 1.0,
            j2: 0.5,
            n: 10,
            d: 2,
            k: 2,
            beta: 1.0,
            method: StepMethod::WindowRatio,
            l: 6,
            l1: 2,
            l2: 2,
            pad: 4,
            l_list: (1..=8).collect(),
            eps: None,
            t_max: None,
            n_t: 400,
            m_trotter: 64,
            quadrature: Quadrature::GaussLegendre,
            n_tau: 64,
            dyson_order: DysonOrder::Rk4,
            a_method: "exact".into(),
            term: None,
            ns: 8,
            nk: 8,
            transfer: Transfer::Auto,
            anchor: 1,
            seed: 0,
            seeds: 100,
            k_list: vec![2, 3],
            n_min: 6,
            n_max: 10,
            tau_max: 0.5,
            tau: None,
            l2_max: 8,
            radii_per_tau: 3,
            m_min: 2,
            m_max: 6,
            bound_scale: 1.0,
            timings: false,
            output: PathBuf::from("out"),
            cap: None,
        }
    }
}

const KEYS: &[&str] = &[
    "model", "j", "g", "delta", "h", "j1", "j2", "n", "d", "k", "beta", "method", "l", "l1", "l2",
    "pad", "l_list", "eps", "t_max", "n_t", "m_trotter", "quadrature", "n_tau", "dyson_order",
    "a_method", "term", "ns", "nk", "transfer", "anchor", "seed", "seeds", "k_list", "n_min",
    "n_max", "tau_max", "tau", "l2_max", "radii_per_tau", "m_min", "m_max", "bound_scale", "timings", "output",
    "cap",
];

const MODELS: &[&str] = &["tfim", "xxz", "classical_ising", "three_site", "random_klocal"];

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn parse_real(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = parse_num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v:?} is not finite"))
    }
}

fn parse_opt<T>(
    v: &str,
    f: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Option<T>, String> {
    if v == "none" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if let Some((a, b)) = v.split_once("..=") {
        let (a, b): (usize, usize) = (parse_num(a.trim())?, parse_num(b.trim())?);
        return Ok((a..=b).collect());
    }
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(s.trim()))
        .collect()
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn method_name(m: StepMethod) -> &'static str {
    m.name()
}

impl RunConfig {
    /// Assigns one key; the error message does not carry a position.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "model" => {
                if !MODELS.contains(&v) {
                    return Err(format!("unknown model {v:?} (expected one of {})", MODELS.join(", ")));
                }
                self.model = v.into();
            }
            "j" => self.j = parse_real(v)?,
            "g" => self.g = parse_real(v)?,
            "delta" => self.delta = parse_real(v)?,
            "h" => self.h = parse_real(v)?,
            "j1" => self.j1 = parse_real(v)?,
            "j2" => self.j2 = parse_real(v)?,
            "n" => self.n = parse_num(v)?,
            "d" => self.d = parse_num(v)?,
            "k" => self.k = parse_num(v)?,
            "beta" => {
                let b = parse_real(v)?;
                if b < 0.0 {
                    return Err("beta must be >= 0".into());
                }
                self.beta = b;
            }
            "method" => {
                self.method = match v {
                    "window_ratio" => StepMethod::WindowRatio,
                    "explicit_qbp" => StepMethod::ExplicitQbp,
                    "explicit_dyson" => StepMethod::ExplicitDyson,
                    _ => return Err(format!("unknown method {v:?}")),
                }
            }
            "l" => self.l = parse_num(v)?,
            "l1" => self.l1 = parse_num(v)?,
            "l2" => self.l2 = parse_num(v)?,
            "pad" => self.pad = parse_num(v)?,
            "l_list" => self.l_list = parse_list(v)?,
            "eps" => self.eps = parse_opt(v, parse_real)?,
            "t_max" => self.t_max = parse_opt(v, parse_real)?,
            "n_t" => self.n_t = parse_num(v)?,
            "m_trotter" => self.m_trotter = parse_num(v)?,
            "quadrature" => {
                self.quadrature = match v {
                    "gauss_legendre" => Quadrature::GaussLegendre,
                    "trapezoid" => Quadrature::Trapezoid,
                    _ => return Err(format!("unknown quadrature {v:?}")),
                }
            }
            "n_tau" => self.n_tau = parse_num(v)?,
            "dyson_order" => {
                self.dyson_order = match v {
                    "rk4" => DysonOrder::Rk4,
                    "midpoint" => DysonOrder::Midpoint,
                    _ => return Err(format!("unknown dyson_order {v:?}")),
                }
            }
            "a_method" => {
                if !["exact", "qbp", "dyson"].contains(&v) {
                    return Err(format!("unknown a_method {v:?}"));
                }
                self.a_method = v.into();
            }
            "term" => self.term = parse_opt(v, parse_num)?,
            "ns" => self.ns = parse_num(v)?,
            "nk" => self.nk = parse_num(v)?,
            "transfer" => {
                self.transfer = match v {
                    "auto" => Transfer::Auto,
                    "on" => Transfer::On,
                    "off" => Transfer::Off,
                    _ => return Err(format!("transfer must be auto, on or off, got {v:?}")),
                }
            }
            "anchor" => self.anchor = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "seeds" => self.seeds = parse_num(v)?,
            "k_list" => self.k_list = parse_list(v)?,
            "n_min" => self.n_min = parse_num(v)?,
            "n_max" => self.n_max = parse_num(v)?,
            "tau_max" => self.tau_max = parse_real(v)?,
            "tau" => self.tau = parse_opt(v, parse_real)?,
            "l2_max" => self.l2_max = parse_num(v)?,
            "radii_per_tau" => self.radii_per_tau = parse_num(v)?,
            "m_min" => self.m_min = parse_num(v)?,
            "m_max" => self.m_max = parse_num(v)?,
            "bound_scale" => self.bound_scale = parse_real(v)?,
            "timings" => {
                self.timings = match v {
                    "true" => true,
                    "false" => false,
                    _ => return Err(format!("expected true or false, got {v:?}")),
                }
            }
            "output" => {
                if v.is_empty() {
                    return Err("output directory must not be empty".into());
                }
                self.output = PathBuf::from(v);
            }
            "cap" => self.cap = parse_opt(v, parse_num)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        match key {
            "model" => self.model.clone(),
            "j" => self.j.to_string(),
            "g" => self.g.to_string(),
            "delta" => self.delta.to_string(),
            "h" => self.h.to_string(),
            "j1" => self.j1.to_string(),
            "j2" => self.j2.to_string(),
            "n" => self.n.to_string(),
            "d" => self.d.to_string(),
            "k" => self.k.to_string(),
            "beta" => self.beta.to_string(),
            "method" => method_name(self.method).into(),
            "l" => self.l.to_string(),
            "l1" => self.l1.to_string(),
            "l2" => self.l2.to_string(),
            "pad" => self.pad.to_string(),
            "l_list" => fmt_list(&self.l_list),
            "eps" => fmt_opt(&self.eps),
            "t_max" => fmt_opt(&self.t_max),
            "n_t" => self.n_t.to_string(),
            "m_trotter" => self.m_trotter.to_string(),
            "quadrature" => match self.quadrature {
                Quadrature::GaussLegendre => "gauss_legendre".into(),
                Quadrature::Trapezoid => "trapezoid".into(),
            },
            "n_tau" => self.n_tau.to_string(),
            "dyson_order" => match self.dyson_order {
                DysonOrder::Rk4 => "rk4".into(),
                DysonOrder::Midpoint => "midpoint".into(),
            },
            "a_method" => self.a_method.clone(),
            "term" => fmt_opt(&self.term),
            "ns" => self.ns.to_string(),
            "nk" => self.nk.to_string(),
            "transfer" => match self.transfer {
                Transfer::Auto => "auto".into(),
                Transfer::On => "on".into(),
                Transfer::Off => "off".into(),
            },
            "anchor" => self.anchor.to_string(),
            "seed" => self.seed.to_string(),
            "seeds" => self.seeds.to_string(),
            "k_list" => fmt_list(&self.k_list),
            "n_min" => self.n_min.to_string(),
            "n_max" => self.n_max.to_string(),
            "tau_max" => self.tau_max.to_string(),
            "tau" => fmt_opt(&self.tau),
            "l2_max" => self.l2_max.to_string(),
            "radii_per_tau" => self.radii_per_tau.to_string(),
            "m_min" => self.m_min.to_string(),
            "m_max" => self.m_max.to_string(),
            "bound_scale" => self.bound_scale.to_string(),
            "timings" => self.timings.to_string(),
            "output" => self.output.display().to_string(),
            "cap" => fmt_opt(&self.cap),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// One `key = value` line per key in a fixed order.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.value(key));
            s.push('\n');
        }
        s
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> std::result::Result<(), ConfigError> {
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |column: usize, message: String| ConfigError {
                origin: origin.into(),
                line,
                column,
                message,
            };
            let trimmed = raw.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let key_col = raw.len() - trimmed.len() + 1;
            let Some(eq) = raw.find('=') else {
                return Err(err(raw.trim_end().len() + 1, "expected `key = value`".into()));
            };
            let key = raw[..eq].trim();
            if key.is_empty() {
                return Err(err(key_col, "missing key before `=`".into()));
            }
            if !KEYS.contains(&key) {
                return Err(err(key_col, format!("unknown key {key:?}")));
            }
            if seen.iter().any(|s| s == key) {
                return Err(err(key_col, format!("duplicate key {key:?}")));
            }
            let after = &raw[eq + 1..];
            let value = after.trim();
            let value_col = eq + 2 + (after.len() - after.trim_start().len());
            if value.is_empty() {
                return Err(err(value_col, format!("missing value for {key:?}")));
            }
            self.set(key, value).map_err(|m| err(value_col, m))?;
            seen.push(key.into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text, "<config>")?;
        Ok(c)
    }

    pub fn preset(&self) -> Preset {
        match self.model.as_str() {
            "tfim" => Preset::Tfim { j: self.j, g: self.g },
            "xxz" => Preset::Xxz { j: self.j, delta: self.delta },
            "classical_ising" => Preset::ClassicalIsing { j: self.j, h: self.h },
            "three_site" => Preset::ThreeSite { j1: self.j1, j2: self.j2 },
            _ => Preset::RandomKlocal,
        }
    }

    pub fn chain(&self) -> crate::Result<ChainSpec> {
        build_preset(&self.preset(), self.n, self.d, self.k, self.seed)
    }

    pub fn qbp_params(&self) -> QbpParams {
        QbpParams {
            t_max: self.t_max.unwrap_or_else(|| QbpParams::reference(self.beta).t_max),
            n_t: self.n_t,
            m_trotter: self.m_trotter,
            quadrature: self.quadrature,
        }
    }

    pub fn dyson_params(&self) -> DysonParams {
        DysonParams {
            n_tau: self.n_tau,
            order: self.dyson_order,
        }
    }

    pub fn engine_params(&self) -> EngineParams {
        EngineParams {
            l1: self.l1,
            pad: self.pad,
            qbp: self.qbp_params(),
            dyson: self.dyson_params(),
            ..EngineParams::new(self.beta)
        }
    }

    pub fn a_method(&self) -> AMethod {
        match self.a_method.as_str() {
            "qbp" => AMethod::Qbp(self.qbp_params()),
            "dyson" => AMethod::Dyson(self.dyson_params()),
            _ => AMethod::Exact,
        }
    }

    pub fn certify_config(&self) -> CertifyConfig {
        CertifyConfig {
            seeds: (self.seed..self.seed + self.seeds as u64).collect(),
            k_values: self.k_list.clone(),
            d: self.d,
            n_min: self.n_min,
            n_max: self.n_max,
            tau_max: self.tau_max,
            tau_values: self.tau.into_iter().collect(),
            l2_max: self.l2_max,
            radii_per_tau: self.radii_per_tau,
            m_min: self.m_min,
            m_max: self.m_max,
            imag_lr: true,
            multicomm: true,
            bound_scale: self.bound_scale,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "gibbs1d", version, about = "Free-energy density of 1D k-local quantum chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    d: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    l: Option<String>,
    #[arg(long, global = true)]
    l1: Option<String>,
    #[arg(long, global = true)]
    l2: Option<String>,
    #[arg(long, global = true)]
    l_list: Option<String>,
    #[arg(long, global = true)]
    eps: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    output: Option<String>,
    #[arg(long, global = true)]
    cap: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let named = [
            ("model", &self.model),
            ("n", &self.n),
            ("d", &self.d),
            ("k", &self.k),
            ("beta", &self.beta),
            ("method", &self.method),
            ("l", &self.l),
            ("l1", &self.l1),
            ("l2", &self.l2),
            ("l_list", &self.l_list),
            ("eps", &self.eps),
            ("seed", &self.seed),
            ("output", &self.output),
            ("cap", &self.cap),
        ];
        let mut out: Vec<(String, String)> = named
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for s in &self.set {
            match s.split_once('=') {
                Some((k, v)) => out.push((k.trim().into(), v.trim().into())),
                None => out.push((s.clone(), String::new())),
            }
        }
        out
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate n⁻¹ log Z and write the per-step CSV.
    FreeEnergy,
    /// Error against the exact density over a list of window radii.
    Sweep,
    /// Randomized certification of the locality bounds.
    Certify,
    /// Exact and transfer-matrix log Z densities.
    Oracle,
    /// Z-Z correlations against distance and a correlation-length fit.
    Clustering,
    /// Three-term error budget for one step.
    Budget,
}

enum Failure {
    Config(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::DimensionCap { .. } => EXIT_CAP,
        Error::NonCommuting { .. }
        | Error::NoProductBasis(_)
        | Error::CutoffTooSmall { .. }
        | Error::Unstable { .. } => EXIT_INAPPLICABLE,
        Error::InvalidParam(_)
        | Error::Geometry(_)
        | Error::IndexOutOfRange { .. }
        | Error::Domain(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn resolve(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text, &path.display().to_string())
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    for (key, value) in common.overrides() {
        cfg.set(&key, &value)
            .map_err(|m| Failure::Config(format!("override {key}={value}: {m}")))?;
    }
    Ok(cfg)
}

fn apply_cap(cfg: &RunConfig) -> std::result::Result<(), Failure> {
    let env = match std::env::var(CAP_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Failure::Config(format!("{CAP_ENV}={v:?} is not an integer")))?,
        ),
        Err(_) => None,
    };
    set_dim_cap(cfg.cap.or(env).unwrap_or(DEFAULT_DIM_CAP));
    Ok(())
}

fn create(dir: &Path, name: &str) -> std::io::Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

fn describe(cfg: &RunConfig, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "model {} n={} d={} k={} beta={}",
        cfg.model, cfg.n, cfg.d, cfg.k, cfg.beta
    )
}

fn cmd_free_energy(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let spec = cfg.chain()?;
    let report = estimate_free_energy(&spec, cfg.beta, cfg.l, cfg.method, &cfg.engine_params())?;
    let (path, mut w) = create(&cfg.output, "steps.csv")?;
    write_steps_csv(&report.steps, &mut w, cfg.timings)?;
    w.flush()?;
    describe(cfg, out)?;
    writeln!(out, "method {} l={}", report.method.name(), report.l)?;
    if let Some(l1) = report.l1 {
        writeln!(out, "l1 {l1}")?;
    }
    let clipped = report.steps.iter().filter(|s| s.clipped).count();
    writeln!(out, "steps {} clipped {}", report.steps.len(), clipped)?;
    writeln!(out, "density {}", sci(report.free_energy_density))?;
    match (report.exact_reference, report.abs_error) {
        (Some(e), Some(a)) => {
            writeln!(out, "exact {}", sci(e))?;
            writeln!(out, "abs_error {}", sci(a))?;
        }
        _ => writeln!(out, "exact unavailable")?,
    }
    let step_ms: f64 = report.steps.iter().map(|s| s.wall_time.as_secs_f64() * 1e3).sum();
    writeln!(
        out,
        "time total {:.3} s, steps {:.3} ms",
        report.total_time.as_secs_f64(),
        step_ms
    )?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(EXIT_OK)
}

fn cmd_sweep(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    if cfg.l_list.is_empty() {
        return Err(Failure::Config("l_list is empty".into()));
    }
    let spec = cfg.chain()?;
    let report = sweep_window(&spec, cfg.beta, &cfg.l_list, cfg.method, &cfg.engine_params())?;
    let (path, mut w) = create(&cfg.output, "sweep.csv")?;
    write_sweep_csv(&report.records, &mut w)?;
    w.flush()?;
    describe(cfg, out)?;
    writeln!(out, "exact {}", sci(report.exact_density))?;
    for r in &report.records {
        writeln!(out, "l={} density {} abs_error {}", r.l, sci(r.density), sci(r.abs_error))?;
    }
    match &report.fit {
        SweepFit::Decay { rate, intercept, r2, points } => writeln!(
            out,
            "fit log(abs_error) = {intercept:.6} + {rate:.6} l (r2 {r2:.4}, {points} points)"
        )?,
        SweepFit::ExactAtFiniteL { l } => writeln!(out, "fit exact from l={l}")?,
        SweepFit::Insufficient { usable } => {
            writeln!(out, "fit unavailable ({usable} points above the floor)")?
        }
    }
    if let Some(eps) = cfg.eps {
        match report.fit.suggest_l(eps) {
            Some(l) => writeln!(out, "suggested l for eps={eps}: {l}")?,
            None => writeln!(out, "no suggestion for eps={eps}")?,
        }
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(EXIT_OK)
}

fn cmd_certify(
    cfg: &RunConfig,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> std::result::Result<i32, Failure> {
    let report = certify(&cfg.certify_config())?;
    let (path, mut w) = create(&cfg.output, "certify.csv")?;
    write_records_csv(&report.records, &mut w)?;
    w.flush()?;
    writeln!(
        out,
        "records {} applicable {} violations {}",
        report.records.len(),
        report.applicable(),
        report.violations()
    )?;
    for kind in [
        crate::bounds::BoundKind::ImagLr,
        crate::bounds::BoundKind::MulticommSum,
        crate::bounds::BoundKind::MulticommClosed,
    ] {
        let (total, applicable, violated) = report.count(kind);
        writeln!(out, "{kind}: {total} records, {applicable} applicable, {violated} violated")?;
    }
    writeln!(out, "wrote {}", path.display())?;
    if report.applicable() == 0 {
        writeln!(err, "warning: no record was applicable (zeta >= 1 everywhere)")?;
    }
    if let Some(worst) = report.worst_violation() {
        writeln!(err, "violation: {worst:?}")?;
        return Ok(EXIT_VIOLATION);
    }
    Ok(EXIT_OK)
}

fn cmd_oracle(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let spec = cfg.chain()?;
    let n = spec.n() as f64;
    let exact = exact_log_partition(&spec, cfg.beta)? / n;
    let transfer = match cfg.transfer {
        Transfer::Off => None,
        Transfer::On => Some(transfer_matrix_log_partition(&spec, cfg.beta)? / n),
        Transfer::Auto => match transfer_matrix_log_partition(&spec, cfg.beta) {
            Ok(v) => Some(v / n),
            Err(e) if exit_code(&e) == EXIT_INAPPLICABLE => None,
            Err(e) => return Err(e.into()),
        },
    };
    let (path, mut w) = create(&cfg.output, "oracle.csv")?;
    {
        let mut csv_out = csv::Writer::from_writer(&mut w);
        let row = [
            spec.n().to_string(),
            cfg.beta.to_string(),
            sci(exact),
            transfer.map(sci).unwrap_or_default(),
            transfer.map(|t| sci((t - exact).abs())).unwrap_or_default(),
        ];
        csv_out
            .write_record(["n", "beta", "exact_density", "transfer_density", "abs_diff"])
            .and_then(|_| csv_out.write_record(row))
            .map_err(|e| Failure::Run(Error::Io(e.into())))?;
        csv_out.flush()?;
    }
    w.flush()?;
    describe(cfg, out)?;
    writeln!(out, "exact {}", sci(exact))?;
    match transfer {
        Some(t) => {
            writeln!(out, "transfer {}", sci(t))?;
            writeln!(out, "abs_diff {}", sci((t - exact).abs()))?;
        }
        None => writeln!(out, "transfer not applicable")?,
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(EXIT_OK)
}

fn cmd_clustering(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let spec = cfg.chain()?;
    if cfg.d != 2 {
        return Err(Failure::Config("clustering uses Pauli Z observables and needs d = 2".into()));
    }
    if cfg.anchor == 0 || cfg.anchor >= spec.n() {
        return Err(Failure::Config(format!(
            "anchor must lie in 1..{} so that partners exist",
            spec.n()
        )));
    }
    let state = full_state(&spec, cfg.beta)?;
    let o = SupportedOperator::new(pauli_z(), Window::site(cfg.anchor)?, 2)?;
    let mut records = Vec::new();
    for site in cfg.anchor + 1..=spec.n() {
        let o2 = SupportedOperator::new(pauli_z(), Window::site(site)?, 2)?;
        let tags = (format!("Z{}", cfg.anchor), format!("Z{site}"));
        records.push(correlation_in(&state, cfg.beta, &o, &o2, tags)?);
    }
    let (path, mut w) = create(&cfg.output, "correlations.csv")?;
    write_correlation_csv(&records, &mut w)?;
    w.flush()?;
    describe(cfg, out)?;
    for r in &records {
        writeln!(out, "distance {} cor {}", r.distance, sci(r.value))?;
    }
    match fit_correlation_length(&records) {
        Ok(fit) => writeln!(out, "xi {} (r2 {:.4}, {} points)", fit.xi, fit.r2, fit.points)?,
        Err(e) => writeln!(out, "xi unavailable: {e}")?,
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(EXIT_OK)
}

fn cmd_budget(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let spec = cfg.chain()?;
    let i = cfg.term.unwrap_or(spec.num_terms().div_ceil(2));
    let params = BudgetParams {
        method: cfg.a_method(),
        ns: cfg.ns,
        nk: cfg.nk,
        refine: false,
    };
    let b = error_budget(&spec, i, cfg.l, cfg.l1, cfg.l2, cfg.beta, &params)?;
    let (path, mut w) = create(&cfg.output, "budget.csv")?;
    write_budget_csv(std::slice::from_ref(&b), &mut w)?;
    w.flush()?;
    describe(cfg, out)?;
    writeln!(out, "term {i} l={} l1={} l2={}", b.l, b.l1, b.l2)?;
    writeln!(out, "T1 {}\nT2 {}\nT3 {}", sci(b.t1), sci(b.t2), sci(b.t3))?;
    let holds = b.holds(BUDGET_SLACK);
    writeln!(out, "lhs {} rhs {} holds {}", sci(b.lhs), sci(b.rhs()), holds)?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(if holds { EXIT_OK } else { EXIT_VIOLATION })
}

/// Runs the CLI with explicit argument list and output streams; returns the
/// process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = (|| -> std::result::Result<i32, Failure> {
        let cfg = resolve(&cli.common)?;
        if cli.common.print_config {
            write!(out, "{}", cfg.to_canonical())?;
            return Ok(EXIT_OK);
        }
        apply_cap(&cfg)?;
        if let Some(t) = cli.common.threads {
            if t == 0 {
                return Err(Failure::Config("--threads must be positive".into()));
            }
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        match cli.command {
            Command::FreeEnergy => cmd_free_energy(&cfg, out),
            Command::Sweep => cmd_sweep(&cfg, out),
            Command::Certify => cmd_certify(&cfg, out, err),
            Command::Oracle => cmd_oracle(&cfg, out),
            Command::Clustering => cmd_clustering(&cfg, out),
            Command::Budget => cmd_budget(&cfg, out),
        }
    })();
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(err, "config error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
