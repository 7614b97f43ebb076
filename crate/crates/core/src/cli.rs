//! Command-line front end. `run` parses arguments, resolves the layered
//! configuration and dispatches to a subcommand; it returns the process
//! exit code (0 ok, 1 output failure, 2 configuration error, 3 numerical
//! failure).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::angular::{self, IdentityRecord};
use crate::config::{Config, ConfigError};
use crate::csl::{self, CslError, CslLattice, CslParams, SdeOptions, TimeGrid};
use crate::decoherence::{
    gamma_closed_form_exponential, gamma_rate, DecoherenceError, PhysicalParams, RateOptions,
    RateResult, SpatialKernel, TimeWindow,
};
use crate::dynamics::{
    self, AmplifiedSystem, DynamicsError, LogGrid, QubitState, SweepConfig, REGIME_THRESHOLDS,
};
use crate::numerics::SphericalGrid;
use crate::spectrum::{GravitonSpectrum, SpectrumError};
use crate::units::Constants;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OUTPUT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Output(_) => EXIT_OUTPUT,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Output(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DecoherenceError> for CliError {
    fn from(e: DecoherenceError) -> Self {
        match e {
            DecoherenceError::Quadrature(_) => CliError::Numeric(e.to_string()),
            DecoherenceError::Spectrum(SpectrumError::Quadrature(_)) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        DecoherenceError::from(e).into()
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::StepTooCoarse { .. } => CliError::Numeric(e.to_string()),
            DynamicsError::Decoherence(d) => d.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CslError> for CliError {
    fn from(e: CslError) -> Self {
        match e {
            CslError::Unstable { .. } | CslError::NotPsd(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gravdec", version, about = "Graviton-bremsstrahlung decoherence toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Sectioned key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format; csv for tables, json for records.
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
    #[arg(long, global = true, value_name = "X")]
    rel_tol: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<String>,
    /// Write the fully resolved configuration to PATH.
    #[arg(long, global = true, value_name = "PATH")]
    dump_config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single-constituent decoherence rate.
    Rate(RateArgs),
    /// Rate over a (total mass, constituent number) grid.
    Sweep(SweepArgs),
    /// Density-matrix time series.
    Evolve(EvolveArgs),
    /// Angular-identity audit report.
    Verify(VerifyArgs),
    /// CSL Lindblad and stochastic-ensemble run.
    Csl(CslArgs),
    /// Regime labels for reference systems.
    Regimes(RegimesArgs),
}

#[derive(Debug, Args, Default)]
struct ModelArgs {
    /// Parameter preset (none, paper-electron).
    #[arg(long, allow_negative_numbers = true)]
    preset: Option<String>,
    /// Constituent mass, kg.
    #[arg(long, allow_negative_numbers = true)]
    m_f: Option<String>,
    /// Wavepacket width, m.
    #[arg(long, allow_negative_numbers = true)]
    sigma0: Option<String>,
    /// Branch separation, m.
    #[arg(long, allow_negative_numbers = true)]
    dx: Option<String>,
    /// Normalization volume, m^3.
    #[arg(long, allow_negative_numbers = true)]
    volume: Option<String>,
    /// Spectrum model (exponential, tabulated).
    #[arg(long, allow_negative_numbers = true)]
    spectrum: Option<String>,
    /// Exponential amplitude, m^-5.
    #[arg(long, allow_negative_numbers = true)]
    i0: Option<String>,
    /// Exponential momentum scale, m^-1.
    #[arg(long, allow_negative_numbers = true)]
    pc: Option<String>,
    /// Momentum scale as p_c * sigma0 (overrides --pc).
    #[arg(long, allow_negative_numbers = true)]
    pc_sigma: Option<String>,
    /// Tabulated spectrum CSV (p, value).
    #[arg(long, allow_negative_numbers = true)]
    spectrum_table: Option<String>,
    /// Kernel normalization (normalized, raw).
    #[arg(long, allow_negative_numbers = true)]
    kernel: Option<String>,
    /// Rate method (auto, closed-form, quadrature).
    #[arg(long, allow_negative_numbers = true)]
    method: Option<String>,
    /// Finite interaction window, s.
    #[arg(long, allow_negative_numbers = true)]
    tau0: Option<String>,
}

#[derive(Debug, Args)]
struct RateArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, allow_negative_numbers = true)]
    m_min: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    m_max: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    m_points: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    n_min: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    n_max: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    n_points: Option<String>,
    /// Observation horizon for regime labels, s.
    #[arg(long, allow_negative_numbers = true)]
    horizon: Option<String>,
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Rate in Hz; computed from the model when absent.
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    t_end: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    n_points: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    rho11: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    re_rho12: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    im_rho12: Option<String>,
    /// analytic or rk4.
    #[arg(long, allow_negative_numbers = true)]
    integrator: Option<String>,
    /// RK4 step, s.
    #[arg(long, allow_negative_numbers = true)]
    step: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, allow_negative_numbers = true)]
    n_theta: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    n_phi: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    n_directions: Option<String>,
}

#[derive(Debug, Args)]
struct CslArgs {
    /// CSL preset (grw, adler_a, adler_b).
    #[arg(long, allow_negative_numbers = true)]
    preset: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    r_c: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    m0: Option<String>,
    /// Particle mass, kg (nucleon mass when absent).
    #[arg(long, allow_negative_numbers = true)]
    mass: Option<String>,
    /// Branch separation, m (physical dx when absent).
    #[arg(long, allow_negative_numbers = true)]
    separation: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    n_traj: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    t_end: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    records: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    max_step_drift: Option<String>,
    /// Also write the JSON summary here when the main output is CSV.
    #[arg(long, value_name = "PATH")]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegimesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, allow_negative_numbers = true)]
    horizon: Option<String>,
}

type Flags = Vec<(&'static str, &'static str, String)>;

fn push(flags: &mut Flags, section: &'static str, key: &'static str, v: &Option<String>) {
    if let Some(v) = v {
        flags.push((section, key, v.clone()));
    }
}

impl ModelArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "physical", "preset", &self.preset);
        push(f, "physical", "m_f", &self.m_f);
        push(f, "physical", "sigma0", &self.sigma0);
        push(f, "physical", "dx", &self.dx);
        push(f, "physical", "volume", &self.volume);
        push(f, "spectrum", "model", &self.spectrum);
        push(f, "spectrum", "i0", &self.i0);
        push(f, "spectrum", "p_c", &self.pc);
        push(f, "spectrum", "pc_sigma", &self.pc_sigma);
        push(f, "spectrum", "table", &self.spectrum_table);
        push(f, "kernel", "normalization", &self.kernel);
        push(f, "rate", "method", &self.method);
        push(f, "rate", "tau0_s", &self.tau0);
    }
}

impl Command {
    fn flags(&self) -> Flags {
        let mut f = Flags::new();
        match self {
            Command::Rate(a) => a.model.flags(&mut f),
            Command::Sweep(a) => {
                a.model.flags(&mut f);
                push(&mut f, "sweep", "m_min", &a.m_min);
                push(&mut f, "sweep", "m_max", &a.m_max);
                push(&mut f, "sweep", "m_points", &a.m_points);
                push(&mut f, "sweep", "n_min", &a.n_min);
                push(&mut f, "sweep", "n_max", &a.n_max);
                push(&mut f, "sweep", "n_points", &a.n_points);
                push(&mut f, "sweep", "horizon_s", &a.horizon);
            }
            Command::Evolve(a) => {
                a.model.flags(&mut f);
                push(&mut f, "evolve", "gamma_hz", &a.gamma);
                push(&mut f, "evolve", "t_end_s", &a.t_end);
                push(&mut f, "evolve", "n_points", &a.n_points);
                push(&mut f, "evolve", "rho11", &a.rho11);
                push(&mut f, "evolve", "re_rho12", &a.re_rho12);
                push(&mut f, "evolve", "im_rho12", &a.im_rho12);
                push(&mut f, "evolve", "integrator", &a.integrator);
                push(&mut f, "evolve", "step_s", &a.step);
            }
            Command::Verify(a) => {
                push(&mut f, "verify", "n_theta", &a.n_theta);
                push(&mut f, "verify", "n_phi", &a.n_phi);
                push(&mut f, "verify", "n_directions", &a.n_directions);
            }
            Command::Csl(a) => {
                push(&mut f, "csl", "preset", &a.preset);
                push(&mut f, "csl", "lambda", &a.lambda);
                push(&mut f, "csl", "r_c", &a.r_c);
                push(&mut f, "csl", "m0", &a.m0);
                push(&mut f, "csl", "mass", &a.mass);
                push(&mut f, "csl", "separation", &a.separation);
                push(&mut f, "csl", "n_traj", &a.n_traj);
                push(&mut f, "csl", "t_end_s", &a.t_end);
                push(&mut f, "csl", "dt_s", &a.dt);
                push(&mut f, "csl", "records", &a.records);
                push(&mut f, "csl", "max_step_drift", &a.max_step_drift);
            }
            Command::Regimes(a) => {
                a.model.flags(&mut f);
                push(&mut f, "regimes", "horizon_s", &a.horizon);
            }
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

/// Everything a subcommand produces.
struct Output {
    csv: Option<String>,
    json: Value,
}

/// Parses `args` (including the program name), runs the subcommand and
/// writes results to `--out` or `stdout`. Diagnostics go to `stderr`.
pub fn run<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, env, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn execute(
    cli: &Cli,
    env: &dyn Fn(&str) -> Option<String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let file_text = match &cli.global.config {
        Some(p) => Some(
            fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut flags = cli.command.flags();
    push(&mut flags, "run", "rel_tol", &cli.global.rel_tol);
    push(&mut flags, "run", "seed", &cli.global.seed);
    push(&mut flags, "run", "threads", &cli.global.threads);
    let cfg = Config::resolve(file_text.as_deref(), env, &flags)?;
    if let Some(p) = &cli.global.dump_config {
        fs::write(p, cfg.to_file_text()).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
    }
    let format = match cli.global.format.as_deref() {
        Some("csv") => Format::Csv,
        Some(_) => Format::Json,
        None => match cli.command {
            Command::Sweep(_) | Command::Evolve(_) | Command::Csl(_) => Format::Csv,
            _ => Format::Json,
        },
    };
    let threads = cfg.usize("run", "threads")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let output = pool.install(|| match &cli.command {
        Command::Rate(_) => cmd_rate(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::Evolve(_) => cmd_evolve(&cfg),
        Command::Verify(_) => cmd_verify(&cfg),
        Command::Csl(_) => cmd_csl(&cfg),
        Command::Regimes(_) => cmd_regimes(&cfg),
    })?;
    if let Command::Csl(a) = &cli.command {
        if let (Some(p), Format::Csv) = (&a.summary, format) {
            fs::write(p, json_text(&output.json)).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
        }
    }
    let text = match (format, output.csv) {
        (Format::Csv, Some(csv)) => csv,
        (Format::Csv, None) => {
            let _ = writeln!(stderr, "note: no table for this command; writing JSON");
            json_text(&output.json)
        }
        (Format::Json, _) => json_text(&output.json),
    };
    match &cli.global.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Output(format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Output(e.to_string())),
    }
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Rate model resolved from the configuration.
pub struct Model {
    pub params: PhysicalParams,
    pub spectrum: GravitonSpectrum,
    pub kernel: SpatialKernel,
    pub options: RateOptions,
    pub method: String,
}

impl Model {
    pub fn from_config(cfg: &Config) -> Result<Self, CliError> {
        let params = PhysicalParams::new(
            cfg.f64("physical", "m_f")?,
            cfg.f64("physical", "sigma0")?,
            cfg.f64("physical", "dx")?,
            cfg.f64("physical", "volume")?,
        )?;
        let spectrum = match cfg.choice("spectrum", "model", &["exponential", "tabulated"])? {
            "exponential" => {
                let p_c = match cfg.opt_f64("spectrum", "pc_sigma")? {
                    Some(x) => x / params.sigma0,
                    None => cfg.f64("spectrum", "p_c")?,
                };
                GravitonSpectrum::exponential(cfg.f64("spectrum", "i0")?, p_c)?
            }
            _ => {
                if !cfg.is_set("spectrum", "table") {
                    return Err(CliError::Config("[spectrum] table is required for the tabulated model".into()));
                }
                GravitonSpectrum::from_csv_path(std::path::Path::new(cfg.get("spectrum", "table")))?
            }
        };
        let kernel = match cfg.choice("kernel", "normalization", &["normalized", "raw"])? {
            "normalized" => SpatialKernel::normalized(params.sigma0),
            _ => SpatialKernel::raw(params.sigma0),
        };
        let rel_tol = cfg.f64("run", "rel_tol")?;
        let window = match cfg.opt_f64("rate", "tau0_s")? {
            Some(t) => TimeWindow::Finite(t),
            None => TimeWindow::Stationary,
        };
        let options = RateOptions::default().with_rel_tol(rel_tol).with_window(window);
        let method = cfg.choice("rate", "method", &["auto", "closed-form", "quadrature"])?.to_string();
        Ok(Self { params, spectrum, kernel, options, method })
    }

    /// Rate for constituent mass `m_f` (the configured mass when None).
    pub fn rate(&self, m_f: Option<f64>) -> Result<RateResult, CliError> {
        let mut params = self.params;
        if let Some(m) = m_f {
            params.m_f = m;
        }
        let closed = match (&self.method[..], &self.spectrum, self.options.window) {
            ("quadrature", _, _) => None,
            (_, GravitonSpectrum::Exponential { i0, p_c }, TimeWindow::Stationary) => Some((*i0, *p_c)),
            ("closed-form", _, _) => {
                return Err(CliError::Config(
                    "closed-form rate needs the exponential spectrum and no finite window".into(),
                ))
            }
            _ => None,
        };
        Ok(match closed {
            Some((i0, p_c)) => gamma_closed_form_exponential(&params, i0, p_c, &self.kernel, &self.options.constants)?,
            None => gamma_rate(&params, &self.spectrum, &self.kernel, &self.options)?,
        })
    }
}

fn check_finite(name: &str, x: f64) -> Result<f64, CliError> {
    if x.is_nan() {
        Err(CliError::Numeric(format!("{name} is NaN")))
    } else {
        Ok(x)
    }
}

fn cmd_rate(cfg: &Config) -> Result<Output, CliError> {
    let model = Model::from_config(cfg)?;
    let r = model.rate(None)?;
    check_finite("gamma_hz", r.gamma_hz)?;
    let warnings: Vec<&str> = r.warnings.iter().map(|w| w.as_str()).collect();
    let method = to_value(&r.method);
    let csv = format!(
        "gamma_hz,abs_error_hz,method,warnings\n{:e},{:e},{},{}\n",
        r.gamma_hz,
        r.abs_error_hz,
        method.as_str().unwrap_or(""),
        warnings.join(";")
    );
    Ok(Output {
        csv: Some(csv),
        json: json!({
            "gamma_hz": r.gamma_hz,
            "abs_error": r.abs_error_hz,
            "tau_s": dynamics::decoherence_time(r.gamma_hz),
            "method": method,
            "warnings": warnings,
            "config_echo": cfg.echo(),
        }),
    })
}

fn regime_metadata(horizon: f64) -> Value {
    let thresholds: Vec<Value> = REGIME_THRESHOLDS
        .iter()
        .map(|(r, t)| json!({"regime": r.slug(), "label": r.label(), "tau_over_horizon_above": t}))
        .collect();
    json!({
        "horizon_s": horizon,
        "thresholds": thresholds,
        "otherwise": dynamics::Regime::ClassicalLimit.slug(),
        "slack": dynamics::THRESHOLD_SLACK,
    })
}

fn cmd_sweep(cfg: &Config) -> Result<Output, CliError> {
    let model = Model::from_config(cfg)?;
    let horizon = cfg.f64("sweep", "horizon_s")?;
    let sc = SweepConfig {
        masses: LogGrid::new(cfg.f64("sweep", "m_min")?, cfg.f64("sweep", "m_max")?, cfg.usize("sweep", "m_points")?)?,
        constituents: LogGrid::new(
            cfg.f64("sweep", "n_min")?,
            cfg.f64("sweep", "n_max")?,
            cfg.usize("sweep", "n_points")?,
        )?,
        params: model.params,
        spectrum: model.spectrum.clone(),
        rate_options: model.options,
        horizon_s: horizon,
    };
    let rows = dynamics::sweep_grid(&sc)?;
    for r in &rows {
        check_finite("gamma_hz", r.gamma_hz)?;
    }
    let mut buf = Vec::new();
    dynamics::write_sweep_csv(&rows, &mut buf).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(Output {
        csv: Some(String::from_utf8(buf).expect("utf8")),
        json: json!({
            "rows": to_value(&rows),
            "regimes": regime_metadata(horizon),
            "finite_size_factor": "normalized kernel at the configured dx",
            "config_echo": cfg.echo(),
        }),
    })
}

fn cmd_evolve(cfg: &Config) -> Result<Output, CliError> {
    let gamma = match cfg.opt_f64("evolve", "gamma_hz")? {
        Some(g) => g,
        None => Model::from_config(cfg)?.rate(None)?.gamma_hz,
    };
    check_finite("gamma_hz", gamma)?;
    if gamma < 0.0 {
        return Err(CliError::Numeric(format!(
            "rate {gamma:e} Hz is negative (negative-rate-regime); the evolution is not positive"
        )));
    }
    let rho11 = cfg.f64("evolve", "rho11")?;
    let state0 = QubitState::new(
        rho11,
        1.0 - rho11,
        num_complex::Complex64::new(cfg.f64("evolve", "re_rho12")?, cfg.f64("evolve", "im_rho12")?),
    )?;
    let t_end = match cfg.opt_f64("evolve", "t_end_s")? {
        Some(t) => t,
        None if gamma > 0.0 => 10.0 / gamma,
        None => 1.0,
    };
    let n_points = cfg.usize("evolve", "n_points")?;
    let integrator = cfg.choice("evolve", "integrator", &["analytic", "rk4"])?;
    let series = match integrator {
        "analytic" => dynamics::evolve_series(&state0, gamma, t_end, n_points)?,
        _ => {
            if n_points < 2 {
                return Err(CliError::Config(format!("[evolve] n_points = {n_points}")));
            }
            let h = match cfg.opt_f64("evolve", "step_s")? {
                Some(h) => h,
                None if gamma > 0.0 => 1e-3 / gamma,
                None => t_end / 1000.0,
            };
            let intervals = n_points - 1;
            let per = ((t_end / intervals as f64 / h).ceil() as usize).max(1);
            let sol = dynamics::integrate_rk4(&state0, gamma, t_end, t_end / (per * intervals) as f64, 1e-9)?;
            (0..n_points).map(|i| (sol.times[i * per], sol.states[i * per])).collect()
        }
    };
    let mut buf = Vec::new();
    dynamics::write_series_csv(&series, &mut buf).map_err(|e| CliError::Output(e.to_string()))?;
    let rows: Vec<Value> = series
        .iter()
        .map(|(t, s)| json!({"t_s": t, "rho11": s.rho11, "rho22": s.rho22, "re_rho12": s.rho12.re, "im_rho12": s.rho12.im}))
        .collect();
    Ok(Output {
        csv: Some(String::from_utf8(buf).expect("utf8")),
        json: json!({"gamma_hz": gamma, "integrator": integrator, "rows": rows, "config_echo": cfg.echo()}),
    })
}

fn verify_records(cfg: &Config) -> Result<Vec<IdentityRecord>, CliError> {
    let grid = SphericalGrid::new(cfg.usize("verify", "n_theta")?, cfg.usize("verify", "n_phi")?)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut records = angular::verify_identities(&grid, cfg.usize("verify", "n_directions")?, cfg.u64("run", "seed")?);
    records.push(csl::printed_sign_audit()?);
    Ok(records)
}

fn cmd_verify(cfg: &Config) -> Result<Output, CliError> {
    let records = verify_records(cfg)?;
    if let Some(r) = records.iter().find(|r| !r.is_finite()) {
        return Err(CliError::Numeric(format!("identity {} produced a non-finite value", r.name)));
    }
    let mut csv = String::from("name,computed,paper_value,residual,tolerance,status\n");
    for r in &records {
        let status = to_value(&r.status);
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{}\n",
            r.name.replace(',', ";"),
            r.computed,
            r.paper_value,
            r.residual,
            r.tolerance,
            status.as_str().unwrap_or("")
        ));
    }
    Ok(Output { csv: Some(csv), json: json!({"records": to_value(&records), "config_echo": cfg.echo()}) })
}

fn csl_params(cfg: &Config) -> Result<(String, CslParams), CliError> {
    let name = cfg.get("csl", "preset").to_string();
    let mut p = csl::preset(&name)?;
    if let Some(l) = cfg.opt_f64("csl", "lambda")? {
        p.lambda = l;
    }
    if let Some(r) = cfg.opt_f64("csl", "r_c")? {
        p.r_c = r;
    }
    if let Some(m) = cfg.opt_f64("csl", "m0")? {
        p.m0 = m;
    }
    p.validate()?;
    Ok((name, p))
}

fn cmd_csl(cfg: &Config) -> Result<Output, CliError> {
    let (preset, p) = csl_params(cfg)?;
    let model = Model::from_config(cfg)?;
    let mass = cfg.opt_f64("csl", "mass")?.unwrap_or(Constants::CODATA_2018.nucleon_mass());
    let d = cfg.opt_f64("csl", "separation")?.unwrap_or(model.params.dx);
    let lat = CslLattice::two_site(mass, d)?;
    let gamma = csl::two_site_rate(&p, mass, d);
    let t_end = match cfg.opt_f64("csl", "t_end_s")? {
        Some(t) => t,
        None if gamma > 0.0 => 0.5 / gamma,
        None => 1.0,
    };
    let dt = match cfg.opt_f64("csl", "dt_s")? {
        Some(t) => t,
        None if gamma > 0.0 => 1e-5 / gamma,
        None => t_end / 1000.0,
    };
    let n_records = cfg.usize("csl", "records")?.max(1);
    let steps = (t_end / dt).round().max(1.0) as usize;
    let grid = TimeGrid::new(t_end, dt, steps.div_ceil(n_records).max(1))?;
    let mut opts = SdeOptions::new(grid);
    opts.max_step_drift = cfg.f64("csl", "max_step_drift")?;
    let n_traj = cfg.usize("csl", "n_traj")?;
    let seed = cfg.u64("run", "seed")?;
    let psi0 = csl::two_branch_state(2);
    let lindblad = csl::evolve_lindblad(&lat, &p, &csl::projector(&psi0), &grid)?;
    let ens = csl::sde_ensemble(&lat, &p, &psi0, &opts, n_traj, seed)?;
    let distances: Vec<f64> = ens.mean.iter().zip(&lindblad).map(|(m, (_, l))| csl::trace_distance(m, l)).collect();
    let final_distance = *distances.last().expect("records");
    let max_distance = distances.iter().cloned().fold(0.0, f64::max);
    let bound = csl::ensemble_bound(n_traj, grid.dt, ens.rate_scale, grid.t_end);
    let fit = if gamma > 0.0 { csl::fitted_coherence_rate(&lindblad, 0, 1) } else { 0.0 };
    let graviton = model.rate(Some(mass))?.gamma_hz;
    let comparison = csl::compare_channels(graviton, &p, mass, d)?;
    let mut buf = Vec::new();
    csl::write_ensemble_csv(&ens, &lindblad, &mut buf).map_err(|e| CliError::Output(e.to_string()))?;
    let summary = json!({
        "preset": preset,
        "lambda": p.lambda,
        "r_c": p.r_c,
        "m0": p.m0,
        "mass": mass,
        "separation": d,
        "n_traj": n_traj,
        "seed": seed,
        "t_end_s": grid.t_end,
        "dt_s": grid.dt,
        "gamma_csl_analytic": gamma,
        "gamma_csl_lindblad": fit,
        "final_trace_distance": final_distance,
        "max_trace_distance": max_distance,
        "trace_distance_bound": bound,
        "within_bound": max_distance <= bound,
        "max_step_drift": ens.max_step_drift,
        "comparison": to_value(&comparison),
        "config_echo": cfg.echo(),
    });
    Ok(Output { csv: Some(String::from_utf8(buf).expect("utf8")), json: summary })
}

fn cmd_regimes(cfg: &Config) -> Result<Output, CliError> {
    let model = Model::from_config(cfg)?;
    let horizon = cfg.f64("regimes", "horizon_s")?;
    let c = Constants::CODATA_2018;
    let electron = model.rate(Some(c.electron_mass()))?.gamma_hz;
    let nucleon = model.rate(Some(c.nucleon_mass()))?.gamma_hz;
    let systems = [
        ("electron", c.electron_mass(), 1.0, electron),
        ("large-molecule", c.nucleon_mass(), 1e2, nucleon),
        ("virus", c.nucleon_mass(), 1e6, nucleon),
        ("macroscopic", c.nucleon_mass(), 1e15, nucleon),
    ];
    let mut csv = String::from("system,N,m_f_kg,gamma_hz,tau_s,regime\n");
    let mut rows = Vec::new();
    for (name, m_f, n, g1) in systems {
        let sys = AmplifiedSystem::from_constituents(m_f, n)?;
        let g = check_finite("gamma_hz", dynamics::amplified_rate(&sys, g1))?;
        let regime = dynamics::classify_regime(g, horizon)?;
        let tau = dynamics::decoherence_time(g);
        csv.push_str(&format!("{name},{n:e},{m_f:e},{g:e},{tau:e},{}\n", regime.slug()));
        rows.push(json!({
            "system": name, "N": n, "m_f_kg": m_f, "gamma_hz": g, "tau_s": tau,
            "regime": regime.slug(), "label": regime.label(),
        }));
    }
    Ok(Output {
        csv: Some(csv),
        json: json!({"systems": rows, "regimes": regime_metadata(horizon), "config_echo": cfg.echo()}),
    })
}
