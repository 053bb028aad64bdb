mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bd_spectra::analysis::{localization_report, solve, spectrum_convergence, LocalizationReport};
use bd_spectra::limit_spectra::{merge_eta, LimitSpectrum};
use bd_spectra::model::model_constants;
use bd_spectra::qsd::{mean_extinction_asymptotic, pi_weights, qsd_from_ground_state, QsdResult};
use bd_spectra::simulate::{extinction_study, InitialState, SimulationConfig};
use bd_spectra::validate::run_validation_suite;
use bd_spectra::{Execution, RateModel, SolverOptions};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{CommonArgs, ConfigError, Format, Resolved};

const THREADS_ENV: &str = "BD_SPECTRA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bd-spectra", version, about = "Spectra of scaled birth-and-death generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lowest ρ_j of the conjugated generator at one K (`j,rho,residual`)
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Also dump the operator as `n,diag,offdiag` CSV to this path
        #[arg(long = "operator-csv")]
        operator_csv: Option<PathBuf>,
    },
    /// Merged limit sequence η (`index,eta,tag`)
    Limit {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Quasi-stationary distribution and mean extinction times (`n,nu`)
    Qsd {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Convergence of ρ_j toward η_j along a K ladder (`K,j,rho,eta,abs_err`)
    Converge {
        #[command(flatten)]
        common: CommonArgs,
        /// Report eigenvector localization (`K,j,n_l,n_r,mid_sup,mass_left,mass_right`) instead
        #[arg(long)]
        localization: bool,
    },
    /// Gillespie extinction study (`traj,extinction_time,censored`)
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Censoring horizon (default 50/ρ₀)
        #[arg(long = "t-max")]
        t_max: Option<f64>,
        /// Fixed initial state (default: sample from the quasi-stationary law)
        #[arg(long)]
        start: Option<u64>,
        /// Also write the survival curve `t,survivors_fraction` to this path
        #[arg(long)]
        survival: Option<PathBuf>,
    },
    /// Runs the built-in property suite; exits 1 if any check fails
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Solver(String),
    Validation(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl From<bd_spectra::Error> for Failure {
    fn from(e: bd_spectra::Error) -> Self {
        if e.is_config_error() {
            Self::Config(e.to_string())
        } else {
            Self::Solver(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::Solver(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::Solver(m) => eprintln!("solver error: {m}"),
                Failure::Validation(n) => eprintln!("validation failed: {n} check(s)"),
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Config(format!("{THREADS_ENV} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(format!("{THREADS_ENV}: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() -> Result<(), Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) if raw.trim().parse::<usize>().map_or(true, |n| n == 0) => Err(Failure::Config(
            format!("{THREADS_ENV} must be a positive integer"),
        )),
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Spectrum { common, operator_csv } => cmd_spectrum(&Resolved::new(&common)?, operator_csv),
        Command::Limit { common } => cmd_limit(&Resolved::new(&common)?),
        Command::Qsd { common } => cmd_qsd(&Resolved::new(&common)?),
        Command::Converge { common, localization } => {
            cmd_converge(&Resolved::new(&common)?, localization)
        }
        Command::Simulate {
            common,
            t_max,
            start,
            survival,
        } => cmd_simulate(&Resolved::new(&common)?, t_max, start, survival),
        Command::Validate { common } => cmd_validate(&Resolved::new(&common)?),
    }
}

fn open_output(path: &str) -> Result<Box<dyn Write>, Failure> {
    if path == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let file = File::create(path).map_err(|e| Failure::Config(format!("cannot create {path}: {e}")))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn create_file(path: &PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", path.display())))
}

/// Writes either the CSV produced by `csv` or `json` pretty-printed.
fn emit<T: Serialize>(
    r: &Resolved,
    json: &T,
    csv: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    let mut out = open_output(&r.out)?;
    match r.format {
        Format::Csv => csv(&mut out)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, json).map_err(io::Error::from)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn solver_options(r: &Resolved) -> Result<SolverOptions, Failure> {
    Ok(SolverOptions {
        tol: r.tol_or_default()?,
        execution: Execution::Parallel,
    })
}

#[derive(Serialize)]
struct SpectrumJson {
    model: String,
    #[serde(rename = "K")]
    k: u64,
    #[serde(rename = "N")]
    n: usize,
    rhos: Vec<f64>,
    residuals: Vec<f64>,
    gap: Option<f64>,
    floor_flag: bool,
}

fn cmd_spectrum(r: &Resolved, operator_csv: Option<PathBuf>) -> Result<(), Failure> {
    let model = r.rate_model()?;
    let k = r.k_or(100)?;
    let solved = solve(&model, k, r.num_eigs.unwrap_or(6), &solver_options(r)?)?;
    if let Some(path) = operator_csv {
        let mut f = create_file(&path)?;
        solved.op.write_csv(&mut f)?;
        f.flush()?;
    }
    let spec = &solved.spec;
    let json = SpectrumJson {
        model: model.name(),
        k,
        n: solved.op.n(),
        rhos: spec.rhos.clone(),
        residuals: spec.residuals.clone(),
        gap: spec.gap(),
        floor_flag: spec.floor_flag,
    };
    emit(r, &json, |w| spec.write_csv(w))
}

fn cmd_limit(r: &Resolved) -> Result<(), Failure> {
    let model = r.rate_model()?;
    let count = r.num_eigs.unwrap_or(7);
    if count == 0 {
        return Err(Failure::Config("--num-eigs must be at least 1".into()));
    }
    let consts = model_constants(&model).map_err(bd_spectra::Error::from)?;
    let spec = LimitSpectrum::from_constants(&consts).map_err(bd_spectra::Error::from)?;
    let merged = merge_eta(&spec, count, 1e-9);
    emit(r, &merged, |w| merged.write_csv(w))
}

#[derive(Serialize)]
struct QsdJson<'a> {
    model: String,
    #[serde(rename = "K")]
    k: u64,
    rho0: f64,
    #[serde(rename = "mean_T_exact")]
    mean_t_exact: f64,
    #[serde(rename = "mean_T_asymptotic")]
    mean_t_asymptotic: Option<f64>,
    ratio: Option<f64>,
    mode: usize,
    mean_state: f64,
    floor_flag: bool,
    nu: &'a [f64],
}

fn quasi_stationary(model: &RateModel, k: u64, opts: &SolverOptions) -> Result<QsdResult, Failure> {
    let solved = solve(model, k, 2, opts)?;
    let pi = pi_weights(model, k, solved.op.n()).map_err(bd_spectra::Error::from)?;
    Ok(qsd_from_ground_state(&solved.spec, &pi).map_err(bd_spectra::Error::from)?)
}

fn cmd_qsd(r: &Resolved) -> Result<(), Failure> {
    let model = r.rate_model()?;
    let k = r.k_or(100)?;
    let mut qsd = quasi_stationary(&model, k, &solver_options(r)?)?;
    let consts = model_constants(&model).map_err(bd_spectra::Error::from)?;
    match mean_extinction_asymptotic(&consts, &model, k) {
        Ok(t) if t.is_finite() => qsd.attach_asymptotic(t),
        Ok(_) => eprintln!("warning: asymptotic mean extinction time overflows at K={k}"),
        Err(e) => eprintln!("warning: no asymptotic mean extinction time: {e}"),
    }
    let s = qsd.summary(k);
    let json = QsdJson {
        model: model.name(),
        k,
        rho0: s.rho0,
        mean_t_exact: s.mean_t_exact,
        mean_t_asymptotic: s.mean_t_asymptotic,
        ratio: s.ratio,
        mode: qsd.mode(),
        mean_state: qsd.mean_state(),
        floor_flag: qsd.floor_flag,
        nu: &qsd.nu,
    };
    emit(r, &json, |w| qsd.write_csv(w))
}

fn cmd_converge(r: &Resolved, localization: bool) -> Result<(), Failure> {
    let model = r.rate_model()?;
    let k_list = r
        .k_list
        .clone()
        .unwrap_or_else(|| r.k.map_or_else(|| vec![100, 200, 400, 800, 1600], |k| vec![k]));
    if k_list.contains(&0) {
        return Err(Failure::Config("--K-list entries must be positive".into()));
    }
    let num = r.num_eigs.unwrap_or(5);
    if num == 0 {
        return Err(Failure::Config("--num-eigs must be at least 1".into()));
    }
    let opts = solver_options(r)?;
    if localization {
        let consts = model_constants(&model).map_err(bd_spectra::Error::from)?;
        let mut reports: Vec<LocalizationReport> = Vec::new();
        for &k in &k_list {
            let solved = solve(&model, k, num, &opts)?;
            for j in 0..solved.spec.rhos.len() {
                reports.push(localization_report(&solved.spec, &consts, k, j)?);
            }
        }
        return emit(r, &reports, |w| {
            writeln!(w, "{}", LocalizationReport::csv_header())?;
            reports.iter().try_for_each(|rep| writeln!(w, "{}", rep.csv_row()))
        });
    }
    let report = spectrum_convergence(&model, &k_list, num - 1, &opts)?;
    emit(r, &report, |w| report.write_csv(w))
}

#[derive(Serialize)]
struct SimulationJson<'a> {
    model: String,
    #[serde(rename = "K")]
    k: u64,
    seed: u64,
    trajectories: usize,
    t_max: f64,
    rho0: f64,
    mean: f64,
    stderr: f64,
    censored_fraction: f64,
    censoring_bias: bool,
    survival_slope: Option<f64>,
    times: &'a [f64],
    censored: &'a [bool],
}

fn cmd_simulate(
    r: &Resolved,
    t_max: Option<f64>,
    start: Option<u64>,
    survival: Option<PathBuf>,
) -> Result<(), Failure> {
    let model = r.rate_model()?;
    let k = r.k_or(20)?;
    let n_traj = r.trajectories.unwrap_or(2000);
    let seed = r.seed.unwrap_or(0);
    let qsd = quasi_stationary(&model, k, &solver_options(r)?)?;
    let t_max = t_max.unwrap_or(50.0 / qsd.rho0);
    let initial = match start {
        Some(0) => return Err(Failure::Config("--start must be positive".into())),
        Some(n) => InitialState::Fixed(n),
        None => InitialState::FromQsd(qsd.nu.clone()),
    };
    let cfg = SimulationConfig {
        seed,
        n_traj,
        t_max,
        initial,
        execution: Execution::Parallel,
    };
    let stats = extinction_study(&model, k, &cfg).map_err(bd_spectra::Error::from)?;
    if let Some(path) = survival {
        let mut f = create_file(&path)?;
        stats.write_survival_csv(&mut f)?;
        f.flush()?;
    }
    if stats.censoring_bias {
        eprintln!(
            "warning: {:.2}% of trajectories censored at t_max={t_max}; mean is biased low",
            100.0 * stats.censored_fraction
        );
    }
    let json = SimulationJson {
        model: model.name(),
        k,
        seed,
        trajectories: n_traj,
        t_max,
        rho0: qsd.rho0,
        mean: stats.mean,
        stderr: stats.stderr,
        censored_fraction: stats.censored_fraction,
        censoring_bias: stats.censoring_bias,
        survival_slope: stats.survival_slope(),
        times: &stats.times,
        censored: &stats.censored,
    };
    emit(r, &json, |w| stats.write_times_csv(w))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_validate(r: &Resolved) -> Result<(), Failure> {
    let outcomes = run_validation_suite(Execution::Parallel);
    emit(r, &outcomes, |w| {
        writeln!(w, "check,passed,detail")?;
        outcomes
            .iter()
            .try_for_each(|o| writeln!(w, "{},{},{}", o.name, o.passed, csv_field(&o.detail)))
    })?;
    match outcomes.iter().filter(|o| !o.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Validation(n)),
    }
}
