//! Run configuration: a TOML file merged with command-line flags.
//!
//! Flags always win over file values. Unknown keys in the file are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use bd_spectra::RateModel;
use clap::{Args, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Built-in model: logistic, age or smith (default logistic with λ=2, μ=1)
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Exponent of the AGE model
    #[arg(long)]
    pub theta: Option<f64>,
    /// Carrying-capacity scale
    #[arg(long = "K")]
    pub k: Option<u64>,
    /// Comma-separated increasing list of K values
    #[arg(long = "K-list", value_delimiter = ',')]
    pub k_list: Option<Vec<u64>>,
    /// Number of eigenvalues (or limit points) to report
    #[arg(long = "num-eigs")]
    pub num_eigs: Option<usize>,
    /// Relative bisection tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Output path, `-` for standard output
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(alias = "name")]
    pub model: Option<String>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(rename = "K")]
    pub k: Option<u64>,
    #[serde(rename = "K_list")]
    pub k_list: Option<Vec<u64>>,
    pub num_eigs: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub out: Option<String>,
    pub format: Option<Format>,
    pub model: Option<ModelBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))
    }
}

/// Flags merged over the optional config file.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub model: ModelBlock,
    pub k: Option<u64>,
    pub k_list: Option<Vec<u64>>,
    pub num_eigs: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub out: String,
    pub format: Format,
}

impl Resolved {
    pub fn new(args: &CommonArgs) -> Result<Self, ConfigError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Self::merge(args, file))
    }

    pub fn merge(args: &CommonArgs, file: FileConfig) -> Self {
        let fm = file.model.unwrap_or_default();
        Self {
            model: ModelBlock {
                model: args.model.clone().or(fm.model),
                lambda: args.lambda.or(fm.lambda),
                mu: args.mu.or(fm.mu),
                theta: args.theta.or(fm.theta),
            },
            k: args.k.or(file.k),
            k_list: args.k_list.clone().or(file.k_list),
            num_eigs: args.num_eigs.or(file.num_eigs),
            tol: args.tol.or(file.tol),
            seed: args.seed.or(file.seed),
            trajectories: args.trajectories.or(file.trajectories),
            out: args.out.clone().or(file.out).unwrap_or_else(|| "-".into()),
            format: args.format.or(file.format).unwrap_or(Format::Csv),
        }
    }

    /// The default is logistic(2,1). Naming any model parameter makes the
    /// whole parameter set mandatory.
    pub fn rate_model(&self) -> Result<RateModel, ConfigError> {
        let m = &self.model;
        if m.model.is_none() && m.lambda.is_none() && m.mu.is_none() && m.theta.is_none() {
            return Ok(RateModel::logistic(2.0, 1.0).expect("default model is valid"));
        }
        let name = m.model.clone().unwrap_or_else(|| "logistic".into());
        let lambda = m.lambda.ok_or_else(|| missing("--lambda", &name))?;
        let mu = m.mu.ok_or_else(|| missing("--mu", &name))?;
        if name.eq_ignore_ascii_case("age") && m.theta.is_none() {
            return Err(missing("--theta", &name));
        }
        RateModel::from_name(&name, lambda, mu, m.theta).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn k_or(&self, default: u64) -> Result<u64, ConfigError> {
        match self.k.unwrap_or(default) {
            0 => Err(ConfigError("--K must be a positive integer".into())),
            k => Ok(k),
        }
    }

    pub fn tol_or_default(&self) -> Result<f64, ConfigError> {
        let tol = self.tol.unwrap_or(1e-13);
        if !(1e-14..1.0).contains(&tol) {
            return Err(ConfigError(format!("--tol must lie in [1e-14, 1), got {tol}")));
        }
        Ok(tol)
    }
}

fn missing(flag: &str, model: &str) -> ConfigError {
    ConfigError(format!("missing {flag}: required for model '{model}'"))
}
