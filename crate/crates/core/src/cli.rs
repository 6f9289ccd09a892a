//! Command-line surface: TOML model configuration and the `hka` subcommands.
//!
//! All tabular output is CSV with a header row. Every command is a pure
//! function of (config, flags, seed), so output is reproducible.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{self, CalibrationFamily, CalibrationProblem};
use crate::kernels::{
    EigenTerm, Eigenfunction, Estimator, HFunction, KernelSpec, KillingRate, Model, TraceFamily, Weight, DEFAULT_GRID_STEP,
};
use crate::mc::verify::{self, Check, Verdict, VerifyOptions};
use crate::mc::{stream_rng, Execution};
use crate::pricing::{self, DiscountCurve, SwaptionPrice, SwaptionSpec, TenorStructure};
use crate::processes::{ProcessSpec, State};
use crate::specfun::QuadratureSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable consulted when neither `--seed` nor the config sets one.
pub const SEED_ENV: &str = "HKA_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
    #[error(transparent)]
    Pricing(#[from] crate::pricing::PricingError),
    #[error(transparent)]
    Calib(#[from] crate::calib::CalibError),
    #[error(transparent)]
    Process(#[from] crate::processes::ProcessError),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// Configuration document

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    /// Driver of the state process. Optional for trace kernels, whose driver is
    /// implied by the family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessConfig>,
    pub kernel: KernelConfig,
    pub x0: Vec<f64>,
    /// Simulation horizon in years.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Simulation time step; also the path grid of killed kernels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_horizon() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessConfig {
    Brownian { kappa: Vec<f64> },
    OrnsteinUhlenbeck { mu_speed: f64, dim: usize },
    Cir { kappa: f64, theta: f64, sigma: f64 },
    Cauchy { theta: f64, gamma: Vec<f64> },
    VarianceGamma { eta: f64, gamma_rate: f64 },
    NormalInverseGaussian { eta: f64, gamma_rate: f64 },
}

impl ProcessConfig {
    pub fn build(&self) -> Result<ProcessSpec> {
        Ok(match self {
            ProcessConfig::Brownian { kappa } => ProcessSpec::brownian(kappa.clone())?,
            ProcessConfig::OrnsteinUhlenbeck { mu_speed, dim } => ProcessSpec::ornstein_uhlenbeck(*mu_speed, *dim)?,
            ProcessConfig::Cir { kappa, theta, sigma } => ProcessSpec::cir(*kappa, *theta, *sigma)?,
            ProcessConfig::Cauchy { theta, gamma } => ProcessSpec::cauchy(*theta, gamma.clone())?,
            ProcessConfig::VarianceGamma { eta, gamma_rate } => ProcessSpec::variance_gamma(*eta, *gamma_rate)?,
            ProcessConfig::NormalInverseGaussian { eta, gamma_rate } => ProcessSpec::normal_inverse_gaussian(*eta, *gamma_rate)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    /// Transition density of the reflected driver started at 0.
    LevyDensity {},
    Expectation {
        h: HConfig,
        #[serde(default)]
        estimator: EstimatorConfig,
    },
    AffineCir {
        a: Vec<f64>,
        mu: Vec<f64>,
    },
    Eigen {
        mu: f64,
        g: EigenfunctionConfig,
    },
    EigenSum {
        terms: Vec<EigenTermConfig>,
    },
    Weighted {
        base: Box<KernelConfig>,
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
    Killed {
        v: KillingConfig,
        #[serde(default)]
        estimator: EstimatorConfig,
    },
    Trace {
        family: String,
        lambda: f64,
        c: f64,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HConfig {
    Constant { value: f64 },
    GaussianBump { amplitude: f64, center: Vec<f64>, width: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    #[default]
    ClosedForm,
    Quadrature,
    MonteCarlo {
        n: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EigenfunctionConfig {
    Exponential { c: Vec<f64> },
    SquaredExponential { coef: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenTermConfig {
    pub a: f64,
    #[serde(default)]
    pub decay: f64,
    pub mu: f64,
    pub g: EigenfunctionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KillingConfig {
    Constant { rate: f64 },
    Linear { rate: f64 },
    Quadratic { rate: f64 },
}

impl EstimatorConfig {
    fn build(&self) -> Estimator {
        match self {
            EstimatorConfig::ClosedForm => Estimator::ClosedForm,
            EstimatorConfig::Quadrature => Estimator::Quadrature,
            EstimatorConfig::MonteCarlo { n, seed } => Estimator::MonteCarlo { n: *n, seed: *seed },
        }
    }
}

impl EigenfunctionConfig {
    fn build(&self) -> Eigenfunction {
        match self {
            EigenfunctionConfig::Exponential { c } => Eigenfunction::Exponential { c: c.clone() },
            EigenfunctionConfig::SquaredExponential { coef } => Eigenfunction::SquaredExponential { coef: *coef },
        }
    }
}

fn trace_family(name: &str, params: &BTreeMap<String, f64>) -> Result<TraceFamily> {
    let expected: &[&str] = match name {
        "gauss_heat" => &[],
        "quad_gauss" => &["alpha"],
        "cauchy_sym" => &["theta"],
        "variance_gamma" | "nig" => &["eta", "gamma"],
        other => {
            return Err(config_err(format!(
                "kernel.family = '{other}' is unknown; use one of gauss_heat, quad_gauss, cauchy_sym, variance_gamma, nig"
            )))
        }
    };
    if let Some(extra) = params.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(config_err(format!(
            "kernel.params.{extra} is not a parameter of the {name} family (expected: {})",
            if expected.is_empty() { "none".to_string() } else { expected.join(", ") }
        )));
    }
    let get = |k: &str| {
        params
            .get(k)
            .copied()
            .ok_or_else(|| config_err(format!("kernel.params.{k} is required for the {name} family")))
    };
    Ok(match name {
        "gauss_heat" => TraceFamily::GaussHeat,
        "quad_gauss" => TraceFamily::QuadGauss { alpha: get("alpha")? },
        "cauchy_sym" => TraceFamily::CauchySym { theta: get("theta")? },
        "variance_gamma" => TraceFamily::VarianceGamma {
            eta: get("eta")?,
            gamma: get("gamma")?,
        },
        _ => TraceFamily::Nig {
            eta: get("eta")?,
            gamma: get("gamma")?,
        },
    })
}

impl KernelConfig {
    /// Kernel under `driver`; `grid_step` is used by killed kernels.
    pub fn build(&self, driver: Option<&ProcessSpec>, grid_step: f64) -> Result<KernelSpec> {
        let need = |what: &str| {
            driver
                .cloned()
                .ok_or_else(|| config_err(format!("a [process] section is required for {what} kernels")))
        };
        Ok(match self {
            KernelConfig::LevyDensity {} => KernelSpec::LevyDensity {
                process: need("levy_density")?.reflected()?,
            },
            KernelConfig::Expectation { h, estimator } => KernelSpec::Expectation {
                h: match h {
                    HConfig::Constant { value } => HFunction::Constant(*value),
                    HConfig::GaussianBump { amplitude, center, width } => HFunction::GaussianBump {
                        amplitude: *amplitude,
                        center: center.clone(),
                        width: *width,
                    },
                },
                process: need("expectation")?,
                estimator: estimator.build(),
            },
            KernelConfig::AffineCir { a, mu } => {
                let cir = match need("affine_cir")? {
                    ProcessSpec::Cir(c) => c,
                    other => {
                        return Err(config_err(format!(
                            "affine_cir kernels need process.type = \"cir\", got \"{}\"",
                            other.tag()
                        )))
                    }
                };
                if a.iter().any(|v| !(*v > 0.0)) {
                    return Err(config_err("kernel.a: all weights must be positive"));
                }
                if mu.iter().any(|v| !(*v < 0.0)) {
                    return Err(config_err("kernel.mu: all exponents must be negative"));
                }
                KernelSpec::AffineExpSum {
                    a: a.clone(),
                    mu: mu.clone(),
                    cir,
                }
            }
            KernelConfig::Eigen { mu, g } => {
                check_eigen_mu(*mu, "kernel.mu")?;
                KernelSpec::Eigen { mu: *mu, g: g.build() }
            }
            KernelConfig::EigenSum { terms } => {
                for (i, t) in terms.iter().enumerate() {
                    check_eigen_mu(t.mu, &format!("kernel.terms[{i}].mu"))?;
                }
                KernelSpec::EigenSum {
                    terms: terms
                        .iter()
                        .map(|t| EigenTerm {
                            a: t.a,
                            decay: t.decay,
                            mu: t.mu,
                            g: t.g.build(),
                        })
                        .collect(),
                }
            }
            KernelConfig::Weighted { base, alpha, beta } => {
                if matches!(**base, KernelConfig::Weighted { .. } | KernelConfig::Killed { .. } | KernelConfig::Trace { .. }) {
                    return Err(config_err("kernel.base must be a plain heat kernel (levy_density, expectation, affine_cir, eigen, eigen_sum)"));
                }
                let weight = match beta {
                    None => Weight::Exponential { alpha: *alpha },
                    Some(beta) => Weight::TwoRate { alpha: *alpha, beta: *beta },
                };
                KernelSpec::Weighted {
                    base: Box::new(base.build(driver, grid_step)?),
                    weight,
                    quadrature: QuadratureSpec::default(),
                }
            }
            KernelConfig::Killed { v, estimator } => KernelSpec::Killed {
                v: match v {
                    KillingConfig::Constant { rate } => KillingRate::Constant(*rate),
                    KillingConfig::Linear { rate } => KillingRate::Linear(*rate),
                    KillingConfig::Quadratic { rate } => KillingRate::Quadratic(*rate),
                },
                process: need("killed")?,
                estimator: estimator.build(),
                grid_step,
            },
            KernelConfig::Trace { family, lambda, c, params } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(config_err(format!("kernel.lambda = {lambda} must be positive (e.g. lambda = 1.0)")));
                }
                if !(*c > 2.0 && c.is_finite()) {
                    return Err(config_err(format!(
                        "kernel.c = {c} must exceed 2 for the trace construction to give positive rates (e.g. c = 3.0)"
                    )));
                }
                let family = trace_family(family, params)?;
                if let TraceFamily::VarianceGamma { eta, .. } = family {
                    if eta * lambda <= 0.5 {
                        return Err(config_err(format!(
                            "variance_gamma trace needs eta * lambda > 1/2 so that u(lambda, 0) is finite; got {eta} * {lambda} = {}; raise eta or lambda",
                            eta * lambda
                        )));
                    }
                }
                KernelSpec::Trace {
                    family,
                    lambda: *lambda,
                    c: *c,
                }
            }
        })
    }
}

fn check_eigen_mu(mu: f64, key: &str) -> Result<()> {
    if mu < 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{key} = {mu} must be negative (eigen models need mu < 0)")))
    }
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version = {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step.unwrap_or(DEFAULT_GRID_STEP)
    }

    /// Validates and constructs the model.
    pub fn build(&self) -> Result<Model> {
        if self.x0.is_empty() {
            return Err(config_err("x0 must list at least one coordinate"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config_err(format!("horizon = {} must be positive", self.horizon)));
        }
        let step = self.grid_step();
        if !(step > 0.0 && step <= self.horizon) {
            return Err(config_err(format!("grid_step = {step} must lie in (0, horizon]")));
        }
        let declared = self.process.as_ref().map(ProcessConfig::build).transpose()?;
        let kernel = self.kernel.build(declared.as_ref(), step)?;
        let driver = match (&kernel, declared) {
            (_, Some(p)) => p,
            (KernelSpec::Trace { family, .. }, None) => family.driver(self.x0.len()),
            _ => return Err(config_err("a [process] section is required for this kernel")),
        };
        Ok(Model::new(kernel, driver, State::from_slice(&self.x0))?)
    }

    /// The config document for a fitted calibration family.
    pub fn from_fit(family: CalibrationFamily, p: &[f64]) -> Self {
        let trace = |name: &str, params: &[(&str, f64)]| KernelConfig::Trace {
            family: name.to_string(),
            lambda: p[0],
            c: p[1],
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        let (process, kernel, x0) = match family {
            CalibrationFamily::TraceGaussHeat => (None, trace("gauss_heat", &[]), 0.0),
            CalibrationFamily::TraceQuadGauss => (None, trace("quad_gauss", &[("alpha", p[2])]), 0.0),
            CalibrationFamily::TraceCauchy => (None, trace("cauchy_sym", &[("theta", p[2])]), 0.0),
            CalibrationFamily::TraceVarianceGamma => (None, trace("variance_gamma", &[("eta", p[2]), ("gamma", p[3])]), 0.0),
            CalibrationFamily::TraceNig => (None, trace("nig", &[("eta", p[2]), ("gamma", p[3])]), 0.0),
            CalibrationFamily::AffineCir => (
                Some(ProcessConfig::Cir {
                    kappa: p[0],
                    theta: p[1],
                    sigma: p[2],
                }),
                KernelConfig::AffineCir {
                    a: vec![1.0],
                    mu: vec![p[3]],
                },
                p[4],
            ),
            CalibrationFamily::EigenBm => (
                Some(ProcessConfig::Brownian { kappa: vec![0.5 - p[0]] }),
                KernelConfig::Eigen {
                    mu: p[0],
                    g: EigenfunctionConfig::Exponential { c: vec![1.0] },
                },
                p[1],
            ),
            CalibrationFamily::EigenOu => (
                Some(ProcessConfig::OrnsteinUhlenbeck { mu_speed: p[0], dim: 1 }),
                KernelConfig::Eigen {
                    mu: p[0],
                    g: EigenfunctionConfig::SquaredExponential { coef: p[0] },
                },
                p[1],
            ),
        };
        ModelConfig {
            schema_version: SCHEMA_VERSION,
            process,
            kernel,
            x0: vec![x0],
            horizon: default_horizon(),
            grid_step: None,
            seed: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "hka", version, about = "Heat-kernel interest rate models: curves, paths, prices, checks, calibration")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed; overrides the config and the HKA_SEED variable.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Initial discount curve: T,discount,yield.
    Curve {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated maturities in years (default 0.25..horizon).
        #[arg(long, value_delimiter = ',')]
        maturities: Option<Vec<f64>>,
    },
    /// Simulated zero yields: path_id,t,tenor,yield.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        paths: usize,
        /// Comma-separated yield tenors in years.
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        tenors: Vec<f64>,
        /// Output every this many simulation steps.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Bond or swaption price.
    Price(PriceArgs),
    /// Verification report; exits nonzero if any check fails.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated checks (default: all).
        #[arg(long, value_delimiter = ',')]
        suite: Option<Vec<String>>,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Random input tuples per check.
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Fit a family to a T,discount CSV and print the fitted config.
    Calibrate {
        #[arg(long)]
        family: String,
        #[arg(long)]
        curve: PathBuf,
        /// Comma-separated initial parameters (default: family defaults).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Option<Vec<f64>>,
        #[arg(long, default_value_t = 2000)]
        max_iters: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Zero-coupon bond with this maturity.
    #[arg(long, conflicts_with_all = ["dates", "strike"])]
    pub bond: Option<f64>,
    /// Swaption tenor dates T_alpha,...,T_beta.
    #[arg(long, value_delimiter = ',', requires = "strike")]
    pub dates: Option<Vec<f64>>,
    #[arg(long)]
    pub strike: Option<f64>,
    /// Valuation time; the state is the config's x0.
    #[arg(long, default_value_t = 0.0)]
    pub at: f64,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    pub method: Method,
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Closed form when one exists, otherwise Monte Carlo.
    Auto,
    Closed,
    Mc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Text,
}

/// `--seed`, then the config, then `HKA_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} = '{v}' is not an unsigned integer"))),
        None => Ok(0),
    }
}

fn execution(threads: Option<usize>) -> Execution {
    threads.map(Execution::with_threads).unwrap_or_default()
}

fn csv_writer(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(out)
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn cmd_curve(cfg: &ModelConfig, maturities: &[f64], out: &mut dyn Write) -> Result<()> {
    if let Some(m) = maturities.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(CliError::Usage(format!("maturity {m} must be positive")));
    }
    let model = cfg.build()?;
    let discounts = pricing::initial_curve(&model, maturities)?;
    let mut w = csv_writer(out);
    w.write_record(["T", "discount", "yield"])?;
    for (m, p) in maturities.iter().zip(&discounts) {
        w.write_record([num(*m), num(*p), num(-p.ln() / m)])?;
    }
    w.flush()?;
    Ok(())
}

fn default_maturities(horizon: f64) -> Vec<f64> {
    let mut m = vec![0.25, 0.5];
    let mut t = 1.0;
    while t <= horizon + 1e-12 {
        m.push(t);
        t += 1.0;
    }
    m.retain(|v| *v <= horizon + 1e-12);
    m
}

pub fn cmd_simulate(cfg: &ModelConfig, paths: usize, tenors: &[f64], every: usize, seed: u64, out: &mut dyn Write) -> Result<()> {
    if paths == 0 || every == 0 {
        return Err(CliError::Usage("--paths and --every must be positive".into()));
    }
    if let Some(t) = tenors.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CliError::Usage(format!("tenor {t} must be positive")));
    }
    let model = cfg.build()?;
    let step = cfg.grid_step();
    let steps = (cfg.horizon / step).round() as usize;
    let mut w = csv_writer(out);
    w.write_record(["path_id", "t", "tenor", "yield"])?;
    for path in 0..paths {
        let mut rng = stream_rng(seed, path as u64);
        let mut x = model.x0.clone();
        for k in 0..=steps {
            let t = k as f64 * step;
            if k > 0 {
                x = model.process.sample_unchecked(&x, step, &mut rng);
            }
            if k % every != 0 {
                continue;
            }
            for &tenor in tenors {
                let p = pricing::bond_price(&model, t, t + tenor, &x)?;
                w.write_record([path.to_string(), num(t), num(tenor), num(-p.ln() / tenor)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_price(cfg: &ModelConfig, args: &PriceArgs, seed: u64, exec: Execution, out: &mut dyn Write) -> Result<()> {
    let model = cfg.build()?;
    let x = model.x0.clone();
    let mut w = csv_writer(out);
    w.write_record(["instrument", "method", "price", "stderr"])?;
    match (&args.bond, &args.dates) {
        (Some(maturity), None) => {
            if args.method == Method::Mc {
                let est = pricing::derivative_price(&model, |_| 1.0, *maturity, *maturity, args.n, seed, exec)?;
                w.write_record([format!("bond:{maturity}"), "mc".into(), num(est.mean), num(est.stderr)])?;
            } else {
                let p = pricing::bond_price(&model, args.at, *maturity, &x)?;
                w.write_record([format!("bond:{maturity}"), "closed".into(), num(p), String::new()])?;
            }
        }
        (None, Some(dates)) => {
            let strike = args.strike.ok_or_else(|| CliError::Usage("--strike is required with --dates".into()))?;
            let spec = SwaptionSpec::new(TenorStructure::new(dates.clone())?, strike)?;
            let label = format!("swaption:{}:{strike}", dates.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(";"));
            let price = match args.method {
                Method::Auto => pricing::swaption_price(&model, &spec, args.at, &x, args.n, seed, exec)?,
                Method::Closed => SwaptionPrice::Closed(pricing::swaption_eigen_closed(&model, &spec, args.at, &x)?),
                Method::Mc => SwaptionPrice::MonteCarlo(pricing::swaption_price_mc(&model, &spec, args.at, &x, args.n, seed, exec)?),
            };
            match price {
                SwaptionPrice::Closed(v) => w.write_record([label, "closed".into(), num(v), String::new()])?,
                SwaptionPrice::MonteCarlo(e) => w.write_record([label, "mc".into(), num(e.mean), num(e.stderr)])?,
            }
        }
        _ => return Err(CliError::Usage("give either --bond T or --dates ... --strike K".into())),
    }
    w.flush()?;
    Ok(())
}

/// Writes the report and returns its overall verdict.
pub fn cmd_verify(cfg: &ModelConfig, suite: &[Check], opts: VerifyOptions, format: ReportFormat, out: &mut dyn Write) -> Result<Verdict> {
    let model = cfg.build()?;
    let reports = verify::verify_model(&model, suite, opts);
    match format {
        ReportFormat::Csv => out.write_all(verify::reports_to_csv(&reports)?.as_bytes())?,
        ReportFormat::Text => out.write_all(verify::reports_to_text(&reports).as_bytes())?,
    }
    Ok(verify::aggregate(&reports))
}

/// Reads a `T,discount` CSV.
pub fn read_curve(reader: impl std::io::Read) -> Result<DiscountCurve> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "T" || &headers[1] != "discount" {
        return Err(CliError::Usage(format!(
            "curve CSV needs the header 'T,discount', got '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut maturities, mut discounts) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("curve row {}: '{}' is not a number", line + 2, &rec[i])))
        };
        maturities.push(parse(0)?);
        discounts.push(parse(1)?);
    }
    if maturities.first() != Some(&0.0) {
        maturities.insert(0, 0.0);
        discounts.insert(0, 1.0);
    }
    Ok(DiscountCurve::new(maturities, discounts)?)
}

pub fn default_init(family: CalibrationFamily) -> Vec<f64> {
    match family {
        CalibrationFamily::TraceGaussHeat => vec![1.0, 3.0],
        CalibrationFamily::TraceQuadGauss => vec![1.0, 3.0, 0.5],
        CalibrationFamily::TraceCauchy => vec![1.0, 3.0, 1.0],
        CalibrationFamily::TraceVarianceGamma => vec![1.0, 3.0, 2.0, 1.0],
        CalibrationFamily::TraceNig => vec![1.0, 3.0, 1.0, 1.0],
        CalibrationFamily::AffineCir => vec![0.5, 0.05, 0.2, -0.5, 0.05],
        CalibrationFamily::EigenBm => vec![-0.2, 0.0],
        CalibrationFamily::EigenOu => vec![-0.2, 0.5],
    }
}

/// Fits and writes the config document. The fit diagnostics go in a leading
/// comment block.
pub fn cmd_calibrate(
    family: CalibrationFamily,
    curve: DiscountCurve,
    init: Option<&[f64]>,
    max_iters: u64,
    tol: f64,
    out: &mut dyn Write,
) -> Result<calib::FitResult> {
    let problem = CalibrationProblem::new(family, curve)?;
    let init = init.map(<[f64]>::to_vec).unwrap_or_else(|| default_init(family));
    let fit = calib::fit(&problem, &init, max_iters, tol)?;
    writeln!(out, "# calibrated family: {family}")?;
    writeln!(out, "# converged: {} ({})", fit.converged, fit.message)?;
    writeln!(out, "# residual_norm: {:e}, iterations: {}", fit.residual_norm, fit.iterations)?;
    for (name, v) in fit.names.iter().zip(&fit.params) {
        writeln!(out, "# {name} = {v}")?;
    }
    out.write_all(ModelConfig::from_fit(family, &fit.params).to_toml()?.as_bytes())?;
    Ok(fit)
}

/// Exit status of a successful run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    ChecksFailed,
    NotConverged,
}

fn config_seed(flag: Option<u64>, cfg: &ModelConfig) -> Result<u64> {
    resolve_seed(flag, cfg.seed, std::env::var(SEED_ENV).ok().as_deref())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Outcome> {
    let g = &cli.global;
    let exec = execution(g.threads);
    match &cli.command {
        Command::Curve { config, maturities } => {
            let cfg = ModelConfig::load(config)?;
            let m = maturities.clone().unwrap_or_else(|| default_maturities(cfg.horizon));
            cmd_curve(&cfg, &m, out)?;
        }
        Command::Simulate {
            config,
            paths,
            tenors,
            every,
        } => {
            let cfg = ModelConfig::load(config)?;
            let seed = config_seed(g.seed, &cfg)?;
            cmd_simulate(&cfg, *paths, tenors, *every, seed, out)?;
        }
        Command::Price(args) => {
            let cfg = ModelConfig::load(&args.config)?;
            let seed = config_seed(g.seed, &cfg)?;
            cmd_price(&cfg, args, seed, exec, out)?;
        }
        Command::Verify {
            config,
            suite,
            n,
            points,
            format,
        } => {
            let cfg = ModelConfig::load(config)?;
            let seed = config_seed(g.seed, &cfg)?;
            let checks = match suite {
                None => Check::ALL.to_vec(),
                Some(names) => names.iter().map(|s| s.parse::<Check>()).collect::<std::result::Result<Vec<_>, _>>().map_err(CliError::Usage)?,
            };
            let opts = VerifyOptions {
                n: *n,
                seed,
                points: *points,
                exec,
            };
            if cmd_verify(&cfg, &checks, opts, *format, out)? == Verdict::Fail {
                return Ok(Outcome::ChecksFailed);
            }
        }
        Command::Calibrate {
            family,
            curve,
            init,
            max_iters,
            tol,
        } => {
            let family: CalibrationFamily = family.parse().map_err(CliError::Usage)?;
            let file = std::fs::File::open(curve).map_err(|source| CliError::Io {
                path: curve.clone(),
                source,
            })?;
            let fit = cmd_calibrate(family, read_curve(file)?, init.as_deref(), *max_iters, *tol, out)?;
            if !fit.converged {
                return Ok(Outcome::NotConverged);
            }
        }
    }
    out.flush()?;
    Ok(Outcome::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACE: &str = r#"
schema_version = 1
x0 = [0.0]

[kernel]
type = "trace"
family = "gauss_heat"
lambda = 1.0
c = 3.0
"#;

    fn run_to_string(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn gauss_trace_curve_matches_closed_form() {
        let cfg = ModelConfig::from_toml(TRACE).unwrap();
        let csv = run_to_string(|o| cmd_curve(&cfg, &[1.0], o));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("T,discount,yield"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        let expected = ((1.0f64 / 3.0).sqrt() + 3.0 * 0.5f64.sqrt()) / 4.0;
        assert!((row[1] - expected).abs() < 1e-14);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_parameters() {
        let unknown = TRACE.replace("c = 3.0", "c = 3.0\nlamda = 2.0");
        assert!(ModelConfig::from_toml(&unknown).is_err());
        let proc_unknown = "schema_version = 1\nx0 = [0.0]\n[process]\ntype = \"cir\"\nparams = { kappa = 1.0, theta = 0.1, sigma = 0.2, rho = 1.0 }\n[kernel]\ntype = \"affine_cir\"\na = [1.0]\nmu = [-1.0]\n";
        assert!(ModelConfig::from_toml(proc_unknown).is_err());
        assert!(ModelConfig::from_toml(&proc_unknown.replace(", rho = 1.0", "")).unwrap().build().is_ok());
        for (from, to, hint) in [
            ("c = 3.0", "c = 2.0", "exceed 2"),
            ("lambda = 1.0", "lambda = 0.0", "positive"),
        ] {
            let err = ModelConfig::from_toml(&TRACE.replace(from, to)).unwrap().build().unwrap_err();
            assert!(err.to_string().contains(hint), "{err}");
        }
        let vg = TRACE
            .replace("gauss_heat", "variance_gamma")
            .replace("c = 3.0", "c = 3.0\nparams = { eta = 0.4, gamma = 1.0 }");
        let err = ModelConfig::from_toml(&vg).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("eta * lambda"), "{err}");
        let eigen = "schema_version = 1\nx0 = [0.0]\n[process]\ntype = \"brownian\"\nparams = { kappa = [0.3] }\n[kernel]\ntype = \"eigen\"\nmu = 0.2\ng = { type = \"exponential\", c = [1.0] }\n";
        let err = ModelConfig::from_toml(eigen).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");
        assert!(ModelConfig::from_toml(&TRACE.replace("schema_version = 1", "schema_version = 9")).is_err());
    }

    #[test]
    fn seed_priority() {
        assert_eq!(resolve_seed(Some(1), Some(2), Some("3")).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some("3")).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 0);
        assert!(resolve_seed(None, None, Some("x")).is_err());
    }

    #[test]
    fn fitted_configs_roundtrip_through_toml() {
        for family in CalibrationFamily::ALL {
            let cfg = ModelConfig::from_fit(family, &default_init(family));
            let back = ModelConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
            back.build().unwrap_or_else(|e| panic!("{family}: {e}"));
        }
    }

    #[test]
    fn reads_curve_csv() {
        let c = read_curve("T,discount\n1,0.98\n2,0.96\n".as_bytes()).unwrap();
        assert_eq!(c.maturities, vec![0.0, 1.0, 2.0]);
        assert!(read_curve("maturity,df\n1,0.9\n".as_bytes()).is_err());
    }
}
