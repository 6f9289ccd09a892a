//! Functions with the propagation property and the state price densities built
//! from them.
//!
//! A [`KernelSpec`] describes `p(t, x)` (or, for the positive-rate families, the
//! state price kernel directly). A [`Model`] binds a kernel to its Markov driver
//! and an initial state, and exposes the two quantities every price is made of:
//! the state price density `π_t` and its conditional expectation `E[π_T | X_t = x]`.

use std::f64::consts::PI;

use log::debug;
use rand::Rng;
use thiserror::Error;

use crate::mc::{self, estimate_with, stream_rng, Execution, MCEstimate, McError};
use crate::processes::{cauchy_density, ou_moments, CirParams, ProcessError, ProcessSpec, State};
use crate::specfun::{integrate, ln_bessel_k, ln_gamma, Domain, QuadratureSpec, SpecFunError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("outside the kernel domain: {0}")]
    Domain(String),
    #[error("kernel and driver are incompatible: {0}")]
    Incompatible(String),
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("killed kernels need the accumulated integral of V along the path")]
    MissingPathFunctional,
    #[error("eigenfunction check failed at t = {t}, x = {x:?}: z = {z}")]
    EigenCheckFailed { t: f64, x: Vec<f64>, z: f64 },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Mc(#[from] McError),
}

pub type Result<T> = std::result::Result<T, KernelError>;

fn invalid(msg: impl Into<String>) -> KernelError {
    KernelError::InvalidParameter(msg.into())
}

/// Bounded non-negative payoff `h` for `p(t, x) = E[h(X^x_t)]`.
#[derive(Clone, Debug, PartialEq)]
pub enum HFunction {
    Constant(f64),
    /// `amplitude · exp(-|x - center|² / (2 width²))`.
    GaussianBump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl HFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            HFunction::Constant(a) => *a,
            HFunction::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            HFunction::Constant(a) if *a > 0.0 && a.is_finite() => Ok(()),
            HFunction::Constant(a) => Err(invalid(format!("constant h must be positive, got {a}"))),
            HFunction::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                if !(*amplitude > 0.0 && *width > 0.0) {
                    return Err(invalid("Gaussian bump needs positive amplitude and width"));
                }
                if center.len() != dim {
                    return Err(invalid(format!("bump center has dimension {}, driver {dim}", center.len())));
                }
                Ok(())
            }
        }
    }
}

/// How a non-closed-form expectation is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Estimator {
    ClosedForm,
    Quadrature,
    MonteCarlo { n: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Eigenfunction {
    /// `g(x) = exp(⟨c, x⟩)`.
    Exponential { c: Vec<f64> },
    /// `g(x) = exp(coef · |x|²)`.
    SquaredExponential { coef: f64 },
}

impl Eigenfunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Eigenfunction::Exponential { c } => c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().exp(),
            Eigenfunction::SquaredExponential { coef } => (coef * x.iter().map(|v| v * v).sum::<f64>()).exp(),
        }
    }

    /// The eigenvalue under `process`, where it is known in closed form.
    pub fn analytic_eigenvalue(&self, process: &ProcessSpec) -> Option<f64> {
        match (self, process) {
            (Eigenfunction::Exponential { c }, ProcessSpec::BrownianDrift { kappa }) if c.len() == kappa.len() => {
                let c2: f64 = c.iter().map(|v| v * v).sum();
                let ck: f64 = c.iter().zip(kappa).map(|(a, b)| a * b).sum();
                Some(0.5 * c2 - ck)
            }
            (Eigenfunction::SquaredExponential { coef }, ProcessSpec::OrnsteinUhlenbeck { mu_speed, dim })
                if (coef - mu_speed).abs() <= 1e-12 * mu_speed.abs() =>
            {
                Some(mu_speed * *dim as f64)
            }
            _ => None,
        }
    }
}

/// One term `A(t) g(x)` of an eigenfunction sum, with `A(t) = a e^{-decay t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenTerm {
    pub a: f64,
    pub decay: f64,
    pub mu: f64,
    pub g: Eigenfunction,
}

impl EigenTerm {
    fn amplitude(&self, t: f64) -> f64 {
        self.a * (-self.decay * t).exp()
    }
}

/// Weight `f(t, s)` of the weighted heat kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weight {
    /// `e^{-α(t+s)}`.
    Exponential { alpha: f64 },
    /// `e^{-αt - βs}` with `0 < β ≤ α`.
    TwoRate { alpha: f64, beta: f64 },
}

impl Weight {
    pub fn rates(&self) -> (f64, f64) {
        match *self {
            Weight::Exponential { alpha } => (alpha, alpha),
            Weight::TwoRate { alpha, beta } => (alpha, beta),
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        let (alpha, beta) = self.rates();
        (-alpha * t - beta * s).exp()
    }

    fn validate(&self) -> Result<()> {
        let (alpha, beta) = self.rates();
        if !(beta > 0.0 && alpha >= beta && alpha.is_finite()) {
            return Err(invalid(format!("weight needs 0 < beta <= alpha, got alpha = {alpha}, beta = {beta}")));
        }
        // Randomized check of f(t, u - s) <= f(t - s, u) for 0 <= s <= min(t, u).
        let mut rng = stream_rng(0x5eed_f00d, 0);
        for _ in 0..256 {
            let t = 10.0 * rng.random::<f64>();
            let u = 10.0 * rng.random::<f64>();
            let s = t.min(u) * rng.random::<f64>();
            let (lhs, rhs) = (self.eval(t, u - s), self.eval(t - s, u));
            if lhs > rhs * (1.0 + 1e-12) {
                return Err(invalid(format!("weight violates f(t,u-s) <= f(t-s,u) at t={t}, u={u}, s={s}")));
            }
        }
        Ok(())
    }
}

/// Non-negative killing rate `V`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KillingRate {
    Constant(f64),
    /// `V(x) = ℓ x` on a non-negative state space.
    Linear(f64),
    /// `V(x) = q |x|²`.
    Quadratic(f64),
}

impl KillingRate {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            KillingRate::Constant(r) => r,
            KillingRate::Linear(l) => l * x[0],
            KillingRate::Quadratic(q) => q * x.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    fn coefficient(&self) -> f64 {
        match *self {
            KillingRate::Constant(v) | KillingRate::Linear(v) | KillingRate::Quadratic(v) => v,
        }
    }
}

/// The symmetric kernels `u` of the trace construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceFamily {
    /// `e^{-|x|²/(2t)} / (2πt)^{d/2}`.
    GaussHeat,
    /// `(tα²+1)^{-d/2} e^{-α²|x|²/(2(tα²+1))}`.
    QuadGauss { alpha: f64 },
    CauchySym { theta: f64 },
    VarianceGamma { eta: f64, gamma: f64 },
    Nig { eta: f64, gamma: f64 },
}

impl TraceFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            TraceFamily::GaussHeat => "gauss_heat",
            TraceFamily::QuadGauss { .. } => "quad_gauss",
            TraceFamily::CauchySym { .. } => "cauchy_sym",
            TraceFamily::VarianceGamma { .. } => "variance_gamma",
            TraceFamily::Nig { .. } => "nig",
        }
    }

    /// The driver under which this `u` has the propagation property.
    pub fn driver(&self, dim: usize) -> ProcessSpec {
        match *self {
            TraceFamily::GaussHeat | TraceFamily::QuadGauss { .. } => ProcessSpec::BrownianDrift { kappa: vec![0.0; dim] },
            TraceFamily::CauchySym { theta } => ProcessSpec::Cauchy {
                theta,
                gamma: vec![0.0; dim],
            },
            TraceFamily::VarianceGamma { eta, gamma } => ProcessSpec::VarianceGamma { eta, gamma_rate: gamma },
            TraceFamily::Nig { eta, gamma } => ProcessSpec::NormalInverseGaussian { eta, gamma_rate: gamma },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TraceFamily::GaussHeat => true,
            TraceFamily::QuadGauss { alpha } => alpha > 0.0 && alpha.is_finite(),
            TraceFamily::CauchySym { theta } => theta > 0.0 && theta.is_finite(),
            TraceFamily::VarianceGamma { eta, gamma } | TraceFamily::Nig { eta, gamma } => {
                eta > 0.0 && gamma > 0.0 && eta.is_finite() && gamma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid trace family parameters {self:?}")))
        }
    }

    /// `u(t, x)` for `t > 0`.
    pub fn u(&self, t: f64, x: &[f64]) -> Result<f64> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(KernelError::Domain(format!("u needs t > 0, got {t}")));
        }
        let d = x.len() as f64;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            TraceFamily::GaussHeat => Ok((-0.5 * d * (2.0 * PI * t).ln() - r2 / (2.0 * t)).exp()),
            TraceFamily::QuadGauss { alpha } => {
                let s = t * alpha * alpha + 1.0;
                Ok((-0.5 * d * s.ln() - alpha * alpha * r2 / (2.0 * s)).exp())
            }
            TraceFamily::CauchySym { theta } => Ok(cauchy_density(theta, d, t, r2)),
            TraceFamily::VarianceGamma { eta, gamma } => {
                one_dim(x)?;
                vg_density(eta, gamma, t, x[0])
            }
            TraceFamily::Nig { eta, gamma } => {
                one_dim(x)?;
                nig_density(eta, gamma, t, x[0])
            }
        }
    }

    pub fn u0(&self, t: f64, dim: usize) -> Result<f64> {
        self.u(t, &vec![0.0; dim])
    }
}

fn one_dim(x: &[f64]) -> Result<()> {
    if x.len() == 1 {
        Ok(())
    } else {
        Err(KernelError::Domain(format!("family is one-dimensional, state has dimension {}", x.len())))
    }
}

/// Variance-gamma density at time `t`:
/// `√(2/π) γ^{k} (2γ)^{-ν/2} |x|^ν K_ν(|x|√(2γ)) / Γ(k)` with `k = ηt`, `ν = k - ½`.
pub fn vg_density(eta: f64, gamma: f64, t: f64, x: f64) -> Result<f64> {
    let k = eta * t;
    let nu = k - 0.5;
    if x == 0.0 {
        if nu <= 0.0 {
            return Err(KernelError::Domain(format!(
                "variance-gamma kernel is infinite at 0 unless eta*t > 1/2 (eta*t = {k})"
            )));
        }
        return Ok((0.5 * (gamma / (2.0 * PI)).ln() + ln_gamma(nu) - ln_gamma(k)).exp());
    }
    let ax = x.abs();
    let z = ax * (2.0 * gamma).sqrt();
    let ln_u = 0.5 * (2.0 / PI).ln() + k * gamma.ln() - ln_gamma(k) - 0.5 * nu * (2.0 * gamma).ln()
        + nu * ax.ln()
        + ln_bessel_k(nu, z)?;
    Ok(ln_u.exp())
}

/// Normal-inverse-Gaussian density at time `t`:
/// `ηt e^{2ηt√(πγ)} √(2/π) √(γ/β) K_1(2√(γβ))` with `β = x²/2 + πη²t²`.
pub fn nig_density(eta: f64, gamma: f64, t: f64, x: f64) -> Result<f64> {
    let et = eta * t;
    let beta = 0.5 * x * x + PI * et * et;
    let w = 2.0 * (gamma * beta).sqrt();
    let ln_u = et.ln() + 2.0 * et * (PI * gamma).sqrt() + 0.5 * (2.0 / PI).ln() + 0.5 * (gamma / beta).ln()
        + ln_bessel_k(1.0, w)?;
    Ok(ln_u.exp())
}

/// A kernel value: exact, or a Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evaluation {
    Exact(f64),
    Estimated(MCEstimate),
}

impl Evaluation {
    pub fn value(&self) -> f64 {
        match self {
            Evaluation::Exact(v) => *v,
            Evaluation::Estimated(e) => e.mean,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Evaluation::Exact(_))
    }
}

/// Default trapezoid step for killed-kernel path integrals (years).
pub const DEFAULT_GRID_STEP: f64 = 1.0 / 256.0;

#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    /// `p(t, x)` = density of `X_t` at `x` started from 0.
    LevyDensity { process: ProcessSpec },
    /// `p(t, x) = E[h(X^x_t)]`.
    Expectation {
        h: HFunction,
        process: ProcessSpec,
        estimator: Estimator,
    },
    /// `p(t, x) = Σ a_i E[exp(μ_i X^x_t)]` for a CIR driver.
    AffineExpSum { a: Vec<f64>, mu: Vec<f64>, cir: CirParams },
    /// `p(t, x) = 1 + e^{μt} g(x)`.
    Eigen { mu: f64, g: Eigenfunction },
    /// `v(t, x) = Σ A_i(t) g_i(x)`.
    EigenSum { terms: Vec<EigenTerm> },
    /// `q(t, x) = ∫_0^∞ p(s, x) f(t, s) ds`.
    Weighted {
        base: Box<KernelSpec>,
        weight: Weight,
        quadrature: QuadratureSpec,
    },
    /// `q(t, x) = E[exp(-∫_0^t V(X^x_s) ds)]`.
    Killed {
        v: KillingRate,
        process: ProcessSpec,
        estimator: Estimator,
        grid_step: f64,
    },
    /// State price kernel `u(λ+t, x) + c·u(λ+t, 0)`.
    Trace { family: TraceFamily, lambda: f64, c: f64 },
}

impl KernelSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            KernelSpec::LevyDensity { .. } => "levy_density",
            KernelSpec::Expectation { .. } => "expectation",
            KernelSpec::AffineExpSum { .. } => "affine_cir",
            KernelSpec::Eigen { .. } => "eigen",
            KernelSpec::EigenSum { .. } => "eigen_sum",
            KernelSpec::Weighted { .. } => "weighted",
            KernelSpec::Killed { .. } => "killed",
            KernelSpec::Trace { .. } => "trace",
        }
    }

    /// Whether the family guarantees non-negative short rates.
    pub fn positive_rates(&self) -> bool {
        matches!(
            self,
            KernelSpec::Weighted { .. }
                | KernelSpec::Killed { .. }
                | KernelSpec::Trace { .. }
                | KernelSpec::Eigen { .. }
                | KernelSpec::EigenSum { .. }
        )
    }

    /// Whether `eval` is deterministic (no Monte-Carlo estimator involved).
    pub fn is_exact(&self) -> bool {
        match self {
            KernelSpec::Expectation { estimator, .. } | KernelSpec::Killed { estimator, .. } => {
                !matches!(estimator, Estimator::MonteCarlo { .. })
            }
            KernelSpec::Weighted { base, .. } => base.is_exact(),
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::LevyDensity { process } => {
                process.validate()?;
                if !matches!(process, ProcessSpec::BrownianDrift { .. } | ProcessSpec::Cauchy { .. }) {
                    return Err(KernelError::Unsupported(format!(
                        "no closed-form density for {}",
                        process.tag()
                    )));
                }
                Ok(())
            }
            KernelSpec::Expectation { h, process, estimator } => {
                process.validate()?;
                h.validate(process.dim())?;
                if let Estimator::MonteCarlo { n, .. } = estimator {
                    if *n < 2 {
                        return Err(invalid("Monte-Carlo estimator needs n >= 2"));
                    }
                }
                if *estimator == Estimator::ClosedForm && expectation_closed_form(h, process, 1.0, &vec![0.0; process.dim()]).is_none() {
                    return Err(KernelError::Unsupported(format!(
                        "no closed form for this h under {}",
                        process.tag()
                    )));
                }
                if *estimator == Estimator::Quadrature
                    && !(process.dim() == 1
                        && matches!(
                            process,
                            ProcessSpec::BrownianDrift { .. } | ProcessSpec::OrnsteinUhlenbeck { .. } | ProcessSpec::Cauchy { .. }
                        ))
                {
                    return Err(KernelError::Unsupported(
                        "quadrature needs a one-dimensional driver with a transition density".into(),
                    ));
                }
                Ok(())
            }
            KernelSpec::AffineExpSum { a, mu, cir } => {
                cir.validate()?;
                if a.is_empty() || a.len() != mu.len() {
                    return Err(invalid("affine sum needs matching non-empty a and mu"));
                }
                if a.iter().any(|v| !(*v > 0.0)) || mu.iter().any(|v| !(*v <= 0.0)) {
                    return Err(invalid("affine sum needs a_i > 0 and mu_i <= 0"));
                }
                Ok(())
            }
            KernelSpec::Eigen { mu, .. } => {
                if !(*mu < 0.0) {
                    return Err(invalid(format!("eigenvalue must be negative, got {mu}")));
                }
                Ok(())
            }
            KernelSpec::EigenSum { terms } => {
                if terms.is_empty() {
                    return Err(invalid("eigen sum needs at least one term"));
                }
                for term in terms {
                    if !(term.a > 0.0 && term.decay >= 0.0 && term.mu < 0.0) {
                        return Err(invalid(format!("eigen term needs a > 0, decay >= 0, mu < 0 (got {term:?})")));
                    }
                }
                Ok(())
            }
            KernelSpec::Weighted {
                base,
                weight,
                quadrature,
            } => {
                weight.validate()?;
                quadrature.validate()?;
                base.validate()?;
                if !base.is_exact()
                    || !matches!(
                        **base,
                        KernelSpec::LevyDensity { .. }
                            | KernelSpec::Expectation { .. }
                            | KernelSpec::AffineExpSum { .. }
                            | KernelSpec::Eigen { .. }
                    )
                {
                    return Err(KernelError::Unsupported(
                        "weighted kernels need an exact propagation kernel as base".into(),
                    ));
                }
                Ok(())
            }
            KernelSpec::Killed {
                v,
                process,
                estimator,
                grid_step,
            } => {
                process.validate()?;
                if !(v.coefficient() >= 0.0 && v.coefficient().is_finite()) {
                    return Err(invalid("killing rate must be non-negative"));
                }
                if matches!(v, KillingRate::Linear(_))
                    && !matches!(
                        process,
                        ProcessSpec::Cir(_) | ProcessSpec::GammaSubordinator { .. } | ProcessSpec::IgSubordinator { .. }
                    )
                {
                    return Err(invalid("linear killing rate needs a non-negative driver"));
                }
                if !(*grid_step > 0.0) {
                    return Err(invalid("grid step must be positive"));
                }
                match estimator {
                    Estimator::ClosedForm if killed_closed_form(v, process, 1.0, &vec![0.5; process.dim()]).is_none() => {
                        Err(KernelError::Unsupported(format!(
                            "no closed form for this killing rate under {}",
                            process.tag()
                        )))
                    }
                    Estimator::Quadrature => Err(KernelError::Unsupported("killed kernels use closed form or MC".into())),
                    Estimator::MonteCarlo { n, .. } if *n < 2 => Err(invalid("Monte-Carlo estimator needs n >= 2")),
                    _ => Ok(()),
                }
            }
            KernelSpec::Trace { family, lambda, c } => {
                family.validate()?;
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(invalid(format!("lambda must be positive, got {lambda}")));
                }
                if !(*c > 2.0 && c.is_finite()) {
                    return Err(invalid(format!("c must exceed 2, got {c}")));
                }
                if let TraceFamily::VarianceGamma { eta, .. } = family {
                    if eta * lambda <= 0.5 {
                        return Err(invalid(format!(
                            "variance-gamma trace needs eta*lambda > 1/2 (got {})",
                            eta * lambda
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// `p(t, x)` (for trace kernels, the full state price kernel).
    pub fn eval(&self, t: f64, x: &State) -> Result<Evaluation> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(KernelError::Domain(format!("time must be non-negative, got {t}")));
        }
        let v = match self {
            KernelSpec::Trace { family, lambda, c } => {
                Evaluation::Exact(family.u(lambda + t, x)? + c * family.u0(lambda + t, x.dim())?)
            }
            KernelSpec::EigenSum { terms } => {
                Evaluation::Exact(terms.iter().map(|term| term.amplitude(t) * term.g.eval(x)).sum())
            }
            KernelSpec::Weighted {
                base,
                weight,
                quadrature,
            } => Evaluation::Exact(weighted_eval(base, *weight, t, x, quadrature)?),
            KernelSpec::Killed {
                v,
                process,
                estimator,
                grid_step,
            } => killed_eval(v, process, t, x, *estimator, *grid_step)?,
            _ => return self.propagating_eval(t, x),
        };
        Ok(v)
    }

    /// The part of the kernel that has the propagation property, `p(t, x)`;
    /// for trace kernels `u(λ+t, x)`.
    pub fn propagating_eval(&self, t: f64, x: &State) -> Result<Evaluation> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(KernelError::Domain(format!("time must be non-negative, got {t}")));
        }
        let v = match self {
            KernelSpec::LevyDensity { process } => {
                if t == 0.0 {
                    return Err(KernelError::Domain("a density kernel is singular at t = 0".into()));
                }
                let origin = vec![0.0; process.dim()];
                Evaluation::Exact(process.transition_density(t, &origin, x)?)
            }
            KernelSpec::Expectation { h, process, estimator } => expectation_eval(h, process, *estimator, t, x)?,
            KernelSpec::AffineExpSum { a, mu, cir } => {
                check_dim(x, 1)?;
                let mut sum = 0.0;
                for (ai, mi) in a.iter().zip(mu) {
                    sum += ai * cir.exp_transform(*mi, t, x[0])?;
                }
                Evaluation::Exact(sum)
            }
            KernelSpec::Eigen { mu, g } => Evaluation::Exact(1.0 + (mu * t).exp() * g.eval(x)),
            KernelSpec::Trace { family, lambda, .. } => Evaluation::Exact(family.u(lambda + t, x)?),
            other => {
                return Err(KernelError::Unsupported(format!(
                    "{} kernels do not have the propagation property",
                    other.tag()
                )))
            }
        };
        Ok(v)
    }
}

fn check_dim(x: &[f64], d: usize) -> Result<()> {
    if x.len() == d {
        Ok(())
    } else {
        Err(ProcessError::DimensionMismatch {
            expected: d,
            got: x.len(),
        }
        .into())
    }
}

fn expectation_closed_form(h: &HFunction, process: &ProcessSpec, t: f64, x: &[f64]) -> Option<f64> {
    match h {
        HFunction::Constant(a) => Some(*a),
        HFunction::GaussianBump {
            amplitude,
            center,
            width,
        } => {
            let w2 = width * width;
            let (means, var): (Vec<f64>, f64) = match process {
                ProcessSpec::BrownianDrift { kappa } => (x.iter().zip(kappa).map(|(xi, k)| xi - k * t).collect(), t),
                ProcessSpec::OrnsteinUhlenbeck { mu_speed, .. } => {
                    if t == 0.0 {
                        (x.to_vec(), 0.0)
                    } else {
                        let (growth, var) = ou_moments(*mu_speed, t);
                        (x.iter().map(|xi| xi * growth).collect(), var)
                    }
                }
                _ => return None,
            };
            let s = w2 + var;
            let mut value = *amplitude;
            for (m, c) in means.iter().zip(center) {
                value *= (w2 / s).sqrt() * (-(m - c).powi(2) / (2.0 * s)).exp();
            }
            Some(value)
        }
    }
}

fn expectation_eval(h: &HFunction, process: &ProcessSpec, estimator: Estimator, t: f64, x: &State) -> Result<Evaluation> {
    process.check_state(x)?;
    if t == 0.0 {
        return Ok(Evaluation::Exact(h.eval(x)));
    }
    match estimator {
        Estimator::ClosedForm => expectation_closed_form(h, process, t, x)
            .map(Evaluation::Exact)
            .ok_or_else(|| KernelError::Unsupported(format!("no closed form under {}", process.tag()))),
        Estimator::Quadrature => {
            let spec = QuadratureSpec::default();
            let integral = integrate(
                |y| h.eval(&[y]) * process.transition_density(t, x, &[y]).unwrap_or(0.0),
                Domain::Whole,
                &spec,
            )?;
            Ok(Evaluation::Exact(integral.value))
        }
        Estimator::MonteCarlo { n, seed } => Ok(Evaluation::Estimated(mc::estimate(
            |s| h.eval(s),
            process,
            x,
            t,
            n,
            seed,
            Execution::default(),
        )?)),
    }
}

/// `p(0, x)` of a weighted-kernel base, needed for its short rate.
fn base_at_zero(base: &KernelSpec, x: &State) -> Result<f64> {
    match base {
        KernelSpec::LevyDensity { .. } => {
            if x.iter().all(|&v| v == 0.0) {
                Err(KernelError::Domain("density base is singular at (0, 0)".into()))
            } else {
                Ok(0.0)
            }
        }
        other => Ok(other.propagating_eval(0.0, x)?.value()),
    }
}

/// `∫_from^∞ p(s, x) e^{-βs} ds`.
fn weighted_tail(base: &KernelSpec, beta: f64, from: f64, x: &State, spec: &QuadratureSpec) -> Result<f64> {
    // Errors inside the integrand surface as NaN, which the integrator rejects.
    let integrand = |s: f64| {
        if s <= 0.0 {
            return base_at_zero(base, x).unwrap_or(f64::NAN);
        }
        match base.propagating_eval(s, x) {
            Ok(v) => v.value() * (-beta * s).exp(),
            Err(_) => f64::NAN,
        }
    };
    Ok(integrate(integrand, Domain::UpperInfinite(from), spec)?.value)
}

/// `q(t, x) = ∫_0^∞ p(s, x) f(t, s) ds`.
pub fn weighted_eval(base: &KernelSpec, weight: Weight, t: f64, x: &State, quadrature: &QuadratureSpec) -> Result<f64> {
    let (alpha, beta) = weight.rates();
    let value = (-alpha * t).exp() * weighted_tail(base, beta, 0.0, x, quadrature)?;
    if !(value > 0.0 && value.is_finite()) {
        return Err(KernelError::Domain(format!("weighted kernel is {value} at t = {t}, x = {:?}", x.to_vec())));
    }
    Ok(value)
}

fn killed_closed_form(v: &KillingRate, process: &ProcessSpec, t: f64, x: &[f64]) -> Option<f64> {
    match (*v, process) {
        (KillingRate::Constant(r), _) => Some((-r * t).exp()),
        (KillingRate::Linear(l), ProcessSpec::Cir(cir)) => Some(cir.integrated_exp(l, t, x[0])),
        (KillingRate::Quadratic(q), ProcessSpec::BrownianDrift { kappa }) if kappa.iter().all(|&k| k == 0.0) => {
            // Cameron–Martin: E exp(-q ∫ W_s² ds) for W started at x.
            let g = (2.0 * q).sqrt();
            let gt = g * t;
            let ln_cosh = gt + (-2.0 * gt).exp().ln_1p() - std::f64::consts::LN_2;
            let tanh = gt.tanh();
            Some(x.iter().map(|xi| (-0.5 * ln_cosh - 0.5 * xi * xi * g * tanh).exp()).product())
        }
        _ => None,
    }
}

/// Simulates one path of `X` on `[0, t]` and returns the end state,
/// `∫_0^t V(X_s) ds` by the trapezoid rule, and `V(X_t)`.
pub(crate) fn killed_path<R: Rng + ?Sized>(
    v: &KillingRate,
    process: &ProcessSpec,
    t: f64,
    x: &State,
    step: f64,
    rng: &mut R,
) -> (State, f64, f64) {
    let m = (t / step).ceil().max(1.0) as usize;
    let dt = t / m as f64;
    let mut state = x.clone();
    let mut v_prev = v.eval(&state);
    let mut integral = 0.0;
    for _ in 0..m {
        state = process.sample_unchecked(&state, dt, rng);
        let v_next = v.eval(&state);
        integral += 0.5 * dt * (v_prev + v_next);
        v_prev = v_next;
    }
    (state, integral, v_prev)
}

/// `q(t, x) = E[exp(-∫_0^t V(X^x_s) ds)]`.
pub fn killed_eval(
    v: &KillingRate,
    process: &ProcessSpec,
    t: f64,
    x: &State,
    estimator: Estimator,
    grid_step: f64,
) -> Result<Evaluation> {
    process.check_state(x)?;
    if t == 0.0 {
        return Ok(Evaluation::Exact(1.0));
    }
    match estimator {
        Estimator::MonteCarlo { n, seed } => {
            if let KillingRate::Constant(r) = v {
                return Ok(Evaluation::Exact((-r * t).exp()));
            }
            let est = estimate_with(n, seed, Execution::default(), |rng| {
                Ok((-killed_path(v, process, t, x, grid_step, rng).1).exp())
            })?;
            Ok(Evaluation::Estimated(est))
        }
        _ => killed_closed_form(v, process, t, x)
            .map(Evaluation::Exact)
            .ok_or_else(|| KernelError::Unsupported(format!("no closed-form killed kernel under {}", process.tag()))),
    }
}

/// `E[V(X_t) e^{-∫_0^t V}]`, i.e. `-∂_t q(t, x)`, by simulation on the same paths as
/// [`killed_eval`].
fn killed_rate_numerator(v: &KillingRate, process: &ProcessSpec, t: f64, x: &State, n: usize, seed: u64, step: f64) -> Result<MCEstimate> {
    Ok(estimate_with(n, seed, Execution::default(), |rng| {
        let (_, integral, v_end) = killed_path(v, process, t, x, step, rng);
        Ok(v_end * (-integral).exp())
    })?)
}

/// A kernel bound to its driver and initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kernel: KernelSpec,
    pub process: ProcessSpec,
    pub x0: State,
}

/// Samples used for the construction-time eigenfunction check.
const EIGEN_CHECK_SAMPLES: usize = 20_000;

impl Model {
    pub fn new(kernel: KernelSpec, process: ProcessSpec, x0: State) -> Result<Self> {
        kernel.validate()?;
        process.validate()?;
        process.check_state(&x0)?;
        check_compatibility(&kernel, &process)?;
        let model = Model { kernel, process, x0 };
        model.check_eigenfunctions()?;
        Ok(model)
    }

    /// Model for a density kernel, driven by the reflected process so that
    /// `E[p(t, x - X_s)] = p(t+s, x)` is sampled directly.
    pub fn levy_density(process: ProcessSpec, x0: State) -> Result<Self> {
        let driver = process.reflected()?;
        Model::new(KernelSpec::LevyDensity { process }, driver, x0)
    }

    pub fn trace_mode(&self) -> bool {
        matches!(self.kernel, KernelSpec::Trace { .. })
    }

    pub fn dim(&self) -> usize {
        self.process.dim()
    }

    fn check_eigenfunctions(&self) -> Result<()> {
        let pairs: Vec<(f64, &Eigenfunction)> = match &self.kernel {
            KernelSpec::Eigen { mu, g } => vec![(*mu, g)],
            KernelSpec::EigenSum { terms } => terms.iter().map(|t| (t.mu, &t.g)).collect(),
            _ => return Ok(()),
        };
        let d = self.dim();
        for (k, (mu, g)) in pairs.into_iter().enumerate() {
            if let Eigenfunction::Exponential { c } = g {
                if c.len() != d {
                    return Err(KernelError::Incompatible(format!("eigenfunction has dimension {}, driver {d}", c.len())));
                }
            }
            if let Some(exact) = g.analytic_eigenvalue(&self.process) {
                if (exact - mu).abs() > 1e-9 * exact.abs().max(1.0) {
                    return Err(KernelError::Incompatible(format!(
                        "eigenvalue {mu} does not match {exact} for this driver"
                    )));
                }
            }
            // Spot-check E[g(X^x_t)] = e^{μt} g(x) at five random points.
            let mut rng = stream_rng(0xe16e_0000 + k as u64, 1);
            let threshold = mc::bonferroni_threshold(5).max(5.0);
            for i in 0..5 {
                let t = 0.1 + 1.4 * rng.random::<f64>();
                let x: State = (0..d)
                    .map(|_| {
                        let u = rng.random::<f64>();
                        if matches!(self.process, ProcessSpec::Cir(_)) {
                            u
                        } else {
                            2.0 * u - 1.0
                        }
                    })
                    .collect::<Vec<_>>()
                    .into();
                let est = mc::estimate(|s| g.eval(s), &self.process, &x, t, EIGEN_CHECK_SAMPLES, 0xe16e + i, Execution::default())?;
                let z = est.z_score((mu * t).exp() * g.eval(&x));
                debug!("eigen check t={t} x={:?} z={z}", x.to_vec());
                if !(z.abs() <= threshold) {
                    return Err(KernelError::EigenCheckFailed { t, x: x.to_vec(), z });
                }
            }
        }
        Ok(())
    }

    /// State price density `π_t` at `X_t = x`. Killed kernels need the
    /// accumulated `∫_0^t V(X_s) ds` of the path.
    pub fn spd(&self, t: f64, x: &State, path_functional: Option<f64>) -> Result<f64> {
        let base = self.kernel.eval(t, x)?.value();
        match &self.kernel {
            KernelSpec::Killed { .. } => {
                let integral = path_functional.ok_or(KernelError::MissingPathFunctional)?;
                Ok(base * (-integral).exp())
            }
            _ => Ok(base),
        }
    }

    /// `E[π_T | X_t = x]`, for killed kernels per unit of `exp(-∫_0^t V)`.
    pub fn conditional_expectation(&self, t: f64, maturity: f64, x: &State) -> Result<Evaluation> {
        if !(maturity >= t && t >= 0.0) {
            return Err(KernelError::Domain(format!("need 0 <= t <= T (t = {t}, T = {maturity})")));
        }
        self.conditional_expectation_unchecked(t, maturity, x)
    }

    /// [`Self::conditional_expectation`] without the `T >= t` check, so that
    /// difference quotients may step slightly below `t`.
    pub(crate) fn conditional_expectation_unchecked(&self, t: f64, maturity: f64, x: &State) -> Result<Evaluation> {
        let tau = maturity - t;
        let v = match &self.kernel {
            KernelSpec::Trace { family, lambda, c } => Evaluation::Exact(
                family.u(lambda + maturity + tau, x)? + c * family.u0(lambda + maturity, x.dim())?,
            ),
            KernelSpec::Eigen { mu, g } => Evaluation::Exact(1.0 + (mu * maturity).exp() * (mu * tau).exp() * g.eval(x)),
            KernelSpec::EigenSum { terms } => Evaluation::Exact(
                terms
                    .iter()
                    .map(|term| term.amplitude(maturity) * (term.mu * tau).exp() * term.g.eval(x))
                    .sum(),
            ),
            KernelSpec::AffineExpSum { a, mu, cir } => {
                check_dim(x, 1)?;
                // Riccati flow: condition on X_T, then propagate the exponent back to t.
                let mut sum = 0.0;
                for (ai, mi) in a.iter().zip(mu) {
                    let (a1, b1) = cir.riccati(maturity, *mi);
                    let (a2, b2) = cir.riccati(tau, b1);
                    sum += ai * (a1 + a2 + b2 * x[0]).exp();
                }
                Evaluation::Exact(sum)
            }
            KernelSpec::Weighted {
                base,
                weight,
                quadrature,
            } => {
                let (alpha, beta) = weight.rates();
                let tail = weighted_tail(base, beta, tau, x, quadrature)?;
                Evaluation::Exact((-alpha * maturity + beta * tau).exp() * tail)
            }
            KernelSpec::Killed {
                v,
                process,
                estimator,
                grid_step,
            } => killed_eval(v, process, maturity + tau, x, *estimator, *grid_step)?,
            KernelSpec::LevyDensity { .. } | KernelSpec::Expectation { .. } => self.kernel.propagating_eval(maturity + tau, x)?,
        };
        Ok(v)
    }

    /// Short rate `-∂_T log E[π_T | X_t = x]` at `T = t`, for the kernels where it
    /// is available without numerical differentiation.
    pub(crate) fn analytic_short_rate(&self, t: f64, x: &State) -> Result<Option<f64>> {
        match &self.kernel {
            KernelSpec::Weighted {
                base,
                weight,
                quadrature,
            } => {
                // d/dT E[q(T, X_T) | X_t] at T = t, integrated by parts.
                let (alpha, beta) = weight.rates();
                let q = weighted_eval(base, *weight, t, x, quadrature)?;
                let p0 = base_at_zero(base, x)?;
                Ok(Some((-alpha * t).exp() * p0 / q + (alpha - beta)))
            }
            KernelSpec::Killed {
                v,
                process,
                estimator: Estimator::MonteCarlo { n, seed },
                grid_step,
            } if t > 0.0 && !matches!(v, KillingRate::Constant(_)) => {
                let q = killed_eval(v, process, t, x, Estimator::MonteCarlo { n: *n, seed: *seed }, *grid_step)?;
                let num = killed_rate_numerator(v, process, t, x, *n, *seed, *grid_step)?;
                // E[π_T | X_t] = q(2T - t, x), so the rate is twice -∂_t q / q.
                Ok(Some(2.0 * num.mean / q.value()))
            }
            _ => Ok(None),
        }
    }
}

fn check_compatibility(kernel: &KernelSpec, process: &ProcessSpec) -> Result<()> {
    let mismatch = |what: &str| Err(KernelError::Incompatible(what.to_string()));
    match kernel {
        KernelSpec::LevyDensity { process: p } => {
            if p.reflected()? != *process {
                return mismatch("density kernels are driven by the reflected process");
            }
        }
        KernelSpec::Expectation { process: p, .. } | KernelSpec::Killed { process: p, .. } => {
            if p != process {
                return mismatch("kernel process and model driver differ");
            }
        }
        KernelSpec::AffineExpSum { cir, .. } => {
            if *process != ProcessSpec::Cir(*cir) {
                return mismatch("affine sums need the same CIR driver");
            }
        }
        KernelSpec::Trace { family, .. } => {
            let expected = family.driver(process.dim());
            if *process != expected {
                return Err(KernelError::Incompatible(format!(
                    "{} trace needs driver {expected:?}, got {process:?}",
                    family.tag()
                )));
            }
            if matches!(family, TraceFamily::VarianceGamma { .. } | TraceFamily::Nig { .. }) && process.dim() != 1 {
                return mismatch("VG and NIG trace families are one-dimensional");
            }
        }
        KernelSpec::Weighted { base, .. } => {
            let own = match base.as_ref() {
                KernelSpec::LevyDensity { process: p } => Some(p.reflected()?),
                KernelSpec::Expectation { process: p, .. } => Some(p.clone()),
                KernelSpec::AffineExpSum { cir, .. } => Some(ProcessSpec::Cir(*cir)),
                _ => None,
            };
            if let Some(own) = own {
                if own != *process {
                    return mismatch("weighted base and model driver differ");
                }
            }
        }
        KernelSpec::Eigen { .. } | KernelSpec::EigenSum { .. } => {}
    }
    Ok(())
}

/// Outcome of one propagation check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationReport {
    pub lhs: MCEstimate,
    pub rhs: f64,
    pub z_score: f64,
}

/// Compares the MC estimate of `E[p(t, X^x_s)]` with `p(t+s, x)`.
#[allow(clippy::too_many_arguments)]
pub fn check_propagation(
    kernel: &KernelSpec,
    process: &ProcessSpec,
    t: f64,
    s: f64,
    x: &State,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<PropagationReport> {
    if !(t > 0.0 && s > 0.0) {
        return Err(KernelError::Domain(format!("need t, s > 0 (t = {t}, s = {s})")));
    }
    let rhs = match kernel.propagating_eval(t + s, x)? {
        Evaluation::Exact(v) => v,
        Evaluation::Estimated(_) => {
            return Err(KernelError::Unsupported("propagation checks need exact kernel values".into()))
        }
    };
    process.check_state(x)?;
    let lhs = estimate_with(n, seed, exec, |rng| {
        let y = process.sample_unchecked(x, s, rng);
        kernel
            .propagating_eval(t, &y)
            .map(|e| e.value())
            .map_err(|e| McError::Sample(e.to_string()))
    })?;
    Ok(PropagationReport {
        lhs,
        rhs,
        z_score: lhs.z_score(rhs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn x1(v: f64) -> State {
        State::scalar(v)
    }

    #[test]
    fn constant_expectation_is_one() {
        let k = KernelSpec::Expectation {
            h: HFunction::Constant(1.0),
            process: ProcessSpec::brownian(vec![0.3]).unwrap(),
            estimator: Estimator::ClosedForm,
        };
        for t in [0.0, 0.5, 7.0] {
            assert_eq!(k.eval(t, &x1(1.3)).unwrap(), Evaluation::Exact(1.0));
        }
    }

    #[test]
    fn gauss_heat_at_origin() {
        let f = TraceFamily::GaussHeat;
        assert_relative_eq!(f.u(0.7, &[0.0]).unwrap(), 1.0 / (2.0 * PI * 0.7).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn vg_origin_value() {
        let (eta, gamma, t) = (1.7, 0.8, 1.3);
        let expected = (gamma / (2.0 * PI)).sqrt() * (ln_gamma(eta * t - 0.5) - ln_gamma(eta * t)).exp();
        assert_relative_eq!(vg_density(eta, gamma, t, 0.0).unwrap(), expected, max_relative = 1e-14);
        assert!(vg_density(0.2, 1.0, 1.0, 0.0).is_err());
        // The Bessel form approaches the origin value continuously.
        assert_relative_eq!(vg_density(eta, gamma, t, 1e-7).unwrap(), expected, max_relative = 1e-6);
    }

    #[test]
    fn nig_origin_value() {
        let (eta, gamma, t) = (0.9, 1.4, 0.6);
        let z = 2.0 * eta * t * (PI * gamma).sqrt();
        let expected = z.exp() * (2.0 * gamma).sqrt() / PI * crate::specfun::bessel_k(1.0, z).unwrap();
        assert_relative_eq!(nig_density(eta, gamma, t, 0.0).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn spd_examples() {
        let bm = ProcessSpec::brownian(vec![1.0]).unwrap();
        let eigen = Model::new(
            KernelSpec::Eigen {
                mu: 0.125 - 0.5,
                g: Eigenfunction::Exponential { c: vec![0.5] },
            },
            bm,
            x1(0.0),
        )
        .unwrap();
        assert_eq!(eigen.spd(0.0, &x1(0.0), None).unwrap(), 2.0);

        let trace = Model::new(
            KernelSpec::Trace {
                family: TraceFamily::GaussHeat,
                lambda: 1.0,
                c: 3.0,
            },
            ProcessSpec::brownian(vec![0.0]).unwrap(),
            x1(0.0),
        )
        .unwrap();
        assert_relative_eq!(trace.spd(0.0, &x1(0.0), None).unwrap(), 4.0 / (2.0 * PI).sqrt(), max_relative = 1e-15);

        let killed = Model::new(
            KernelSpec::Killed {
                v: KillingRate::Constant(0.0),
                process: ProcessSpec::brownian(vec![0.0]).unwrap(),
                estimator: Estimator::ClosedForm,
                grid_step: DEFAULT_GRID_STEP,
            },
            ProcessSpec::brownian(vec![0.0]).unwrap(),
            x1(0.0),
        )
        .unwrap();
        assert_eq!(killed.spd(2.0, &x1(0.4), Some(0.0)).unwrap(), 1.0);
        assert_eq!(killed.spd(2.0, &x1(0.4), None), Err(KernelError::MissingPathFunctional));
    }

    #[test]
    fn weighted_constant_base() {
        let alpha = 0.7;
        let base = KernelSpec::Expectation {
            h: HFunction::Constant(1.0),
            process: ProcessSpec::brownian(vec![0.0]).unwrap(),
            estimator: Estimator::ClosedForm,
        };
        let q = weighted_eval(&base, Weight::Exponential { alpha }, 1.5, &x1(0.2), &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(q, (-alpha * 1.5f64).exp() / alpha, max_relative = 1e-10);
    }

    #[test]
    fn killed_constant_rate() {
        let p = ProcessSpec::brownian(vec![0.0]).unwrap();
        let v = killed_eval(&KillingRate::Constant(0.03), &p, 2.0, &x1(0.0), Estimator::ClosedForm, DEFAULT_GRID_STEP).unwrap();
        assert_relative_eq!(v.value(), (-0.06f64).exp());
    }

    #[test]
    fn validation_rejects_bad_trace_parameters() {
        let mk = |family, lambda, c| KernelSpec::Trace { family, lambda, c }.validate();
        assert!(mk(TraceFamily::GaussHeat, 1.0, 2.0).is_err());
        assert!(mk(TraceFamily::GaussHeat, 0.0, 3.0).is_err());
        assert!(mk(TraceFamily::VarianceGamma { eta: 0.4, gamma: 1.0 }, 1.0, 3.0).is_err());
        assert!(mk(TraceFamily::VarianceGamma { eta: 0.6, gamma: 1.0 }, 1.0, 3.0).is_ok());
    }

    #[test]
    fn wrong_eigenvalue_is_rejected() {
        let bm = ProcessSpec::brownian(vec![1.0]).unwrap();
        let err = Model::new(
            KernelSpec::Eigen {
                mu: -0.3,
                g: Eigenfunction::Exponential { c: vec![0.5] },
            },
            bm,
            x1(0.0),
        )
        .unwrap_err();
        assert!(matches!(err, KernelError::Incompatible(_)));
    }

    #[test]
    fn trace_driver_must_match_family() {
        let err = Model::new(
            KernelSpec::Trace {
                family: TraceFamily::CauchySym { theta: 1.0 },
                lambda: 1.0,
                c: 3.0,
            },
            ProcessSpec::cauchy(1.0, vec![0.2]).unwrap(),
            x1(0.0),
        )
        .unwrap_err();
        assert!(matches!(err, KernelError::Incompatible(_)));
    }
}
