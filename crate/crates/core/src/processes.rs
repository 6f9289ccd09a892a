//! Markov drivers with exact transition sampling.
//!
//! Every driver here can be sampled exactly over an arbitrary horizon, so path
//! simulation never introduces discretization bias: Gaussian transitions for
//! Brownian motion and Ornstein–Uhlenbeck, noncentral χ² for CIR, ratio-of-normals
//! for Cauchy, Gamma/inverse-Gaussian draws for the subordinators and a
//! Wiener-at-subordinator composition for VG and NIG.

use std::f64::consts::PI;
use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use smallvec::SmallVec;
use thiserror::Error;

use crate::mc::stream_rng;
use crate::specfun::{ln_gamma, normal_pdf};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error("invalid process parameter: {0}")]
    InvalidParameter(String),
    #[error("state {state:?} is outside the state space: {reason}")]
    OutsideStateSpace { state: Vec<f64>, reason: &'static str },
    #[error("state has dimension {got}, process expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("transition variance {0} is not positive")]
    NonPositiveVariance(f64),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
}

pub type Result<T> = std::result::Result<T, ProcessError>;

/// A point of the state space.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct State(SmallVec<[f64; 4]>);

impl State {
    pub fn scalar(x: f64) -> Self {
        State(smallvec::smallvec![x])
    }

    pub fn zeros(dim: usize) -> Self {
        State(smallvec::smallvec![0.0; dim])
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        State(SmallVec::from_slice(xs))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        State(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

impl Deref for State {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<f64> for State {
    fn from(x: f64) -> Self {
        State::scalar(x)
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(SmallVec::from_vec(v))
    }
}

impl From<&[f64]> for State {
    fn from(v: &[f64]) -> Self {
        State::from_slice(v)
    }
}

/// Cox–Ingersoll–Ross parameters for `dX = κ(θ - X) dt + σ √X dW`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CirParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
}

impl CirParams {
    pub fn new(kappa: f64, theta: f64, sigma: f64) -> Result<Self> {
        let p = CirParams { kappa, theta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.theta > 0.0 && self.sigma > 0.0)
            || !(self.kappa.is_finite() && self.theta.is_finite() && self.sigma.is_finite())
        {
            return Err(ProcessError::InvalidParameter(format!(
                "CIR needs kappa, theta, sigma > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// `(A, B)` with `E[e^{u X_t} | X_0 = x] = exp(A + B x)`, for `u <= 0`.
    pub fn riccati(&self, t: f64, u: f64) -> (f64, f64) {
        let one_minus_e = -(-self.kappa * t).exp_m1();
        let w_minus_1 = -self.sigma * self.sigma * u * one_minus_e / (2.0 * self.kappa);
        let b = u * (-self.kappa * t).exp() / (1.0 + w_minus_1);
        let a = -(2.0 * self.kappa * self.theta / (self.sigma * self.sigma)) * w_minus_1.ln_1p();
        (a, b)
    }

    /// `E[exp(u X_t) | X_0 = x]`.
    pub fn exp_transform(&self, u: f64, t: f64, x: f64) -> Result<f64> {
        if !(u <= 0.0) {
            return Err(ProcessError::InvalidParameter(format!(
                "CIR exponential transform needs u <= 0, got {u}"
            )));
        }
        if !(t >= 0.0) {
            return Err(ProcessError::InvalidParameter(format!("negative horizon {t}")));
        }
        if !(x >= 0.0) {
            return Err(outside(&[x], "CIR state must be non-negative"));
        }
        let (a, b) = self.riccati(t, u);
        Ok((a + b * x).exp())
    }

    /// `E[exp(-ℓ ∫_0^t X_s ds) | X_0 = x]`, the CIR zero-coupon formula.
    pub fn integrated_exp(&self, ell: f64, t: f64, x: f64) -> f64 {
        if ell == 0.0 || t == 0.0 {
            return 1.0;
        }
        let (kappa, s2) = (self.kappa, self.sigma * self.sigma);
        let gamma = (kappa * kappa + 2.0 * s2 * ell).sqrt();
        let e = (-gamma * t).exp();
        let den = (gamma + kappa) * (1.0 - e) + 2.0 * gamma * e;
        let b = 2.0 * ell * (1.0 - e) / den;
        let ln_a = (2.0 * kappa * self.theta / s2)
            * ((2.0 * gamma).ln() + 0.5 * (kappa - gamma) * t - den.ln());
        (ln_a - b * x).exp()
    }

    pub fn conditional_mean(&self, t: f64, x: f64) -> f64 {
        self.theta + (x - self.theta) * (-self.kappa * t).exp()
    }

    pub fn conditional_variance(&self, t: f64, x: f64) -> f64 {
        let e = (-self.kappa * t).exp();
        let s2 = self.sigma * self.sigma;
        x * s2 / self.kappa * (e - e * e) + self.theta * s2 / (2.0 * self.kappa) * (1.0 - e).powi(2)
    }

    /// Exact draw of `X_{t+dt}` given `X_t = x` (scaled noncentral χ²).
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, dt: f64, rng: &mut R) -> f64 {
        let s2 = self.sigma * self.sigma;
        let e = (-self.kappa * dt).exp();
        let scale = s2 * (-(-self.kappa * dt).exp_m1()) / (4.0 * self.kappa);
        let dof = 4.0 * self.kappa * self.theta / s2;
        let noncentrality = x * e / scale;
        let n = if noncentrality > 0.0 {
            Poisson::new(0.5 * noncentrality)
                .expect("finite positive Poisson rate")
                .sample(rng)
        } else {
            0.0
        };
        let shape = 0.5 * dof + n;
        let chi2: f64 = Gamma::new(shape, 2.0)
            .expect("positive Gamma shape")
            .sample(rng);
        scale * chi2
    }
}

/// The Markov drivers.
#[derive(Clone, Debug, PartialEq)]
pub enum ProcessSpec {
    /// Brownian motion with generator `Δ/2 - κ·∇`, i.e. drift `-κ`.
    BrownianDrift { kappa: Vec<f64> },
    /// Ornstein–Uhlenbeck with generator `-μ x·∇ + Δ/2`, `μ < 0`.
    OrnsteinUhlenbeck { mu_speed: f64, dim: usize },
    Cir(CirParams),
    /// Cauchy process with scale `θ` and drift `γ`.
    Cauchy { theta: f64, gamma: Vec<f64> },
    /// Gamma subordinator: `T_t ~ Gamma(shape ηt, rate γ)`.
    GammaSubordinator { eta: f64, gamma_rate: f64 },
    /// Inverse-Gaussian subordinator with density
    /// `ηt x^{-3/2} e^{2ηt√(πγ)} e^{-γx - πη²t²/x}`.
    IgSubordinator { eta: f64, gamma_rate: f64 },
    /// Driftless Wiener process time-changed by the Gamma subordinator.
    VarianceGamma { eta: f64, gamma_rate: f64 },
    /// Driftless Wiener process time-changed by the inverse-Gaussian subordinator.
    NormalInverseGaussian { eta: f64, gamma_rate: f64 },
}

fn outside(state: &[f64], reason: &'static str) -> ProcessError {
    ProcessError::OutsideStateSpace {
        state: state.to_vec(),
        reason,
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ProcessError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ProcessSpec {
    pub fn brownian(kappa: Vec<f64>) -> Result<Self> {
        let p = ProcessSpec::BrownianDrift { kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn ornstein_uhlenbeck(mu_speed: f64, dim: usize) -> Result<Self> {
        let p = ProcessSpec::OrnsteinUhlenbeck { mu_speed, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn cir(kappa: f64, theta: f64, sigma: f64) -> Result<Self> {
        Ok(ProcessSpec::Cir(CirParams::new(kappa, theta, sigma)?))
    }

    pub fn cauchy(theta: f64, gamma: Vec<f64>) -> Result<Self> {
        let p = ProcessSpec::Cauchy { theta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn variance_gamma(eta: f64, gamma_rate: f64) -> Result<Self> {
        let p = ProcessSpec::VarianceGamma { eta, gamma_rate };
        p.validate()?;
        Ok(p)
    }

    pub fn normal_inverse_gaussian(eta: f64, gamma_rate: f64) -> Result<Self> {
        let p = ProcessSpec::NormalInverseGaussian { eta, gamma_rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProcessSpec::BrownianDrift { kappa } => {
                if kappa.is_empty() || kappa.iter().any(|k| !k.is_finite()) {
                    return Err(ProcessError::InvalidParameter(
                        "Brownian drift needs a non-empty finite kappa".into(),
                    ));
                }
                Ok(())
            }
            ProcessSpec::OrnsteinUhlenbeck { mu_speed, dim } => {
                if !(*mu_speed < 0.0 && mu_speed.is_finite()) || *dim == 0 {
                    return Err(ProcessError::InvalidParameter(format!(
                        "OU needs mu_speed < 0 and dim >= 1 (got {mu_speed}, {dim})"
                    )));
                }
                Ok(())
            }
            ProcessSpec::Cir(p) => p.validate(),
            ProcessSpec::Cauchy { theta, gamma } => {
                positive("Cauchy theta", *theta)?;
                if gamma.is_empty() || gamma.iter().any(|g| !g.is_finite()) {
                    return Err(ProcessError::InvalidParameter(
                        "Cauchy needs a non-empty finite drift vector".into(),
                    ));
                }
                Ok(())
            }
            ProcessSpec::GammaSubordinator { eta, gamma_rate }
            | ProcessSpec::IgSubordinator { eta, gamma_rate }
            | ProcessSpec::VarianceGamma { eta, gamma_rate }
            | ProcessSpec::NormalInverseGaussian { eta, gamma_rate } => {
                positive("eta", *eta)?;
                positive("gamma_rate", *gamma_rate)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProcessSpec::BrownianDrift { kappa } => kappa.len(),
            ProcessSpec::OrnsteinUhlenbeck { dim, .. } => *dim,
            ProcessSpec::Cauchy { gamma, .. } => gamma.len(),
            _ => 1,
        }
    }

    /// Short tag used in reports and configs.
    pub fn tag(&self) -> &'static str {
        match self {
            ProcessSpec::BrownianDrift { .. } => "brownian_drift",
            ProcessSpec::OrnsteinUhlenbeck { .. } => "ou",
            ProcessSpec::Cir(_) => "cir",
            ProcessSpec::Cauchy { .. } => "cauchy",
            ProcessSpec::GammaSubordinator { .. } => "gamma_subordinator",
            ProcessSpec::IgSubordinator { .. } => "ig_subordinator",
            ProcessSpec::VarianceGamma { .. } => "variance_gamma",
            ProcessSpec::NormalInverseGaussian { .. } => "nig",
        }
    }

    /// Whether the process has independent stationary increments.
    pub fn is_levy(&self) -> bool {
        !matches!(self, ProcessSpec::OrnsteinUhlenbeck { .. } | ProcessSpec::Cir(_))
    }

    /// Whether `X_1` and `-X_1` have the same law.
    pub fn is_symmetric(&self) -> bool {
        match self {
            ProcessSpec::BrownianDrift { kappa } => kappa.iter().all(|&k| k == 0.0),
            ProcessSpec::Cauchy { gamma, .. } => gamma.iter().all(|&g| g == 0.0),
            ProcessSpec::VarianceGamma { .. } | ProcessSpec::NormalInverseGaussian { .. } => true,
            _ => false,
        }
    }

    /// The Lévy process `-X`, so that `x - X_t` is sampled as `x + (-X)_t`.
    pub fn reflected(&self) -> Result<ProcessSpec> {
        match self {
            ProcessSpec::BrownianDrift { kappa } => Ok(ProcessSpec::BrownianDrift {
                kappa: kappa.iter().map(|k| -k).collect(),
            }),
            ProcessSpec::Cauchy { theta, gamma } => Ok(ProcessSpec::Cauchy {
                theta: *theta,
                gamma: gamma.iter().map(|g| -g).collect(),
            }),
            ProcessSpec::VarianceGamma { .. } | ProcessSpec::NormalInverseGaussian { .. } => {
                Ok(self.clone())
            }
            other => Err(ProcessError::Unsupported(format!(
                "{} has no reflected Lévy counterpart on the same state space",
                other.tag()
            ))),
        }
    }

    /// Checks dimension and state-space membership of `x`.
    pub fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(ProcessError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(outside(x, "state must be finite"));
        }
        match self {
            ProcessSpec::Cir(_) if x[0] < 0.0 => Err(outside(x, "CIR state must be non-negative")),
            ProcessSpec::GammaSubordinator { .. } | ProcessSpec::IgSubordinator { .. }
                if x[0] < 0.0 =>
            {
                Err(outside(x, "subordinator state must be non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// Exact draw of `X_{t+dt}` given `X_t = x`.
    pub fn sample_transition<R: Rng + ?Sized>(&self, x: &State, dt: f64, rng: &mut R) -> Result<State> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ProcessError::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        self.check_state(x)?;
        Ok(self.sample_unchecked(x, dt, rng))
    }

    /// [`Self::sample_transition`] without argument checks; callers guarantee
    /// `dt > 0` and a valid state.
    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, x: &State, dt: f64, rng: &mut R) -> State {
        match self {
            ProcessSpec::BrownianDrift { kappa } => {
                let sd = dt.sqrt();
                let mut y = x.clone();
                for (yi, k) in y.as_mut_slice().iter_mut().zip(kappa) {
                    let z: f64 = rng.sample(StandardNormal);
                    *yi += -k * dt + sd * z;
                }
                y
            }
            ProcessSpec::OrnsteinUhlenbeck { mu_speed, .. } => {
                let (growth, var) = ou_moments(*mu_speed, dt);
                let sd = var.sqrt();
                x.map(|xi| {
                    let z: f64 = rng.sample(StandardNormal);
                    xi * growth + sd * z
                })
            }
            ProcessSpec::Cir(p) => State::scalar(p.sample(x[0], dt, rng)),
            ProcessSpec::Cauchy { theta, gamma } => {
                let scale = theta * dt;
                let denom: f64 = rng.sample::<f64, _>(StandardNormal).abs();
                let mut y = x.clone();
                for (yi, g) in y.as_mut_slice().iter_mut().zip(gamma) {
                    let z: f64 = rng.sample(StandardNormal);
                    *yi += scale * z / denom + dt * g;
                }
                y
            }
            ProcessSpec::GammaSubordinator { eta, gamma_rate } => {
                State::scalar(x[0] + sample_gamma(eta * dt, *gamma_rate, rng))
            }
            ProcessSpec::IgSubordinator { eta, gamma_rate } => {
                State::scalar(x[0] + sample_ig_subordinator(*eta, *gamma_rate, dt, rng))
            }
            ProcessSpec::VarianceGamma { eta, gamma_rate } => {
                let clock = sample_gamma(eta * dt, *gamma_rate, rng);
                let z: f64 = rng.sample(StandardNormal);
                State::scalar(x[0] + clock.sqrt() * z)
            }
            ProcessSpec::NormalInverseGaussian { eta, gamma_rate } => {
                let clock = sample_ig_subordinator(*eta, *gamma_rate, dt, rng);
                let z: f64 = rng.sample(StandardNormal);
                State::scalar(x[0] + clock.sqrt() * z)
            }
        }
    }

    /// Density of `X_t` at `y` given `X_0 = x`, for Brownian, OU and Cauchy drivers.
    pub fn transition_density(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        if !(t > 0.0) {
            return Err(ProcessError::InvalidParameter(format!(
                "transition density needs t > 0, got {t}"
            )));
        }
        self.check_state(x)?;
        if y.len() != self.dim() {
            return Err(ProcessError::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        match self {
            ProcessSpec::BrownianDrift { kappa } => {
                let sd = t.sqrt();
                Ok(kappa
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(k, (xi, yi))| normal_pdf((yi - xi + k * t) / sd) / sd)
                    .product())
            }
            ProcessSpec::OrnsteinUhlenbeck { mu_speed, .. } => {
                let (growth, var) = ou_moments(*mu_speed, t);
                let sd = var.sqrt();
                Ok(x.iter()
                    .zip(y)
                    .map(|(xi, yi)| normal_pdf((yi - xi * growth) / sd) / sd)
                    .product())
            }
            ProcessSpec::Cauchy { theta, gamma } => {
                let d = gamma.len() as f64;
                let dist_sq: f64 = x
                    .iter()
                    .zip(y)
                    .zip(gamma)
                    .map(|((xi, yi), g)| (yi - xi - t * g).powi(2))
                    .sum();
                Ok(cauchy_density(*theta, d, t, dist_sq))
            }
            other => Err(ProcessError::Unsupported(format!(
                "no transition density exposed for {}; use its transforms",
                other.tag()
            ))),
        }
    }
}

/// `Γ((d+1)/2) θt / (π((θt)² + r²))^{(d+1)/2}` where `r² = dist_sq`.
pub(crate) fn cauchy_density(theta: f64, d: f64, t: f64, dist_sq: f64) -> f64 {
    let s = theta * t;
    let half = 0.5 * (d + 1.0);
    (ln_gamma(half) + s.ln() - half * (PI * (s * s + dist_sq)).ln()).exp()
}

/// Conditional law of the OU transition: `X_t | X_0 = x ~ N(x·growth, var)`
/// with `growth = e^{-μt}` and `var = (1 - e^{-2μt})/(2μ)`.
///
/// # Panics
/// If the variance is not positive, which cannot happen for `μ < 0, t > 0`.
pub fn ou_moments(mu: f64, t: f64) -> (f64, f64) {
    let growth = (-mu * t).exp();
    let var = -(-2.0 * mu * t).exp_m1() / (2.0 * mu);
    assert!(var > 0.0, "OU transition variance {var} must be positive");
    (growth, var)
}

fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("positive Gamma parameters")
        .sample(rng)
}

/// Michael–Schucany–Haas draw of the IG subordinator increment over `dt`.
fn sample_ig_subordinator<R: Rng + ?Sized>(eta: f64, gamma: f64, dt: f64, rng: &mut R) -> f64 {
    let mean = eta * dt * (PI / gamma).sqrt();
    let shape = 2.0 * PI * eta * eta * dt * dt;
    let nu: f64 = rng.sample(StandardNormal);
    let a = mean * nu * nu / (2.0 * shape);
    // Smaller root of the quadratic, in cancellation-free form.
    let root = mean / (1.0 + a + (a * a + 2.0 * a).sqrt());
    let u: f64 = rng.random();
    if u <= mean / (mean + root) {
        root
    } else {
        mean * mean / root
    }
}

/// A simulated trajectory on a fixed time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub seed: u64,
}

/// Simulates `X^x` on `times` (which must start at 0 and increase strictly).
pub fn sample_path(spec: &ProcessSpec, x: &State, times: &[f64], seed: u64) -> Result<PathGrid> {
    let mut rng = stream_rng(seed, 0);
    sample_path_with(spec, x, times, seed, &mut rng)
}

pub(crate) fn sample_path_with<R: Rng + ?Sized>(
    spec: &ProcessSpec,
    x: &State,
    times: &[f64],
    seed: u64,
    rng: &mut R,
) -> Result<PathGrid> {
    spec.validate()?;
    spec.check_state(x)?;
    if times.first() != Some(&0.0) {
        return Err(ProcessError::InvalidGrid("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(ProcessError::InvalidGrid("time grid must increase strictly".into()));
    }
    let mut states = Vec::with_capacity(times.len());
    states.push(x.clone());
    for w in times.windows(2) {
        let next = spec.sample_unchecked(states.last().expect("non-empty"), w[1] - w[0], rng);
        states.push(next);
    }
    Ok(PathGrid {
        times: times.to_vec(),
        states,
        seed,
    })
}
