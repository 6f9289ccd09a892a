//! Bonds, short rates, swap rates and swaptions.
//!
//! Every price is `π_t^{-1} E[π_T · payoff | X_t = x]`. Closed forms are used
//! where the kernel admits them; the Monte-Carlo routes sample `X_{T_α}` given
//! `X_t` exactly in one step (killed kernels also simulate the path integral).

use log::warn;
use thiserror::Error;

use crate::kernels::{
    killed_path, Eigenfunction, Evaluation, KernelError, KernelSpec, Model, TraceFamily,
};
use crate::mc::{estimate_with, Execution, MCEstimate, McError, SimRng};
use crate::processes::{ou_moments, ProcessSpec, State};
use crate::specfun::{bs_integral, gaussian_quadratic_integral, normal_cdf, normal_interval_probability, SpecFunError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("invalid tenor structure: {0}")]
    InvalidTenor(String),
    #[error("invalid discount curve: {0}")]
    InvalidCurve(String),
    #[error("invalid pricing input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("numerical differentiation failed: {0}")]
    Differentiation(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

pub type Result<T> = std::result::Result<T, PricingError>;

/// Swap dates `T_α < … < T_β`.
#[derive(Clone, Debug, PartialEq)]
pub struct TenorStructure {
    dates: Vec<f64>,
}

impl TenorStructure {
    pub fn new(dates: Vec<f64>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(PricingError::InvalidTenor("need at least two dates".into()));
        }
        if dates[0] < 0.0 || dates.iter().any(|d| !d.is_finite()) {
            return Err(PricingError::InvalidTenor("dates must be finite and non-negative".into()));
        }
        if dates.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PricingError::InvalidTenor("dates must increase strictly".into()));
        }
        Ok(TenorStructure { dates })
    }

    /// Evenly spaced tenor from `start` with `periods` accruals of length `step`.
    pub fn regular(start: f64, step: f64, periods: usize) -> Result<Self> {
        TenorStructure::new((0..=periods).map(|i| start + step * i as f64).collect())
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn start(&self) -> f64 {
        self.dates[0]
    }

    pub fn end(&self) -> f64 {
        *self.dates.last().expect("non-empty")
    }

    /// Payment dates `T_{α+1}, …, T_β` paired with accruals `τ_i`.
    pub fn payments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.dates.windows(2).map(|w| (w[1], w[1] - w[0]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwaptionSpec {
    pub tenor: TenorStructure,
    pub strike: f64,
}

impl SwaptionSpec {
    pub fn new(tenor: TenorStructure, strike: f64) -> Result<Self> {
        if !(strike >= 0.0 && strike.is_finite()) {
            return Err(PricingError::InvalidInput(format!("strike must be non-negative, got {strike}")));
        }
        Ok(SwaptionSpec { tenor, strike })
    }
}

/// Discount factors on a maturity grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountCurve {
    pub maturities: Vec<f64>,
    pub discounts: Vec<f64>,
}

impl DiscountCurve {
    pub fn new(maturities: Vec<f64>, discounts: Vec<f64>) -> Result<Self> {
        if maturities.is_empty() || maturities.len() != discounts.len() {
            return Err(PricingError::InvalidCurve("need matching non-empty maturities and discounts".into()));
        }
        if maturities.iter().any(|m| !(*m >= 0.0 && m.is_finite())) || maturities.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PricingError::InvalidCurve("maturities must be non-negative and increasing".into()));
        }
        if discounts.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(PricingError::InvalidCurve("discount factors must be positive".into()));
        }
        for (m, d) in maturities.iter().zip(&discounts) {
            if *m == 0.0 && (d - 1.0).abs() > 1e-12 {
                return Err(PricingError::InvalidCurve(format!("P(0) must be 1, got {d}")));
            }
        }
        Ok(DiscountCurve { maturities, discounts })
    }

    /// Zero yields `-ln P / T` (the `T = 0` knot, if any, is skipped).
    pub fn yields(&self) -> Vec<(f64, f64)> {
        self.maturities
            .iter()
            .zip(&self.discounts)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, d)| (*m, -d.ln() / m))
            .collect()
    }
}

/// Cauchy trace bond exactly as printed in the source literature (d = 1).
/// It differs from the propagated form: it corresponds to the constant term
/// `c·u(λ+2T-t, 0)` in place of `c·u(λ+T, 0)`.
pub fn cauchy_trace_bond_printed(lambda: f64, c: f64, theta: f64, t: f64, maturity: f64, z: f64) -> f64 {
    let a = lambda + t;
    let b = lambda + 2.0 * maturity - t;
    let (th2, z2) = (theta * theta, z * z);
    a / b * (th2 * a * a + z2) / (th2 * b * b + z2) * (th2 * (1.0 + c) * b * b + c * z2) / (th2 * (1.0 + c) * a * a + c * z2)
}

/// `P^T_t` given `X_t = x`.
pub fn bond_price(model: &Model, t: f64, maturity: f64, x: &State) -> Result<f64> {
    if !(t >= 0.0 && maturity >= t && maturity.is_finite()) {
        return Err(PricingError::InvalidInput(format!("need 0 <= t <= T (t = {t}, T = {maturity})")));
    }
    if maturity == t {
        return Ok(1.0);
    }
    match &model.kernel {
        KernelSpec::Trace { family, lambda, c } if x.dim() == 1 => {
            let (lambda, c, w) = (*lambda, *c, x[0]);
            let (a, b, m) = (lambda + t, lambda + 2.0 * maturity - t, lambda + maturity);
            match family {
                TraceFamily::GaussHeat => {
                    let num = (a / b).sqrt() * (-w * w / (2.0 * b)).exp() + c * (a / m).sqrt();
                    let den = (-w * w / (2.0 * a)).exp() + c;
                    return Ok(num / den);
                }
                TraceFamily::CauchySym { theta } => {
                    // u(s, w) = θs / (π(θ²s² + w²)), so π cancels.
                    let u = |s: f64, w: f64| theta * s / (theta * theta * s * s + w * w);
                    return Ok((u(b, w) + c * u(m, 0.0)) / (u(a, w) + c * u(a, 0.0)));
                }
                _ => {}
            }
        }
        KernelSpec::Eigen { mu, g } => {
            let gx = g.eval(x);
            return Ok((1.0 + (mu * (2.0 * maturity - t)).exp() * gx) / (1.0 + (mu * t).exp() * gx));
        }
        _ => {}
    }
    let num = model.conditional_expectation(t, maturity, x)?.value();
    let den = model.kernel.eval(t, x)?.value();
    Ok(num / den)
}

/// Initial curve `P(0, T)` at the model's initial state.
pub fn initial_curve(model: &Model, maturities: &[f64]) -> Result<Vec<f64>> {
    maturities.iter().map(|&m| bond_price(model, 0.0, m, &model.x0)).collect()
}

/// Step of the short-rate difference quotient (years).
pub const RATE_STEP: f64 = 1e-5;

/// Instantaneous short rate `-∂_T ln P^T_t |_{T=t}`.
///
/// Numerical central difference with one Richardson level; a one-sided
/// second-order quotient is used when `t` is too close to 0 for the backward
/// step. Weighted and Monte-Carlo killed kernels use exact derivative forms.
pub fn short_rate(model: &Model, t: f64, x: &State) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(PricingError::InvalidInput(format!("time must be non-negative, got {t}")));
    }
    if let Some(r) = model.analytic_short_rate(t, x)? {
        return Ok(r);
    }
    if let KernelSpec::Killed { .. } = model.kernel {
        if !model.kernel.is_exact() {
            return Err(PricingError::Unsupported("short rate needs an exact killed kernel".into()));
        }
    }
    let c = |maturity: f64| -> Result<f64> {
        match model.conditional_expectation_unchecked(t, maturity, x)? {
            Evaluation::Exact(v) => Ok(v),
            Evaluation::Estimated(_) => Err(PricingError::Unsupported("short rate needs an exact kernel".into())),
        }
    };
    let level = c(t)?;
    let central = t >= 4.0 * RATE_STEP;
    let quotient = |h: f64| -> Result<f64> {
        if central {
            Ok((c(t + h)? - c(t - h)?) / (2.0 * h))
        } else {
            Ok((-3.0 * level + 4.0 * c(t + h)? - c(t + 2.0 * h)?) / (2.0 * h))
        }
    };
    let d = (4.0 * quotient(0.5 * RATE_STEP)? - quotient(RATE_STEP)?) / 3.0;
    let r = -d / level;
    if !r.is_finite() {
        return Err(PricingError::Differentiation(format!("non-finite rate at t = {t}, x = {:?}", x.to_vec())));
    }
    Ok(r)
}

/// Forward swap rate `(P^{T_α}_t - P^{T_β}_t) / Σ τ_i P^{T_i}_t`; at `t = T_α`
/// this is `(1 - P(T_α, T_β)) / Σ τ_i P(T_α, T_i)`.
pub fn swap_rate(model: &Model, t: f64, x: &State, tenor: &TenorStructure) -> Result<f64> {
    if t > tenor.start() {
        return Err(PricingError::InvalidInput("swap must not have started".into()));
    }
    let p_start = bond_price(model, t, tenor.start(), x)?;
    let p_end = bond_price(model, t, tenor.end(), x)?;
    let mut annuity = 0.0;
    for (date, tau) in tenor.payments() {
        annuity += tau * bond_price(model, t, date, x)?;
    }
    Ok((p_start - p_end) / annuity)
}

/// Draws `X_{t+dt}` from `x` and the path discount `exp(-∫_t^{t+dt} V)` (1
/// unless the kernel is killed).
fn advance(model: &Model, x: &State, dt: f64, rng: &mut SimRng) -> (State, f64) {
    if dt == 0.0 {
        return (x.clone(), 1.0);
    }
    match &model.kernel {
        KernelSpec::Killed { v, process, grid_step, .. } => {
            let (state, integral, _) = killed_path(v, process, dt, x, *grid_step, rng);
            (state, (-integral).exp())
        }
        _ => (model.process.sample_unchecked(x, dt, rng), 1.0),
    }
}

fn require_exact(model: &Model) -> Result<()> {
    if model.kernel.is_exact() {
        Ok(())
    } else {
        Err(PricingError::Unsupported(
            "Monte-Carlo pricing needs an exactly evaluable kernel".into(),
        ))
    }
}

/// `E[π_{T_α} {1 - P(T_α,T_β) - K Σ τ_i P(T_α,T_i)}^+ | X_{T_α} = y]`, written
/// through conditional expectations of `π`.
fn swaption_integrand(model: &Model, spec: &SwaptionSpec, y: &State) -> std::result::Result<f64, KernelError> {
    let start = spec.tenor.start();
    let mut value = model.conditional_expectation(start, start, y)?.value() - model.conditional_expectation(start, spec.tenor.end(), y)?.value();
    if spec.strike > 0.0 {
        for (date, tau) in spec.tenor.payments() {
            value -= spec.strike * tau * model.conditional_expectation(start, date, y)?.value();
        }
    }
    Ok(value.max(0.0))
}

/// Swaption value at `t`, by exact sampling of `X_{T_α}` given `X_t = x`.
#[allow(clippy::too_many_arguments)]
pub fn swaption_price_mc(
    model: &Model,
    spec: &SwaptionSpec,
    t: f64,
    x: &State,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<MCEstimate> {
    require_exact(model)?;
    if !(t >= 0.0 && t <= spec.tenor.start()) {
        return Err(PricingError::InvalidInput("need 0 <= t <= T_alpha".into()));
    }
    model.process.check_state(x).map_err(KernelError::from)?;
    let pi_t = model.kernel.eval(t, x)?.value();
    let dt = spec.tenor.start() - t;
    let est = estimate_with(n, seed, exec, |rng| {
        let (y, discount) = advance(model, x, dt, rng);
        let payoff = swaption_integrand(model, spec, &y).map_err(|e| McError::Sample(e.to_string()))?;
        Ok(discount * payoff / pi_t)
    })?;
    Ok(est)
}

/// `A = e^{μT_α} - e^{μ(2T_β-T_α)} - K Σ τ_i e^{μ(2T_i-T_α)}` and `B = K(T_β - T_α)`
/// for the eigen model `1 + e^{μt} g`.
pub fn eigen_swaption_constants(mu: f64, spec: &SwaptionSpec) -> (f64, f64) {
    let (ta, tb) = (spec.tenor.start(), spec.tenor.end());
    let mut a = (mu * ta).exp() - (mu * (2.0 * tb - ta)).exp();
    for (date, tau) in spec.tenor.payments() {
        a -= spec.strike * tau * (mu * (2.0 * date - ta)).exp();
    }
    (a, spec.strike * (tb - ta))
}

/// Closed-form eigen-model swaption: Black–Scholes integral for Brownian
/// drivers with `g = e^{⟨c,x⟩}`, Gaussian-quadratic integral for the
/// one-dimensional OU driver with `g = e^{μx²}`.
pub fn swaption_eigen_closed(model: &Model, spec: &SwaptionSpec, t: f64, x: &State) -> Result<f64> {
    let KernelSpec::Eigen { mu, g } = &model.kernel else {
        return Err(PricingError::Unsupported(format!("{} is not an eigen model", model.kernel.tag())));
    };
    if !(t >= 0.0 && t <= spec.tenor.start()) {
        return Err(PricingError::InvalidInput("need 0 <= t <= T_alpha".into()));
    }
    let (a, b) = eigen_swaption_constants(*mu, spec);
    let tau = spec.tenor.start() - t;
    let pi_t = 1.0 + (mu * t).exp() * g.eval(x);
    match (&model.process, g) {
        (ProcessSpec::BrownianDrift { kappa }, Eigenfunction::Exponential { c }) => {
            if a <= 0.0 {
                return Ok(0.0);
            }
            let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ck: f64 = c.iter().zip(kappa).map(|(p, q)| p * q).sum();
            let value = bs_integral(a * g.eval(x), b, c_norm * tau.sqrt(), -ck * tau)?;
            Ok(value / pi_t)
        }
        (ProcessSpec::OrnsteinUhlenbeck { mu_speed, dim: 1 }, Eigenfunction::SquaredExponential { coef }) if coef == mu_speed => {
            if a <= 0.0 || b >= a {
                // g <= 1, so A g(y) - B <= A - B.
                return Ok(0.0);
            }
            let k = ((b / a).ln() / mu_speed).sqrt();
            let (m, v) = if tau > 0.0 {
                let (growth, v) = ou_moments(*mu_speed, tau);
                (x[0] * growth, v)
            } else {
                let gx = g.eval(x);
                return Ok(if x[0].abs() < k { (a * gx - b) / pi_t } else { 0.0 });
            };
            let sd = v.sqrt();
            let first = a * gaussian_quadratic_integral(m, v, *mu_speed, -k, k)?;
            let second = b * normal_interval_probability((-k - m) / sd, (k - m) / sd);
            Ok((first - second).max(0.0) / pi_t)
        }
        _ => Err(PricingError::Unsupported(format!(
            "no closed-form swaption for this eigenfunction under {}",
            model.process.tag()
        ))),
    }
}

/// The squared-OU swaption in its explicit normal-CDF form
/// `(A e^{μτ} g(x) {Φ(d₁⁺) - Φ(d₁⁻)} - B {Φ(d₂⁺) - Φ(d₂⁻)}) / (1 + e^{μt} g(x))`.
pub fn swaption_squared_ou_explicit(mu: f64, spec: &SwaptionSpec, t: f64, x: f64) -> Result<f64> {
    if !(mu < 0.0) {
        return Err(PricingError::InvalidInput("OU eigen model needs mu < 0".into()));
    }
    let (a, b) = eigen_swaption_constants(mu, spec);
    if a <= 0.0 || b >= a {
        return Ok(0.0);
    }
    let tau = spec.tenor.start() - t;
    if !(tau > 0.0) {
        return Err(PricingError::InvalidInput("explicit form needs t < T_alpha".into()));
    }
    let g = (mu * x * x).exp();
    let k = ((b / a).ln() / mu).sqrt();
    let s1 = (((2.0 * mu * tau).exp_m1()) / (2.0 * mu)).sqrt();
    let s2 = ((-(-2.0 * mu * tau).exp_m1()) / (2.0 * mu)).sqrt();
    let d1 = |sign: f64| (sign * k - x * (mu * tau).exp()) / s1;
    let d2 = |sign: f64| (sign * k - x * (-mu * tau).exp()) / s2;
    let value = a * (mu * tau).exp() * g * (normal_cdf(d1(1.0)) - normal_cdf(d1(-1.0))) - b * (normal_cdf(d2(1.0)) - normal_cdf(d2(-1.0)));
    Ok(value.max(0.0) / (1.0 + (mu * t).exp() * g))
}

/// How a swaption price was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SwaptionPrice {
    Closed(f64),
    MonteCarlo(MCEstimate),
}

impl SwaptionPrice {
    pub fn value(&self) -> f64 {
        match self {
            SwaptionPrice::Closed(v) => *v,
            SwaptionPrice::MonteCarlo(e) => e.mean,
        }
    }
}

/// Closed form where available, otherwise Monte Carlo (with a warning).
#[allow(clippy::too_many_arguments)]
pub fn swaption_price(
    model: &Model,
    spec: &SwaptionSpec,
    t: f64,
    x: &State,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<SwaptionPrice> {
    match swaption_eigen_closed(model, spec, t, x) {
        Ok(v) => Ok(SwaptionPrice::Closed(v)),
        Err(PricingError::Unsupported(reason)) => {
            warn!("falling back to Monte Carlo: {reason}");
            Ok(SwaptionPrice::MonteCarlo(swaption_price_mc(model, spec, t, x, n, seed, exec)?))
        }
        Err(e) => Err(e),
    }
}

/// Time-0 price `π_0^{-1} E[π_t G(P^T_t)]` of a claim paying `G(P^T_t)` at `t`.
pub fn derivative_price<G>(model: &Model, payoff: G, t: f64, maturity: f64, n: usize, seed: u64, exec: Execution) -> Result<MCEstimate>
where
    G: Fn(f64) -> f64 + Sync,
{
    require_exact(model)?;
    if !(t >= 0.0 && maturity >= t) {
        return Err(PricingError::InvalidInput("need 0 <= t <= T".into()));
    }
    let x0 = &model.x0;
    let pi_0 = model.kernel.eval(0.0, x0)?.value();
    let est = estimate_with(n, seed, exec, |rng| {
        let (y, discount) = advance(model, x0, t, rng);
        let inner = || -> std::result::Result<f64, KernelError> {
            let pi_t = model.kernel.eval(t, &y)?.value();
            let bond = model.conditional_expectation(t, maturity, &y)?.value() / pi_t;
            Ok(discount * pi_t * payoff(bond) / pi_0)
        };
        inner().map_err(|e| McError::Sample(e.to_string()))
    })?;
    Ok(est)
}

/// Draws `X_t` from the initial state, for callers that need raw states
/// (e.g. tower-property checks).
pub fn sample_state(model: &Model, t: f64, rng: &mut SimRng) -> (State, f64) {
    advance(model, &model.x0, t, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Estimator, HFunction, KillingRate, Weight, DEFAULT_GRID_STEP};
    use crate::specfun::QuadratureSpec;
    use approx::assert_relative_eq;

    fn gauss_trace() -> Model {
        Model::new(
            KernelSpec::Trace {
                family: TraceFamily::GaussHeat,
                lambda: 1.0,
                c: 3.0,
            },
            ProcessSpec::brownian(vec![0.0]).unwrap(),
            State::scalar(0.0),
        )
        .unwrap()
    }

    fn eigen_bm(kappa: f64, c: f64) -> Model {
        Model::new(
            KernelSpec::Eigen {
                mu: 0.5 * c * c - c * kappa,
                g: Eigenfunction::Exponential { c: vec![c] },
            },
            ProcessSpec::brownian(vec![kappa]).unwrap(),
            State::scalar(0.0),
        )
        .unwrap()
    }

    #[test]
    fn bond_collapses_at_maturity() {
        let m = gauss_trace();
        assert_eq!(bond_price(&m, 0.7, 0.7, &State::scalar(0.3)).unwrap(), 1.0);
    }

    #[test]
    fn gauss_trace_initial_bond() {
        let p = bond_price(&gauss_trace(), 0.0, 1.0, &State::scalar(0.0)).unwrap();
        let expected = ((1.0f64 / 3.0).sqrt() + 3.0 * 0.5f64.sqrt()) / 4.0;
        assert_relative_eq!(p, expected, max_relative = 1e-15);
    }

    #[test]
    fn explicit_gauss_bond_matches_generic_route() {
        let m = gauss_trace();
        let x = State::scalar(0.8);
        let closed = bond_price(&m, 0.4, 2.5, &x).unwrap();
        let generic = m.conditional_expectation(0.4, 2.5, &x).unwrap().value() / m.kernel.eval(0.4, &x).unwrap().value();
        assert_relative_eq!(closed, generic, max_relative = 1e-13);
    }

    #[test]
    fn printed_cauchy_formula_uses_shifted_constant_term() {
        let (lambda, c, theta, t, big_t, z) = (1.0, 3.0, 1.0, 0.5, 2.0, 1.0);
        let fam = TraceFamily::CauchySym { theta };
        let a = lambda + t;
        let b = lambda + 2.0 * big_t - t;
        let shifted = (fam.u(b, &[z]).unwrap() + c * fam.u(b, &[0.0]).unwrap()) / (fam.u(a, &[z]).unwrap() + c * fam.u(a, &[0.0]).unwrap());
        assert_relative_eq!(cauchy_trace_bond_printed(lambda, c, theta, t, big_t, z), shifted, max_relative = 1e-14);
        let model = Model::new(
            KernelSpec::Trace { family: fam, lambda, c },
            ProcessSpec::cauchy(theta, vec![0.0]).unwrap(),
            State::scalar(0.0),
        )
        .unwrap();
        let p = bond_price(&model, t, big_t, &State::scalar(z)).unwrap();
        assert!((p - 0.4923).abs() < 1e-4, "{p}");
        assert!((cauchy_trace_bond_printed(lambda, c, theta, t, big_t, z) - 0.3569).abs() < 1e-4);
    }

    #[test]
    fn eigen_short_rate_matches_analytic_derivative() {
        let m = eigen_bm(1.0, 0.5);
        let KernelSpec::Eigen { mu, ref g } = m.kernel else { unreachable!() };
        for (t, x) in [(0.0, 0.3), (0.7, -1.2), (3.0, 2.0)] {
            let e = (mu * t).exp() * g.eval(&[x]);
            let analytic = -2.0 * mu * e / (1.0 + e);
            let numeric = short_rate(&m, t, &State::scalar(x)).unwrap();
            assert!((numeric - analytic).abs() < 1e-6, "t={t} x={x}: {numeric} vs {analytic}");
        }
    }

    #[test]
    fn weighted_constant_base_has_flat_rate() {
        let alpha = 0.04;
        let bm = ProcessSpec::brownian(vec![0.0]).unwrap();
        let m = Model::new(
            KernelSpec::Weighted {
                base: Box::new(KernelSpec::Expectation {
                    h: HFunction::Constant(1.0),
                    process: bm.clone(),
                    estimator: Estimator::ClosedForm,
                }),
                weight: Weight::Exponential { alpha },
                quadrature: QuadratureSpec::default(),
            },
            bm,
            State::scalar(0.0),
        )
        .unwrap();
        assert_relative_eq!(short_rate(&m, 1.0, &State::scalar(0.5)).unwrap(), alpha, max_relative = 1e-9);
        assert_relative_eq!(bond_price(&m, 0.0, 3.0, &State::scalar(0.0)).unwrap(), (-alpha * 3.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn killed_constant_rate_doubles() {
        let bm = ProcessSpec::brownian(vec![0.0]).unwrap();
        let m = Model::new(
            KernelSpec::Killed {
                v: KillingRate::Constant(0.03),
                process: bm.clone(),
                estimator: Estimator::ClosedForm,
                grid_step: DEFAULT_GRID_STEP,
            },
            bm,
            State::scalar(0.0),
        )
        .unwrap();
        assert_relative_eq!(short_rate(&m, 0.5, &State::scalar(0.1)).unwrap(), 0.06, max_relative = 1e-8);
    }

    #[test]
    fn swap_rate_single_period_is_simple_forward() {
        let m = gauss_trace();
        let x = State::scalar(0.4);
        let tenor = TenorStructure::new(vec![1.0, 1.5]).unwrap();
        let s = swap_rate(&m, 0.0, &x, &tenor).unwrap();
        let p1 = bond_price(&m, 0.0, 1.0, &x).unwrap();
        let p2 = bond_price(&m, 0.0, 1.5, &x).unwrap();
        assert_relative_eq!(s, (p1 / p2 - 1.0) / 0.5, max_relative = 1e-13);
    }

    #[test]
    fn eigen_bm_zero_strike_parity_is_exact() {
        let m = eigen_bm(0.8, 0.6);
        let spec = SwaptionSpec::new(TenorStructure::regular(1.0, 0.5, 4).unwrap(), 0.0).unwrap();
        let x = State::scalar(0.2);
        let sw = swaption_eigen_closed(&m, &spec, 0.3, &x).unwrap();
        let parity = bond_price(&m, 0.3, 1.0, &x).unwrap() - bond_price(&m, 0.3, 3.0, &x).unwrap();
        assert_relative_eq!(sw, parity, max_relative = 1e-12);
    }

    #[test]
    fn squared_ou_explicit_matches_lemma_route() {
        let mu = -0.4;
        let m = Model::new(
            KernelSpec::Eigen {
                mu,
                g: Eigenfunction::SquaredExponential { coef: mu },
            },
            ProcessSpec::ornstein_uhlenbeck(mu, 1).unwrap(),
            State::scalar(0.0),
        )
        .unwrap();
        for strike in [0.0, 0.01, 0.05, 0.2] {
            let spec = SwaptionSpec::new(TenorStructure::regular(0.5, 0.5, 3).unwrap(), strike).unwrap();
            let a = swaption_eigen_closed(&m, &spec, 0.1, &State::scalar(0.3)).unwrap();
            if strike > 0.0 {
                let b = swaption_squared_ou_explicit(mu, &spec, 0.1, 0.3).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
            }
            assert!(a >= 0.0);
        }
    }

    #[test]
    fn unsupported_closed_form_falls_back() {
        let m = gauss_trace();
        let spec = SwaptionSpec::new(TenorStructure::regular(1.0, 1.0, 2).unwrap(), 0.0).unwrap();
        let p = swaption_price(&m, &spec, 0.0, &State::scalar(0.0), 20_000, 1, Execution::Sequential).unwrap();
        assert!(matches!(p, SwaptionPrice::MonteCarlo(_)));
    }

    #[test]
    fn tenor_and_curve_validation() {
        assert!(TenorStructure::new(vec![1.0]).is_err());
        assert!(TenorStructure::new(vec![1.0, 1.0]).is_err());
        assert!(DiscountCurve::new(vec![0.0, 1.0], vec![0.9, 0.8]).is_err());
        assert!(DiscountCurve::new(vec![0.0, 1.0], vec![1.0, -0.1]).is_err());
        assert!(SwaptionSpec::new(TenorStructure::regular(1.0, 1.0, 1).unwrap(), -1.0).is_err());
    }
}
