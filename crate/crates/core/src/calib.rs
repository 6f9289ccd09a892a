//! Least-squares fit of kernel-family parameters to an initial discount curve.
//!
//! Parameters live in an unconstrained space through smooth maps onto their
//! bounds (`lo + e^s`, `hi - e^s` or a scaled logistic). The loss is the sum of
//! squared log-discount residuals on the target knots. A Nelder–Mead simplex
//! with restarts does the global work; a Levenberg–Marquardt polish with a
//! finite-difference Jacobian finishes.

use std::fmt;
use std::str::FromStr;

use argmin::core::{CostFunction, Error as ArgminError, Executor, State as _};
use argmin::solver::neldermead::NelderMead;
use log::debug;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::{Eigenfunction, KernelSpec, Model, TraceFamily};
use crate::pricing::{initial_curve, DiscountCurve};
use crate::processes::{CirParams, ProcessSpec, State};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("invalid calibration problem: {0}")]
    InvalidProblem(String),
    #[error("optimizer failure: {0}")]
    Optimizer(String),
}

pub type Result<T> = std::result::Result<T, CalibError>;

/// Families that can be fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalibrationFamily {
    TraceGaussHeat,
    TraceQuadGauss,
    TraceCauchy,
    TraceVarianceGamma,
    TraceNig,
    /// One-term CIR exponential sum with free initial state.
    AffineCir,
    /// `1 + e^{μt} e^{x}` under Brownian drift `1/2 - μ`.
    EigenBm,
    /// `1 + e^{μt} e^{μx²}` under the OU driver with speed `μ`.
    EigenOu,
}

impl CalibrationFamily {
    pub const ALL: [CalibrationFamily; 8] = [
        CalibrationFamily::TraceGaussHeat,
        CalibrationFamily::TraceQuadGauss,
        CalibrationFamily::TraceCauchy,
        CalibrationFamily::TraceVarianceGamma,
        CalibrationFamily::TraceNig,
        CalibrationFamily::AffineCir,
        CalibrationFamily::EigenBm,
        CalibrationFamily::EigenOu,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            CalibrationFamily::TraceGaussHeat => "trace_gauss_heat",
            CalibrationFamily::TraceQuadGauss => "trace_quad_gauss",
            CalibrationFamily::TraceCauchy => "trace_cauchy",
            CalibrationFamily::TraceVarianceGamma => "trace_vg",
            CalibrationFamily::TraceNig => "trace_nig",
            CalibrationFamily::AffineCir => "affine_cir",
            CalibrationFamily::EigenBm => "eigen_bm",
            CalibrationFamily::EigenOu => "eigen_ou",
        }
    }

    /// Free parameters and their bounds.
    pub fn parameters(&self) -> Vec<ParameterSpec> {
        let lambda = ParameterSpec::new("lambda", Some(0.0), None);
        let c = ParameterSpec::new("c", Some(2.0), None);
        let pos = |name: &'static str| ParameterSpec::new(name, Some(0.0), None);
        match self {
            CalibrationFamily::TraceGaussHeat => vec![lambda, c],
            CalibrationFamily::TraceQuadGauss => vec![lambda, c, pos("alpha")],
            CalibrationFamily::TraceCauchy => vec![lambda, c, pos("theta")],
            CalibrationFamily::TraceVarianceGamma | CalibrationFamily::TraceNig => vec![lambda, c, pos("eta"), pos("gamma")],
            CalibrationFamily::AffineCir => vec![
                pos("kappa"),
                pos("theta"),
                pos("sigma"),
                ParameterSpec::new("mu", None, Some(0.0)),
                pos("x0"),
            ],
            CalibrationFamily::EigenBm => vec![ParameterSpec::new("mu", None, Some(0.0)), ParameterSpec::new("x0", Some(-20.0), Some(20.0))],
            CalibrationFamily::EigenOu => vec![ParameterSpec::new("mu", None, Some(0.0)), ParameterSpec::new("x0", Some(0.0), Some(20.0))],
        }
    }

    /// The model for a parameter vector (in natural units).
    pub fn build(&self, p: &[f64]) -> std::result::Result<Model, String> {
        let n = self.parameters().len();
        if p.len() != n {
            return Err(format!("{} needs {n} parameters, got {}", self.tag(), p.len()));
        }
        let trace = |family: TraceFamily| {
            let driver = family.driver(1);
            Model::new(KernelSpec::Trace { family, lambda: p[0], c: p[1] }, driver, State::scalar(0.0)).map_err(|e| e.to_string())
        };
        match self {
            CalibrationFamily::TraceGaussHeat => trace(TraceFamily::GaussHeat),
            CalibrationFamily::TraceQuadGauss => trace(TraceFamily::QuadGauss { alpha: p[2] }),
            CalibrationFamily::TraceCauchy => trace(TraceFamily::CauchySym { theta: p[2] }),
            CalibrationFamily::TraceVarianceGamma => trace(TraceFamily::VarianceGamma { eta: p[2], gamma: p[3] }),
            CalibrationFamily::TraceNig => trace(TraceFamily::Nig { eta: p[2], gamma: p[3] }),
            CalibrationFamily::AffineCir => {
                let cir = CirParams::new(p[0], p[1], p[2]).map_err(|e| e.to_string())?;
                Model::new(
                    KernelSpec::AffineExpSum {
                        a: vec![1.0],
                        mu: vec![p[3]],
                        cir,
                    },
                    ProcessSpec::Cir(cir),
                    State::scalar(p[4]),
                )
                .map_err(|e| e.to_string())
            }
            CalibrationFamily::EigenBm => {
                let mu = p[0];
                Model::new(
                    KernelSpec::Eigen {
                        mu,
                        g: Eigenfunction::Exponential { c: vec![1.0] },
                    },
                    ProcessSpec::brownian(vec![0.5 - mu]).map_err(|e| e.to_string())?,
                    State::scalar(p[1]),
                )
                .map_err(|e| e.to_string())
            }
            CalibrationFamily::EigenOu => {
                let mu = p[0];
                Model::new(
                    KernelSpec::Eigen {
                        mu,
                        g: Eigenfunction::SquaredExponential { coef: mu },
                    },
                    ProcessSpec::ornstein_uhlenbeck(mu, 1).map_err(|e| e.to_string())?,
                    State::scalar(p[1]),
                )
                .map_err(|e| e.to_string())
            }
        }
    }
}

impl fmt::Display for CalibrationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CalibrationFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CalibrationFamily::ALL.into_iter().find(|f| f.tag() == s).ok_or_else(|| {
            let tags: Vec<&str> = CalibrationFamily::ALL.iter().map(|f| f.tag()).collect();
            format!("unknown family '{s}' (expected one of {})", tags.join(", "))
        })
    }
}

/// A free parameter with optional open bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpec {
    pub name: &'static str,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl ParameterSpec {
    pub fn new(name: &'static str, lower: Option<f64>, upper: Option<f64>) -> Self {
        ParameterSpec { name, lower, upper }
    }

    fn contains(&self, v: f64) -> bool {
        v.is_finite() && self.lower.is_none_or(|lo| v > lo) && self.upper.is_none_or(|hi| v < hi)
    }

    fn to_natural(&self, s: f64) -> f64 {
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) => lo + (hi - lo) / (1.0 + (-s).exp()),
            (Some(lo), None) => lo + s.exp(),
            (None, Some(hi)) => hi - s.exp(),
            (None, None) => s,
        }
    }

    fn to_free(&self, v: f64) -> f64 {
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) => {
                let u = (v - lo) / (hi - lo);
                (u / (1.0 - u)).ln()
            }
            (Some(lo), None) => (v - lo).ln(),
            (None, Some(hi)) => (hi - v).ln(),
            (None, None) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationProblem {
    pub family: CalibrationFamily,
    pub target: DiscountCurve,
    pub parameters: Vec<ParameterSpec>,
}

impl CalibrationProblem {
    pub fn new(family: CalibrationFamily, target: DiscountCurve) -> Result<Self> {
        if !target.maturities.iter().any(|&m| m > 0.0) {
            return Err(CalibError::InvalidProblem("target curve has no positive maturity".into()));
        }
        Ok(CalibrationProblem {
            family,
            target,
            parameters: family.parameters(),
        })
    }

    fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.target
            .maturities
            .iter()
            .zip(&self.target.discounts)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, d)| (*m, *d))
    }

    /// Log-discount residuals at natural parameters; `None` if the model is invalid.
    pub fn residuals(&self, params: &[f64]) -> Option<Vec<f64>> {
        let model = self.family.build(params).ok()?;
        let knots: Vec<(f64, f64)> = self.knots().collect();
        let maturities: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let curve = initial_curve(&model, &maturities).ok()?;
        let r: Vec<f64> = curve.iter().zip(&knots).map(|(p, (_, d))| p.ln() - d.ln()).collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        self.residuals(params).map(|r| r.iter().map(|v| v * v).sum()).unwrap_or(f64::INFINITY)
    }

    fn natural(&self, s: &[f64]) -> Vec<f64> {
        self.parameters.iter().zip(s).map(|(p, v)| p.to_natural(*v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub family: CalibrationFamily,
    pub names: Vec<&'static str>,
    pub params: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: u64,
    pub converged: bool,
    /// Why the fit stopped.
    pub message: String,
}

/// Penalty returned for parameter vectors outside the family's domain.
const INVALID_LOSS: f64 = 1e100;

struct Objective<'a> {
    problem: &'a CalibrationProblem,
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, s: &Self::Param) -> std::result::Result<f64, ArgminError> {
        let loss = self.problem.loss(&self.problem.natural(s));
        Ok(if loss.is_finite() { loss } else { INVALID_LOSS })
    }
}

fn simplex_around(s: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut vertices = vec![s.to_vec()];
    for i in 0..s.len() {
        let mut v = s.to_vec();
        v[i] += step;
        vertices.push(v);
    }
    vertices
}

/// Levenberg–Marquardt in the free coordinates; returns the improved point,
/// its loss and the iteration count.
fn polish(problem: &CalibrationProblem, mut s: Vec<f64>, mut loss: f64, max_iters: u64) -> (Vec<f64>, f64, u64) {
    let residuals = |s: &[f64]| problem.residuals(&problem.natural(s));
    let Some(mut r) = residuals(&s) else {
        return (s, loss, 0);
    };
    let mut damping = 1e-3;
    let mut iters = 0;
    while iters < max_iters && loss > 0.0 {
        iters += 1;
        let (m, n) = (r.len(), s.len());
        let mut jac = DMatrix::<f64>::zeros(m, n);
        let mut ok = true;
        for j in 0..n {
            let h = 1e-6 * (1.0 + s[j].abs());
            let (mut up, mut down) = (s.clone(), s.clone());
            up[j] += h;
            down[j] -= h;
            match (residuals(&up), residuals(&down)) {
                (Some(ru), Some(rd)) => {
                    for i in 0..m {
                        jac[(i, j)] = (ru[i] - rd[i]) / (2.0 * h);
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let rv = DVector::from_vec(r.clone());
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += damping * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let trial: Vec<f64> = s.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rt) = residuals(&trial) {
                let lt: f64 = rt.iter().map(|v| v * v).sum();
                if lt < loss {
                    let small = step.norm() < 1e-12 * (1.0 + DVector::from_vec(s.clone()).norm());
                    s = trial;
                    r = rt;
                    loss = lt;
                    damping = (damping / 3.0).max(1e-12);
                    improved = !small;
                    break;
                }
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (s, loss, iters)
}

/// Fits `problem` from `init` (natural units, inside the bounds).
/// `converged` means the residual norm reached `tol`; otherwise the best point
/// found is returned with `converged = false`.
pub fn fit(problem: &CalibrationProblem, init: &[f64], max_iters: u64, tol: f64) -> Result<FitResult> {
    if init.len() != problem.parameters.len() {
        return Err(CalibError::InvalidProblem(format!(
            "{} needs {} initial values, got {}",
            problem.family,
            problem.parameters.len(),
            init.len()
        )));
    }
    for (p, v) in problem.parameters.iter().zip(init) {
        if !p.contains(*v) {
            return Err(CalibError::InvalidProblem(format!("initial {} = {v} is outside its bounds", p.name)));
        }
    }
    let init_loss = problem.loss(init);
    if !init_loss.is_finite() {
        return Err(CalibError::InvalidProblem(format!(
            "initial parameters do not define a valid model: {}",
            problem.family.build(init).err().unwrap_or_else(|| "non-finite curve".into())
        )));
    }
    let mut best: Vec<f64> = problem.parameters.iter().zip(init).map(|(p, v)| p.to_free(*v)).collect();
    let mut best_loss = init_loss;
    let mut iterations = 0u64;
    let budget_per_run = (max_iters / 4).max(50);
    let mut step = 0.5;
    for restart in 0..4 {
        if iterations >= max_iters || best_loss.sqrt() <= tol * 1e-3 {
            break;
        }
        let solver = NelderMead::new(simplex_around(&best, step))
            .with_sd_tolerance(1e-14)
            .map_err(|e| CalibError::Optimizer(e.to_string()))?;
        let res = Executor::new(Objective { problem }, solver)
            .configure(|state| state.max_iters(budget_per_run.min(max_iters - iterations)))
            .run()
            .map_err(|e| CalibError::Optimizer(e.to_string()))?;
        let state = res.state();
        iterations += state.get_iter();
        if let Some(p) = state.get_best_param() {
            let l = state.get_best_cost();
            if l < best_loss {
                best = p.clone();
                best_loss = l;
            }
        }
        debug!("restart {restart}: loss {best_loss:e}");
        step *= 0.3;
    }
    let remaining = max_iters.saturating_sub(iterations).max(1);
    let (s, loss, lm_iters) = polish(problem, best, best_loss, remaining.min(200));
    iterations += lm_iters;
    let residual_norm = loss.sqrt();
    let converged = residual_norm <= tol;
    let message = if converged {
        "residual norm below tolerance".to_string()
    } else {
        format!("stopped after {iterations} iterations with residual norm {residual_norm:e} > {tol:e}")
    };
    Ok(FitResult {
        family: problem.family,
        names: problem.parameters.iter().map(|p| p.name).collect(),
        params: problem.natural(&s),
        residual_norm,
        iterations,
        converged,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_of(family: CalibrationFamily, params: &[f64], maturities: &[f64]) -> DiscountCurve {
        let model = family.build(params).unwrap();
        DiscountCurve::new(maturities.to_vec(), initial_curve(&model, maturities).unwrap()).unwrap()
    }

    #[test]
    fn reparameterization_roundtrips() {
        for p in CalibrationFamily::AffineCir.parameters().into_iter().chain(CalibrationFamily::EigenBm.parameters()) {
            let v = match (p.lower, p.upper) {
                (Some(lo), Some(hi)) => 0.3 * lo + 0.7 * hi,
                (Some(lo), None) => lo + 1.7,
                (None, Some(hi)) => hi - 0.4,
                (None, None) => 0.2,
            };
            assert!((p.to_natural(p.to_free(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gauss_trace_self_fit() {
        let maturities: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
        let target = curve_of(CalibrationFamily::TraceGaussHeat, &[1.0, 3.0], &maturities);
        let problem = CalibrationProblem::new(CalibrationFamily::TraceGaussHeat, target).unwrap();
        let fit = fit(&problem, &[1.3, 2.5], 2000, 1e-10).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.params[0] - 1.0).abs() < 1e-4 && (fit.params[1] - 3.0).abs() < 3e-4, "{fit:?}");
    }

    #[test]
    fn flat_curve_with_one_cir_term() {
        let maturities: Vec<f64> = (0..=20).map(|i| 0.5 * i as f64).collect();
        let discounts = maturities.iter().map(|t| (-0.02 * t).exp()).collect();
        let target = DiscountCurve::new(maturities, discounts).unwrap();
        let problem = CalibrationProblem::new(CalibrationFamily::AffineCir, target).unwrap();
        let init = [0.5, 0.05, 0.2, -0.5, 0.05];
        let fit = fit(&problem, &init, 3000, 1e-3).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!(problem.loss(&fit.params) <= problem.loss(&init));
    }

    #[test]
    fn humped_curve_is_out_of_reach_for_one_eigen_term() {
        let maturities: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
        let discounts = maturities
            .iter()
            .map(|t| (-(0.01 * t + 0.3 * t * t * (-0.5 * t).exp())).exp())
            .collect();
        let target = DiscountCurve::new(maturities, discounts).unwrap();
        let problem = CalibrationProblem::new(CalibrationFamily::EigenBm, target).unwrap();
        let init = [-0.2, 0.0];
        let fit = fit(&problem, &init, 600, 1e-6).unwrap();
        assert!(!fit.converged);
        assert!(!fit.message.is_empty());
        assert!(fit.residual_norm * fit.residual_norm <= problem.loss(&init));
    }

    #[test]
    fn rejects_out_of_bounds_init() {
        let target = DiscountCurve::new(vec![1.0], vec![0.98]).unwrap();
        let problem = CalibrationProblem::new(CalibrationFamily::TraceGaussHeat, target).unwrap();
        assert!(fit(&problem, &[1.0, 1.5], 100, 1e-6).is_err());
    }
}
