//! Executable checks of the pricing identities on a concrete model.
//!
//! Monte-Carlo checks compare an estimate with an exact value through a
//! z-score; the threshold is Bonferroni-adjusted over all MC checks of a run.
//! Deterministic checks compare two exact values (or an inequality) to a fixed
//! relative tolerance.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::kernels::{check_propagation, Evaluation, KernelSpec, Model, TraceFamily};
use crate::mc::{bonferroni_threshold, estimate_with, stream_rng, Execution, MCEstimate, McError, SimRng};
use crate::pricing::{bond_price, cauchy_trace_bond_printed, short_rate, swaption_eigen_closed, swaption_price_mc, SwaptionSpec, TenorStructure};
use crate::processes::{ProcessSpec, State};

/// Relative tolerance of deterministic identities.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Absolute tolerance for short-rate positivity.
pub const RATE_TOL: f64 = 1e-8;
/// |z| above which the printed Cauchy bond formula is declared inconsistent.
pub const ERRATUM_Z: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Check {
    Propagation,
    Supermartingale,
    NoArbitrage,
    Positivity,
    SwaptionParity,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::Propagation,
        Check::Supermartingale,
        Check::NoArbitrage,
        Check::Positivity,
        Check::SwaptionParity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Check::Propagation => "propagation",
            Check::Supermartingale => "supermartingale",
            Check::NoArbitrage => "no_arbitrage",
            Check::Positivity => "positivity",
            Check::SwaptionParity => "swaption_parity",
        }
    }
}

impl FromStr for Check {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown check '{s}' (expected one of propagation, supermartingale, no_arbitrage, positivity, swaption_parity)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// A documented discrepancy, confirmed by the check.
    Flagged,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Flagged => "flagged",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lhs {
    Exact(f64),
    Estimate(MCEstimate),
}

impl Lhs {
    pub fn value(&self) -> f64 {
        match self {
            Lhs::Exact(v) => *v,
            Lhs::Estimate(e) => e.mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub check: String,
    pub inputs: String,
    pub lhs: Lhs,
    pub rhs: f64,
    pub z: Option<f64>,
    pub verdict: Verdict,
}

impl VerificationReport {
    /// One line of the text format.
    pub fn to_line(&self) -> String {
        let lhs = match self.lhs {
            Lhs::Exact(v) => format!("{v}"),
            Lhs::Estimate(e) => format!("{} (se {})", e.mean, e.stderr),
        };
        let z = self.z.map(|z| format!(" z={z:.3}")).unwrap_or_default();
        format!("{:<8} {:<24} lhs={lhs} rhs={}{z} [{}]", self.verdict, self.check, self.rhs, self.inputs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Monte-Carlo budget per MC check.
    pub n: usize,
    pub seed: u64,
    /// Random input tuples per check.
    pub points: usize,
    pub exec: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n: 100_000,
            seed: 0,
            points: 5,
            exec: Execution::default(),
        }
    }
}

/// Worst verdict of a report list.
pub fn aggregate(reports: &[VerificationReport]) -> Verdict {
    if reports.iter().any(|r| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if reports.iter().any(|r| r.verdict == Verdict::Flagged) {
        Verdict::Flagged
    } else {
        Verdict::Pass
    }
}

/// Distinct, reproducible seed for the `i`-th MC check of a run.
fn check_seed(seed: u64, i: u64) -> u64 {
    seed ^ (i.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

enum Pending {
    Mc { est: MCEstimate, rhs: f64, erratum: bool },
    Exact { lhs: f64, rhs: f64, ok: bool },
    Error(String),
}

struct Row {
    check: String,
    inputs: String,
    outcome: Pending,
}

struct Runner<'a> {
    model: &'a Model,
    opts: VerifyOptions,
    rng: SimRng,
    rows: Vec<Row>,
    mc_count: u64,
}

fn fmt_state(x: &State) -> String {
    if x.dim() == 1 {
        format!("{}", x[0])
    } else {
        let parts: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        format!("({})", parts.join(" "))
    }
}

impl<'a> Runner<'a> {
    fn random_state(&mut self) -> State {
        let model = self.model;
        let nonneg = matches!(
            model.process,
            ProcessSpec::Cir(_) | ProcessSpec::GammaSubordinator { .. } | ProcessSpec::IgSubordinator { .. }
        );
        let x: Vec<f64> = model
            .x0
            .iter()
            .map(|&v| {
                let y = v + 2.0 * self.rng.random::<f64>() - 1.0;
                if nonneg {
                    y.abs()
                } else {
                    y
                }
            })
            .collect();
        x.into()
    }

    fn random_times(&mut self) -> (f64, f64) {
        let t = 0.05 + 1.95 * self.rng.random::<f64>();
        let tau = 0.05 + 2.95 * self.rng.random::<f64>();
        (t, t + tau)
    }

    fn next_seed(&mut self) -> u64 {
        self.mc_count += 1;
        check_seed(self.opts.seed, self.mc_count)
    }

    fn push(&mut self, check: &str, inputs: String, outcome: Pending) {
        self.rows.push(Row {
            check: check.to_string(),
            inputs,
            outcome,
        });
    }

    fn exact(&self, e: Evaluation) -> Option<f64> {
        match e {
            Evaluation::Exact(v) => Some(v),
            Evaluation::Estimated(_) => None,
        }
    }

    fn propagation(&mut self) {
        let model = self.model;
        for _ in 0..self.opts.points {
            let (t, big) = self.random_times();
            let s = big - t;
            let x = self.random_state();
            let inputs = format!("t={t};s={s};x={}", fmt_state(&x));
            let seed = self.next_seed();
            let outcome = match &model.kernel {
                KernelSpec::Killed { .. } => self.killed_propagation(t, s, &x, seed),
                KernelSpec::Weighted { .. } | KernelSpec::EigenSum { .. } => return,
                kernel => match check_propagation(kernel, &model.process, t, s, &x, self.opts.n, seed, self.opts.exec) {
                    Ok(r) => Pending::Mc {
                        est: r.lhs,
                        rhs: r.rhs,
                        erratum: false,
                    },
                    Err(e) => Pending::Error(e.to_string()),
                },
            };
            self.push("propagation", inputs, outcome);
        }
    }

    /// `E[e^{-∫_0^s V} q(t, X_s)] = q(t+s, x)`: propagation of the killed
    /// kernel on the state space extended by the path integral.
    fn killed_propagation(&self, t: f64, s: f64, x: &State, seed: u64) -> Pending {
        let model = self.model;
        let KernelSpec::Killed { v, process, grid_step, .. } = &model.kernel else {
            unreachable!()
        };
        let rhs = match model.kernel.eval(t + s, x).map(|e| self.exact(e)) {
            Ok(Some(v)) => v,
            Ok(None) => return Pending::Error("propagation needs an exact killed kernel".into()),
            Err(e) => return Pending::Error(e.to_string()),
        };
        let est = estimate_with(self.opts.n, seed, self.opts.exec, |rng| {
            let (y, integral, _) = crate::kernels::killed_path(v, process, s, x, *grid_step, rng);
            let q = model.kernel.eval(t, &y).map_err(|e| McError::Sample(e.to_string()))?.value();
            Ok((-integral).exp() * q)
        });
        match est {
            Ok(est) => Pending::Mc { est, rhs, erratum: false },
            Err(e) => Pending::Error(e.to_string()),
        }
    }

    fn supermartingale(&mut self) {
        let model = self.model;
        let claims = matches!(
            model.kernel,
            KernelSpec::Weighted { .. } | KernelSpec::Killed { .. } | KernelSpec::Trace { .. } | KernelSpec::Eigen { .. } | KernelSpec::EigenSum { .. }
        );
        let constant = matches!(
            &model.kernel,
            KernelSpec::Expectation { h: crate::kernels::HFunction::Constant(_), .. }
        );
        if !(claims || constant) || !model.kernel.is_exact() {
            return;
        }
        for _ in 0..self.opts.points {
            let (t, big) = self.random_times();
            let x = self.random_state();
            let inputs = format!("t={t};T={big};x={}", fmt_state(&x));
            let outcome = (|| -> Result<Pending, String> {
                let lhs = model.conditional_expectation(t, big, &x).map_err(|e| e.to_string())?.value();
                let rhs = model.kernel.eval(t, &x).map_err(|e| e.to_string())?.value();
                Ok(Pending::Exact {
                    lhs,
                    rhs,
                    ok: lhs <= rhs * (1.0 + IDENTITY_TOL),
                })
            })()
            .unwrap_or_else(Pending::Error);
            self.push("supermartingale", inputs, outcome);
        }
    }

    fn no_arbitrage(&mut self) {
        let model = self.model;
        if !model.kernel.is_exact() {
            return;
        }
        for _ in 0..self.opts.points {
            let (t, big) = self.random_times();
            let x = self.random_state();
            let inputs = format!("t={t};T={big};x={}", fmt_state(&x));
            let outcome = (|| -> Result<Pending, String> {
                let pi = model.kernel.eval(t, &x).map_err(|e| e.to_string())?.value();
                let bond = bond_price(model, t, big, &x).map_err(|e| e.to_string())?;
                let rhs = model.conditional_expectation(t, big, &x).map_err(|e| e.to_string())?.value();
                let lhs = pi * bond;
                Ok(Pending::Exact {
                    lhs,
                    rhs,
                    ok: (lhs - rhs).abs() <= IDENTITY_TOL * rhs.abs(),
                })
            })()
            .unwrap_or_else(Pending::Error);
            self.push("no_arbitrage", inputs, outcome);
        }
    }

    fn positivity(&mut self) {
        let model = self.model;
        let positive_rates = model.kernel.positive_rates();
        for _ in 0..self.opts.points {
            let (t, big) = self.random_times();
            let x = self.random_state();
            let inputs = format!("t={t};T={big};x={}", fmt_state(&x));
            let outcome = (|| -> Result<Pending, String> {
                let pi = model.kernel.eval(t, &x).map_err(|e| e.to_string())?.value();
                let bond = bond_price(model, t, big, &x).map_err(|e| e.to_string())?;
                let mut ok = pi > 0.0 && bond > 0.0;
                if positive_rates {
                    ok &= bond <= 1.0 + IDENTITY_TOL;
                    if model.kernel.is_exact() {
                        ok &= short_rate(model, t, &x).map_err(|e| e.to_string())? >= -RATE_TOL;
                    }
                }
                Ok(Pending::Exact { lhs: bond, rhs: pi, ok })
            })()
            .unwrap_or_else(Pending::Error);
            self.push("positivity", inputs, outcome);
        }
    }

    fn swaption_parity(&mut self) {
        let model = self.model;
        // At K = 0 the payoff is (1 - P)^+, which equals 1 - P only when bonds never exceed 1.
        if !model.kernel.is_exact() || !model.kernel.positive_rates() {
            return;
        }
        for _ in 0..self.opts.points {
            let t = 0.5 * self.rng.random::<f64>();
            let start = t + 0.1 + self.rng.random::<f64>();
            let periods = 1 + self.rng.random_range(0..4);
            let x = self.random_state();
            let Ok(tenor) = TenorStructure::regular(start, 0.5, periods) else { continue };
            let spec = SwaptionSpec { tenor, strike: 0.0 };
            let inputs = format!("t={t};T_alpha={start};periods={periods};K=0;x={}", fmt_state(&x));
            let parity = bond_price(model, t, spec.tenor.start(), &x).and_then(|a| Ok(a - bond_price(model, t, spec.tenor.end(), &x)?));
            let parity = match parity {
                Ok(v) => v,
                Err(e) => {
                    self.push("swaption_parity", inputs, Pending::Error(e.to_string()));
                    continue;
                }
            };
            if let Ok(closed) = swaption_eigen_closed(model, &spec, t, &x) {
                self.push(
                    "swaption_parity_closed",
                    inputs.clone(),
                    Pending::Exact {
                        lhs: closed,
                        rhs: parity,
                        ok: (closed - parity).abs() <= 1e-10 * parity.abs().max(1e-300),
                    },
                );
            }
            let seed = self.next_seed();
            let outcome = match swaption_price_mc(model, &spec, t, &x, self.opts.n, seed, self.opts.exec) {
                Ok(est) => Pending::Mc {
                    est,
                    rhs: parity,
                    erratum: false,
                },
                Err(e) => Pending::Error(e.to_string()),
            };
            self.push("swaption_parity", inputs, outcome);
        }
    }

    /// MC arbitration between the propagated Cauchy trace bond and the printed one.
    fn cauchy_erratum(&mut self) {
        let model = self.model;
        let KernelSpec::Trace {
            family: TraceFamily::CauchySym { theta },
            lambda,
            c,
        } = model.kernel
        else {
            return;
        };
        if model.dim() != 1 {
            return;
        }
        let (t, big, x) = (0.5, 2.0, State::scalar(1.0));
        let inputs = format!("lambda={lambda};c={c};theta={theta};t={t};T={big};x=1");
        let seed = self.next_seed();
        let pi_t = match model.kernel.eval(t, &x) {
            Ok(v) => v.value(),
            Err(e) => {
                self.push("cauchy_bond_theorem", inputs, Pending::Error(e.to_string()));
                return;
            }
        };
        let est = estimate_with(self.opts.n, seed, self.opts.exec, |rng| {
            let y = model.process.sample_unchecked(&x, big - t, rng);
            let pi_big = model.kernel.eval(big, &y).map_err(|e| McError::Sample(e.to_string()))?.value();
            Ok(pi_big / pi_t)
        });
        let est = match est {
            Ok(e) => e,
            Err(e) => {
                self.push("cauchy_bond_theorem", inputs, Pending::Error(e.to_string()));
                return;
            }
        };
        match bond_price(model, t, big, &x) {
            Ok(theorem) => self.push(
                "cauchy_bond_theorem",
                inputs.clone(),
                Pending::Mc {
                    est,
                    rhs: theorem,
                    erratum: false,
                },
            ),
            Err(e) => self.push("cauchy_bond_theorem", inputs.clone(), Pending::Error(e.to_string())),
        }
        self.mc_count += 1;
        let printed = cauchy_trace_bond_printed(lambda, c, theta, t, big, 1.0);
        self.push(
            "cauchy_bond_printed",
            inputs,
            Pending::Mc {
                est,
                rhs: printed,
                erratum: true,
            },
        );
    }

    fn finish(self) -> Vec<VerificationReport> {
        let threshold = bonferroni_threshold(self.mc_count as usize);
        self.rows
            .into_iter()
            .map(|row| match row.outcome {
                Pending::Mc { est, rhs, erratum } => {
                    let z = est.z_score(rhs);
                    let verdict = match (erratum, z.abs()) {
                        (false, a) if a <= threshold => Verdict::Pass,
                        (false, _) => Verdict::Fail,
                        (true, a) if a > ERRATUM_Z => Verdict::Flagged,
                        (true, _) => Verdict::Fail,
                    };
                    VerificationReport {
                        check: row.check,
                        inputs: row.inputs,
                        lhs: Lhs::Estimate(est),
                        rhs,
                        z: Some(z),
                        verdict,
                    }
                }
                Pending::Exact { lhs, rhs, ok } => VerificationReport {
                    check: row.check,
                    inputs: row.inputs,
                    lhs: Lhs::Exact(lhs),
                    rhs,
                    z: None,
                    verdict: if ok { Verdict::Pass } else { Verdict::Fail },
                },
                Pending::Error(msg) => VerificationReport {
                    check: row.check,
                    inputs: format!("{};error={msg}", row.inputs),
                    lhs: Lhs::Exact(f64::NAN),
                    rhs: f64::NAN,
                    z: None,
                    verdict: Verdict::Fail,
                },
            })
            .collect()
    }
}

/// Runs `suite` on `model`. Computation errors become failing reports. A
/// one-dimensional Cauchy trace model additionally gets the bond-formula
/// arbitration (verdict `flagged` when the printed formula is rejected).
pub fn verify_model(model: &Model, suite: &[Check], opts: VerifyOptions) -> Vec<VerificationReport> {
    let mut runner = Runner {
        model,
        opts,
        rng: stream_rng(opts.seed, u64::MAX),
        rows: Vec::new(),
        mc_count: 0,
    };
    for check in suite {
        match check {
            Check::Propagation => runner.propagation(),
            Check::Supermartingale => runner.supermartingale(),
            Check::NoArbitrage => runner.no_arbitrage(),
            Check::Positivity => runner.positivity(),
            Check::SwaptionParity => runner.swaption_parity(),
        }
    }
    runner.cauchy_erratum();
    runner.finish()
}

/// CSV with header `check,inputs,lhs,rhs,z,verdict`.
pub fn reports_to_csv(reports: &[VerificationReport]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "inputs", "lhs", "rhs", "z", "verdict"])?;
    for r in reports {
        w.write_record([
            r.check.clone(),
            r.inputs.clone(),
            r.lhs.value().to_string(),
            r.rhs.to_string(),
            r.z.map(|z| z.to_string()).unwrap_or_default(),
            r.verdict.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Line-oriented text report.
pub fn reports_to_text(reports: &[VerificationReport]) -> String {
    let mut out: String = reports.iter().map(|r| r.to_line() + "\n").collect();
    out.push_str(&format!("overall: {}\n", aggregate(reports)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Estimator, HFunction};

    #[test]
    fn constant_kernel_passes_exactly() {
        let bm = ProcessSpec::brownian(vec![0.2]).unwrap();
        let model = Model::new(
            KernelSpec::Expectation {
                h: HFunction::Constant(1.0),
                process: bm.clone(),
                estimator: Estimator::ClosedForm,
            },
            bm,
            State::scalar(0.0),
        )
        .unwrap();
        let opts = VerifyOptions {
            n: 2_000,
            points: 3,
            exec: Execution::Sequential,
            ..Default::default()
        };
        let reports = verify_model(&model, &Check::ALL, opts);
        assert!(!reports.is_empty());
        for r in &reports {
            assert_eq!(r.verdict, Verdict::Pass, "{}", r.to_line());
        }
        let csv = reports_to_csv(&reports).unwrap();
        assert!(csv.starts_with("check,inputs,lhs,rhs,z,verdict\n"));
    }

    #[test]
    fn check_names_roundtrip() {
        for c in Check::ALL {
            assert_eq!(c.name().parse::<Check>().unwrap(), c);
        }
        assert!("nope".parse::<Check>().is_err());
    }
}
