//! Joint choice of the channel price `C` and per-agent processing times.
//!
//! For a price `C` every agent independently picks the `tau` minimising its
//! decoupled average cost; the channel utilisations `f_i` of those choices
//! add up to `f(C)`. The price is raised until the relaxed constraint
//! `f(C) <= 1` holds. Because thresholds are integers `f(C)` is piecewise
//! constant, so the target is the smallest feasible price rather than an
//! exact `f = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoi::AgentSpec;
use crate::error::{domain, Result};
use crate::threshold::{AgentSolver, TauChoice};

/// Dual-ascent steps the hybrid mode takes before switching to bracketing.
pub const HYBRID_ASCENT_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerMode {
    /// `C <- max(0, C + alpha (f - 1))` until `|f - 1| <= tol_f`.
    DualAscent,
    /// Bracket `{C : f(C) <= 1}` by doubling, then bisect.
    Bisection,
    /// Dual ascent until the iterate becomes feasible, then bisection.
    #[default]
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub c_init: f64,
    /// Ascent step `alpha`.
    pub step: f64,
    /// Utilisation tolerance `eps_f`.
    pub tol_f: f64,
    pub max_iter: usize,
    pub mode: OptimizerMode,
    /// Relative width at which a bisection bracket counts as collapsed.
    pub c_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { c_init: 0.0, step: 1.0, tol_f: 1e-3, max_iter: 10_000, mode: OptimizerMode::Hybrid, c_tol: 1e-9 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_init.is_finite() && self.c_init >= 0.0) {
            return Err(domain("c_init must be finite and >= 0"));
        }
        if !(self.step > 0.0) {
            return Err(domain("step must be > 0"));
        }
        if !(self.tol_f > 0.0) {
            return Err(domain("tol_f must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(domain("max_iter must be >= 1"));
        }
        if !(self.c_tol > 0.0) {
            return Err(domain("c_tol must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `f(0) <= 1`: the channel constraint is slack.
    Slack,
    /// `|f - 1| <= tol_f`.
    WithinTolerance,
    /// Bisection isolated the smallest feasible price.
    BracketCollapsed,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub c: f64,
    pub utilization: f64,
    pub dual_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodesignResult {
    pub c_star: f64,
    pub choices: Vec<TauChoice>,
    pub total_utilization: f64,
    /// `sum_i lambda_i(C*) - C*`.
    pub dual_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
}

impl CodesignResult {
    pub fn taus(&self) -> Vec<u32> {
        self.choices.iter().map(|c| c.tau_star).collect()
    }

    /// `1 - f`, the unused share of the channel at the returned price.
    pub fn utilization_gap(&self) -> f64 {
        1.0 - self.total_utilization
    }

    /// Every agent ends up never transmitting.
    pub fn infeasible(&self) -> bool {
        self.choices.iter().all(|c| c.result.is_never())
    }
}

#[derive(Debug, Clone)]
struct Evaluation {
    c: f64,
    choices: Vec<TauChoice>,
    utilization: f64,
    dual_value: f64,
}

/// Per-agent solvers with their curves cached across prices.
#[derive(Debug, Clone)]
pub struct Codesign {
    solvers: Vec<AgentSolver>,
}

impl Codesign {
    pub fn new(agents: &[AgentSpec]) -> Result<Self> {
        if agents.is_empty() {
            return Err(domain("need at least one agent"));
        }
        let solvers = agents.iter().map(AgentSolver::new).collect::<Result<_>>()?;
        Ok(Self { solvers })
    }

    fn evaluate(&mut self, c: f64) -> Result<Evaluation> {
        let choices: Vec<TauChoice> = self.solvers.par_iter_mut().map(|s| s.best_tau(c)).collect::<Result<_>>()?;
        let utilization = choices.iter().map(|ch| ch.result.utilization).sum();
        let dual_value = choices.iter().map(|ch| ch.result.avg_cost).sum::<f64>() - c;
        Ok(Evaluation { c, choices, utilization, dual_value })
    }

    /// Total utilisation `f(C)` after re-optimising every agent's `tau`.
    pub fn utilization(&mut self, c: f64) -> Result<f64> {
        Ok(self.evaluate(c)?.utilization)
    }

    pub fn dual_value(&mut self, c: f64) -> Result<f64> {
        Ok(self.evaluate(c)?.dual_value)
    }

    pub fn choices(&mut self, c: f64) -> Result<Vec<TauChoice>> {
        Ok(self.evaluate(c)?.choices)
    }

    pub fn optimize(&mut self, cfg: &OptimizerConfig) -> Result<CodesignResult> {
        cfg.validate()?;
        let mut trace = Vec::new();
        let mut evals = 0usize;
        let mut eval = |this: &mut Self, c: f64, trace: &mut Vec<TraceRow>| -> Result<Evaluation> {
            let e = this.evaluate(c)?;
            evals += 1;
            trace.push(TraceRow { iteration: evals, c, utilization: e.utilization, dual_value: e.dual_value });
            Ok(e)
        };

        let finish = |e: Evaluation, stop: StopReason, trace: Vec<TraceRow>| {
            let iterations = trace.len();
            CodesignResult {
                c_star: e.c,
                total_utilization: e.utilization,
                dual_value: e.dual_value,
                choices: e.choices,
                iterations,
                converged: stop != StopReason::IterationCap,
                stop,
                trace,
            }
        };

        let zero = eval(self, 0.0, &mut trace)?;
        if zero.utilization <= 1.0 {
            return Ok(finish(zero, StopReason::Slack, trace));
        }

        // Infeasible side of the bracket; f(0) > 1 makes 0 a valid start.
        let mut lo = zero;
        let mut hi: Option<Evaluation> = None;

        if matches!(cfg.mode, OptimizerMode::DualAscent | OptimizerMode::Hybrid) {
            let budget = match cfg.mode {
                OptimizerMode::DualAscent => cfg.max_iter,
                // ascent only brackets here; bisection does the rest
                _ => (cfg.max_iter / 2).clamp(1, HYBRID_ASCENT_STEPS),
            };
            let mut c = cfg.c_init;
            while trace.len() < budget {
                let e = eval(self, c, &mut trace)?;
                let f = e.utilization;
                if cfg.mode == OptimizerMode::DualAscent && (f - 1.0).abs() <= cfg.tol_f {
                    return Ok(finish(e, StopReason::WithinTolerance, trace));
                }
                c = (c + cfg.step * (f - 1.0)).max(0.0);
                if f > 1.0 {
                    if e.c >= lo.c {
                        lo = e;
                    }
                } else if cfg.mode == OptimizerMode::Hybrid {
                    hi = Some(e);
                    break;
                }
            }
            if cfg.mode == OptimizerMode::DualAscent {
                let last = self.evaluate(c)?;
                return Ok(finish(last, StopReason::IterationCap, trace));
            }
        }

        // Expand until feasible.
        let mut probe = lo.c.max(cfg.c_init).max(1.0);
        while hi.is_none() {
            if trace.len() >= cfg.max_iter {
                return Ok(finish(lo, StopReason::IterationCap, trace));
            }
            probe *= 2.0;
            let e = eval(self, probe, &mut trace)?;
            if e.utilization <= 1.0 {
                hi = Some(e);
            } else {
                lo = e;
            }
        }
        let mut hi = hi.unwrap();

        while hi.c - lo.c > cfg.c_tol * hi.c.max(1.0) {
            if trace.len() >= cfg.max_iter {
                return Ok(finish(hi, StopReason::IterationCap, trace));
            }
            let mid = 0.5 * (lo.c + hi.c);
            let e = eval(self, mid, &mut trace)?;
            if e.utilization <= 1.0 {
                hi = e;
            } else {
                lo = e;
            }
        }
        Ok(finish(hi, StopReason::BracketCollapsed, trace))
    }
}

pub fn optimize(agents: &[AgentSpec], cfg: &OptimizerConfig) -> Result<CodesignResult> {
    Codesign::new(agents)?.optimize(cfg)
}

/// Lagrangian dual `sum_i lambda_i(tau_i*(C), C) - C`, a lower bound on the
/// optimum of the multi-agent problem for every `C >= 0`.
pub fn dual_value(agents: &[AgentSpec], c: f64) -> Result<f64> {
    Codesign::new(agents)?.dual_value(c)
}

/// `(C, f(C))` over a price grid, for monotonicity checks.
pub fn utilization_profile(agents: &[AgentSpec], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut cd = Codesign::new(agents)?;
    grid.iter().map(|&c| Ok((c, cd.utilization(c)?))).collect()
}

/// Grid points where `f` increases with `C`.
pub fn monotonicity_violations(profile: &[(f64, f64)]) -> Vec<(f64, f64)> {
    profile.windows(2).filter(|w| w[1].1 > w[0].1 + 1e-12).map(|w| (w[0].0, w[1].0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aoi::{TxLen, WaitModel};
    use crate::cost::FnCost;
    use num_rational::Rational64;

    fn linear_agent(id: usize) -> AgentSpec {
        AgentSpec::new(
            id,
            [1],
            TxLen::Constant(1),
            WaitModel::Fixed(Rational64::from_integer(0)),
            FnCost::shared("h", |_, h| h),
        )
        .unwrap()
    }

    #[test]
    fn slack_constraint_returns_zero_price() {
        let a = AgentSpec::new(
            0,
            [1, 2, 3],
            TxLen::Constant(1),
            WaitModel::Fixed(Rational64::from_integer(0)),
            FnCost::shared("cheap", |tau, h| 10.0 / f64::from(tau) + h),
        )
        .unwrap();
        // f(0) = 1 for one always-transmitting agent
        let res = optimize(std::slice::from_ref(&a), &OptimizerConfig::default()).unwrap();
        assert_eq!(res.c_star, 0.0);
        assert_eq!(res.stop, StopReason::Slack);
        let unconstrained = crate::threshold::best_tau(&a, 0.0).unwrap();
        assert_eq!(res.taus(), vec![unconstrained.tau_star]);
    }

    #[test]
    fn two_linear_agents_all_modes() {
        let agents = [linear_agent(0), linear_agent(1)];
        for mode in [OptimizerMode::Bisection, OptimizerMode::Hybrid] {
            let cfg = OptimizerConfig { mode, ..Default::default() };
            let res = optimize(&agents, &cfg).unwrap();
            assert!(res.converged, "{mode:?}");
            assert!(res.total_utilization <= 1.0);
            assert!(res.total_utilization >= 1.0 - cfg.tol_f);
            // smallest feasible price is V(3) = 1
            assert!((res.c_star - 1.0).abs() < 1e-6, "{mode:?}: {}", res.c_star);
            assert!((res.dual_value - 5.0).abs() < 1e-6);
        }
        let cfg = OptimizerConfig { mode: OptimizerMode::DualAscent, step: 0.5, ..Default::default() };
        let res = optimize(&agents, &cfg).unwrap();
        assert!(res.converged);
        assert!((res.total_utilization - 1.0).abs() <= cfg.tol_f);
    }

    #[test]
    fn dual_ascent_increases_while_over_budget() {
        let agents: Vec<_> = (0..4).map(linear_agent).collect();
        let cfg = OptimizerConfig { mode: OptimizerMode::DualAscent, step: 0.01, max_iter: 200, ..Default::default() };
        let res = optimize(&agents, &cfg).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for row in res.trace.iter().skip(1) {
            if row.utilization <= 1.0 {
                break;
            }
            assert!(row.c >= prev);
            prev = row.c;
        }
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let agents: Vec<_> = (0..3).map(linear_agent).collect();
        let cfg = OptimizerConfig { mode: OptimizerMode::DualAscent, step: 1e-6, max_iter: 5, ..Default::default() };
        let res = optimize(&agents, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.stop, StopReason::IterationCap);
    }

    #[test]
    fn dual_at_zero_bounded_by_reset_cost() {
        let agents = [linear_agent(0), linear_agent(1)];
        // lambda_i(0) = J(Delta) = 2 when transmitting always is optimal
        assert_eq!(dual_value(&agents, 0.0).unwrap(), 4.0);
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig { tol_f: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { max_iter: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
