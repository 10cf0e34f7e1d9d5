//! Relative value iteration on the truncated single-agent average-cost MDP.
//!
//! This is the reference the closed-form threshold solver is checked against,
//! so it only shares the cost function and `Delta`/`r` with it. Decisions are
//! taken at states `(h, z = 0)`; the `r` slots of a transmission are folded
//! into one action whose cost is `C r + sum_{k<r} J(h + k)` and which returns
//! to `(Delta, 0)` after `r` slots. That is a semi-Markov model whose Bellman
//! equation is
//!
//! ```text
//! S'(h) = min { J(h) - lambda + S'(h + 1),
//!               C r + sum_{k<r} J(h + k) - r lambda + S'(Delta) }
//! ```
//!
//! It is solved by relative value iteration after the standard
//! semi-Markov-to-discrete transformation with a self-loop weight, which also
//! makes every policy aperiodic. Ages saturate at the cap, keeping the chain
//! unichain. The reported gain is that of the greedy policy, evaluated exactly
//! on its cycle; the iteration's own bracket is kept alongside.

use crate::aoi::{reset_age, AgentSpec, Tau};
use crate::error::{domain, Error, Result};
use crate::threshold::{Threshold, ThresholdCurve, ThresholdResult};

/// Self-loop weight of the transformation; any value in (0, 1) preserves the
/// gain and the optimal policies.
const ETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Largest age tracked; `None` picks `Delta + max(200, 50 r)`.
    pub age_cap: Option<f64>,
    /// Span-seminorm stopping tolerance, raised to the roundoff level of the
    /// relative values when those are large.
    pub vi_tol: f64,
    pub max_iter: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { age_cap: None, vi_tol: 1e-9, max_iter: 20_000_000 }
    }
}

pub fn default_age_cap(delta: f64, tx_len: u32) -> f64 {
    delta + 200f64.max(50.0 * f64::from(tx_len))
}

/// States are age offsets `0..=cap` from `Delta`, all with `z = 0`.
#[derive(Debug, Clone)]
pub struct TruncatedMdp {
    pub tau: Tau,
    pub tx_len: u32,
    pub delta: f64,
    pub price: f64,
    /// Largest age offset; the age coordinate saturates here.
    pub cap: usize,
    /// `J(Delta + n)`.
    idle_cost: Vec<f64>,
    /// `C r + sum_{k<r} J(Delta + n + k)`; ages during the transmission are
    /// not saturated.
    tx_cost: Vec<f64>,
}

impl TruncatedMdp {
    pub fn new(spec: &AgentSpec, tau: Tau, price: f64, age_cap: Option<f64>) -> Result<Self> {
        if !(price.is_finite() && price >= 0.0) {
            return Err(domain("transmission cost must be finite and >= 0"));
        }
        let delta = reset_age(spec, tau)?.as_f64();
        let r = spec.tx_len(tau)?;
        let age_cap = age_cap.unwrap_or_else(|| default_age_cap(delta, r));
        if age_cap < delta + 10.0 * f64::from(r) {
            return Err(domain(format!(
                "age cap {age_cap} must be at least Delta + 10 r = {}",
                delta + 10.0 * f64::from(r)
            )));
        }
        let cap = (age_cap - delta).floor() as usize;
        let j: Vec<f64> = (0..cap + r as usize).map(|k| spec.cost_at(tau, delta + k as f64)).collect();
        let idle_cost = j[..=cap].to_vec();
        let mut tx_cost = Vec::with_capacity(cap + 1);
        for n in 0..=cap {
            let window: f64 = j[n..n + r as usize].iter().sum();
            tx_cost.push(price * f64::from(r) + window);
        }
        Ok(Self { tau, tx_len: r, delta, price, cap, idle_cost, tx_cost })
    }

    pub fn num_states(&self) -> usize {
        self.cap + 1
    }

    pub fn age_cap(&self) -> f64 {
        self.delta + self.cap as f64
    }

    /// Relative value iteration, anchored at `(Delta, 0)`.
    pub fn solve(&self, vi_tol: f64, max_iter: usize) -> Result<OracleResult> {
        if !(vi_tol > 0.0) {
            return Err(domain("vi_tol must be > 0"));
        }
        let n_states = self.num_states();
        let r = f64::from(self.tx_len);
        let tx_move = ETA / r;
        let mut h = vec![0.0f64; n_states];
        let mut next = vec![0.0f64; n_states];
        let mut span = f64::INFINITY;

        for it in 1..=max_iter {
            let h0 = h[0];
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut scale = 1.0f64;
            for n in 0..n_states {
                let succ = (n + 1).min(self.cap);
                let idle = self.idle_cost[n] + ETA * h[succ] + (1.0 - ETA) * h[n];
                let tx = self.tx_cost[n] / r + tx_move * h0 + (1.0 - tx_move) * h[n];
                let v = idle.min(tx);
                let d = v - h[n];
                lo = lo.min(d);
                hi = hi.max(d);
                next[n] = v;
                scale = scale.max(v.abs());
            }
            span = hi - lo;
            // spans below a few ulps of the values are roundoff, not progress
            let floor = 64.0 * f64::EPSILON * scale;
            let anchor = next[0];
            for (dst, src) in h.iter_mut().zip(&next) {
                *dst = src - anchor;
            }
            if span < vi_tol.max(floor) {
                return Ok(self.extract(&h, (lo, hi), it, span));
            }
        }
        Err(Error::OracleDiverged { iterations: max_iter, span })
    }

    fn extract(&self, h: &[f64], bounds: (f64, f64), iterations: usize, span: f64) -> OracleResult {
        let r = f64::from(self.tx_len);
        let estimate = 0.5 * (bounds.0 + bounds.1);
        // S' = eta * h for the untransformed semi-Markov model
        let diff: Vec<f64> = h.iter().map(|x| ETA * x).collect();
        let transmit: Vec<bool> = (0..self.num_states())
            .map(|n| {
                let succ = (n + 1).min(self.cap);
                let idle = self.idle_cost[n] - estimate + diff[succ];
                let tx = self.tx_cost[n] - r * estimate + diff[0];
                tx <= idle + 1e-9 * idle.abs().max(tx.abs()).max(1.0)
            })
            .collect();
        let threshold = match transmit.iter().position(|&t| t) {
            Some(n) => Threshold::At(n as u64),
            None => Threshold::NeverTransmit,
        };
        let lambda = self.policy_gain(&transmit);
        OracleResult {
            lambda,
            vi_bounds: bounds,
            transmit,
            differential: diff,
            threshold,
            delta: self.delta,
            age_cap: self.age_cap(),
            iterations,
            span,
        }
    }

    /// Gain of a stationary policy. Its chain from `Delta` is deterministic:
    /// it either returns to `Delta` through a transmission or idles at the cap.
    fn policy_gain(&self, transmit: &[bool]) -> f64 {
        let (mut cost, mut time) = (0.0, 0.0);
        for (n, &tx) in transmit.iter().enumerate() {
            if tx {
                return (cost + self.tx_cost[n]) / (time + f64::from(self.tx_len));
            }
            cost += self.idle_cost[n];
            time += 1.0;
        }
        self.idle_cost[self.cap]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Average cost of the greedy policy, evaluated exactly on its cycle.
    pub lambda: f64,
    /// Bracket on the optimal gain from the last iteration.
    pub vi_bounds: (f64, f64),
    /// Greedy action at age `Delta + n`, `true` meaning start a transmission.
    pub transmit: Vec<bool>,
    /// `S'(Delta + n)`, with `S'(Delta) = 0`.
    pub differential: Vec<f64>,
    /// First age offset at which the greedy policy transmits.
    pub threshold: Threshold,
    pub delta: f64,
    pub age_cap: f64,
    pub iterations: usize,
    pub span: f64,
}

impl OracleResult {
    pub fn threshold_age(&self) -> Option<f64> {
        match self.threshold {
            Threshold::At(m) => Some(self.delta + m as f64),
            Threshold::NeverTransmit => None,
        }
    }

    /// `(age, S'(age), action)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, bool)> + '_ {
        self.differential.iter().zip(&self.transmit).enumerate().map(|(n, (s, a))| (self.delta + n as f64, *s, *a))
    }
}

pub fn solve_mdp(spec: &AgentSpec, tau: Tau, c: f64, cfg: &OracleConfig) -> Result<OracleResult> {
    TruncatedMdp::new(spec, tau, c, cfg.age_cap)?.solve(cfg.vi_tol, cfg.max_iter)
}

/// True iff the greedy policy never switches from transmit back to idle
/// below the cap.
pub fn verify_threshold_structure(result: &OracleResult) -> bool {
    let n = result.transmit.len();
    let upto = n.saturating_sub(1);
    result.transmit[..upto].windows(2).all(|w| !(w[0] && !w[1]))
}

/// How the closed-form and oracle thresholds relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Exact,
    /// One apart, with both thresholds giving the same average cost: the
    /// price sits on a Whittle index value.
    Tie,
    /// Different thresholds with the same average cost further apart than a
    /// tie, which only happens where the cost curve is flat.
    Degenerate,
    Mismatch,
}

#[derive(Debug, Clone)]
pub struct CrossCheck {
    pub closed_form: ThresholdResult,
    pub oracle: OracleResult,
    pub lambda_gap: f64,
    /// `max(abs_tol, truncation bound)`.
    pub tolerance: f64,
    /// `max(0, lambda - J(age cap))`: how much cheaper the saturated chain
    /// can be than the real one.
    pub truncation_bound: f64,
    pub agreement: Agreement,
}

impl CrossCheck {
    pub fn lambda_ok(&self) -> bool {
        self.lambda_gap <= self.tolerance
    }

    pub fn pass(&self) -> bool {
        self.lambda_ok() && self.agreement != Agreement::Mismatch
    }
}

/// Solve one instance both ways and compare.
pub fn cross_check(spec: &AgentSpec, tau: Tau, c: f64, cfg: &OracleConfig, abs_tol: f64) -> Result<CrossCheck> {
    let mut curve = ThresholdCurve::new(spec, tau)?;
    let closed_form = curve.solve(c)?;
    let oracle = solve_mdp(spec, tau, c, cfg)?;
    let lam = closed_form.avg_cost;
    let j_cap = spec.cost_at(tau, oracle.age_cap);
    let truncation_bound = (lam - j_cap).max(0.0);
    let tolerance = abs_tol.max(truncation_bound);
    let lambda_gap = (lam - oracle.lambda).abs();

    let mut same_cost = |m: u64| (curve.threshold_cost_at(m, c) - lam).abs() <= tolerance;
    let agreement = match (closed_form.threshold, oracle.threshold) {
        (a, b) if a == b => Agreement::Exact,
        (Threshold::At(a), Threshold::At(b)) if a.abs_diff(b) == 1 && same_cost(b) => Agreement::Tie,
        (_, Threshold::At(b)) if same_cost(b) => Agreement::Degenerate,
        (Threshold::At(_), Threshold::NeverTransmit) if (oracle.lambda - lam).abs() <= tolerance => {
            Agreement::Degenerate
        }
        _ => Agreement::Mismatch,
    };
    Ok(CrossCheck { closed_form, oracle, lambda_gap, tolerance, truncation_bound, agreement })
}
