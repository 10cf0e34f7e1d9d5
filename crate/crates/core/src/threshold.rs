//! Single-agent machinery for the decoupled problem with transmission price `C`.
//!
//! Ages live on the lattice `Delta, Delta + 1, ...`; everything here is
//! indexed by the integer offset from `Delta`. For a threshold `H = Delta + m`
//! the extended threshold is `H~ = H + r` and one renewal cycle spans
//! `n = m + r` slots, so
//!
//! ```text
//! J^W(m)  = (sum_{k<n} J_k + C r) / n
//! V_n     = n J_{n-1} - sum_{k<n} J_k          (V_1 = 0)
//! W(m)    = V_{m+r+1} / r
//! ```
//!
//! where `J_k = J(tau, Delta + k)`. `V` is accumulated from its non-negative
//! increments `V_{n+1} - V_n = n (J_n - J_{n-1})`, which avoids cancelling
//! two large sums and makes the stored curve exactly non-decreasing.

use std::sync::Arc;

use crate::aoi::{reset_age, AgentSpec, Tau};
use crate::cost::CostModel;
use crate::error::{domain, Error, Result};

/// Largest threshold offset the search will visit.
pub const SEARCH_LIMIT: usize = 1_000_000;
/// Consecutive near-constant cost steps that certify a plateau.
pub const PLATEAU_RUN: usize = 10_000;
/// Relative step size below which the cost counts as constant.
pub const PLATEAU_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Threshold {
    /// Transmit whenever the age reaches `Delta + offset`.
    At(u64),
    NeverTransmit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub tau: Tau,
    pub tx_len: u32,
    /// `Delta`.
    pub reset_age: f64,
    pub threshold: Threshold,
    /// `lambda = J^W(tau, H)`, or the limiting cost when never transmitting.
    pub avg_cost: f64,
    /// Channel share `r / (H + r - Delta)`; zero when never transmitting.
    pub utilization: f64,
}

impl ThresholdResult {
    pub fn is_never(&self) -> bool {
        self.threshold == Threshold::NeverTransmit
    }

    /// `H` as an age.
    pub fn threshold_age(&self) -> Option<f64> {
        match self.threshold {
            Threshold::At(m) => Some(self.reset_age + m as f64),
            Threshold::NeverTransmit => None,
        }
    }

    /// `H~ = H + r`.
    pub fn extended_threshold(&self) -> Option<f64> {
        self.threshold_age().map(|h| h + f64::from(self.tx_len))
    }

    pub fn offset(&self) -> Option<u64> {
        match self.threshold {
            Threshold::At(m) => Some(m),
            Threshold::NeverTransmit => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terminal {
    Plateau,
    Bound,
}

/// Lazily extended cost, prefix-sum and `V` tables for one `(agent, tau)`.
///
/// The table length at which it stops growing depends only on the cost
/// function, so answers do not depend on the order of queries.
#[derive(Debug, Clone)]
pub struct ThresholdCurve {
    tau: Tau,
    tx_len: u32,
    delta: f64,
    cost: Arc<dyn CostModel>,
    j: Vec<f64>,
    /// `prefix[n] = sum_{k<n} j[k]`.
    prefix: Vec<f64>,
    /// `v[n] = V_n`; `v[0]` is a placeholder.
    v: Vec<f64>,
    flat_run: usize,
    terminal: Option<Terminal>,
}

impl ThresholdCurve {
    pub fn new(spec: &AgentSpec, tau: Tau) -> Result<Self> {
        let delta = reset_age(spec, tau)?.as_f64();
        let tx_len = spec.tx_len(tau)?;
        Ok(Self {
            tau,
            tx_len,
            delta,
            cost: spec.cost().clone(),
            j: Vec::new(),
            prefix: vec![0.0],
            v: vec![0.0],
            flat_run: 0,
            terminal: None,
        })
    }

    pub fn tau(&self) -> Tau {
        self.tau
    }

    pub fn tx_len(&self) -> u32 {
        self.tx_len
    }

    pub fn reset_age(&self) -> f64 {
        self.delta
    }

    fn max_len(&self) -> usize {
        SEARCH_LIMIT + self.tx_len as usize + 2
    }

    /// Grow the tables to `len` lattice points if the curve allows it.
    fn extend_to(&mut self, len: usize) -> bool {
        while self.j.len() < len {
            if self.terminal.is_some() {
                return false;
            }
            let k = self.j.len();
            let jk = self.cost.eval(self.tau, self.delta + k as f64);
            if let Some(&prev) = self.j.last() {
                if (jk - prev).abs() <= PLATEAU_TOL * jk.abs().max(1.0) {
                    self.flat_run += 1;
                } else {
                    self.flat_run = 0;
                }
            }
            self.j.push(jk);
            self.prefix.push(self.prefix[k] + jk);
            // v[n] for n = k + 1 uses j[k] and j[k-1]
            let n = k + 1;
            let vn = if n == 1 { 0.0 } else { self.v[n - 1] + (n - 1) as f64 * (jk - self.j[k - 1]) };
            self.v.push(vn);

            if self.flat_run >= PLATEAU_RUN {
                self.terminal = Some(Terminal::Plateau);
            } else if self.j.len() >= self.max_len() {
                self.terminal = Some(Terminal::Bound);
            }
        }
        true
    }

    /// `J(tau, Delta + k)`.
    pub fn cost_at(&mut self, k: usize) -> f64 {
        if self.extend_to(k + 1) {
            self.j[k]
        } else {
            *self.j.last().unwrap()
        }
    }

    /// `V_n`, defined for `n >= 1`. Past a certified plateau the curve is
    /// flat and the last value is returned.
    pub fn v_at(&mut self, n: usize) -> f64 {
        assert!(n >= 1, "V is defined from n = 1");
        if self.extend_to(n) {
            self.v[n]
        } else {
            *self.v.last().unwrap()
        }
    }

    /// Whittle index at threshold offset `m` (age `Delta + m`). Offsets down to
    /// `-r` are inside the domain of `V`; anything below that has index zero.
    pub fn whittle_at(&mut self, m: i64) -> f64 {
        let n = m + i64::from(self.tx_len) + 1;
        if n < 1 {
            return 0.0;
        }
        self.v_at(n as usize) / f64::from(self.tx_len)
    }

    /// `J^W` for threshold offset `m` and price `c`.
    pub fn threshold_cost_at(&mut self, m: u64, c: f64) -> f64 {
        let n = m as usize + self.tx_len as usize;
        let sum = if self.extend_to(n) {
            self.prefix[n]
        } else {
            // past a plateau the cost is its last value
            let last = self.j.len();
            self.prefix[last] + (n - last) as f64 * self.j[last - 1]
        };
        (sum + c * f64::from(self.tx_len)) / n as f64
    }

    /// Optimal threshold for price `c`: the smallest `m >= 0` with
    /// `C r <= V(H + 1)`. Equality picks the smaller threshold.
    pub fn solve(&mut self, c: f64) -> Result<ThresholdResult> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(domain(format!("transmission cost must be finite and >= 0, got {c}")));
        }
        let r = self.tx_len as usize;
        let rf = f64::from(self.tx_len);
        let mut n = r + 1;
        loop {
            if !self.extend_to(n) {
                break;
            }
            // compared as C <= V / r so that C = W(H) lands exactly on the tie
            if c <= self.v[n] / rf {
                let m = (n - r - 1) as u64;
                let avg_cost = self.threshold_cost_at(m, c);
                return Ok(ThresholdResult {
                    tau: self.tau,
                    tx_len: self.tx_len,
                    reset_age: self.delta,
                    threshold: Threshold::At(m),
                    avg_cost,
                    utilization: f64::from(self.tx_len) / (m as f64 + f64::from(self.tx_len)),
                });
            }
            n += 1;
        }
        match self.terminal {
            Some(Terminal::Plateau) => Ok(ThresholdResult {
                tau: self.tau,
                tx_len: self.tx_len,
                reset_age: self.delta,
                threshold: Threshold::NeverTransmit,
                avg_cost: *self.j.last().unwrap(),
                utilization: 0.0,
            }),
            _ => Err(Error::UnboundedSearch { tau: self.tau, limit: SEARCH_LIMIT }),
        }
    }
}

fn lattice_offset(h: f64, delta: f64, what: &str) -> Result<i64> {
    let off = h - delta;
    let rounded = off.round();
    if (off - rounded).abs() > 1e-9 {
        return Err(domain(format!("{what} {h} is not on the age lattice starting at {delta}")));
    }
    Ok(rounded as i64)
}

/// `J^W(tau, H)` for an explicit threshold age `H >= Delta`.
pub fn threshold_cost(spec: &AgentSpec, tau: Tau, h: f64, c: f64) -> Result<f64> {
    let delta = reset_age(spec, tau)?.as_f64();
    let r = spec.tx_len(tau)?;
    let m = lattice_offset(h, delta, "threshold")?;
    if m < 0 {
        return Err(domain(format!("threshold {h} below reset age {delta}")));
    }
    if c < 0.0 {
        return Err(domain("transmission cost must be non-negative"));
    }
    let n = m as usize + r as usize;
    let mut sum = 0.0;
    for k in 0..n {
        sum += spec.cost_at(tau, delta + k as f64);
    }
    Ok((sum + c * f64::from(r)) / n as f64)
}

pub fn optimal_threshold(spec: &AgentSpec, tau: Tau, c: f64) -> Result<ThresholdResult> {
    ThresholdCurve::new(spec, tau)?.solve(c)
}

/// `V(h) = (h~ - Delta) J(tau, h~ - 1) - sum_{k=Delta}^{h~-1} J(tau, k)`,
/// for `h >= Delta - r + 1`.
pub fn v_function(spec: &AgentSpec, tau: Tau, h: f64) -> Result<f64> {
    let delta = reset_age(spec, tau)?.as_f64();
    let r = spec.tx_len(tau)?;
    let n = lattice_offset(h, delta, "age")? + i64::from(r);
    if n < 1 {
        return Err(domain(format!("V is defined for h >= Delta - r + 1 = {}", delta - f64::from(r) + 1.0)));
    }
    let n = n as usize;
    let mut v = 0.0;
    let mut prev = spec.cost_at(tau, delta);
    for i in 1..n {
        let cur = spec.cost_at(tau, delta + i as f64);
        v += i as f64 * (cur - prev);
        prev = cur;
    }
    Ok(v)
}

/// Whittle index `W(H) = V(H + 1) / r` for `H >= Delta`.
pub fn whittle_index(spec: &AgentSpec, tau: Tau, h: f64) -> Result<f64> {
    let delta = reset_age(spec, tau)?.as_f64();
    if h < delta - 1e-9 {
        return Err(domain(format!("Whittle index needs H >= Delta = {delta}, got {h}")));
    }
    let r = spec.tx_len(tau)?;
    Ok(v_function(spec, tau, h + 1.0)? / f64::from(r))
}

/// Fraction of slots spent transmitting under the threshold policy.
pub fn utilization(result: &ThresholdResult) -> f64 {
    match result.threshold {
        Threshold::At(m) => f64::from(result.tx_len) / (m as f64 + f64::from(result.tx_len)),
        Threshold::NeverTransmit => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauChoice {
    pub tau_star: Tau,
    pub result: ThresholdResult,
    /// `(tau, J~^W(tau))` over the admissible set.
    pub cost_curve: Vec<(Tau, f64)>,
    /// Every admissible tau ends up never transmitting.
    pub all_never_transmit: bool,
}

/// Threshold curves for every admissible tau of one agent, reused across
/// prices.
#[derive(Debug, Clone)]
pub struct AgentSolver {
    curves: Vec<ThresholdCurve>,
}

impl AgentSolver {
    pub fn new(spec: &AgentSpec) -> Result<Self> {
        let curves = spec.tau_set().iter().map(|&tau| ThresholdCurve::new(spec, tau)).collect::<Result<_>>()?;
        Ok(Self { curves })
    }

    pub fn curve_mut(&mut self, tau: Tau) -> Option<&mut ThresholdCurve> {
        self.curves.iter_mut().find(|c| c.tau() == tau)
    }

    /// Minimise `J~^W(tau)` over the admissible set; ties go to the smaller tau.
    pub fn best_tau(&mut self, c: f64) -> Result<TauChoice> {
        let mut cost_curve = Vec::with_capacity(self.curves.len());
        let mut best: Option<ThresholdResult> = None;
        let mut all_never = true;
        for curve in &mut self.curves {
            let res = curve.solve(c)?;
            cost_curve.push((res.tau, res.avg_cost));
            all_never &= res.is_never();
            if best.as_ref().is_none_or(|b| res.avg_cost < b.avg_cost) {
                best = Some(res);
            }
        }
        let mut result = best.expect("tau_set is non-empty");
        if all_never {
            let smallest = self.curves[0].solve(c)?;
            result = smallest;
        }
        Ok(TauChoice { tau_star: result.tau, result, cost_curve, all_never_transmit: all_never })
    }
}

pub fn best_tau(spec: &AgentSpec, c: f64) -> Result<TauChoice> {
    AgentSolver::new(spec)?.best_tau(c)
}
