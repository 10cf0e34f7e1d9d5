//! Slot-level simulator of the shared-channel system.
//!
//! Each slot runs in this order: processing completions refresh the agents'
//! buffers, a free channel is offered to the policy, costs are charged at the
//! current ages, and finally ages advance (or reset on delivery). A
//! transmission started in slot `s` occupies slots `s..s + r` and the update
//! lands at the start of slot `s + r` with age `buffer_age(s) + r`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::aoi::{reset_age, AgentSpec, Tau};
use crate::cost::CostModel;
use crate::error::{domain, Result};
use crate::threshold::ThresholdCurve;

pub const MIN_HORIZON: u64 = 1_000;
pub const MIN_SEEDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    /// Largest Whittle index at the current ages.
    Whittle,
    /// Cycle through the agents, skipping those with nothing to send.
    RoundRobin,
    /// Draw an agent at random; `None` is uniform. Weights are renormalized
    /// over the agents that have an update ready, so the channel never idles.
    Randomized { weights: Option<Vec<f64>> },
    /// Oldest age first.
    MaxAge,
    /// Transmit as soon as the age reaches the agent's threshold age; `None`
    /// never transmits. The channel may idle.
    Threshold { ages: Vec<Option<f64>> },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Whittle => "whittle",
            Policy::RoundRobin => "round-robin",
            Policy::Randomized { .. } => "randomized",
            Policy::MaxAge => "max-age",
            Policy::Threshold { .. } => "threshold",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "whittle" => Some(Policy::Whittle),
            "round-robin" | "rr" => Some(Policy::RoundRobin),
            "randomized" | "random" => Some(Policy::Randomized { weights: None }),
            "max-age" => Some(Policy::MaxAge),
            _ => None,
        }
    }

    /// Randomized policy with probabilities proportional to `freq`.
    pub fn randomized_from_frequencies(freq: &[f64]) -> Result<Self> {
        let total: f64 = freq.iter().sum();
        if !(total > 0.0) || freq.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(domain("frequencies must be non-negative with a positive sum"));
        }
        Ok(Policy::Randomized { weights: Some(freq.iter().map(|f| f / total).collect()) })
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Policy::Randomized { weights: Some(w) } => {
                if w.len() != n {
                    return Err(domain(format!("{} randomized weights for {n} agents", w.len())));
                }
                if w.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(domain("randomized weights must be non-negative"));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(domain(format!("randomized weights sum to {total}, not 1")));
                }
            }
            Policy::Threshold { ages } if ages.len() != n => {
                return Err(domain(format!("{} thresholds for {n} agents", ages.len())));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    /// Slots excluded from the averages; `None` is 10% of the horizon.
    pub burn_in: Option<u64>,
    /// Record a periodic age sample every this many slots, plus every start
    /// and delivery.
    pub trace_every: Option<u64>,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self { horizon, seed, burn_in: None, trace_every: None }
    }

    pub fn burn_in_slots(&self) -> u64 {
        self.burn_in.unwrap_or(self.horizon / 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimAgentState {
    pub aoi: u64,
    /// Slots left after the current one while transmitting; 0 otherwise.
    pub tx_remaining: u32,
    /// Age of the freshest processed update, `None` before the first one.
    pub buffer_age: Option<u64>,
    /// Completions happen in slots `t > 0` with `(t + phase) % tau == 0`.
    pub phase: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEvent {
    Sample,
    Start,
    Deliver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub t: u64,
    pub agent: usize,
    pub aoi: u64,
    pub z: u32,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentStats {
    pub agent: usize,
    pub tau: Tau,
    pub time_avg_cost: f64,
    pub mean_aoi: f64,
    pub utilization: f64,
    pub deliveries: u64,
    /// Mean of the actual waits of delivered updates.
    pub mean_wait: f64,
    /// Mean age right after a delivery.
    pub mean_reset_age: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub policy: String,
    pub seed: u64,
    pub horizon: u64,
    pub burn_in: u64,
    pub agents: Vec<AgentStats>,
    pub total_cost: f64,
    pub trace: Option<Vec<TraceRow>>,
}

/// One line of the per-run CSV; the aggregate line has `agent = -1` and no
/// `tau`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimCsvRow {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub agent: i64,
    pub tau: Option<Tau>,
    pub time_avg_cost: f64,
    pub mean_aoi: f64,
    pub utilization: f64,
}

impl SimReport {
    pub fn total_utilization(&self) -> f64 {
        self.agents.iter().map(|a| a.utilization).sum()
    }

    pub fn csv_rows(&self, scenario: &str) -> Vec<SimCsvRow> {
        let row = |agent: i64, tau, cost, aoi, util| SimCsvRow {
            scenario: scenario.to_owned(),
            policy: self.policy.clone(),
            seed: self.seed,
            horizon: self.horizon,
            agent,
            tau,
            time_avg_cost: cost,
            mean_aoi: aoi,
            utilization: util,
        };
        let mut rows: Vec<SimCsvRow> = self
            .agents
            .iter()
            .map(|a| row(a.agent as i64, Some(a.tau), a.time_avg_cost, a.mean_aoi, a.utilization))
            .collect();
        let n = self.agents.len().max(1) as f64;
        let mean_aoi = self.agents.iter().map(|a| a.mean_aoi).sum::<f64>() / n;
        rows.push(row(-1, None, self.total_cost, mean_aoi, self.total_utilization()));
        rows
    }
}

/// Cost values at integer ages, grown on demand.
#[derive(Debug)]
struct CostTable {
    tau: Tau,
    model: Arc<dyn CostModel>,
    values: Vec<f64>,
}

impl CostTable {
    #[inline]
    fn get(&mut self, age: u64) -> f64 {
        let a = age as usize;
        if a >= self.values.len() {
            let target = (a + 1).max(self.values.len() * 2);
            for k in self.values.len()..target {
                self.values.push(self.model.eval(self.tau, k as f64));
            }
        }
        self.values[a]
    }
}

/// Whittle index at integer ages. Ages off the lattice use the lattice point
/// below them.
#[derive(Debug)]
struct IndexTable {
    curve: ThresholdCurve,
    values: Vec<f64>,
}

impl IndexTable {
    #[inline]
    fn get(&mut self, age: u64) -> f64 {
        let a = age as usize;
        while self.values.len() <= a {
            let k = self.values.len() as f64;
            let m = (k - self.curve.reset_age()).floor() as i64;
            let w = self.curve.whittle_at(m);
            self.values.push(w);
        }
        self.values[a]
    }
}

/// Slot-by-slot engine; [`run`] drives it to the horizon.
pub struct Simulator {
    taus: Vec<Tau>,
    tx_len: Vec<u32>,
    states: Vec<SimAgentState>,
    costs: Vec<CostTable>,
    index: Option<Vec<IndexTable>>,
    policy: Policy,
    rng: ChaCha8Rng,
    /// Agent currently holding the channel.
    channel: Option<usize>,
    /// Age the in-flight update will have on arrival.
    in_flight_age: u64,
    in_flight_wait: u64,
    next_rr: usize,
    t: u64,
}

/// What happened in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotOutcome {
    pub started: Option<usize>,
    pub transmitting: Option<usize>,
    /// `(agent, actual wait)` of an update that landed at the end of the slot.
    pub delivered: Option<(usize, u64)>,
}

impl Simulator {
    pub fn new(agents: &[AgentSpec], taus: &[Tau], policy: Policy, seed: u64) -> Result<Self> {
        if agents.is_empty() {
            return Err(domain("at least one agent is required"));
        }
        if agents.len() != taus.len() {
            return Err(domain(format!("{} processing times for {} agents", taus.len(), agents.len())));
        }
        policy.validate(agents.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tx_len = Vec::with_capacity(agents.len());
        let mut states = Vec::with_capacity(agents.len());
        let mut costs = Vec::with_capacity(agents.len());
        for (spec, &tau) in agents.iter().zip(taus) {
            if !spec.admits(tau) {
                return Err(domain(format!("tau = {tau} is not admissible for agent {}", spec.id)));
            }
            let r = spec.tx_len(tau)?;
            let delta = reset_age(spec, tau)?.as_f64();
            tx_len.push(r);
            states.push(SimAgentState {
                aoi: delta.ceil() as u64,
                tx_remaining: 0,
                buffer_age: None,
                phase: rng.random_range(0..tau),
            });
            costs.push(CostTable { tau, model: spec.cost().clone(), values: Vec::new() });
        }
        let index = if policy == Policy::Whittle {
            Some(
                agents
                    .iter()
                    .zip(taus)
                    .map(|(spec, &tau)| Ok(IndexTable { curve: ThresholdCurve::new(spec, tau)?, values: Vec::new() }))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            taus: taus.to_vec(),
            tx_len,
            states,
            costs,
            index,
            policy,
            rng,
            channel: None,
            in_flight_age: 0,
            in_flight_wait: 0,
            next_rr: 0,
            t: 0,
        })
    }

    pub fn states(&self) -> &[SimAgentState] {
        &self.states
    }

    pub fn channel(&self) -> Option<usize> {
        self.channel
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    /// Cost of agent `i` at its current age.
    pub fn current_cost(&mut self, i: usize) -> f64 {
        let age = self.states[i].aoi;
        self.costs[i].get(age)
    }

    fn pick(&mut self) -> Option<usize> {
        let n = self.states.len();
        let eligible = |s: &SimAgentState| s.buffer_age.is_some();
        match &self.policy {
            Policy::Whittle => {
                let index = self.index.as_mut().expect("index tables exist for the Whittle policy");
                let mut best: Option<(usize, f64)> = None;
                for (i, s) in self.states.iter().enumerate() {
                    if !eligible(s) {
                        continue;
                    }
                    let w = index[i].get(s.aoi);
                    if best.is_none_or(|(_, bw)| w > bw) {
                        best = Some((i, w));
                    }
                }
                best.map(|(i, _)| i)
            }
            Policy::MaxAge => {
                let mut best: Option<(usize, u64)> = None;
                for (i, s) in self.states.iter().enumerate() {
                    if eligible(s) && best.is_none_or(|(_, a)| s.aoi > a) {
                        best = Some((i, s.aoi));
                    }
                }
                best.map(|(i, _)| i)
            }
            Policy::RoundRobin => {
                for k in 0..n {
                    let i = (self.next_rr + k) % n;
                    if eligible(&self.states[i]) {
                        self.next_rr = (i + 1) % n;
                        return Some(i);
                    }
                }
                None
            }
            Policy::Randomized { weights } => {
                let w = |i: usize| weights.as_ref().map_or(1.0, |w| w[i]);
                let total: f64 = (0..n).filter(|&i| eligible(&self.states[i])).map(w).sum();
                if !(total > 0.0) {
                    return None;
                }
                let mut u = self.rng.random::<f64>() * total;
                let mut last = None;
                for i in 0..n {
                    if !eligible(&self.states[i]) || w(i) <= 0.0 {
                        continue;
                    }
                    last = Some(i);
                    if u < w(i) {
                        return Some(i);
                    }
                    u -= w(i);
                }
                last
            }
            Policy::Threshold { ages } => (0..n).find(|&i| {
                let s = &self.states[i];
                eligible(s) && ages[i].is_some_and(|h| s.aoi as f64 >= h - 1e-9)
            }),
        }
    }

    /// Advance one slot, calling `charge(agent, age, cost)` for every agent at
    /// the ages in force during the slot.
    pub fn step_with(&mut self, mut charge: impl FnMut(usize, u64, f64)) -> SlotOutcome {
        let t = self.t;
        for (s, &tau) in self.states.iter_mut().zip(&self.taus) {
            if t > 0 && (t + u64::from(s.phase)).is_multiple_of(u64::from(tau)) {
                s.buffer_age = Some(u64::from(tau));
            } else if let Some(b) = s.buffer_age.as_mut() {
                *b += 1;
            }
        }

        let mut out = SlotOutcome::default();
        if self.channel.is_none() {
            if let Some(i) = self.pick() {
                let b = self.states[i].buffer_age.expect("picked agents have a buffered update");
                let r = self.tx_len[i];
                self.channel = Some(i);
                self.states[i].tx_remaining = r - 1;
                self.in_flight_age = b + u64::from(r);
                self.in_flight_wait = b - u64::from(self.taus[i]);
                out.started = Some(i);
            }
        }
        out.transmitting = self.channel;

        for i in 0..self.states.len() {
            let age = self.states[i].aoi;
            let c = self.costs[i].get(age);
            charge(i, age, c);
        }

        for s in self.states.iter_mut() {
            s.aoi += 1;
        }
        if let Some(i) = self.channel {
            let s = &mut self.states[i];
            if s.tx_remaining == 0 {
                s.aoi = self.in_flight_age;
                self.channel = None;
                out.delivered = Some((i, self.in_flight_wait));
            } else {
                s.tx_remaining -= 1;
            }
        }
        self.t += 1;
        out
    }

    pub fn step(&mut self) -> SlotOutcome {
        self.step_with(|_, _, _| {})
    }
}

/// Simulate `cfg.horizon` slots and report averages over the slots after the
/// burn-in.
pub fn run(agents: &[AgentSpec], taus: &[Tau], policy: &Policy, cfg: &SimConfig) -> Result<SimReport> {
    if cfg.horizon < MIN_HORIZON {
        return Err(domain(format!("horizon must be at least {MIN_HORIZON} slots, got {}", cfg.horizon)));
    }
    let burn_in = cfg.burn_in_slots();
    if burn_in >= cfg.horizon {
        return Err(domain("burn-in must be shorter than the horizon"));
    }
    if cfg.trace_every == Some(0) {
        return Err(domain("trace interval must be positive"));
    }
    let mut sim = Simulator::new(agents, taus, policy.clone(), cfg.seed)?;
    let n = agents.len();
    let mut cost = vec![0.0f64; n];
    let mut age = vec![0u128; n];
    let mut busy = vec![0u64; n];
    let mut deliveries = vec![0u64; n];
    let mut wait = vec![0u64; n];
    let mut reset = vec![0u64; n];
    let mut trace = cfg.trace_every.map(|_| Vec::new());

    for t in 0..cfg.horizon {
        let measuring = t >= burn_in;
        let out = if measuring {
            sim.step_with(|i, a, c| {
                cost[i] += c;
                age[i] += u128::from(a);
            })
        } else {
            sim.step()
        };
        if measuring {
            if let Some(i) = out.transmitting {
                busy[i] += 1;
            }
            if let Some((i, w)) = out.delivered {
                deliveries[i] += 1;
                wait[i] += w;
                reset[i] += sim.states[i].aoi;
            }
        }
        if let (Some(rows), Some(every)) = (trace.as_mut(), cfg.trace_every) {
            if let Some(i) = out.started {
                let s = sim.states[i];
                rows.push(TraceRow { t, agent: i, aoi: s.aoi - 1, z: s.tx_remaining, event: TraceEvent::Start });
            }
            if let Some((i, _)) = out.delivered {
                let s = sim.states[i];
                rows.push(TraceRow { t: t + 1, agent: i, aoi: s.aoi, z: 0, event: TraceEvent::Deliver });
            }
            if t % every == 0 {
                for (i, s) in sim.states.iter().enumerate() {
                    rows.push(TraceRow {
                        t: t + 1,
                        agent: i,
                        aoi: s.aoi,
                        z: s.tx_remaining,
                        event: TraceEvent::Sample,
                    });
                }
            }
        }
    }

    let window = (cfg.horizon - burn_in) as f64;
    let stats: Vec<AgentStats> = (0..n)
        .map(|i| {
            let d = deliveries[i];
            let per = |x: u64| if d > 0 { x as f64 / d as f64 } else { f64::NAN };
            AgentStats {
                agent: agents[i].id,
                tau: taus[i],
                time_avg_cost: cost[i] / window,
                mean_aoi: age[i] as f64 / window,
                utilization: busy[i] as f64 / window,
                deliveries: d,
                mean_wait: per(wait[i]),
                mean_reset_age: per(reset[i]),
            }
        })
        .collect();
    Ok(SimReport {
        policy: policy.name().to_owned(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        burn_in,
        total_cost: stats.iter().map(|a| a.time_avg_cost).sum(),
        agents: stats,
        trace,
    })
}

/// One arm of a policy comparison: a policy together with the processing
/// times it runs with.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub label: String,
    pub policy: Policy,
    pub taus: Vec<Tau>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Reports in `(arm, seed)` order.
    pub reports: Vec<Vec<SimReport>>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Percentage reduction of `candidate`'s mean total cost relative to
    /// `baseline`.
    pub fn improvement(&self, candidate: &str, baseline: &str) -> Option<f64> {
        let c = self.row(candidate)?;
        let b = self.row(baseline)?;
        Some(100.0 * (b.mean - c.mean) / b.mean)
    }

    /// Difference of means in units of the combined standard error.
    pub fn separation(&self, lower: &str, higher: &str) -> Option<f64> {
        let a = self.row(lower)?;
        let b = self.row(higher)?;
        Some((b.mean - a.mean) / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt())
    }
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run every arm for every seed, in parallel, and summarize total cost.
pub fn compare_policies(agents: &[AgentSpec], runs: &[PolicyRun], horizon: u64, seeds: &[u64]) -> Result<Comparison> {
    if seeds.len() < MIN_SEEDS {
        return Err(domain(format!("at least {MIN_SEEDS} seeds are needed, got {}", seeds.len())));
    }
    let jobs: Vec<(usize, u64)> = (0..runs.len()).flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    let flat: Vec<SimReport> = jobs
        .par_iter()
        .map(|&(a, seed)| run(agents, &runs[a].taus, &runs[a].policy, &SimConfig::new(horizon, seed)))
        .collect::<Result<_>>()?;
    let mut reports: Vec<Vec<SimReport>> = Vec::with_capacity(runs.len());
    let mut it = flat.into_iter();
    for _ in runs {
        reports.push(it.by_ref().take(seeds.len()).collect());
    }
    let rows = runs
        .iter()
        .zip(&reports)
        .map(|(arm, reps)| {
            let totals: Vec<f64> = reps.iter().map(|r| r.total_cost).collect();
            let (mean, stderr) = mean_stderr(&totals);
            ComparisonRow { label: arm.label.clone(), mean, stderr, seeds: totals.len() }
        })
        .collect();
    Ok(Comparison { rows, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aoi::{TxLen, WaitModel};
    use crate::cost::FnCost;
    use num_rational::Rational64;

    fn linear(id: usize, tau: Tau, r: u32) -> AgentSpec {
        AgentSpec::new(
            id,
            [tau],
            TxLen::Constant(r),
            WaitModel::Fixed(Rational64::from_integer(0)),
            FnCost::shared("h", |_, h| h),
        )
        .unwrap()
    }

    #[test]
    fn single_agent_back_to_back() {
        let a = [linear(0, 1, 1)];
        for p in [Policy::Whittle, Policy::RoundRobin, Policy::MaxAge, Policy::Randomized { weights: None }] {
            let rep = run(&a, &[1], &p, &SimConfig::new(1_000, 3)).unwrap();
            assert_eq!(rep.agents[0].mean_aoi, 2.0, "{}", p.name());
            assert_eq!(rep.agents[0].utilization, 1.0);
        }
    }

    #[test]
    fn hand_simulated_first_slots() {
        let a = [linear(0, 1, 1)];
        let mut sim = Simulator::new(&a, &[1], Policy::RoundRobin, 0).unwrap();
        // slot 0: nothing processed yet
        let out = sim.step();
        assert_eq!(out.started, None);
        assert_eq!(sim.states()[0].aoi, 3);
        let mut ages = Vec::new();
        for _ in 0..5 {
            let out = sim.step();
            assert_eq!(out.started, Some(0));
            assert_eq!(out.delivered, Some((0, 0)));
            ages.push(sim.states()[0].aoi);
        }
        assert_eq!(ages, vec![2; 5]);
    }

    #[test]
    fn channel_is_exclusive() {
        let agents: Vec<_> = (0..4).map(|i| linear(i, 3, 2 + i as u32)).collect();
        let mut sim = Simulator::new(&agents, &[3; 4], Policy::Randomized { weights: None }, 9).unwrap();
        let mut holder = None;
        for _ in 0..5_000 {
            let out = sim.step();
            if let Some(i) = out.started {
                assert_eq!(holder, None, "started while busy");
                holder = Some(i);
            }
            let busy = sim.states().iter().filter(|s| s.tx_remaining > 0).count();
            assert!(busy <= 1);
            if let Some((i, w)) = out.delivered {
                assert_eq!(holder, Some(i));
                assert!(w < 3);
                holder = None;
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let agents: Vec<_> = (0..3).map(|i| linear(i, 2 + i as u32, 2)).collect();
        let taus = [2, 3, 4];
        let p = Policy::Randomized { weights: None };
        let a = run(&agents, &taus, &p, &SimConfig::new(5_000, 11)).unwrap();
        let b = run(&agents, &taus, &p, &SimConfig::new(5_000, 11)).unwrap();
        let c = run(&agents, &taus, &p, &SimConfig::new(5_000, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.total_cost, c.total_cost);
    }

    #[test]
    fn threshold_policy_utilization() {
        let a = [linear(0, 1, 2)];
        // Delta = 3; threshold age 7 gives cycles of 7 - 3 + 2 slots
        let p = Policy::Threshold { ages: vec![Some(7.0)] };
        let rep = run(&a, &[1], &p, &SimConfig::new(100_000, 0)).unwrap();
        assert!((rep.agents[0].utilization - 2.0 / 6.0).abs() < 1e-3);
        assert_eq!(rep.agents[0].mean_reset_age, 3.0);
    }

    #[test]
    fn never_threshold_idles() {
        let a = [linear(0, 1, 2)];
        let p = Policy::Threshold { ages: vec![None] };
        let rep = run(&a, &[1], &p, &SimConfig::new(2_000, 0)).unwrap();
        assert_eq!(rep.agents[0].utilization, 0.0);
        assert_eq!(rep.agents[0].deliveries, 0);
    }

    #[test]
    fn csv_rows_include_aggregate() {
        let agents: Vec<_> = (0..2).map(|i| linear(i, 1, 1)).collect();
        let rep = run(&agents, &[1, 1], &Policy::RoundRobin, &SimConfig::new(1_000, 0)).unwrap();
        let rows = rep.csv_rows("demo");
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].agent, -1);
        assert_eq!(rows[2].tau, None);
        assert!((rows[2].time_avg_cost - rep.total_cost).abs() < 1e-12);
        assert!(rows[2].utilization <= 1.0);
    }

    #[test]
    fn trace_records_events() {
        let a = [linear(0, 1, 1)];
        let cfg = SimConfig { trace_every: Some(100), ..SimConfig::new(1_000, 0) };
        let rep = run(&a, &[1], &Policy::RoundRobin, &cfg).unwrap();
        let trace = rep.trace.unwrap();
        assert!(trace.iter().any(|r| r.event == TraceEvent::Start));
        assert!(trace.iter().filter(|r| r.event == TraceEvent::Deliver).all(|r| r.aoi == 2));
    }

    #[test]
    fn invalid_inputs() {
        let a = [linear(0, 1, 1)];
        assert!(run(&a, &[1], &Policy::Whittle, &SimConfig::new(999, 0)).is_err());
        assert!(run(&a, &[2], &Policy::Whittle, &SimConfig::new(1_000, 0)).is_err());
        let bad = Policy::Randomized { weights: Some(vec![0.5]) };
        assert!(run(&a, &[1], &bad, &SimConfig::new(1_000, 0)).is_err());
    }

    #[test]
    fn self_comparison_is_zero() {
        let agents: Vec<_> = (0..2).map(|i| linear(i, 2, 1)).collect();
        let arm = PolicyRun { label: "rr".into(), policy: Policy::RoundRobin, taus: vec![2, 2] };
        let mut twin = arm.clone();
        twin.label = "rr2".into();
        let seeds: Vec<u64> = (0..10).collect();
        let cmp = compare_policies(&agents, &[arm, twin], 1_000, &seeds).unwrap();
        assert_eq!(cmp.improvement("rr", "rr2"), Some(0.0));
        assert!(compare_policies(&agents, &[], 1_000, &seeds[..3]).is_err());
    }

    #[test]
    fn mean_stderr_basic() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }
}
