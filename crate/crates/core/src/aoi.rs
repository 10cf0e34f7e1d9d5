//! Agents, reset ages and the per-slot AoI recursion.
//!
//! Ages are kept as exact rationals. The analytic solvers plug in a constant
//! waiting time that may be fractional (the default is the mean of a uniform
//! phase, `(tau - 1) / 2`), while the simulator only ever produces integer
//! waits. Both go through the same recursion.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{domain, Error, Result};

/// Processing time, in slots.
pub type Tau = u32;

/// Transmission length as a function of the processing time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxLen {
    /// `r(tau) = 5 + ceil(tau / 2)`, the grid-mapping update size.
    MappingRule,
    /// `r(tau) = tau`.
    Identity,
    /// The same length for every processing time.
    Constant(u32),
    /// Explicit lengths, keyed by processing time.
    Table(#[serde(with = "crate::cost::pairs")] BTreeMap<Tau, u32>),
}

impl TxLen {
    pub fn eval(&self, tau: Tau) -> Option<u32> {
        match self {
            TxLen::MappingRule => Some(5 + tau.div_ceil(2)),
            TxLen::Identity => Some(tau),
            TxLen::Constant(r) => Some(*r),
            TxLen::Table(t) => t.get(&tau).copied(),
        }
    }
}

/// How the analytic waiting-time constant is chosen for a processing time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaitModel {
    /// `(tau - 1) / 2`, the mean wait when requests land uniformly in the
    /// processing cycle.
    #[default]
    Expected,
    /// The same constant for every processing time.
    Fixed(Rational64),
}

impl WaitModel {
    pub fn delta(&self, tau: Tau) -> Rational64 {
        match *self {
            WaitModel::Expected => Rational64::new(i64::from(tau) - 1, 2),
            WaitModel::Fixed(d) => d,
        }
    }

    /// Fixed wait from a float, using the simplest rational that rounds to it.
    pub fn fixed_f64(value: f64) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(domain(format!("waiting time must be a non-negative number, got {value}")));
        }
        Rational64::approximate_float(value)
            .map(WaitModel::Fixed)
            .ok_or_else(|| domain(format!("waiting time {value} is not representable")))
    }
}

/// One monitoring agent: its admissible processing times, update sizes,
/// waiting-time constant and cost function.
#[derive(Clone)]
pub struct AgentSpec {
    pub id: usize,
    tau_set: Vec<Tau>,
    tx_len: TxLen,
    wait: WaitModel,
    cost: Arc<dyn CostModel>,
}

impl fmt::Debug for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentSpec")
            .field("id", &self.id)
            .field("tau_set", &self.tau_set)
            .field("tx_len", &self.tx_len)
            .field("wait", &self.wait)
            .field("cost", &self.cost)
            .finish()
    }
}

impl AgentSpec {
    pub fn new(
        id: usize,
        tau_set: impl IntoIterator<Item = Tau>,
        tx_len: TxLen,
        wait: WaitModel,
        cost: Arc<dyn CostModel>,
    ) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidAgent { agent: id, reason };

        let mut tau_set: Vec<Tau> = tau_set.into_iter().collect();
        tau_set.sort_unstable();
        tau_set.dedup();
        if tau_set.is_empty() {
            return Err(invalid("tau_set is empty".into()));
        }
        if tau_set[0] == 0 {
            return Err(invalid("processing times must be at least one slot".into()));
        }

        let mut lens = Vec::with_capacity(tau_set.len());
        for &tau in &tau_set {
            match tx_len.eval(tau) {
                Some(0) => return Err(invalid(format!("tx_len({tau}) is zero"))),
                Some(r) => lens.push(r),
                None => return Err(invalid(format!("tx_len undefined for tau = {tau}"))),
            }
        }
        let non_decreasing = lens.windows(2).all(|w| w[0] <= w[1]);
        let non_increasing = lens.windows(2).all(|w| w[0] >= w[1]);
        if !(non_decreasing || non_increasing) {
            return Err(invalid(format!("tx_len is not monotone over tau_set: {lens:?}")));
        }

        let max_tau = *tau_set.last().unwrap();
        let max_delta = Rational64::from_integer(i64::from(max_tau) - 1);
        for &tau in &tau_set {
            let d = wait.delta(tau);
            if d < Rational64::from_integer(0) || d > max_delta {
                return Err(invalid(format!("waiting time {d} outside [0, {max_delta}] for tau = {tau}")));
            }
        }

        Ok(Self { id, tau_set, tx_len, wait, cost })
    }

    pub fn tau_set(&self) -> &[Tau] {
        &self.tau_set
    }

    pub fn tx_len_rule(&self) -> &TxLen {
        &self.tx_len
    }

    pub fn wait_model(&self) -> WaitModel {
        self.wait
    }

    pub fn cost(&self) -> &Arc<dyn CostModel> {
        &self.cost
    }

    pub fn admits(&self, tau: Tau) -> bool {
        self.tau_set.binary_search(&tau).is_ok()
    }

    fn check_tau(&self, tau: Tau) -> Result<()> {
        if self.admits(tau) {
            Ok(())
        } else {
            Err(domain(format!("tau = {tau} is not admissible for agent {} (tau_set {:?})", self.id, self.tau_set)))
        }
    }

    /// `r(tau)`, checked against the admissible set.
    pub fn tx_len(&self, tau: Tau) -> Result<u32> {
        self.check_tau(tau)?;
        Ok(self.tx_len.eval(tau).expect("validated at construction"))
    }

    /// Analytic waiting-time constant for `tau`.
    pub fn delta_wait(&self, tau: Tau) -> Result<Rational64> {
        self.check_tau(tau)?;
        Ok(self.wait.delta(tau))
    }

    /// `J(tau, age)`.
    pub fn cost_at(&self, tau: Tau, age: f64) -> f64 {
        self.cost.eval(tau, age)
    }

    /// Same agent with a different analytic waiting time.
    pub fn with_wait(&self, wait: WaitModel) -> Result<Self> {
        Self::new(self.id, self.tau_set.clone(), self.tx_len.clone(), wait, self.cost.clone())
    }
}

/// The age the destination resets to on delivery, `tau + r(tau) + delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ResetAge(Rational64);

impl ResetAge {
    pub fn value(&self) -> Rational64 {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        self.0.to_f64().expect("finite rational")
    }
}

pub fn reset_age(spec: &AgentSpec, tau: Tau) -> Result<ResetAge> {
    let r = spec.tx_len(tau)?;
    let delta = spec.delta_wait(tau)?;
    Ok(ResetAge(Rational64::from_integer(i64::from(tau) + i64::from(r)) + delta))
}

/// Age of information held at the destination for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AoiState {
    pub age: Rational64,
}

impl AoiState {
    pub fn new(age: Rational64) -> Self {
        Self { age }
    }

    pub fn from_integer(age: i64) -> Self {
        Self { age: Rational64::from_integer(age) }
    }

    pub fn as_f64(&self) -> f64 {
        self.age.to_f64().expect("finite rational")
    }
}

/// Advance one slot. On delivery the age becomes the delivered update's age,
/// `tau + r(tau) + actual_wait`; otherwise it grows by one.
pub fn step_aoi(state: AoiState, delivered: bool, spec: &AgentSpec, tau: Tau, actual_wait: u32) -> Result<AoiState> {
    if !delivered {
        return Ok(AoiState { age: state.age + 1 });
    }
    let r = spec.tx_len(tau)?;
    if actual_wait >= tau {
        return Err(domain(format!("actual wait {actual_wait} outside [0, {}] for tau = {tau}", tau - 1)));
    }
    Ok(AoiState::from_integer(delivery_age(tau, r, u64::from(actual_wait)) as i64))
}

/// Integer form of the delivery branch, used by the simulator.
#[inline]
pub fn delivery_age(tau: Tau, tx_len: u32, wait: u64) -> u64 {
    u64::from(tau) + u64::from(tx_len) + wait
}
