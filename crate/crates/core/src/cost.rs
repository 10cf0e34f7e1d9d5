//! Cost functions `J(tau, age)`.
//!
//! Every model here is non-decreasing in the age and non-increasing in the
//! processing time; [`check_assumption1`] verifies both on a grid.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aoi::Tau;
use crate::error::{domain, Result};

pub trait CostModel: Send + Sync + fmt::Debug {
    /// `J(tau, age)`; `age >= 0`, `tau >= 1`.
    fn eval(&self, tau: Tau, age: f64) -> f64;

    /// Serializable description, if the model has one.
    fn descriptor(&self) -> Option<CostDescriptor> {
        None
    }
}

/// Wraps a closure as a cost model. Used for ad-hoc costs in tests and
/// experiments; it has no descriptor.
pub struct FnCost<F> {
    name: &'static str,
    f: F,
}

impl<F> FnCost<F>
where
    F: Fn(Tau, f64) -> f64 + Send + Sync + 'static,
{
    pub fn new(name: &'static str, f: F) -> Self {
        Self { name, f }
    }

    pub fn shared(name: &'static str, f: F) -> Arc<dyn CostModel> {
        Arc::new(Self::new(name, f))
    }
}

impl<F> fmt::Debug for FnCost<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnCost({})", self.name)
    }
}

impl<F> CostModel for FnCost<F>
where
    F: Fn(Tau, f64) -> f64 + Send + Sync,
{
    fn eval(&self, tau: Tau, age: f64) -> f64 {
        (self.f)(tau, age)
    }
}

/// Per-tau offset of an affine cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseCost {
    Constant(f64),
    /// `(2 + 2 exp(-0.2 tau)) * q_hat`, the fitted route-processing term of
    /// the ride-sharing application with the queue estimate frozen.
    RideSharing {
        q_hat: f64,
    },
    /// Step function: the entry for the largest key not above `tau` (or the
    /// first entry when `tau` precedes every key).
    #[serde(with = "pairs")]
    Table(BTreeMap<Tau, f64>),
}

impl BaseCost {
    pub fn eval(&self, tau: Tau) -> f64 {
        match self {
            BaseCost::Constant(c) => *c,
            BaseCost::RideSharing { q_hat } => (2.0 + 2.0 * (-0.2 * f64::from(tau)).exp()) * q_hat,
            BaseCost::Table(t) => {
                t.range(..=tau).next_back().or_else(|| t.iter().next()).map(|(_, v)| *v).unwrap_or(0.0)
            }
        }
    }
}

/// `J(tau, A) = base(tau) + slope * A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineAoiCost {
    base: BaseCost,
    slope: f64,
}

impl AffineAoiCost {
    pub fn new(base: BaseCost, slope: f64) -> Result<Self> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(domain(format!("affine slope must be positive, got {slope}")));
        }
        match &base {
            BaseCost::Constant(c) if *c < 0.0 => {
                return Err(domain("affine base must be non-negative"));
            }
            BaseCost::RideSharing { q_hat } if !(*q_hat >= 0.0) => {
                return Err(domain("q_hat must be non-negative"));
            }
            BaseCost::Table(t) => {
                if t.is_empty() || t.values().any(|v| *v < 0.0) {
                    return Err(domain("affine base table must be non-empty and non-negative"));
                }
                let vals: Vec<f64> = t.values().copied().collect();
                if vals.windows(2).any(|w| w[1] > w[0]) {
                    return Err(domain("affine base table must be non-increasing in tau"));
                }
            }
            _ => {}
        }
        Ok(Self { base, slope })
    }

    /// The ride-sharing service-time model `P(tau) + A`.
    pub fn ride_sharing(q_hat: f64) -> Result<Self> {
        Self::new(BaseCost::RideSharing { q_hat }, 1.0)
    }
}

impl CostModel for AffineAoiCost {
    fn eval(&self, tau: Tau, age: f64) -> f64 {
        self.base.eval(tau) + self.slope * age
    }

    fn descriptor(&self) -> Option<CostDescriptor> {
        Some(CostDescriptor::Affine { base: self.base.clone(), slope: self.slope })
    }
}

/// `J(tau, A) = scale * (1 + tau_weight / tau) * A^exponent`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawCost {
    scale: f64,
    exponent: f64,
    tau_weight: f64,
}

impl PowerLawCost {
    pub fn new(scale: f64, exponent: f64, tau_weight: f64) -> Result<Self> {
        if !(scale > 0.0 && exponent > 0.0 && tau_weight >= 0.0) {
            return Err(domain("power-law cost needs scale > 0, exponent > 0, tau_weight >= 0"));
        }
        Ok(Self { scale, exponent, tau_weight })
    }
}

impl CostModel for PowerLawCost {
    fn eval(&self, tau: Tau, age: f64) -> f64 {
        self.scale * (1.0 + self.tau_weight / f64::from(tau)) * age.max(0.0).powf(self.exponent)
    }

    fn descriptor(&self) -> Option<CostDescriptor> {
        Some(CostDescriptor::PowerLaw { scale: self.scale, exponent: self.exponent, tau_weight: self.tau_weight })
    }
}

/// Post-update belief `q(tau)` that a cell is in the state the update reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QualityMap {
    /// `1 - 0.5 exp(-tau / 2)`.
    #[default]
    Default,
    Constant(f64),
    #[serde(with = "pairs")]
    Table(BTreeMap<Tau, f64>),
}

impl QualityMap {
    pub fn eval(&self, tau: Tau) -> f64 {
        match self {
            QualityMap::Default => 1.0 - 0.5 * (-f64::from(tau) / 2.0).exp(),
            QualityMap::Constant(q) => *q,
            QualityMap::Table(t) => {
                t.range(..=tau).next_back().or_else(|| t.iter().next()).map(|(_, v)| *v).unwrap_or(0.5)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |q: f64| (0.5..=1.0).contains(&q);
        match self {
            QualityMap::Default => Ok(()),
            QualityMap::Constant(q) if ok(*q) => Ok(()),
            QualityMap::Table(t)
                if !t.is_empty()
                    && t.values().all(|q| ok(*q))
                    && t.values().zip(t.values().skip(1)).all(|(a, b)| a <= b) =>
            {
                Ok(())
            }
            _ => Err(domain("quality must lie in [0.5, 1] and be non-decreasing in tau")),
        }
    }
}

/// Entropy of a region of independent binary cells that flip with
/// probability `p` per slot, given the last update was `age` slots ago.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyGridCost {
    flip_prob: f64,
    num_cells: u32,
    quality: QualityMap,
}

impl EntropyGridCost {
    pub fn new(flip_prob: f64, num_cells: u32, quality: QualityMap) -> Result<Self> {
        if !(0.0..=0.5).contains(&flip_prob) {
            return Err(domain(format!("flip probability {flip_prob} outside [0, 0.5]")));
        }
        if num_cells == 0 {
            return Err(domain("a region needs at least one cell"));
        }
        quality.validate()?;
        Ok(Self { flip_prob, num_cells, quality })
    }

    pub fn flip_prob(&self) -> f64 {
        self.flip_prob
    }

    pub fn num_cells(&self) -> u32 {
        self.num_cells
    }

    pub fn quality(&self) -> &QualityMap {
        &self.quality
    }

    /// Occupancy belief `age` slots after an update of quality `q`:
    /// `0.5 + (q - 0.5)(1 - 2p)^age`.
    pub fn belief(&self, q: f64, age: f64) -> f64 {
        0.5 + (q - 0.5) * (1.0 - 2.0 * self.flip_prob).powf(age)
    }

    pub fn cell_entropy(&self, tau: Tau, age: f64) -> f64 {
        let q = self.quality.eval(tau);
        binary_entropy_centered((q - 0.5) * (1.0 - 2.0 * self.flip_prob).powf(age.max(0.0)))
    }
}

impl CostModel for EntropyGridCost {
    fn eval(&self, tau: Tau, age: f64) -> f64 {
        f64::from(self.num_cells) * self.cell_entropy(tau, age)
    }

    fn descriptor(&self) -> Option<CostDescriptor> {
        Some(CostDescriptor::EntropyGrid {
            flip_prob: self.flip_prob,
            cells: self.num_cells,
            quality: self.quality.clone(),
        })
    }
}

/// Binary entropy in bits of `[mu, 1 - mu]`.
pub fn binary_entropy(mu: f64) -> f64 {
    binary_entropy_centered(mu - 0.5)
}

/// Binary entropy of `[0.5 + d, 0.5 - d]`. Near `d = 0` this uses
/// `1 - (2x atanh(x) + ln(1 - x^2)) / (2 ln 2)` with `x = 2d`, which keeps
/// the result monotone in `|d|` down to the last ulp.
fn binary_entropy_centered(d: f64) -> f64 {
    let x = (2.0 * d).abs().min(1.0);
    if x == 0.0 {
        return 1.0;
    }
    if x < 0.5 {
        let g = 2.0 * x * x.atanh() + (-x * x).ln_1p();
        return 1.0 - g / (2.0 * std::f64::consts::LN_2);
    }
    let a = 0.5 * (1.0 + x);
    let b = 0.5 * (1.0 - x);
    let term = |m: f64| if m > 0.0 { -m * m.log2() } else { 0.0 };
    term(a) + term(b)
}

/// Region entropy for an entropy-grid model, `cells * H2(belief)`.
pub fn entropy_of_region(model: &EntropyGridCost, tau: Tau, age: u64) -> f64 {
    model.eval(tau, age as f64)
}

/// Serializable form of the built-in cost models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostDescriptor {
    Affine {
        base: BaseCost,
        slope: f64,
    },
    EntropyGrid {
        flip_prob: f64,
        cells: u32,
        #[serde(default)]
        quality: QualityMap,
    },
    PowerLaw {
        scale: f64,
        exponent: f64,
        #[serde(default)]
        tau_weight: f64,
    },
}

impl CostDescriptor {
    pub fn build(&self) -> Result<Arc<dyn CostModel>> {
        Ok(match self {
            CostDescriptor::Affine { base, slope } => Arc::new(AffineAoiCost::new(base.clone(), *slope)?),
            CostDescriptor::EntropyGrid { flip_prob, cells, quality } => {
                Arc::new(EntropyGridCost::new(*flip_prob, *cells, quality.clone())?)
            }
            CostDescriptor::PowerLaw { scale, exponent, tau_weight } => {
                Arc::new(PowerLawCost::new(*scale, *exponent, *tau_weight)?)
            }
        })
    }
}

/// True iff `model` is non-decreasing in age and non-increasing in tau on the
/// given grids.
pub fn check_assumption1(model: &dyn CostModel, tau_grid: &[Tau], age_grid: &[f64]) -> bool {
    let mut taus = tau_grid.to_vec();
    taus.sort_unstable();
    taus.dedup();
    let mut ages = age_grid.to_vec();
    ages.sort_by(f64::total_cmp);
    ages.dedup();

    let table: Vec<Vec<f64>> = taus.iter().map(|&t| ages.iter().map(|&a| model.eval(t, a)).collect()).collect();

    let nonneg = table.iter().flatten().all(|v| *v >= 0.0);
    let in_age = table.iter().all(|row| row.windows(2).all(|w| w[1] >= w[0]));
    let in_tau = table.windows(2).all(|rows| rows[1].iter().zip(&rows[0]).all(|(b, a)| b <= a));
    nonneg && in_age && in_tau
}

/// `BTreeMap<u32, T>` as a list of `[key, value]` pairs, which survives
/// formats whose map keys must be strings.
pub(crate) mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S, V>(map: &BTreeMap<u32, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        V: Serialize,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D, V>(d: D) -> Result<BTreeMap<u32, V>, D::Error>
    where
        D: Deserializer<'de>,
        V: Deserialize<'de>,
    {
        let list: Vec<(u32, V)> = Vec::deserialize(d)?;
        let n = list.len();
        let map: BTreeMap<u32, V> = list.into_iter().collect();
        if map.len() != n {
            return Err(serde::de::Error::custom("duplicate key in table"));
        }
        Ok(map)
    }
}
