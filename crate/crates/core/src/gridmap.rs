//! Multi-region occupancy-grid mapping scenario.
//!
//! Each region is a grid of independent binary cells flipping with
//! probability `p` per slot; the region's cost is its map entropy. The
//! sensing chain is summarized by the post-update belief `q(tau)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aoi::{AgentSpec, Tau, TxLen, WaitModel};
use crate::cost::{check_assumption1, EntropyGridCost, QualityMap};
use crate::error::{domain, Error, Result};

pub const DEFAULT_CELLS: u32 = 1600;

pub fn default_tau_set() -> Vec<Tau> {
    (1..=12).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionModel {
    pub flip_prob: f64,
    #[serde(default = "default_cells")]
    pub cells: u32,
    #[serde(default)]
    pub quality: QualityMap,
    #[serde(default = "default_tau_set")]
    pub tau_set: Vec<Tau>,
    #[serde(default = "mapping_rule")]
    pub tx_len: TxLen,
}

fn default_cells() -> u32 {
    DEFAULT_CELLS
}

fn mapping_rule() -> TxLen {
    TxLen::MappingRule
}

impl RegionModel {
    pub fn new(flip_prob: f64) -> Self {
        Self {
            flip_prob,
            cells: DEFAULT_CELLS,
            quality: QualityMap::Default,
            tau_set: default_tau_set(),
            tx_len: TxLen::MappingRule,
        }
    }

    /// Cost model of the region. A static world (`p = 0`) is allowed here so
    /// that entropy curves can be drawn for it.
    pub fn cost(&self) -> Result<EntropyGridCost> {
        EntropyGridCost::new(self.flip_prob, self.cells, self.quality.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    pub regions: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub cells: u32,
    pub quality: QualityMap,
    pub tau_set: Vec<Tau>,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            regions: 9,
            p_min: 5e-4,
            p_max: 1e-1,
            cells: DEFAULT_CELLS,
            quality: QualityMap::Default,
            tau_set: default_tau_set(),
        }
    }
}

impl MappingConfig {
    /// Flip probabilities log-spaced from `p_min` to `p_max`.
    pub fn flip_probs(&self) -> Result<Vec<f64>> {
        if self.regions == 0 {
            return Err(domain("a mapping scenario needs at least one region"));
        }
        if !(self.p_min > 0.0 && self.p_min <= self.p_max && self.p_max <= 0.5) {
            return Err(domain(format!(
                "flip probability range [{}, {}] must satisfy 0 < p_min <= p_max <= 0.5",
                self.p_min, self.p_max
            )));
        }
        if self.regions == 1 {
            return Ok(vec![self.p_min]);
        }
        let (lo, hi) = (self.p_min.ln(), self.p_max.ln());
        let step = (hi - lo) / (self.regions - 1) as f64;
        Ok((0..self.regions)
            .map(|i| match i {
                0 => self.p_min,
                i if i + 1 == self.regions => self.p_max,
                i => (lo + step * i as f64).exp(),
            })
            .collect())
    }

    pub fn regions(&self) -> Result<Vec<RegionModel>> {
        Ok(self
            .flip_probs()?
            .into_iter()
            .map(|p| RegionModel {
                flip_prob: p,
                cells: self.cells,
                quality: self.quality.clone(),
                tau_set: self.tau_set.clone(),
                tx_len: TxLen::MappingRule,
            })
            .collect())
    }
}

/// One agent per region, ids in region order.
pub fn build_scenario(regions: &[RegionModel], wait: WaitModel) -> Result<Vec<AgentSpec>> {
    if regions.is_empty() {
        return Err(domain("a mapping scenario needs at least one region"));
    }
    regions
        .iter()
        .enumerate()
        .map(|(i, reg)| {
            if !(reg.flip_prob > 0.0 && reg.flip_prob <= 0.5) {
                return Err(domain(format!("region {i}: flip probability {} outside (0, 0.5]", reg.flip_prob)));
            }
            let cost = reg.cost()?;
            let ages: Vec<f64> = (0..=400).map(f64::from).collect();
            if !check_assumption1(&cost, &reg.tau_set, &ages) {
                return Err(Error::InvalidAgent {
                    agent: i,
                    reason: "entropy cost is not monotone on this quality map".into(),
                });
            }
            AgentSpec::new(i, reg.tau_set.iter().copied(), reg.tx_len.clone(), wait, Arc::new(cost))
        })
        .collect()
}

/// Region entropy at each of `ages`.
pub fn entropy_curve(region: &RegionModel, tau: Tau, ages: &[u64]) -> Result<Vec<(u64, f64)>> {
    let cost = region.cost()?;
    Ok(ages.iter().map(|&a| (a, crate::cost::entropy_of_region(&cost, tau, a))).collect())
}

/// Spearman rank correlation, ties given their average rank. `NaN` when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
