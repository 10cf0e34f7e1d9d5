//! TOML scenario files.

use std::path::{Path, PathBuf};

use codesign_core::gridmap::{build_scenario, MappingConfig};
use codesign_core::{AgentSpec, CostDescriptor, OptimizerConfig, QualityMap, Tau, TxLen, WaitModel};
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentEntry>,
    /// Grid-mapping regions, appended after the explicit agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingSection>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_name() -> String {
    "scenario".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub tau_set: Vec<Tau>,
    pub tx_len: TxLen,
    /// A number, a fraction such as `"1/2"`, or `"expected"` (the default)
    /// for `(tau - 1) / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_wait: Option<WaitValue>,
    pub cost: CostDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WaitValue {
    Number(f64),
    Text(String),
}

impl WaitValue {
    fn model(&self) -> Result<WaitModel, String> {
        match self {
            WaitValue::Number(x) => WaitModel::fixed_f64(*x).map_err(|e| e.to_string()),
            WaitValue::Text(s) if s == "expected" => Ok(WaitModel::Expected),
            WaitValue::Text(s) => s
                .trim()
                .parse::<Rational64>()
                .map(WaitModel::Fixed)
                .map_err(|_| format!("delta_wait `{s}` is neither a number, a fraction nor \"expected\"")),
        }
    }
}

fn wait_model(v: &Option<WaitValue>) -> Result<WaitModel, String> {
    v.as_ref().map_or(Ok(WaitModel::Expected), WaitValue::model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingSection {
    pub regions: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub cells: u32,
    pub quality: QualityMap,
    pub tau_set: Vec<Tau>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_wait: Option<WaitValue>,
}

impl Default for MappingSection {
    fn default() -> Self {
        let c = MappingConfig::default();
        Self {
            regions: c.regions,
            p_min: c.p_min,
            p_max: c.p_max,
            cells: c.cells,
            quality: c.quality,
            tau_set: c.tau_set,
            delta_wait: None,
        }
    }
}

impl MappingSection {
    pub fn config(&self) -> MappingConfig {
        MappingConfig {
            regions: self.regions,
            p_min: self.p_min,
            p_max: self.p_max,
            cells: self.cells,
            quality: self.quality.clone(),
            tau_set: self.tau_set.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub horizon: u64,
    /// Number of seeds; seeds are `seed_base, seed_base + 1, ...`.
    pub seeds: usize,
    pub seed_base: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    pub policies: Vec<String>,
    /// Processing time per agent, used unless `--codesign` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<Tau>>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            seeds: 10,
            seed_base: 0,
            burn_in: None,
            policies: vec!["whittle".into(), "round-robin".into(), "randomized".into()],
            taus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub trace: bool,
    pub trace_every: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, trace: false, trace_every: 100 }
    }
}

/// A scenario file that could not be read or does not describe a valid
/// scenario.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ScenarioError {
    pub path: String,
    pub message: String,
}

/// A parsed scenario with its agents built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub agents: Vec<AgentSpec>,
    /// Flip probability of each agent that came from the mapping section.
    pub flip_probs: Vec<Option<f64>>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let err = |message: String| ScenarioError { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file = ScenarioFile::parse(&text).map_err(|e| err(e.to_string()))?;
        Self::from_file(file).map_err(err)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, String> {
        let mut agents = Vec::new();
        let mut flip_probs = Vec::new();
        for (i, entry) in file.agents.iter().enumerate() {
            let cost = entry.cost.build().map_err(|e| format!("agents[{i}].cost: {e}"))?;
            let wait = wait_model(&entry.delta_wait).map_err(|e| format!("agents[{i}].delta_wait: {e}"))?;
            let spec = AgentSpec::new(i, entry.tau_set.iter().copied(), entry.tx_len.clone(), wait, cost)
                .map_err(|e| format!("agents[{i}]: {e}"))?;
            agents.push(spec);
            flip_probs.push(None);
        }
        if let Some(m) = &file.mapping {
            let wait = wait_model(&m.delta_wait).map_err(|e| format!("mapping.delta_wait: {e}"))?;
            let regions = m.config().regions().map_err(|e| format!("mapping: {e}"))?;
            let offset = agents.len();
            for (k, mut spec) in
                build_scenario(&regions, wait).map_err(|e| format!("mapping: {e}"))?.into_iter().enumerate()
            {
                spec.id = offset + k;
                agents.push(spec);
                flip_probs.push(Some(regions[k].flip_prob));
            }
        }
        if agents.is_empty() {
            return Err("scenario defines no agents".into());
        }
        file.optimizer.validate().map_err(|e| format!("optimizer: {e}"))?;
        let sim = &file.simulation;
        if let Some(t) = &sim.taus {
            if t.len() != agents.len() {
                return Err(format!("simulation.taus: {} values for {} agents", t.len(), agents.len()));
            }
            if let Some((i, tau)) = t.iter().enumerate().find(|(i, tau)| !agents[*i].admits(**tau)) {
                return Err(format!("simulation.taus: tau = {tau} is not admissible for agent {i}"));
            }
        }
        if file.output.trace_every == 0 {
            return Err("output.trace_every must be positive".into());
        }
        Ok(Self { file, agents, flip_probs })
    }

    pub fn seeds(&self, count: Option<usize>) -> Vec<u64> {
        let n = count.unwrap_or(self.file.simulation.seeds);
        (0..n as u64).map(|k| self.file.simulation.seed_base + k).collect()
    }
}
